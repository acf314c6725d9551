#include "eshare/domain.hpp"

#include <cmath>

#include "eshare/error.hpp"

namespace eshare {

namespace {

constexpr double kSnapRelative = 1e-9;

std::string fmt_double(double v) { return std::to_string(v); }

}  // namespace

EnergyAmount::EnergyAmount(int percent) : percent_(percent) {
    if (percent < 1 || percent > 100) {
        throw Error(ErrorCode::InvalidAmount, "amount percent must be within 1..=100",
                    std::to_string(percent));
    }
}

BatteryState::BatteryState(double capacity_mwh, double charge_mwh)
    : capacity_mwh_(capacity_mwh), charge_mwh_(charge_mwh) {
    if (!(capacity_mwh > 0.0) || !std::isfinite(capacity_mwh)) {
        throw Error(ErrorCode::InvalidCapacity, "capacity must be positive", fmt_double(capacity_mwh));
    }
    if (!(charge_mwh >= 0.0) || charge_mwh > capacity_mwh) {
        throw Error(ErrorCode::InvalidEnergy, "charge must lie within [0, capacity]",
                    fmt_double(charge_mwh));
    }
}

BatteryState BatteryState::at_level(double capacity_mwh, double level_percent) {
    if (!(level_percent >= 0.0) || level_percent > 100.0) {
        throw Error(ErrorCode::InvalidEnergy, "level must lie within [0, 100]", fmt_double(level_percent));
    }
    return BatteryState(capacity_mwh, capacity_mwh * level_percent / 100.0);
}

std::string_view to_string(Role role) { return role == Role::Provider ? "Provider" : "Consumer"; }

Role role_from_string(std::string_view text) {
    if (text == "Provider" || text == "provider") return Role::Provider;
    if (text == "Consumer" || text == "consumer") return Role::Consumer;
    throw Error(ErrorCode::InvalidArgument, "unknown role", std::string(text));
}

std::string_view to_string(ListingState state) {
    switch (state) {
        case ListingState::Open: return "Open";
        case ListingState::Matched: return "Matched";
        case ListingState::Withdrawn: return "Withdrawn";
    }
    return "Open";
}

ListingState listing_state_from_string(std::string_view text) {
    if (text == "Open") return ListingState::Open;
    if (text == "Matched") return ListingState::Matched;
    if (text == "Withdrawn") return ListingState::Withdrawn;
    throw Error(ErrorCode::InvalidArgument, "unknown listing state", std::string(text));
}

bool listing_transition_allowed(ListingState from, ListingState to) {
    return from == ListingState::Open && (to == ListingState::Matched || to == ListingState::Withdrawn);
}

double percent_to_energy(EnergyAmount amount, double capacity_mwh) {
    if (!(capacity_mwh > 0.0)) {
        throw Error(ErrorCode::InvalidCapacity, "capacity must be positive", fmt_double(capacity_mwh));
    }
    return capacity_mwh * amount.percent() / 100.0;
}

double energy_to_percent(double energy_mwh, double capacity_mwh) {
    if (!(capacity_mwh > 0.0)) {
        throw Error(ErrorCode::InvalidCapacity, "capacity must be positive", fmt_double(capacity_mwh));
    }
    if (!(energy_mwh >= 0.0)) {
        throw Error(ErrorCode::InvalidEnergy, "energy must be non-negative", fmt_double(energy_mwh));
    }
    return 100.0 * energy_mwh / capacity_mwh;
}

BatteryState apply_delta(const BatteryState& battery, double delta_mwh) {
    const double capacity = battery.capacity_mwh();
    double next = battery.charge_mwh() + delta_mwh;
    const double snap = kSnapRelative * capacity;
    if (next < 0.0) {
        if (next < -snap) {
            throw Error(ErrorCode::Depleted, "battery would drop below zero", fmt_double(next));
        }
        next = 0.0;
    } else if (next > capacity) {
        if (next > capacity + snap) {
            throw Error(ErrorCode::Overfull, "battery would exceed capacity", fmt_double(next));
        }
        next = capacity;
    }
    return BatteryState(capacity, next);
}

}  // namespace eshare
