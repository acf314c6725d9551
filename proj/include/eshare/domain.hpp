#pragma once

#include <optional>
#include <string>
#include <string_view>

namespace eshare {

/// Integer share of a battery, 1..=100.
class EnergyAmount {
public:
    /// Throws Error(InvalidAmount) outside 1..=100.
    explicit EnergyAmount(int percent);

    int percent() const noexcept { return percent_; }

    friend bool operator==(EnergyAmount, EnergyAmount) = default;

private:
    int percent_;
};

/// Capacity and stored energy of one battery, in milliwatt-hours.
class BatteryState {
public:
    /// Throws InvalidCapacity when capacity <= 0 and InvalidEnergy when
    /// charge falls outside [0, capacity].
    BatteryState(double capacity_mwh, double charge_mwh);

    static BatteryState at_level(double capacity_mwh, double level_percent);

    double capacity_mwh() const noexcept { return capacity_mwh_; }
    double charge_mwh() const noexcept { return charge_mwh_; }
    double level_percent() const noexcept { return 100.0 * charge_mwh_ / capacity_mwh_; }

    friend bool operator==(const BatteryState&, const BatteryState&) = default;

private:
    double capacity_mwh_;
    double charge_mwh_;
};

enum class Role { Provider, Consumer };

std::string_view to_string(Role role);
Role role_from_string(std::string_view text);

struct DeviceProfile {
    std::string device_id;
    std::string display_name;
    double capacity_mwh = 0.0;
    std::string microcell_id;

    friend bool operator==(const DeviceProfile&, const DeviceProfile&) = default;
};

enum class ListingState { Open, Matched, Withdrawn };

std::string_view to_string(ListingState state);
ListingState listing_state_from_string(std::string_view text);

struct EnergyListing {
    std::string listing_id;
    std::string device_id;
    std::string microcell_id;
    Role role = Role::Provider;
    EnergyAmount amount{1};
    double created_at = 0.0;
    ListingState state = ListingState::Open;

    friend bool operator==(const EnergyListing&, const EnergyListing&) = default;
};

/// Open -> Matched and Open -> Withdrawn are the only legal moves.
bool listing_transition_allowed(ListingState from, ListingState to);

double percent_to_energy(EnergyAmount amount, double capacity_mwh);
double energy_to_percent(double energy_mwh, double capacity_mwh);

/// Adds delta to the stored charge. Results below zero raise Depleted and
/// results above capacity raise Overfull; only floating-point residue within
/// 1e-9 of capacity is snapped onto the boundary.
BatteryState apply_delta(const BatteryState& battery, double delta_mwh);

}  // namespace eshare
