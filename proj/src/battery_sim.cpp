#include "eshare/battery_sim.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "eshare/error.hpp"

namespace eshare::sim {

namespace {

// Accumulated floating-point residue is treated as binding within this
// relative band, so exact-landing steps never leave a sliver step behind.
constexpr double kRelTol = 1e-9;

double energy_tol(double reference_mwh) { return kRelTol * std::max(1.0, std::abs(reference_mwh)); }

void require(bool ok, const char* what) {
    if (!ok) throw Error(ErrorCode::InvalidArgument, what);
}

}  // namespace

void TransferParams::validate() const {
    require(drain_power_w > 0.0 && std::isfinite(drain_power_w), "drain_power_w must be > 0");
    require(efficiency > 0.0 && efficiency <= 1.0, "efficiency must lie in (0, 1]");
    require(sampling_period_s > 0.0 && std::isfinite(sampling_period_s), "sampling_period_s must be > 0");
    require(provider_floor_percent >= 0.0 && provider_floor_percent < 100.0,
            "provider_floor_percent must lie in [0, 100)");
    if (time_acceleration) require(*time_acceleration >= 1.0, "time_acceleration must be >= 1");
}

std::string_view to_string(GoalMode mode) {
    return mode == GoalMode::AmountTarget ? "AmountTarget" : "DurationTarget";
}

GoalMode goal_mode_from_string(std::string_view text) {
    if (text == "AmountTarget") return GoalMode::AmountTarget;
    if (text == "DurationTarget") return GoalMode::DurationTarget;
    throw Error(ErrorCode::InvalidArgument, "unknown goal mode", std::string(text));
}

TerminationGoal TerminationGoal::amount(double offer_cap_mwh, double request_target_mwh) {
    TerminationGoal goal;
    goal.mode = GoalMode::AmountTarget;
    goal.offer_cap_mwh = offer_cap_mwh;
    goal.request_target_mwh = request_target_mwh;
    goal.validate();
    return goal;
}

TerminationGoal TerminationGoal::duration(double duration_s) {
    TerminationGoal goal;
    goal.mode = GoalMode::DurationTarget;
    goal.duration_s = duration_s;
    goal.validate();
    return goal;
}

void TerminationGoal::validate() const {
    if (mode == GoalMode::AmountTarget) {
        require(offer_cap_mwh > 0.0 && request_target_mwh > 0.0, "amount goal needs positive cap and target");
    } else {
        require(duration_s > 0.0 && std::isfinite(duration_s), "duration goal needs a positive duration");
    }
}

std::string_view to_string(EndReason reason) {
    switch (reason) {
        case EndReason::ConsumerTarget: return "ConsumerTarget";
        case EndReason::ProviderCap: return "ProviderCap";
        case EndReason::ProviderFloor: return "ProviderFloor";
        case EndReason::ConsumerFull: return "ConsumerFull";
        case EndReason::DurationElapsed: return "DurationElapsed";
        case EndReason::Aborted: return "Aborted";
    }
    return "Aborted";
}

EndReason end_reason_from_string(std::string_view text) {
    for (auto r : {EndReason::ConsumerTarget, EndReason::ProviderCap, EndReason::ProviderFloor,
                   EndReason::ConsumerFull, EndReason::DurationElapsed, EndReason::Aborted}) {
        if (to_string(r) == text) return r;
    }
    throw Error(ErrorCode::InvalidArgument, "unknown end reason", std::string(text));
}

StepResult step_transfer(const BatteryState& provider, const BatteryState& consumer,
                         const TransferParams& params, double dt_s) {
    if (!(dt_s >= 0.0)) throw Error(ErrorCode::InvalidArgument, "dt_s must be >= 0");
    const double drop = params.drop_rate_mwh_per_s() * dt_s;
    const double gain = params.efficiency * drop;
    const double loss = (1.0 - params.efficiency) * drop;
    BatteryState p = apply_delta(provider, -drop);
    BatteryState c = apply_delta(consumer, gain);
    return {p, c, drop, gain, loss};
}

namespace {

struct Limit {
    EndReason reason;
    double seconds;  // time until the constraint binds, may be <= 0
    double slack;    // time-equivalent of the residue tolerance
};

// Candidates in priority order.
std::vector<Limit> limits_for(const BatteryState& provider, const BatteryState& consumer,
                              const TransferParams& params, const TerminationGoal& goal,
                              double expended, double gained, double elapsed) {
    const double rate = params.drop_rate_mwh_per_s();
    const double gain_rate = params.efficiency * rate;
    const double floor_mwh = provider.capacity_mwh() * params.provider_floor_percent / 100.0;
    std::vector<Limit> out;
    out.reserve(5);
    if (goal.mode == GoalMode::DurationTarget) {
        out.push_back({EndReason::DurationElapsed, goal.duration_s - elapsed, kRelTol * std::max(1.0, goal.duration_s)});
    } else {
        out.push_back({EndReason::ConsumerTarget, (goal.request_target_mwh - gained) / gain_rate,
                       energy_tol(goal.request_target_mwh) / gain_rate});
        out.push_back({EndReason::ProviderCap, (goal.offer_cap_mwh - expended) / rate,
                       energy_tol(goal.offer_cap_mwh) / rate});
    }
    out.push_back({EndReason::ProviderFloor, (provider.charge_mwh() - floor_mwh) / rate,
                   energy_tol(provider.capacity_mwh()) / rate});
    out.push_back({EndReason::ConsumerFull, (consumer.capacity_mwh() - consumer.charge_mwh()) / gain_rate,
                   energy_tol(consumer.capacity_mwh()) / gain_rate});
    return out;
}

}  // namespace

ClampedStep clamp_final_dt(const BatteryState& provider, const BatteryState& consumer,
                           const TransferParams& params, const TerminationGoal& goal,
                           double expended_so_far_mwh, double gained_so_far_mwh, double elapsed_s) {
    const auto limits =
        limits_for(provider, consumer, params, goal, expended_so_far_mwh, gained_so_far_mwh, elapsed_s);
    const double period = params.sampling_period_s;

    double dt = period;
    for (const auto& l : limits) {
        const double s = std::max(0.0, l.seconds);
        // A limit a hair past the period is the period itself.
        if (s < dt && !(std::abs(s - period) <= l.slack)) dt = s;
    }
    for (const auto& l : limits) {
        if (l.seconds <= dt + l.slack) return {dt, l.reason};
    }
    return {dt, std::nullopt};
}

std::optional<EndReason> should_terminate(double expended_mwh, double gained_mwh,
                                          const BatteryState& provider, const BatteryState& consumer,
                                          const TerminationGoal& goal, const TransferParams& params,
                                          double elapsed_s) {
    const double floor_mwh = provider.capacity_mwh() * params.provider_floor_percent / 100.0;
    if (goal.mode == GoalMode::DurationTarget) {
        if (elapsed_s >= goal.duration_s - kRelTol * std::max(1.0, goal.duration_s)) {
            return EndReason::DurationElapsed;
        }
    } else {
        if (gained_mwh >= goal.request_target_mwh - energy_tol(goal.request_target_mwh)) {
            return EndReason::ConsumerTarget;
        }
        if (expended_mwh >= goal.offer_cap_mwh - energy_tol(goal.offer_cap_mwh)) {
            return EndReason::ProviderCap;
        }
    }
    if (provider.charge_mwh() <= floor_mwh + energy_tol(provider.capacity_mwh())) {
        return EndReason::ProviderFloor;
    }
    if (consumer.charge_mwh() >= consumer.capacity_mwh() - energy_tol(consumer.capacity_mwh())) {
        return EndReason::ConsumerFull;
    }
    return std::nullopt;
}

SessionResult simulate_session(const BatteryState& provider0, const BatteryState& consumer0,
                               const TransferParams& params, const TerminationGoal& goal) {
    params.validate();
    goal.validate();
    if (provider0.level_percent() <= params.provider_floor_percent) {
        throw Error(ErrorCode::RefuseToStart, "provider is at or below its floor",
                    std::to_string(provider0.level_percent()));
    }

    SessionResult out;
    BatteryState provider = provider0;
    BatteryState consumer = consumer0;
    double expended = 0.0;
    double gained = 0.0;
    double elapsed = 0.0;
    out.provider_log.push_back(TelemetrySample::of(0.0, provider));
    out.consumer_log.push_back(TelemetrySample::of(0.0, consumer));

    std::optional<EndReason> reason =
        should_terminate(expended, gained, provider, consumer, goal, params, elapsed);
    while (!reason) {
        const ClampedStep next = clamp_final_dt(provider, consumer, params, goal, expended, gained, elapsed);
        if (next.dt_s > 0.0) {
            StepResult step = step_transfer(provider, consumer, params, next.dt_s);
            out.steps.push_back({elapsed, next.dt_s, step.drop_mwh, step.gain_mwh, step.loss_mwh});
            provider = step.provider;
            consumer = step.consumer;
            expended += step.drop_mwh;
            gained += step.gain_mwh;
            elapsed += next.dt_s;
            out.provider_log.push_back(TelemetrySample::of(elapsed, provider));
            out.consumer_log.push_back(TelemetrySample::of(elapsed, consumer));
        }
        reason = next.reason;
    }

    out.totals.provider_expended_mwh = expended;
    out.totals.consumer_gained_mwh = gained;
    out.totals.loss_mwh = expended - gained;
    out.totals.duration_s = elapsed;
    out.totals.end_reason = *reason;
    return out;
}

std::string log_to_csv(const std::vector<TelemetrySample>& log) {
    std::string out = "t_s,level_percent,charge_mwh\n";
    char line[128];
    for (const auto& s : log) {
        std::snprintf(line, sizeof line, "%.6f,%.6f,%.6f\n", s.t_s, s.level_percent, s.charge_mwh);
        out += line;
    }
    return out;
}

std::vector<TelemetrySample> log_from_csv(std::string_view csv) {
    std::istringstream in{std::string(csv)};
    std::string line;
    if (!std::getline(in, line) || line != "t_s,level_percent,charge_mwh") {
        throw Error(ErrorCode::Decode, "telemetry csv header mismatch");
    }
    std::vector<TelemetrySample> out;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        TelemetrySample s;
        if (std::sscanf(line.c_str(), "%lf,%lf,%lf", &s.t_s, &s.level_percent, &s.charge_mwh) != 3) {
            throw Error(ErrorCode::Decode, "malformed telemetry row", line);
        }
        out.push_back(s);
    }
    return out;
}

}  // namespace eshare::sim
