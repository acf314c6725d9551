#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "eshare/domain.hpp"

namespace eshare::sim {

/// Parameters of the constant-power wireless transfer model.
///
/// The defaults are desk-scale placeholders for phone reverse wireless
/// charging. They are configurable so measured curves can replace them.
struct TransferParams {
    double drain_power_w = 3.0;
    double efficiency = 0.6;
    double sampling_period_s = 5.0;
    double provider_floor_percent = 20.0;
    /// Simulated seconds per wall second. Unset means a pure virtual clock.
    std::optional<double> time_acceleration;

    /// Throws Error(InvalidArgument) naming the first violated bound.
    void validate() const;

    /// Provider-side drain in mWh per simulated second.
    double drop_rate_mwh_per_s() const { return drain_power_w * 1000.0 / 3600.0; }
};

enum class GoalMode { AmountTarget, DurationTarget };

std::string_view to_string(GoalMode mode);
GoalMode goal_mode_from_string(std::string_view text);

struct TerminationGoal {
    GoalMode mode = GoalMode::AmountTarget;
    double offer_cap_mwh = 0.0;
    double request_target_mwh = 0.0;
    double duration_s = 0.0;

    static TerminationGoal amount(double offer_cap_mwh, double request_target_mwh);
    static TerminationGoal duration(double duration_s);

    void validate() const;
};

enum class EndReason { ConsumerTarget, ProviderCap, ProviderFloor, ConsumerFull, DurationElapsed, Aborted };

std::string_view to_string(EndReason reason);
EndReason end_reason_from_string(std::string_view text);

struct TelemetrySample {
    double t_s = 0.0;
    double level_percent = 0.0;
    double charge_mwh = 0.0;

    static TelemetrySample of(double t_s, const BatteryState& battery) {
        return {t_s, battery.level_percent(), battery.charge_mwh()};
    }

    friend bool operator==(const TelemetrySample&, const TelemetrySample&) = default;
};

struct SessionTotals {
    double provider_expended_mwh = 0.0;
    double consumer_gained_mwh = 0.0;
    double loss_mwh = 0.0;
    double duration_s = 0.0;
    EndReason end_reason = EndReason::Aborted;
};

struct StepResult {
    BatteryState provider;
    BatteryState consumer;
    double drop_mwh;
    double gain_mwh;
    double loss_mwh;
};

/// Moves energy for dt_s seconds: the provider drains at drain_power_w and
/// the consumer receives efficiency times that drop.
StepResult step_transfer(const BatteryState& provider, const BatteryState& consumer,
                         const TransferParams& params, double dt_s);

struct ClampedStep {
    double dt_s;
    std::optional<EndReason> reason;
};

/// Largest dt <= sampling_period_s that lands exactly on the first binding
/// constraint. When several bind at the returned dt the winner follows
/// DurationElapsed > ConsumerTarget > ProviderCap > ProviderFloor > ConsumerFull.
ClampedStep clamp_final_dt(const BatteryState& provider, const BatteryState& consumer,
                           const TransferParams& params, const TerminationGoal& goal,
                           double expended_so_far_mwh, double gained_so_far_mwh, double elapsed_s);

std::optional<EndReason> should_terminate(double expended_mwh, double gained_mwh,
                                          const BatteryState& provider, const BatteryState& consumer,
                                          const TerminationGoal& goal, const TransferParams& params,
                                          double elapsed_s);

struct StepRecord {
    double t_start_s;
    double dt_s;
    double drop_mwh;
    double gain_mwh;
    double loss_mwh;
};

struct SessionResult {
    std::vector<TelemetrySample> provider_log;
    std::vector<TelemetrySample> consumer_log;
    SessionTotals totals;
    std::vector<StepRecord> steps;
};

/// Runs one transfer to completion on a virtual clock. Throws RefuseToStart
/// when the provider is already at or below its floor.
SessionResult simulate_session(const BatteryState& provider0, const BatteryState& consumer0,
                               const TransferParams& params, const TerminationGoal& goal);

/// `t_s,level_percent,charge_mwh` with six decimals per value.
std::string log_to_csv(const std::vector<TelemetrySample>& log);
std::vector<TelemetrySample> log_from_csv(std::string_view csv);

}  // namespace eshare::sim
