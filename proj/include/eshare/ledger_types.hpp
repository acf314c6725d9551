#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "eshare/battery_sim.hpp"
#include "eshare/domain.hpp"

namespace eshare {

struct PartyReport {
    std::string device_id;
    std::vector<sim::TelemetrySample> log;
    BatteryState final_battery{1.0, 0.0};
    sim::EndReason end_reason = sim::EndReason::Aborted;

    friend bool operator==(const PartyReport&, const PartyReport&) = default;
};

struct LossBucket {
    double start_s = 0.0;
    double end_s = 0.0;
    double expended_mwh = 0.0;
    double gained_mwh = 0.0;
    double loss_mwh = 0.0;

    friend bool operator==(const LossBucket&, const LossBucket&) = default;
};

struct LossReport {
    double provider_expended_mwh = 0.0;
    double consumer_gained_mwh = 0.0;
    double loss_mwh = 0.0;
    double duration_s = 0.0;
    std::vector<LossBucket> buckets;
    double bucket_width_s = 300.0;
    /// Anomalies noticed while reconciling (recorded, never rejected).
    std::vector<std::string> discrepancies;

    friend bool operator==(const LossReport&, const LossReport&) = default;
};

enum class TransactionState { Created, AwaitingReports, Reconciled, ReconciledPartial };

std::string_view to_string(TransactionState state);
TransactionState transaction_state_from_string(std::string_view text);

struct TransactionRecord {
    std::string transaction_id;
    std::string microcell_id;
    std::string provider_id;
    std::string consumer_id;
    EnergyAmount amount{1};
    sim::GoalMode goal_mode = sim::GoalMode::AmountTarget;
    std::optional<double> duration_s;
    double created_at_s = 0.0;
    TransactionState state = TransactionState::Created;
    std::optional<PartyReport> provider_report;
    std::optional<PartyReport> consumer_report;
    std::optional<LossReport> loss_report;

    bool reconciled() const {
        return state == TransactionState::Reconciled || state == TransactionState::ReconciledPartial;
    }

    friend bool operator==(const TransactionRecord&, const TransactionRecord&) = default;
};

struct TransactionRequest {
    std::string consumer_id;
    std::string provider_id;
    EnergyAmount amount{1};
    sim::GoalMode goal_mode = sim::GoalMode::AmountTarget;
    std::optional<double> duration_s;
};

enum class PartyRole { Provider, Consumer };

/// Throws Error(Validation) naming the violated PartyReport invariant.
/// Provider logs must be non-increasing in charge, consumer logs non-decreasing.
void validate_report(const PartyReport& report, PartyRole role);

/// Totals plus per-bucket deltas over the union time range of both logs,
/// with charge linearly interpolated at bucket edges.
LossReport reconcile(const PartyReport& provider_report, const PartyReport& consumer_report, double bucket_width_s);

}  // namespace eshare
