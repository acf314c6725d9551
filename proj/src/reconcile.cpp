#include <algorithm>
#include <cmath>

#include "eshare/error.hpp"
#include "eshare/ledger_types.hpp"

namespace eshare {

namespace {

constexpr double kChargeMatchTol = 1e-6;

[[noreturn]] void invalid(const std::string& device, const char* what) {
    throw Error(ErrorCode::Validation, std::string("report violates: ") + what, device);
}

// Piecewise-linear charge at t, held constant outside the logged range.
double charge_at(const std::vector<sim::TelemetrySample>& log, double t) {
    if (t <= log.front().t_s) return log.front().charge_mwh;
    if (t >= log.back().t_s) return log.back().charge_mwh;
    auto hi = std::lower_bound(log.begin(), log.end(), t,
                               [](const sim::TelemetrySample& s, double v) { return s.t_s < v; });
    if (hi->t_s == t) return hi->charge_mwh;
    auto lo = std::prev(hi);
    const double w = (t - lo->t_s) / (hi->t_s - lo->t_s);
    return lo->charge_mwh + w * (hi->charge_mwh - lo->charge_mwh);
}

}  // namespace

std::string_view to_string(TransactionState state) {
    switch (state) {
        case TransactionState::Created: return "Created";
        case TransactionState::AwaitingReports: return "AwaitingReports";
        case TransactionState::Reconciled: return "Reconciled";
        case TransactionState::ReconciledPartial: return "ReconciledPartial";
    }
    return "Created";
}

TransactionState transaction_state_from_string(std::string_view text) {
    for (auto s : {TransactionState::Created, TransactionState::AwaitingReports, TransactionState::Reconciled,
                   TransactionState::ReconciledPartial}) {
        if (to_string(s) == text) return s;
    }
    throw Error(ErrorCode::InvalidArgument, "unknown transaction state", std::string(text));
}

void validate_report(const PartyReport& report, PartyRole role) {
    const auto& log = report.log;
    if (log.empty()) invalid(report.device_id, "log non-empty");
    for (std::size_t i = 0; i < log.size(); ++i) {
        if (!(log[i].t_s >= 0.0)) invalid(report.device_id, "timestamps non-negative");
        if (i == 0) continue;
        if (!(log[i].t_s > log[i - 1].t_s)) invalid(report.device_id, "log timestamps strictly increasing");
        const double d = log[i].charge_mwh - log[i - 1].charge_mwh;
        if (role == PartyRole::Provider && d > kChargeMatchTol) {
            invalid(report.device_id, "provider log non-increasing");
        }
        if (role == PartyRole::Consumer && d < -kChargeMatchTol) {
            invalid(report.device_id, "consumer log non-decreasing");
        }
    }
    if (std::abs(report.final_battery.charge_mwh() - log.back().charge_mwh) > kChargeMatchTol) {
        invalid(report.device_id, "final_battery matches last sample");
    }
}

LossReport reconcile(const PartyReport& provider_report, const PartyReport& consumer_report, double bucket_width_s) {
    if (!(bucket_width_s > 0.0)) throw Error(ErrorCode::InvalidArgument, "bucket width must be positive");
    validate_report(provider_report, PartyRole::Provider);
    validate_report(consumer_report, PartyRole::Consumer);

    const auto& p = provider_report.log;
    const auto& c = consumer_report.log;

    LossReport out;
    out.bucket_width_s = bucket_width_s;
    out.provider_expended_mwh = p.front().charge_mwh - p.back().charge_mwh;
    out.consumer_gained_mwh = c.back().charge_mwh - c.front().charge_mwh;
    out.loss_mwh = out.provider_expended_mwh - out.consumer_gained_mwh;

    const double start = std::min(p.front().t_s, c.front().t_s);
    const double end = std::max(p.back().t_s, c.back().t_s);
    out.duration_s = end - start;

    // Trailing slivers from round-off do not open an extra bucket.
    const double span = out.duration_s / bucket_width_s;
    const auto count = std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(span - 1e-9)));
    out.buckets.reserve(count);
    for (std::size_t k = 0; k < count; ++k) {
        LossBucket b;
        b.start_s = start + static_cast<double>(k) * bucket_width_s;
        b.end_s = (k + 1 == count) ? end : start + static_cast<double>(k + 1) * bucket_width_s;
        b.expended_mwh = charge_at(p, b.start_s) - charge_at(p, b.end_s);
        b.gained_mwh = charge_at(c, b.end_s) - charge_at(c, b.start_s);
        b.loss_mwh = b.expended_mwh - b.gained_mwh;
        out.buckets.push_back(b);
    }

    if (out.loss_mwh < -1e-6) out.discrepancies.push_back("consumer-gained-exceeds-provider-expended");
    return out;
}

}  // namespace eshare
