#include "eshare/scenario.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "eshare/error.hpp"
#include "eshare/wire.hpp"

namespace eshare::scenario {

namespace {

using wire::json;

std::string fmt6(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return buf;
}

/// Forwards to a real coordinator and remembers transaction creation order.
class RecordingCoordinator final : public CoordinatorApi {
public:
    explicit RecordingCoordinator(std::shared_ptr<CoordinatorApi> inner) : inner_(std::move(inner)) {}

    std::string register_device(const DeviceProfile& p) override { return inner_->register_device(p); }
    EnergyListing post_listing(const std::string& d, Role r, EnergyAmount a) override {
        return inner_->post_listing(d, r, a);
    }
    EnergyListing withdraw_listing(const std::string& id) override { return inner_->withdraw_listing(id); }
    std::vector<EnergyListing> list_open(const std::string& m, std::optional<Role> r) override {
        return inner_->list_open(m, r);
    }
    std::string create_transaction(const TransactionRequest& req) override {
        std::string id = inner_->create_transaction(req);
        std::lock_guard lock(mu_);
        ids_.push_back(id);
        return id;
    }
    TransactionState submit_report(const std::string& id, const PartyReport& r) override {
        return inner_->submit_report(id, r);
    }
    TransactionRecord get_transaction(const std::string& id) override { return inner_->get_transaction(id); }
    LossReport loss_report(const std::string& id, double b) override { return inner_->loss_report(id, b); }

    std::vector<std::string> ids() const {
        std::lock_guard lock(mu_);
        return ids_;
    }

private:
    std::shared_ptr<CoordinatorApi> inner_;
    mutable std::mutex mu_;
    std::vector<std::string> ids_;
};

template <class F>
auto field(const char* name, F&& f) {
    try {
        return f();
    } catch (const Error& e) {
        if (e.code() == ErrorCode::Validation) throw;
        throw Error(ErrorCode::Validation, std::string("invalid field ") + name + ": " + e.what(), name);
    }
}

}  // namespace

Script parse_script(const std::string& text) {
    const json j = wire::parse(text);
    if (!j.is_object()) throw Error(ErrorCode::Validation, "script must be a JSON object", "script");
    Script s;
    s.name = wire::opt_string(j, "name").value_or("scenario");

    if (j.contains("link") && !j["link"].is_null()) {
        const json& l = j["link"];
        if (auto v = wire::opt_number(l, "latency_ms")) s.link.latency_ms = *v;
        s.link.disconnect_at_s = wire::opt_number(l, "disconnect_at_s");
        field("link", [&] {
            s.link.validate();
            return 0;
        });
    }
    if (j.contains("params") && !j["params"].is_null()) s.params = wire::decode_params(j["params"]);

    if (!j.contains("devices") || !j["devices"].is_array() || j["devices"].empty()) {
        throw Error(ErrorCode::Validation, "devices must be a non-empty array", "devices");
    }
    std::set<std::string> ids;
    for (const auto& d : j["devices"]) {
        DeviceSpec spec;
        spec.profile = wire::decode_device(d);
        if (spec.profile.device_id.empty()) throw Error(ErrorCode::Validation, "device_id is required", "device_id");
        if (!ids.insert(spec.profile.device_id).second) {
            throw Error(ErrorCode::Validation, "duplicate device_id " + spec.profile.device_id, "device_id");
        }
        if (spec.profile.display_name.empty()) spec.profile.display_name = spec.profile.device_id;
        spec.initial_level_percent = wire::opt_number(d, "initial_level_percent").value_or(50.0);
        if (d.contains("params") && !d["params"].is_null()) spec.params = wire::decode_params(d["params"], s.params);
        field("devices", [&] {
            agent::AgentConfig cfg;
            cfg.profile = spec.profile;
            cfg.initial_level_percent = spec.initial_level_percent;
            cfg.params = spec.params.value_or(s.params);
            cfg.validate();
            (void)BatteryState::at_level(spec.profile.capacity_mwh, spec.initial_level_percent);
            return 0;
        });
        s.devices.push_back(std::move(spec));
    }

    if (j.contains("steps")) {
        if (!j["steps"].is_array()) throw Error(ErrorCode::Validation, "steps must be an array", "steps");
        double last = 0.0;
        for (const auto& st : j["steps"]) {
            Step step;
            step.at_s = wire::req_number(st, "at_s");
            if (step.at_s < 0.0 || step.at_s < last) {
                throw Error(ErrorCode::Validation, "step times must be non-negative and non-decreasing", "at_s");
            }
            last = step.at_s;
            step.device = wire::req_string(st, "device");
            if (!ids.count(step.device)) throw Error(ErrorCode::Validation, "unknown device " + step.device, "device");
            if (!st.contains("command") || !st["command"].is_object()) {
                throw Error(ErrorCode::Validation, "step command must be an object", "command");
            }
            if (wire::req_string(st["command"], "type") == "Disconnect") {
                step.disconnect = true;
            } else {
                step.command = agent::decode_command(st["command"].dump());
            }
            s.steps.push_back(std::move(step));
        }
    }

    if (j.contains("expectations")) {
        if (!j["expectations"].is_array()) {
            throw Error(ErrorCode::Validation, "expectations must be an array", "expectations");
        }
        for (const auto& e : j["expectations"]) {
            Expectation x;
            const int idx = e.contains("transaction") ? wire::req_int(e, "transaction") : 0;
            if (idx < 0) throw Error(ErrorCode::Validation, "transaction index must be >= 0", "transaction");
            x.transaction = static_cast<std::size_t>(idx);
            if (auto st = wire::opt_string(e, "state")) {
                x.state = field("state", [&] { return transaction_state_from_string(*st); });
            }
            x.provider_expended_mwh = wire::opt_number(e, "provider_expended_mwh");
            x.consumer_gained_mwh = wire::opt_number(e, "consumer_gained_mwh");
            x.loss_mwh = wire::opt_number(e, "loss_mwh");
            x.duration_s = wire::opt_number(e, "duration_s");
            if (e.contains("samples") && !e["samples"].is_null()) {
                const int n = wire::req_int(e, "samples");
                if (n < 0) throw Error(ErrorCode::Validation, "samples must be >= 0", "samples");
                x.samples = static_cast<std::size_t>(n);
            }
            x.tolerance_mwh = wire::opt_number(e, "tolerance_mwh").value_or(1e-6);
            s.expectations.push_back(x);
        }
    }
    return s;
}

Script load_script(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::Io, "cannot read script", path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_script(ss.str());
}

RunResult run(const Script& script, std::shared_ptr<CoordinatorApi> coordinator, RunOptions options) {
    auto clock = std::make_shared<VirtualClock>();
    if (!coordinator) {
        CoordinatorOptions co;
        co.clock = clock;
        co.id_seed = 1;
        coordinator = std::make_shared<Coordinator>(co);
    }
    auto recorder = std::make_shared<RecordingCoordinator>(coordinator);
    auto hub = std::make_shared<agent::ProximityHub>(script.link, clock);

    RunResult result;
    std::map<std::string, std::shared_ptr<agent::DeviceAgent>> agents;
    for (const auto& d : script.devices) {
        agent::AgentConfig cfg;
        cfg.profile = d.profile;
        cfg.initial_level_percent = d.initial_level_percent;
        cfg.params = d.params.value_or(script.params);
        auto a = std::make_shared<agent::DeviceAgent>(cfg, recorder, hub, clock);
        a->start();
        agents.emplace(d.profile.device_id, std::move(a));
    }

    auto settle = [&] {
        for (int guard = 0; guard < 1000000; ++guard) {
            bool any = false;
            for (auto& [id, a] : agents) any = a->pump() || any;
            if (!any) return;
        }
        result.errors.push_back("agents did not settle at t=" + fmt6(clock->now_s()));
    };
    auto any_active = [&] {
        for (auto& [id, a] : agents) {
            if (a->status().session_active) return true;
        }
        return false;
    };

    std::size_t next_step = 0;
    int stalls = 0;
    for (;;) {
        settle();
        while (next_step < script.steps.size() && script.steps[next_step].at_s <= clock->now_s()) {
            const Step& step = script.steps[next_step++];
            auto& a = agents.at(step.device);
            if (step.disconnect) {
                a->inject_link_fault();
            } else {
                try {
                    a->command(*step.command);
                } catch (const Error& e) {
                    result.errors.push_back("step at " + fmt6(step.at_s) + " for " + step.device + " rejected: " +
                                            e.what());
                }
            }
            settle();
        }
        if (next_step == script.steps.size() && !any_active()) break;

        std::optional<double> next;
        for (auto& [id, a] : agents) {
            if (auto d = a->next_deadline(); d && (!next || *d < *next)) next = d;
        }
        if (next_step < script.steps.size()) {
            const double t = script.steps[next_step].at_s;
            if (!next || t < *next) next = t;
        }
        if (!next) break;  // everybody is waiting on something that will never come
        if (*next > options.horizon_s) {
            result.errors.push_back("run exceeded the horizon of " + fmt6(options.horizon_s) + " s");
            break;
        }
        if (*next <= clock->now_s()) {
            if (++stalls > 1000) {
                result.errors.push_back("clock stalled at t=" + fmt6(clock->now_s()));
                break;
            }
        } else {
            stalls = 0;
        }
        clock->advance_to(*next);
    }

    result.end_time_s = clock->now_s();
    for (const auto& id : recorder->ids()) {
        try {
            result.transactions.push_back(coordinator->get_transaction(id));
        } catch (const Error& e) {
            result.errors.push_back("transaction " + id + " unavailable: " + e.what());
        }
    }
    for (auto& [id, a] : agents) result.agents.emplace(id, a->status());
    return result;
}

std::vector<std::string> check_expectations(const Script& script, const RunResult& result) {
    std::vector<std::string> out;
    for (const auto& e : script.expectations) {
        const std::string tag = "transaction " + std::to_string(e.transaction);
        if (e.transaction >= result.transactions.size()) {
            out.push_back(tag + ": missing (only " + std::to_string(result.transactions.size()) + " created)");
            continue;
        }
        const TransactionRecord& rec = result.transactions[e.transaction];
        if (e.state && *e.state != rec.state) {
            out.push_back(tag + " state: expected " + std::string(to_string(*e.state)) + ", got " +
                          std::string(to_string(rec.state)));
        }
        if (!rec.loss_report) {
            out.push_back(tag + ": not reconciled");
            continue;
        }
        const LossReport& lr = *rec.loss_report;
        auto near = [&](const char* name, std::optional<double> want, double got) {
            if (!want) return;
            if (std::abs(*want - got) > e.tolerance_mwh) {
                out.push_back(tag + " " + name + ": expected " + fmt6(*want) + ", got " + fmt6(got) + " (delta " +
                              fmt6(got - *want) + ")");
            }
        };
        near("provider_expended_mwh", e.provider_expended_mwh, lr.provider_expended_mwh);
        near("consumer_gained_mwh", e.consumer_gained_mwh, lr.consumer_gained_mwh);
        near("loss_mwh", e.loss_mwh, lr.loss_mwh);
        near("duration_s", e.duration_s, lr.duration_s);
        if (e.samples) {
            const std::size_t p = rec.provider_report ? rec.provider_report->log.size() : 0;
            const std::size_t c = rec.consumer_report ? rec.consumer_report->log.size() : 0;
            if (p != *e.samples || c != *e.samples) {
                out.push_back(tag + " samples: expected " + std::to_string(*e.samples) + ", got provider " +
                              std::to_string(p) + " consumer " + std::to_string(c));
            }
        }
    }
    return out;
}

namespace {

std::string table(const std::vector<std::vector<std::string>>& rows) {
    std::vector<std::size_t> width;
    for (const auto& r : rows) {
        width.resize(std::max(width.size(), r.size()), 0);
        for (std::size_t i = 0; i < r.size(); ++i) width[i] = std::max(width[i], r[i].size());
    }
    std::string out;
    for (const auto& r : rows) {
        std::string line;
        for (std::size_t i = 0; i < r.size(); ++i) {
            if (i) line += "  ";
            line += r[i];
            if (i + 1 < r.size()) line.append(width[i] - r[i].size(), ' ');
        }
        out += line + "\n";
    }
    return out;
}

}  // namespace

std::string summary_table(const RunResult& result) {
    std::vector<std::vector<std::string>> rows{{"tx", "provider", "consumer", "goal", "state", "expended_mwh",
                                                "gained_mwh", "loss_mwh", "duration_s", "samples"}};
    for (std::size_t i = 0; i < result.transactions.size(); ++i) {
        const auto& t = result.transactions[i];
        const auto* lr = t.loss_report ? &*t.loss_report : nullptr;
        const std::size_t p = t.provider_report ? t.provider_report->log.size() : 0;
        const std::size_t c = t.consumer_report ? t.consumer_report->log.size() : 0;
        rows.push_back({std::to_string(i), t.provider_id, t.consumer_id, std::string(sim::to_string(t.goal_mode)),
                        std::string(to_string(t.state)), lr ? fmt6(lr->provider_expended_mwh) : "-",
                        lr ? fmt6(lr->consumer_gained_mwh) : "-", lr ? fmt6(lr->loss_mwh) : "-",
                        lr ? fmt6(lr->duration_s) : "-", std::to_string(p) + "/" + std::to_string(c)});
    }
    return table(rows);
}

std::string render_csv(const LossReport& report) {
    std::string out = "start_s,end_s,expended_mwh,gained_mwh,loss_mwh\n";
    for (const auto& b : report.buckets) {
        out += fmt6(b.start_s) + "," + fmt6(b.end_s) + "," + fmt6(b.expended_mwh) + "," + fmt6(b.gained_mwh) + "," +
               fmt6(b.loss_mwh) + "\n";
    }
    return out;
}

std::string render_text(const LossReport& report) {
    constexpr int kBarWidth = 40;
    double peak = 0.0;
    for (const auto& b : report.buckets) peak = std::max(peak, b.expended_mwh);

    std::vector<std::vector<std::string>> rows{{"interval_s", "expended_mwh", "gained_mwh", "loss_mwh", "transfer"}};
    for (const auto& b : report.buckets) {
        auto cells = [&](double v) { return peak > 0.0 ? static_cast<int>(std::lround(kBarWidth * v / peak)) : 0; };
        const int gained = std::clamp(cells(b.gained_mwh), 0, kBarWidth);
        const int total = std::clamp(cells(b.expended_mwh), gained, kBarWidth);
        std::string bar(static_cast<std::size_t>(gained), '=');
        bar.append(static_cast<std::size_t>(total - gained), 'x');
        char span[64];
        std::snprintf(span, sizeof span, "%.0f-%.0f", b.start_s, b.end_s);
        rows.push_back({span, fmt6(b.expended_mwh), fmt6(b.gained_mwh), fmt6(b.loss_mwh), "|" + bar});
    }
    rows.push_back({"total", fmt6(report.provider_expended_mwh), fmt6(report.consumer_gained_mwh),
                    fmt6(report.loss_mwh), ""});
    std::string out = table(rows);
    out += "legend: '=' gained, 'x' lost in transfer; bucket width " + fmt6(report.bucket_width_s) + " s\n";
    for (const auto& d : report.discrepancies) out += "discrepancy: " + d + "\n";
    return out;
}

}  // namespace eshare::scenario
