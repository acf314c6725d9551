#include "eshare/wire.hpp"

#include "eshare/error.hpp"

namespace eshare::wire {

namespace {

[[noreturn]] void bad(const std::string& key, const std::string& what) {
    throw Error(ErrorCode::Validation, "invalid field " + key + ": " + what, key);
}

const json& req(const json& j, const char* key) {
    if (!j.is_object()) bad(key, "enclosing value is not an object");
    auto it = j.find(key);
    if (it == j.end() || it->is_null()) bad(key, "missing");
    return *it;
}

template <class F>
auto guarded(const char* key, F&& f) {
    try {
        return f();
    } catch (const Error& e) {
        if (e.code() == ErrorCode::Validation) throw;
        bad(key, e.what());
    }
}

}  // namespace

std::string req_string(const json& j, const char* key) {
    const json& v = req(j, key);
    if (!v.is_string()) bad(key, "expected string");
    return v.get<std::string>();
}

double req_number(const json& j, const char* key) {
    const json& v = req(j, key);
    if (!v.is_number()) bad(key, "expected number");
    return v.get<double>();
}

int req_int(const json& j, const char* key) {
    const json& v = req(j, key);
    if (!v.is_number_integer()) bad(key, "expected integer");
    return v.get<int>();
}

std::optional<double> opt_number(const json& j, const char* key) {
    if (!j.is_object() || !j.contains(key) || j.at(key).is_null()) return std::nullopt;
    return req_number(j, key);
}

std::optional<std::string> opt_string(const json& j, const char* key) {
    if (!j.is_object() || !j.contains(key) || j.at(key).is_null()) return std::nullopt;
    return req_string(j, key);
}

json parse(std::string_view text) {
    json j = json::parse(text.begin(), text.end(), nullptr, false);
    if (j.is_discarded()) throw Error(ErrorCode::Validation, "body is not valid JSON", "body");
    return j;
}

json encode(const DeviceProfile& v) {
    return json{{"device_id", v.device_id},
                {"display_name", v.display_name},
                {"capacity_mwh", v.capacity_mwh},
                {"microcell_id", v.microcell_id}};
}

DeviceProfile decode_device(const json& j) {
    DeviceProfile p;
    p.device_id = opt_string(j, "device_id").value_or("");
    p.display_name = opt_string(j, "display_name").value_or("");
    p.capacity_mwh = req_number(j, "capacity_mwh");
    p.microcell_id = req_string(j, "microcell_id");
    return p;
}

json encode(const EnergyListing& v) {
    return json{{"listing_id", v.listing_id},
                {"device_id", v.device_id},
                {"microcell_id", v.microcell_id},
                {"role", std::string(to_string(v.role))},
                {"amount_percent", v.amount.percent()},
                {"created_at", v.created_at},
                {"state", std::string(to_string(v.state))}};
}

EnergyListing decode_listing(const json& j) {
    EnergyListing l;
    l.listing_id = req_string(j, "listing_id");
    l.device_id = req_string(j, "device_id");
    l.microcell_id = req_string(j, "microcell_id");
    l.role = guarded("role", [&] { return role_from_string(req_string(j, "role")); });
    l.amount = guarded("amount_percent", [&] { return EnergyAmount(req_int(j, "amount_percent")); });
    l.created_at = req_number(j, "created_at");
    l.state = guarded("state", [&] { return listing_state_from_string(req_string(j, "state")); });
    return l;
}

json encode(const BatteryState& v) {
    return json{{"capacity_mwh", v.capacity_mwh()}, {"charge_mwh", v.charge_mwh()}};
}

BatteryState decode_battery(const json& j) {
    return guarded("final_battery",
                   [&] { return BatteryState(req_number(j, "capacity_mwh"), req_number(j, "charge_mwh")); });
}

json encode(const sim::TelemetrySample& v) {
    return json{{"t_s", v.t_s}, {"level_percent", v.level_percent}, {"charge_mwh", v.charge_mwh}};
}

sim::TelemetrySample decode_sample(const json& j) {
    return {req_number(j, "t_s"), req_number(j, "level_percent"), req_number(j, "charge_mwh")};
}

json encode(const PartyReport& v) {
    json log = json::array();
    for (const auto& s : v.log) log.push_back(encode(s));
    return json{{"device_id", v.device_id},
                {"log", std::move(log)},
                {"final_battery", encode(v.final_battery)},
                {"end_reason", std::string(sim::to_string(v.end_reason))}};
}

PartyReport decode_report(const json& j) {
    PartyReport r;
    r.device_id = req_string(j, "device_id");
    const json& log = req(j, "log");
    if (!log.is_array()) bad("log", "expected array");
    for (const auto& s : log) r.log.push_back(decode_sample(s));
    r.final_battery = decode_battery(req(j, "final_battery"));
    r.end_reason = guarded("end_reason", [&] { return sim::end_reason_from_string(req_string(j, "end_reason")); });
    return r;
}

json encode(const LossBucket& v) {
    return json{{"start_s", v.start_s},
                {"end_s", v.end_s},
                {"expended_mwh", v.expended_mwh},
                {"gained_mwh", v.gained_mwh},
                {"loss_mwh", v.loss_mwh}};
}

json encode(const LossReport& v) {
    json buckets = json::array();
    for (const auto& b : v.buckets) buckets.push_back(encode(b));
    return json{{"provider_expended_mwh", v.provider_expended_mwh},
                {"consumer_gained_mwh", v.consumer_gained_mwh},
                {"loss_mwh", v.loss_mwh},
                {"duration_s", v.duration_s},
                {"buckets", std::move(buckets)},
                {"bucket_width_s", v.bucket_width_s},
                {"discrepancies", v.discrepancies}};
}

LossReport decode_loss_report(const json& j) {
    LossReport r;
    r.provider_expended_mwh = req_number(j, "provider_expended_mwh");
    r.consumer_gained_mwh = req_number(j, "consumer_gained_mwh");
    r.loss_mwh = req_number(j, "loss_mwh");
    r.duration_s = req_number(j, "duration_s");
    for (const auto& b : req(j, "buckets")) {
        r.buckets.push_back({req_number(b, "start_s"), req_number(b, "end_s"), req_number(b, "expended_mwh"),
                             req_number(b, "gained_mwh"), req_number(b, "loss_mwh")});
    }
    r.bucket_width_s = req_number(j, "bucket_width_s");
    if (j.contains("discrepancies")) {
        for (const auto& d : j.at("discrepancies")) r.discrepancies.push_back(d.get<std::string>());
    }
    return r;
}

json encode(const TransactionRecord& v) {
    json j{{"transaction_id", v.transaction_id},
           {"microcell_id", v.microcell_id},
           {"provider_id", v.provider_id},
           {"consumer_id", v.consumer_id},
           {"amount_percent", v.amount.percent()},
           {"goal_mode", std::string(sim::to_string(v.goal_mode))}};
    j["duration_s"] = v.duration_s ? json(*v.duration_s) : json(nullptr);
    j["created_at_s"] = v.created_at_s;
    j["state"] = std::string(to_string(v.state));
    j["provider_report"] = v.provider_report ? encode(*v.provider_report) : json(nullptr);
    j["consumer_report"] = v.consumer_report ? encode(*v.consumer_report) : json(nullptr);
    j["loss_report"] = v.loss_report ? encode(*v.loss_report) : json(nullptr);
    return j;
}

TransactionRecord decode_transaction(const json& j) {
    TransactionRecord r;
    r.transaction_id = req_string(j, "transaction_id");
    r.microcell_id = req_string(j, "microcell_id");
    r.provider_id = req_string(j, "provider_id");
    r.consumer_id = req_string(j, "consumer_id");
    r.amount = guarded("amount_percent", [&] { return EnergyAmount(req_int(j, "amount_percent")); });
    r.goal_mode = guarded("goal_mode", [&] { return sim::goal_mode_from_string(req_string(j, "goal_mode")); });
    r.duration_s = opt_number(j, "duration_s");
    r.created_at_s = req_number(j, "created_at_s");
    r.state = guarded("state", [&] { return transaction_state_from_string(req_string(j, "state")); });
    if (j.contains("provider_report") && !j.at("provider_report").is_null()) {
        r.provider_report = decode_report(j.at("provider_report"));
    }
    if (j.contains("consumer_report") && !j.at("consumer_report").is_null()) {
        r.consumer_report = decode_report(j.at("consumer_report"));
    }
    if (j.contains("loss_report") && !j.at("loss_report").is_null()) {
        r.loss_report = decode_loss_report(j.at("loss_report"));
    }
    return r;
}

json encode(const sim::TransferParams& v) {
    json j{{"drain_power_w", v.drain_power_w},
           {"efficiency", v.efficiency},
           {"sampling_period_s", v.sampling_period_s},
           {"provider_floor_percent", v.provider_floor_percent}};
    j["time_acceleration"] = v.time_acceleration ? json(*v.time_acceleration) : json(nullptr);
    return j;
}

sim::TransferParams decode_params(const json& j, sim::TransferParams p) {
    if (auto v = opt_number(j, "drain_power_w")) p.drain_power_w = *v;
    if (auto v = opt_number(j, "efficiency")) p.efficiency = *v;
    if (auto v = opt_number(j, "sampling_period_s")) p.sampling_period_s = *v;
    if (auto v = opt_number(j, "provider_floor_percent")) p.provider_floor_percent = *v;
    if (auto v = opt_number(j, "time_acceleration")) p.time_acceleration = *v;
    guarded("params", [&] {
        p.validate();
        return 0;
    });
    return p;
}

}  // namespace eshare::wire
