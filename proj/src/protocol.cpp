#include "eshare/protocol.hpp"

#include <nlohmann/json.hpp>

#include "eshare/error.hpp"

namespace eshare::proto {

using ojson = nlohmann::ordered_json;

namespace {

template <class... Ts>
struct overloaded : Ts... {
    using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

struct FieldError {
    DecodeError err;
};

[[noreturn]] void fail(DecodeError::Kind kind, std::string field, std::string message) {
    throw FieldError{{kind, std::move(field), std::move(message)}};
}

const ojson& field(const ojson& obj, const char* name) {
    auto it = obj.find(name);
    if (it == obj.end()) fail(DecodeError::Kind::MissingField, name, std::string("missing field ") + name);
    return *it;
}

std::string get_string(const ojson& obj, const char* name) {
    const ojson& v = field(obj, name);
    if (!v.is_string()) fail(DecodeError::Kind::InvalidField, name, std::string(name) + " must be a string");
    return v.get<std::string>();
}

double get_number(const ojson& obj, const char* name) {
    const ojson& v = field(obj, name);
    if (!v.is_number()) fail(DecodeError::Kind::InvalidField, name, std::string(name) + " must be a number");
    return v.get<double>();
}

EnergyAmount get_amount(const ojson& obj, const char* name) {
    const ojson& v = field(obj, name);
    if (!v.is_number_integer()) fail(DecodeError::Kind::InvalidField, name, "amount must be an integer percent");
    const auto p = v.get<long long>();
    if (p < 1 || p > 100) fail(DecodeError::Kind::InvalidField, name, "amount must lie in 1..=100");
    return EnergyAmount(static_cast<int>(p));
}

template <class F>
auto convert(const char* name, F&& f) {
    try {
        return f();
    } catch (const Error& e) {
        fail(DecodeError::Kind::InvalidField, name, e.what());
    }
}

ProtocolMessage decode_object(const ojson& obj) {
    if (!obj.is_object()) fail(DecodeError::Kind::Malformed, "", "frame payload is not a JSON object");
    const std::string type = get_string(obj, "type");
    if (type == "ROLE_ANNOUNCE") {
        return RoleAnnounce{get_string(obj, "device_id"),
                            convert("role", [&] { return role_from_string(get_string(obj, "role")); }),
                            get_amount(obj, "amount"), get_number(obj, "capacity_mwh")};
    }
    if (type == "ENERGY_REQUEST") return EnergyRequest{get_string(obj, "request_id"), get_amount(obj, "amount")};
    if (type == "ACCEPT") return Accept{get_string(obj, "request_id")};
    if (type == "REJECT") return Reject{get_string(obj, "request_id"), get_string(obj, "reason")};
    if (type == "TRANSFER_START") {
        return TransferStart{get_string(obj, "transaction_id"), get_number(obj, "start_time_s")};
    }
    if (type == "HEARTBEAT") return Heartbeat{get_number(obj, "t_s")};
    if (type == "TRANSFER_COMPLETE") {
        return TransferComplete{
            get_string(obj, "transaction_id"),
            convert("end_reason", [&] { return sim::end_reason_from_string(get_string(obj, "end_reason")); })};
    }
    if (type == "ABORT") {
        const bool has_tx = obj.contains("transaction_id");
        const bool has_req = obj.contains("request_id");
        if (has_tx == has_req) {
            fail(DecodeError::Kind::MissingField, "transaction_id",
                 "abort needs exactly one of transaction_id or request_id");
        }
        Abort a;
        a.scope = has_tx ? Abort::Scope::Transaction : Abort::Scope::Request;
        a.id = get_string(obj, has_tx ? "transaction_id" : "request_id");
        a.reason = get_string(obj, "reason");
        return a;
    }
    fail(DecodeError::Kind::UnknownType, "", "unknown message type " + type);
}

}  // namespace

std::string_view type_tag(const ProtocolMessage& msg) {
    return std::visit(overloaded{
                          [](const RoleAnnounce&) { return "ROLE_ANNOUNCE"; },
                          [](const EnergyRequest&) { return "ENERGY_REQUEST"; },
                          [](const Accept&) { return "ACCEPT"; },
                          [](const Reject&) { return "REJECT"; },
                          [](const TransferStart&) { return "TRANSFER_START"; },
                          [](const Heartbeat&) { return "HEARTBEAT"; },
                          [](const TransferComplete&) { return "TRANSFER_COMPLETE"; },
                          [](const Abort&) { return "ABORT"; },
                      },
                      msg);
}

std::string encode_message(const ProtocolMessage& msg) {
    ojson j;
    j["type"] = std::string(type_tag(msg));
    std::visit(overloaded{
                   [&](const RoleAnnounce& m) {
                       j["device_id"] = m.device_id;
                       j["role"] = std::string(to_string(m.role));
                       j["amount"] = m.amount.percent();
                       j["capacity_mwh"] = m.capacity_mwh;
                   },
                   [&](const EnergyRequest& m) {
                       j["request_id"] = m.request_id;
                       j["amount"] = m.amount.percent();
                   },
                   [&](const Accept& m) { j["request_id"] = m.request_id; },
                   [&](const Reject& m) {
                       j["request_id"] = m.request_id;
                       j["reason"] = m.reason;
                   },
                   [&](const TransferStart& m) {
                       j["transaction_id"] = m.transaction_id;
                       j["start_time_s"] = m.start_time_s;
                   },
                   [&](const Heartbeat& m) { j["t_s"] = m.t_s; },
                   [&](const TransferComplete& m) {
                       j["transaction_id"] = m.transaction_id;
                       j["end_reason"] = std::string(sim::to_string(m.end_reason));
                   },
                   [&](const Abort& m) {
                       j[m.scope == Abort::Scope::Transaction ? "transaction_id" : "request_id"] = m.id;
                       j["reason"] = m.reason;
                   },
               },
               msg);
    return j.dump();
}

std::string_view to_string(DecodeError::Kind kind) {
    switch (kind) {
        case DecodeError::Kind::Malformed: return "malformed";
        case DecodeError::Kind::UnknownType: return "unknown-type";
        case DecodeError::Kind::MissingField: return "missing-field";
        case DecodeError::Kind::InvalidField: return "invalid-field";
    }
    return "malformed";
}

DecodeOutcome try_decode_message(std::string_view bytes) {
    ojson obj = ojson::parse(bytes.begin(), bytes.end(), nullptr, /*allow_exceptions=*/false);
    if (obj.is_discarded()) return DecodeError{DecodeError::Kind::Malformed, "", "payload is not valid JSON"};
    try {
        return decode_object(obj);
    } catch (const FieldError& e) {
        return e.err;
    }
}

ProtocolMessage decode_message(std::string_view bytes) {
    auto out = try_decode_message(bytes);
    if (auto* err = std::get_if<DecodeError>(&out)) {
        std::string detail(to_string(err->kind));
        if (!err->field.empty()) detail += ":" + err->field;
        throw Error(ErrorCode::Decode, err->message, detail);
    }
    return std::get<ProtocolMessage>(std::move(out));
}

}  // namespace eshare::proto
