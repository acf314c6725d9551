#pragma once

#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "eshare/battery_sim.hpp"
#include "eshare/domain.hpp"

namespace eshare::proto {

struct RoleAnnounce {
    std::string device_id;
    Role role = Role::Provider;
    EnergyAmount amount{1};
    double capacity_mwh = 0.0;
    friend bool operator==(const RoleAnnounce&, const RoleAnnounce&) = default;
};

struct EnergyRequest {
    std::string request_id;
    EnergyAmount amount{1};
    friend bool operator==(const EnergyRequest&, const EnergyRequest&) = default;
};

struct Accept {
    std::string request_id;
    friend bool operator==(const Accept&, const Accept&) = default;
};

struct Reject {
    std::string request_id;
    std::string reason;
    friend bool operator==(const Reject&, const Reject&) = default;
};

struct TransferStart {
    std::string transaction_id;
    double start_time_s = 0.0;
    friend bool operator==(const TransferStart&, const TransferStart&) = default;
};

struct Heartbeat {
    double t_s = 0.0;
    friend bool operator==(const Heartbeat&, const Heartbeat&) = default;
};

struct TransferComplete {
    std::string transaction_id;
    sim::EndReason end_reason = sim::EndReason::Aborted;
    friend bool operator==(const TransferComplete&, const TransferComplete&) = default;
};

/// Refers to a transaction once one was issued, otherwise to the request.
struct Abort {
    enum class Scope { Transaction, Request };
    Scope scope = Scope::Transaction;
    std::string id;
    std::string reason;
    friend bool operator==(const Abort&, const Abort&) = default;
};

using ProtocolMessage =
    std::variant<RoleAnnounce, EnergyRequest, Accept, Reject, TransferStart, Heartbeat, TransferComplete, Abort>;

/// Wire tag, e.g. "ENERGY_REQUEST".
std::string_view type_tag(const ProtocolMessage& msg);

/// Compact JSON, fixed key order, `type` first.
std::string encode_message(const ProtocolMessage& msg);

struct DecodeError {
    enum class Kind { Malformed, UnknownType, MissingField, InvalidField };
    Kind kind;
    std::string field;  // empty for Malformed/UnknownType
    std::string message;
};

std::string_view to_string(DecodeError::Kind kind);

using DecodeOutcome = std::variant<ProtocolMessage, DecodeError>;

DecodeOutcome try_decode_message(std::string_view bytes);

/// Throwing form; Error(Decode) carries the DecodeError kind and field in detail.
ProtocolMessage decode_message(std::string_view bytes);

}  // namespace eshare::proto
