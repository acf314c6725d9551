#pragma once

// JSON shapes shared by the coordinator API, the ledger file, the agent
// control API and scenario scripts. Key order is fixed so serialized
// records compare byte-for-byte.

#include <nlohmann/json.hpp>

#include "eshare/ledger_types.hpp"

namespace eshare::wire {

using json = nlohmann::ordered_json;

json encode(const DeviceProfile& v);
json encode(const EnergyListing& v);
json encode(const BatteryState& v);
json encode(const sim::TelemetrySample& v);
json encode(const PartyReport& v);
json encode(const LossBucket& v);
json encode(const LossReport& v);
json encode(const TransactionRecord& v);
json encode(const sim::TransferParams& v);

// Decoders throw Error(Validation) naming the offending field.
DeviceProfile decode_device(const json& j);
EnergyListing decode_listing(const json& j);
BatteryState decode_battery(const json& j);
sim::TelemetrySample decode_sample(const json& j);
PartyReport decode_report(const json& j);
LossReport decode_loss_report(const json& j);
TransactionRecord decode_transaction(const json& j);
sim::TransferParams decode_params(const json& j, sim::TransferParams defaults = {});

/// Parses text, mapping syntax errors to Error(Validation).
json parse(std::string_view text);

/// Typed field access with Validation errors naming the field.
std::string req_string(const json& j, const char* key);
double req_number(const json& j, const char* key);
int req_int(const json& j, const char* key);
std::optional<double> opt_number(const json& j, const char* key);
std::optional<std::string> opt_string(const json& j, const char* key);

}  // namespace eshare::wire
