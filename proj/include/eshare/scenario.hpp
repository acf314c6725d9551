#pragma once

// Scripted end-to-end runs: devices, timed commands and expected totals,
// executed against a coordinator on a shared virtual clock.

#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "eshare/agent.hpp"
#include "eshare/coordinator.hpp"

namespace eshare::scenario {

struct DeviceSpec {
    DeviceProfile profile;
    double initial_level_percent = 50.0;
    std::optional<sim::TransferParams> params;  // overrides the script default
};

/// Either an agent command or a scripted link cut on the device's live link.
struct Step {
    double at_s = 0.0;
    std::string device;
    std::optional<agent::AgentCommand> command;
    bool disconnect = false;
};

struct Expectation {
    std::size_t transaction = 0;  // creation order
    std::optional<TransactionState> state;
    std::optional<double> provider_expended_mwh;
    std::optional<double> consumer_gained_mwh;
    std::optional<double> loss_mwh;
    std::optional<double> duration_s;
    std::optional<std::size_t> samples;  // per log, both parties
    double tolerance_mwh = 1e-6;
};

struct Script {
    std::string name;
    link::LinkParams link;
    sim::TransferParams params;
    std::vector<DeviceSpec> devices;
    std::vector<Step> steps;
    std::vector<Expectation> expectations;
};

/// Throws Error(Validation) naming the offending field.
Script parse_script(const std::string& json_text);
Script load_script(const std::filesystem::path& path);

struct RunOptions {
    /// Virtual seconds after which an unfinished run is abandoned.
    double horizon_s = 7 * 24 * 3600.0;
};

struct RunResult {
    std::vector<TransactionRecord> transactions;  // creation order
    std::map<std::string, agent::AgentStatus> agents;
    double end_time_s = 0.0;
    /// Problems running the script itself (not expectation mismatches).
    std::vector<std::string> errors;
};

/// Runs the script on a virtual clock over in-process links. When
/// `coordinator` is null an in-memory coordinator with a fixed id seed is used.
RunResult run(const Script& script, std::shared_ptr<CoordinatorApi> coordinator = nullptr, RunOptions options = {});

/// One line per mismatch; empty when every expectation holds.
std::vector<std::string> check_expectations(const Script& script, const RunResult& result);

/// Fixed-format per-transaction totals table.
std::string summary_table(const RunResult& result);

std::string render_csv(const LossReport& report);
std::string render_text(const LossReport& report);

}  // namespace eshare::scenario
