// eshare: coordinator server, standalone device agent, scenario runner and
// loss-report renderer.

#include <pthread.h>
#include <signal.h>

#include <atomic>
#include <cstdio>
#include <iostream>
#include <thread>

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "eshare/error.hpp"
#include "eshare/http.hpp"
#include "eshare/scenario.hpp"
#include "eshare/wire.hpp"

using namespace eshare;

namespace {

/// Blocks SIGINT/SIGTERM for every thread and runs `on_signal` from a
/// dedicated waiter once one arrives.
void install_signal_waiter(std::function<void()> on_signal) {
    static sigset_t set;
    sigemptyset(&set);
    sigaddset(&set, SIGINT);
    sigaddset(&set, SIGTERM);
    pthread_sigmask(SIG_BLOCK, &set, nullptr);
    std::thread([on_signal = std::move(on_signal)] {
        int sig = 0;
        sigwait(&set, &sig);
        spdlog::info("received signal {}, shutting down", sig);
        on_signal();
    }).detach();
}

struct ServeArgs {
    std::string host = "127.0.0.1";
    std::uint16_t port = 8080;
    std::string data = "./data";
    std::optional<std::uint64_t> id_seed;
};

int cmd_serve(const ServeArgs& a) {
    CoordinatorOptions opts;
    opts.data_dir = a.data;
    opts.clock = std::make_shared<SystemClock>();
    opts.id_seed = a.id_seed;
    std::shared_ptr<Coordinator> coordinator;
    try {
        coordinator = std::make_shared<Coordinator>(opts);
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << " (" << e.detail() << ")\n";
        return 1;
    }
    http::CoordinatorServer server(coordinator);
    try {
        server.bind(a.host, a.port);
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    spdlog::info("coordinator listening on http://{}:{} (ledger in {}, {} transactions replayed)", a.host, a.port,
                 a.data, coordinator->transaction_count());
    install_signal_waiter([&server] { server.stop(); });
    server.run();
    return 0;
}

struct AgentArgs {
    std::string device_id;
    std::string name;
    std::string microcell = "m1";
    double capacity_mwh = 10000.0;
    double level = 50.0;
    double power_w = 3.0;
    double efficiency = 0.6;
    double sampling_s = 5.0;
    double floor_percent = 20.0;
    std::uint16_t control_port = 0;
    std::string mode = "interactive";
    std::uint16_t link_port = 0;
    std::vector<std::string> peers;
    double acceleration = 1.0;
    bool auto_accept = false;
};

int cmd_agent(const AgentArgs& a, const std::string& coordinator_url) {
    agent::AgentConfig cfg;
    cfg.profile = DeviceProfile{a.device_id, a.name.empty() ? a.device_id : a.name, a.capacity_mwh, a.microcell};
    cfg.initial_level_percent = a.level;
    cfg.params.drain_power_w = a.power_w;
    cfg.params.efficiency = a.efficiency;
    cfg.params.sampling_period_s = a.sampling_s;
    cfg.params.provider_floor_percent = a.floor_percent;
    cfg.params.time_acceleration = a.acceleration;
    cfg.coordinator_url = coordinator_url;
    cfg.control_port = a.control_port;
    cfg.mode = a.mode == "scripted" ? agent::AgentMode::Scripted : agent::AgentMode::Interactive;
    cfg.auto_accept = a.auto_accept;

    std::map<std::string, std::pair<std::string, std::uint16_t>> peers;
    for (const auto& p : a.peers) {
        const auto eq = p.find('=');
        const auto colon = p.rfind(':');
        if (eq == std::string::npos || colon == std::string::npos || colon < eq) {
            std::cerr << "error: --peer expects ID=HOST:PORT, got " << p << "\n";
            return 2;
        }
        peers[p.substr(0, eq)] = {p.substr(eq + 1, colon - eq - 1),
                                  static_cast<std::uint16_t>(std::stoi(p.substr(colon + 1)))};
    }

    try {
        cfg.validate();
        auto connector = std::make_shared<agent::TcpConnector>(link::LinkParams{}, a.link_port, peers);
        auto clock = std::make_shared<PacedClock>(a.acceleration);
        auto client = std::make_shared<http::HttpCoordinatorClient>(coordinator_url);
        auto dev = std::make_shared<agent::DeviceAgent>(cfg, client, connector, clock);
        dev->start();
        http::AgentControlServer control(dev);
        const auto port = control.bind("127.0.0.1", a.control_port);
        control.start();
        wire::json hello{{"device_id", dev->status().device_id},
                         {"control_port", port},
                         {"link_port", connector->listen_port().value_or(0)}};
        std::cout << hello.dump() << std::endl;
        std::atomic<bool> stop{false};
        install_signal_waiter([&stop] { stop = true; });
        agent::run_agent_loop(*dev, stop, a.acceleration);
        control.stop();
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << (e.detail().empty() ? "" : " (" + e.detail() + ")") << "\n";
        return e.code() == ErrorCode::Io ? 2 : 1;
    }
    return 0;
}

struct ScenarioArgs {
    std::string script;
    bool external = false;
    std::string report_format;
    double bucket_s = 300.0;
};

int cmd_scenario(const ScenarioArgs& a, const std::string& coordinator_url) {
    scenario::Script script;
    try {
        script = scenario::load_script(a.script);
    } catch (const Error& e) {
        std::cerr << "error: cannot parse " << a.script << ": " << e.what() << "\n";
        return 2;
    }
    std::shared_ptr<CoordinatorApi> coordinator;
    if (a.external) coordinator = std::make_shared<http::HttpCoordinatorClient>(coordinator_url);

    scenario::RunResult result;
    try {
        result = scenario::run(script, coordinator);
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << (e.detail().empty() ? "" : " (" + e.detail() + ")") << "\n";
        return 1;
    }
    std::cout << "scenario " << script.name << "\n" << scenario::summary_table(result);

    if (!a.report_format.empty()) {
        for (std::size_t i = 0; i < result.transactions.size(); ++i) {
            const auto& t = result.transactions[i];
            if (!t.reconciled()) continue;
            LossReport lr = coordinator ? coordinator->loss_report(t.transaction_id, a.bucket_s)
                                        : reconcile(*t.provider_report, *t.consumer_report, a.bucket_s);
            if (!coordinator) lr.discrepancies = t.loss_report->discrepancies;
            std::cout << "\nloss report, transaction " << i << "\n"
                      << (a.report_format == "csv" ? scenario::render_csv(lr) : scenario::render_text(lr));
        }
    }

    bool ok = true;
    for (const auto& e : result.errors) {
        std::cerr << "run error: " << e << "\n";
        ok = false;
    }
    for (const auto& f : scenario::check_expectations(script, result)) {
        std::cerr << "expectation failed: " << f << "\n";
        ok = false;
    }
    return ok ? 0 : 1;
}

int cmd_report(const std::string& tx, double bucket_s, const std::string& format, const std::string& url) {
    try {
        http::HttpCoordinatorClient client(url);
        const LossReport lr = client.loss_report(tx, bucket_s);
        std::cout << (format == "csv" ? scenario::render_csv(lr) : scenario::render_text(lr));
    } catch (const Error& e) {
        std::cerr << "error: " << to_string(e.code()) << ": " << e.what()
                  << (e.detail().empty() ? "" : " (" + e.detail() + ")") << "\n";
        return 1;
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Peer-to-peer wireless energy sharing: coordinator, agents, scenarios, reports"};
    app.require_subcommand(1);
    std::string coordinator_url = "http://127.0.0.1:8080";
    std::string log_level = "info";
    app.add_option("--coordinator-url", coordinator_url, "Coordinator base URL")->capture_default_str();
    app.add_option("--log-level", log_level, "Diagnostic verbosity")
        ->check(CLI::IsMember({"trace", "debug", "info", "warn", "error", "off"}))
        ->capture_default_str();

    ServeArgs serve;
    auto* serve_cmd = app.add_subcommand("serve", "Run the edge coordinator");
    serve_cmd->add_option("--host", serve.host)->capture_default_str();
    serve_cmd->add_option("--port", serve.port)->capture_default_str();
    serve_cmd->add_option("--data", serve.data, "Directory holding ledger.jsonl")->capture_default_str();
    serve_cmd->add_option("--id-seed", serve.id_seed, "Seed for reproducible ids");

    AgentArgs ag;
    auto* agent_cmd = app.add_subcommand("agent", "Run one device agent with a local control API");
    agent_cmd->add_option("--device-id", ag.device_id, "Fixed device id (assigned when empty)");
    agent_cmd->add_option("--name", ag.name, "Display name");
    agent_cmd->add_option("--microcell", ag.microcell)->capture_default_str();
    agent_cmd->add_option("--capacity-mwh", ag.capacity_mwh)->capture_default_str();
    agent_cmd->add_option("--level", ag.level, "Initial charge level in percent")->capture_default_str();
    agent_cmd->add_option("--power-w", ag.power_w)->capture_default_str();
    agent_cmd->add_option("--efficiency", ag.efficiency)->capture_default_str();
    agent_cmd->add_option("--sampling-s", ag.sampling_s)->capture_default_str();
    agent_cmd->add_option("--floor-percent", ag.floor_percent)->capture_default_str();
    agent_cmd->add_option("--control-port", ag.control_port, "0 picks a free port")->capture_default_str();
    agent_cmd->add_option("--mode", ag.mode)->check(CLI::IsMember({"scripted", "interactive"}))->capture_default_str();
    agent_cmd->add_option("--link-port", ag.link_port, "TCP port for inbound peer links, 0 picks one")
        ->capture_default_str();
    agent_cmd->add_option("--peer", ag.peers, "Peer link address as ID=HOST:PORT (repeatable)");
    agent_cmd->add_option("--acceleration", ag.acceleration, "Simulated seconds per wall second")
        ->check(CLI::PositiveNumber)
        ->capture_default_str();
    agent_cmd->add_flag("--auto-accept", ag.auto_accept, "Accept every incoming request");

    ScenarioArgs sc;
    auto* scenario_cmd = app.add_subcommand("scenario", "Run a scripted scenario and check its expectations");
    scenario_cmd->add_option("script", sc.script, "Scenario JSON file")->required();
    scenario_cmd->add_flag("--embedded", "Run the coordinator in process on the virtual clock (default)");
    scenario_cmd->add_flag("--external", sc.external, "Use the coordinator at --coordinator-url instead");
    scenario_cmd->add_option("--report", sc.report_format, "Also print loss reports")
        ->check(CLI::IsMember({"csv", "text"}));
    scenario_cmd->add_option("--bucket-s", sc.bucket_s)->check(CLI::PositiveNumber)->capture_default_str();

    std::string report_tx;
    double report_bucket = 300.0;
    std::string report_format = "text";
    auto* report_cmd = app.add_subcommand("report", "Render a transaction's loss report");
    report_cmd->add_option("transaction_id", report_tx)->required();
    report_cmd->add_option("--bucket-s", report_bucket)->check(CLI::PositiveNumber)->capture_default_str();
    report_cmd->add_option("--format", report_format)->check(CLI::IsMember({"csv", "text"}))->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 2;
    }

    // Diagnostics go to stderr; stdout carries machine output only.
    spdlog::set_default_logger(spdlog::stderr_color_mt("eshare"));
    spdlog::set_level(spdlog::level::from_str(log_level));
    spdlog::set_pattern("[%H:%M:%S.%e] [%l] %v");

    if (*serve_cmd) return cmd_serve(serve);
    if (*agent_cmd) return cmd_agent(ag, coordinator_url);
    if (*scenario_cmd) return cmd_scenario(sc, coordinator_url);
    if (*report_cmd) return cmd_report(report_tx, report_bucket, report_format, coordinator_url);
    return 2;
}
