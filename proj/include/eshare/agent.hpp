#pragma once

#include <atomic>
#include <condition_variable>
#include <deque>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "eshare/battery_sim.hpp"
#include "eshare/clock.hpp"
#include "eshare/coordinator.hpp"
#include "eshare/event_channel.hpp"
#include "eshare/link.hpp"
#include "eshare/session.hpp"

namespace eshare::agent {

enum class AgentMode { Scripted, Interactive };

struct AgentConfig {
    DeviceProfile profile;
    double initial_level_percent = 50.0;
    sim::TransferParams params;
    std::string coordinator_url;
    int control_port = 0;
    AgentMode mode = AgentMode::Scripted;
    /// Providers answer every prompt with AcceptPending (headless demos).
    bool auto_accept = false;

    void validate() const;
};

struct OfferCmd {
    EnergyAmount amount;
};
struct RequestCmd {
    EnergyAmount amount;
    std::optional<double> duration_s;
    /// Listing to pick; newest matching open offer when unset.
    std::optional<std::string> provider_id;
};
struct AcceptPendingCmd {};
struct RejectPendingCmd {
    std::string reason = "declined";
};
struct AbortCmd {
    std::string reason = "user-abort";
};
struct ShutdownCmd {};

using AgentCommand = std::variant<OfferCmd, RequestCmd, AcceptPendingCmd, RejectPendingCmd, AbortCmd, ShutdownCmd>;

struct PendingPrompt {
    std::string request_id;
    EnergyAmount amount;
};

struct AgentStatus {
    std::string device_id;
    std::optional<Role> role;
    std::string protocol_state = "Idle";
    BatteryState battery{1.0, 0.0};
    std::optional<std::string> active_transaction_id;
    std::optional<sim::TelemetrySample> last_sample;
    std::size_t log_size = 0;
    std::optional<PendingPrompt> prompt;
    std::optional<std::string> last_transaction_id;
    std::optional<std::string> last_error;
    /// Why the current or last session ended early, e.g. "rejected:busy".
    std::optional<std::string> abort_reason;
    bool session_active = false;
    std::size_t protocol_errors = 0;
};

/// How a device reaches a peer over the proximity link.
class LinkConnector {
public:
    virtual ~LinkConnector() = default;
    /// Consumer side. Throws Error(LinkDown) if the provider is not reachable.
    virtual link::EndpointPtr connect(const std::string& self_id, const std::string& provider_id) = 0;
    /// Provider side; non-blocking, nullptr when nobody is connecting.
    virtual link::EndpointPtr poll_incoming(const std::string& self_id) = 0;
    /// Makes the device reachable by connect().
    virtual void announce_presence(const std::string& /*self_id*/) {}
};

/// In-process "radio range": connect() pairs the caller with the named
/// device through an in-process link.
class ProximityHub final : public LinkConnector {
public:
    ProximityHub(link::LinkParams params, std::shared_ptr<const Clock> clock)
        : params_(params), clock_(std::move(clock)) {}

    link::EndpointPtr connect(const std::string& self_id, const std::string& provider_id) override;
    link::EndpointPtr poll_incoming(const std::string& self_id) override;
    void announce_presence(const std::string& self_id) override;

    /// Every endpoint handed out, so fault injection can reach live links.
    std::vector<link::EndpointPtr> endpoints_of(const std::string& device_id) const;

private:
    link::LinkParams params_;
    std::shared_ptr<const Clock> clock_;
    mutable std::mutex mu_;
    std::map<std::string, std::deque<link::EndpointPtr>> incoming_;  // keyed by present devices
    std::map<std::string, std::vector<std::weak_ptr<link::Endpoint>>> issued_;
};

/// Provider listens on a localhost port; consumers dial peers by a static
/// device-id -> port map.
class TcpConnector final : public LinkConnector {
public:
    TcpConnector(link::LinkParams params, std::optional<std::uint16_t> listen_port,
                 std::map<std::string, std::pair<std::string, std::uint16_t>> peers);

    link::EndpointPtr connect(const std::string& self_id, const std::string& provider_id) override;
    link::EndpointPtr poll_incoming(const std::string& self_id) override;

    std::optional<std::uint16_t> listen_port() const;

private:
    link::LinkParams params_;
    std::unique_ptr<link::TcpListener> listener_;
    std::map<std::string, std::pair<std::string, std::uint16_t>> peers_;
};

/// One simulated device. All protocol work happens inside pump(), which
/// must be called from a single thread; command(), status() and
/// subscribe() are safe from any thread.
class DeviceAgent {
public:
    DeviceAgent(AgentConfig config, std::shared_ptr<CoordinatorApi> coordinator,
                std::shared_ptr<LinkConnector> connector, std::shared_ptr<const Clock> clock);

    /// Registers with the coordinator; throws Error(Unreachable) on failure.
    void start();

    /// Validates against the current status snapshot and enqueues. Throws
    /// Error(InvalidInState) when the command makes no sense right now.
    void command(const AgentCommand& cmd);

    /// Processes queued commands, link frames and due timers. Returns true
    /// when anything happened.
    bool pump();

    /// Earliest clock time at which pump() has timed work to do.
    std::optional<double> next_deadline() const;

    /// Wall-clock wait until a command arrives or max_wall_s elapses.
    void wait_for_work(double max_wall_s);

    AgentStatus status() const;
    std::vector<sim::TelemetrySample> telemetry_log() const;
    bool shutdown_requested() const;
    const AgentConfig& config() const { return config_; }
    double now_s() const { return clock_->now_s(); }

    /// Status/prompt events as SSE-ready JSON strings.
    std::shared_ptr<EventChannel> subscribe(std::size_t capacity = 4096);

    /// Fault injection: cut the current peer link.
    void inject_link_fault();

private:
    using Machine = std::variant<std::monostate, session::ConsumerState, session::ProviderState>;

    struct SessionData {
        std::optional<std::string> listing_id;
        std::optional<EnergyAmount> own_amount;
        std::optional<double> duration_s;
        std::optional<std::string> preferred_provider;
        std::optional<proto::RoleAnnounce> peer;
        std::optional<proto::EnergyRequest> pending_request;
        std::optional<std::string> transaction_id;
        std::vector<sim::TelemetrySample> log;
        bool sampling = false;
        bool report_submitted = false;
        bool link_down_seen = false;
        bool closed = false;
        // Transfer bookkeeping (provider authoritative, consumer mirror).
        double start_abs_s = 0.0;
        double elapsed_s = 0.0;
        double expended_mwh = 0.0;
        double gained_mwh = 0.0;
        std::optional<BatteryState> peer_view;
        std::optional<sim::TerminationGoal> goal;
        std::optional<double> next_tick_abs_s;
        std::optional<sim::EndReason> tick_reason;
        double planned_dt_s = 0.0;
    };

    void handle_command(const AgentCommand& cmd);
    void begin_offer(const OfferCmd& cmd);
    void begin_request(const RequestCmd& cmd);
    void dispatch(session::EventKind kind);
    void drain_events();
    void execute(const session::Action& action);
    void send(const proto::ProtocolMessage& msg);
    void start_sampling();
    void stop_sampling();
    void provider_tick();
    void plan_next_tick();
    void mirror_heartbeat(double t_s);
    void submit_report();
    void end_session_cleanup();
    void fail(const std::string& what);
    bool terminal() const;
    std::string state_tag() const;
    void publish_status();
    void publish(const std::string& type, const std::string& data);

    AgentConfig config_;
    std::shared_ptr<CoordinatorApi> coordinator_;
    std::shared_ptr<LinkConnector> connector_;
    std::shared_ptr<const Clock> clock_;

    // Loop-thread state.
    Machine machine_;
    std::optional<Role> role_;
    BatteryState battery_;
    SessionData session_;
    link::EndpointPtr endpoint_;
    std::vector<link::EndpointPtr> extra_links_;
    std::map<std::string, double> timers_;
    std::deque<session::EventKind> events_;
    int request_counter_ = 0;
    bool prompt_published_ = false;

    // Cross-thread state.
    mutable std::mutex mailbox_mu_;
    std::condition_variable mailbox_cv_;
    std::deque<AgentCommand> mailbox_;
    bool shutdown_ = false;

    mutable std::mutex status_mu_;
    AgentStatus status_;
    std::vector<sim::TelemetrySample> log_snapshot_;
    std::vector<std::weak_ptr<EventChannel>> listeners_;
    std::string last_status_json_;
};

/// Drives pump() on the calling thread until `stop` is set or a Shutdown
/// command arrives. Sleeps toward the next deadline, converting clock
/// seconds to wall seconds by `acceleration`.
void run_agent_loop(DeviceAgent& agent, const std::atomic<bool>& stop, double acceleration = 1.0);

std::string encode_status(const AgentStatus& status);
AgentCommand decode_command(const std::string& json_text);
std::string encode_command(const AgentCommand& cmd);

}  // namespace eshare::agent
