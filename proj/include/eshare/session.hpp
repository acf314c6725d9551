#pragma once

// Consumer and provider handshake/transfer lifecycles as pure transition
// functions. They never touch a link, clock, or coordinator: every side
// effect comes back as an Action for the owning agent to perform.

#include <optional>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "eshare/protocol.hpp"

namespace eshare::session {

inline constexpr double kAcceptTimeoutS = 30.0;
inline constexpr int kMissedHeartbeatsForLoss = 3;

inline constexpr const char* kAcceptTimer = "accept";
inline constexpr const char* kPeerLossTimer = "peer-loss";

// ---- states ---------------------------------------------------------------

namespace consumer {
struct Idle {};
struct Connected {};
struct AwaitingAccept {
    std::string request_id;
    EnergyAmount amount{1};
    double deadline_s;
};
struct Registering {
    std::string request_id;
};
struct Transferring {
    std::string transaction_id;
    double started_at_s;
};
struct Finalizing {
    std::string transaction_id;
    sim::EndReason end_reason;
};
struct Done {
    sim::EndReason end_reason;
};
struct Aborted {
    std::string reason;
};
}  // namespace consumer

using ConsumerState = std::variant<consumer::Idle, consumer::Connected, consumer::AwaitingAccept,
                                   consumer::Registering, consumer::Transferring, consumer::Finalizing,
                                   consumer::Done, consumer::Aborted>;

namespace provider {
struct Idle {};
struct Connected {};
struct Deciding {
    std::string request_id;
    EnergyAmount amount{1};
};
struct AwaitingStart {
    std::string request_id;
};
struct Transferring {
    std::string transaction_id;
    double started_at_s;
};
struct Finalizing {
    std::string transaction_id;
    sim::EndReason end_reason;
};
struct Done {
    sim::EndReason end_reason;
};
struct Aborted {
    std::string reason;
};
}  // namespace provider

using ProviderState = std::variant<provider::Idle, provider::Connected, provider::Deciding, provider::AwaitingStart,
                                   provider::Transferring, provider::Finalizing, provider::Done, provider::Aborted>;

std::string state_name(const ConsumerState& state);
std::string state_name(const ProviderState& state);

// ---- actions --------------------------------------------------------------

struct SendMessage {
    proto::ProtocolMessage msg;
};
struct RegisterTransaction {
    proto::EnergyRequest request;
};
struct StartSampling {};
struct StopSampling {};
struct SubmitReport {
    std::string transaction_id;
};
struct SetTimer {
    std::string id;
    double deadline_s;
};
struct CancelTimer {
    std::string id;
};
struct RaiseProtocolError {
    std::string detail;
};

using Action = std::variant<SendMessage, RegisterTransaction, StartSampling, StopSampling, SubmitReport, SetTimer,
                            CancelTimer, RaiseProtocolError>;

// ---- events ---------------------------------------------------------------

namespace ev {
/// Link established; carries this device's own announcement.
struct LinkConnected {
    proto::RoleAnnounce self;
};
struct Received {
    proto::ProtocolMessage msg;
};
struct TimerExpired {
    std::string id;
};
struct LinkDown {};
struct RequestCommand {
    std::string request_id;
    EnergyAmount amount{1};
};
struct AcceptCommand {};
struct RejectCommand {
    std::string reason;
};
struct AbortCommand {
    std::string reason;
};
struct RegistrationSucceeded {
    std::string transaction_id;
};
struct RegistrationFailed {
    std::string detail;
};
/// Provider sampler took a step ending at t_s (transfer-relative).
struct HeartbeatDue {
    double t_s;
};
/// Provider sampler hit a termination goal.
struct TransferFinished {
    sim::EndReason end_reason;
};
struct ReportSubmitted {};
}  // namespace ev

using EventKind = std::variant<ev::LinkConnected, ev::Received, ev::TimerExpired, ev::LinkDown, ev::RequestCommand,
                               ev::AcceptCommand, ev::RejectCommand, ev::AbortCommand, ev::RegistrationSucceeded,
                               ev::RegistrationFailed, ev::HeartbeatDue, ev::TransferFinished, ev::ReportSubmitted>;

struct Event {
    double now_s = 0.0;
    EventKind kind;
};

/// Short label for traces and protocol-error details.
std::string event_name(const Event& event);

template <class State>
struct Transition {
    State state;
    std::vector<Action> actions;
};

Transition<ConsumerState> consumer_handle(const ConsumerState& state, const Event& event,
                                          double heartbeat_period_s = 5.0);
Transition<ProviderState> provider_handle(const ProviderState& state, const Event& event);

/// Transaction id of the active/closing transfer, if any.
std::optional<std::string> active_transaction(const ConsumerState& state);
std::optional<std::string> active_transaction(const ProviderState& state);

}  // namespace eshare::session
