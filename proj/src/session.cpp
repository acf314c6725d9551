#include "eshare/session.hpp"

namespace eshare::session {

namespace {

template <class... Ts>
struct overloaded : Ts... {
    using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

template <class T>
const T* as(const Event& e) {
    return std::get_if<T>(&e.kind);
}

template <class T>
const T* msg_as(const Event& e) {
    if (auto* r = as<ev::Received>(e)) return std::get_if<T>(&r->msg);
    return nullptr;
}

proto::Abort abort_tx(const std::string& tx, std::string reason) {
    return {proto::Abort::Scope::Transaction, tx, std::move(reason)};
}

proto::Abort abort_req(const std::string& rid, std::string reason) {
    return {proto::Abort::Scope::Request, rid, std::move(reason)};
}

template <class State>
Transition<State> unchanged(const State& s, std::vector<Action> actions = {}) {
    return {s, std::move(actions)};
}

template <class State>
Transition<State> protocol_error(const State& s, const Event& e) {
    return {s, {RaiseProtocolError{"no transition for " + event_name(e) + " in " + state_name(s)}}};
}

// Timers are not cancelled on every exit path; a timer that is no longer
// relevant to the current state is dropped without error.
bool is_stale_timer(const Event& e) { return as<ev::TimerExpired>(e) != nullptr; }

}  // namespace

std::string state_name(const ConsumerState& state) {
    return std::visit(overloaded{
                          [](const consumer::Idle&) { return "Idle"; },
                          [](const consumer::Connected&) { return "Connected"; },
                          [](const consumer::AwaitingAccept&) { return "AwaitingAccept"; },
                          [](const consumer::Registering&) { return "Registering"; },
                          [](const consumer::Transferring&) { return "Transferring"; },
                          [](const consumer::Finalizing&) { return "Finalizing"; },
                          [](const consumer::Done&) { return "Done"; },
                          [](const consumer::Aborted&) { return "Aborted"; },
                      },
                      state);
}

std::string state_name(const ProviderState& state) {
    return std::visit(overloaded{
                          [](const provider::Idle&) { return "Idle"; },
                          [](const provider::Connected&) { return "Connected"; },
                          [](const provider::Deciding&) { return "Deciding"; },
                          [](const provider::AwaitingStart&) { return "AwaitingStart"; },
                          [](const provider::Transferring&) { return "Transferring"; },
                          [](const provider::Finalizing&) { return "Finalizing"; },
                          [](const provider::Done&) { return "Done"; },
                          [](const provider::Aborted&) { return "Aborted"; },
                      },
                      state);
}

std::string event_name(const Event& event) {
    return std::visit(overloaded{
                          [](const ev::LinkConnected&) { return std::string("LinkConnected"); },
                          [](const ev::Received& r) { return "Received(" + std::string(proto::type_tag(r.msg)) + ")"; },
                          [](const ev::TimerExpired& t) { return "TimerExpired(" + t.id + ")"; },
                          [](const ev::LinkDown&) { return std::string("LinkDown"); },
                          [](const ev::RequestCommand&) { return std::string("RequestCommand"); },
                          [](const ev::AcceptCommand&) { return std::string("AcceptCommand"); },
                          [](const ev::RejectCommand&) { return std::string("RejectCommand"); },
                          [](const ev::AbortCommand&) { return std::string("AbortCommand"); },
                          [](const ev::RegistrationSucceeded&) { return std::string("RegistrationSucceeded"); },
                          [](const ev::RegistrationFailed&) { return std::string("RegistrationFailed"); },
                          [](const ev::HeartbeatDue&) { return std::string("HeartbeatDue"); },
                          [](const ev::TransferFinished&) { return std::string("TransferFinished"); },
                          [](const ev::ReportSubmitted&) { return std::string("ReportSubmitted"); },
                      },
                      event.kind);
}

// ---- consumer -------------------------------------------------------------

Transition<ConsumerState> consumer_handle(const ConsumerState& state, const Event& e, double heartbeat_period_s) {
    using namespace consumer;
    const double loss_after = kMissedHeartbeatsForLoss * heartbeat_period_s;

    if (std::holds_alternative<Idle>(state)) {
        if (auto* c = as<ev::LinkConnected>(e)) return {Connected{}, {SendMessage{c->self}}};
        if (as<ev::AbortCommand>(e)) return {Aborted{as<ev::AbortCommand>(e)->reason}, {}};
        if (as<ev::LinkDown>(e) || is_stale_timer(e)) return unchanged(state);
        return protocol_error(state, e);
    }

    if (std::holds_alternative<Connected>(state)) {
        if (msg_as<proto::RoleAnnounce>(e)) return unchanged(state);
        if (auto* r = as<ev::RequestCommand>(e)) {
            const double deadline = e.now_s + kAcceptTimeoutS;
            return {AwaitingAccept{r->request_id, r->amount, deadline},
                    {SendMessage{proto::EnergyRequest{r->request_id, r->amount}}, SetTimer{kAcceptTimer, deadline}}};
        }
        if (auto* a = as<ev::AbortCommand>(e)) return {Aborted{a->reason}, {}};
        if (as<ev::LinkDown>(e)) return {Aborted{"link-down"}, {}};
        if (is_stale_timer(e)) return unchanged(state);
        return protocol_error(state, e);
    }

    if (auto* s = std::get_if<AwaitingAccept>(&state)) {
        if (auto* m = msg_as<proto::Accept>(e); m && m->request_id == s->request_id) {
            return {Registering{s->request_id}, {RegisterTransaction{proto::EnergyRequest{s->request_id, s->amount}}}};
        }
        if (auto* m = msg_as<proto::Reject>(e); m && m->request_id == s->request_id) {
            return {Aborted{"rejected:" + m->reason}, {CancelTimer{kAcceptTimer}}};
        }
        if (auto* m = msg_as<proto::Abort>(e); m && m->id == s->request_id) {
            return {Aborted{"peer-abort:" + m->reason}, {CancelTimer{kAcceptTimer}}};
        }
        if (auto* t = as<ev::TimerExpired>(e)) {
            if (t->id != kAcceptTimer) return unchanged(state);
            return {Aborted{"timeout"}, {SendMessage{abort_req(s->request_id, "timeout")}}};
        }
        if (auto* a = as<ev::AbortCommand>(e)) {
            return {Aborted{a->reason}, {CancelTimer{kAcceptTimer}, SendMessage{abort_req(s->request_id, a->reason)}}};
        }
        if (as<ev::LinkDown>(e)) return {Aborted{"link-down"}, {CancelTimer{kAcceptTimer}}};
        if (msg_as<proto::RoleAnnounce>(e)) return unchanged(state);
        return protocol_error(state, e);
    }

    if (auto* s = std::get_if<Registering>(&state)) {
        if (auto* ok = as<ev::RegistrationSucceeded>(e)) {
            return {Transferring{ok->transaction_id, e.now_s},
                    {SendMessage{proto::TransferStart{ok->transaction_id, e.now_s}}, StartSampling{},
                     SetTimer{kPeerLossTimer, e.now_s + loss_after}}};
        }
        if (as<ev::RegistrationFailed>(e)) {
            return {Aborted{"registration-failed"}, {SendMessage{abort_req(s->request_id, "registration-failed")}}};
        }
        if (auto* a = as<ev::AbortCommand>(e)) {
            return {Aborted{a->reason}, {SendMessage{abort_req(s->request_id, a->reason)}}};
        }
        if (auto* m = msg_as<proto::Abort>(e); m && m->id == s->request_id) {
            return {Aborted{"peer-abort:" + m->reason}, {}};
        }
        if (as<ev::LinkDown>(e)) return {Aborted{"link-down"}, {}};
        if (is_stale_timer(e)) return unchanged(state);
        return protocol_error(state, e);
    }

    if (auto* s = std::get_if<Transferring>(&state)) {
        if (msg_as<proto::Heartbeat>(e)) return unchanged(state, {SetTimer{kPeerLossTimer, e.now_s + loss_after}});
        if (auto* m = msg_as<proto::TransferComplete>(e); m && m->transaction_id == s->transaction_id) {
            return {Finalizing{s->transaction_id, m->end_reason},
                    {CancelTimer{kPeerLossTimer}, StopSampling{}, SubmitReport{s->transaction_id}}};
        }
        if (auto* m = msg_as<proto::Abort>(e); m && m->id == s->transaction_id) {
            return {Aborted{"peer-abort:" + m->reason},
                    {CancelTimer{kPeerLossTimer}, StopSampling{}, SubmitReport{s->transaction_id}}};
        }
        if (auto* a = as<ev::AbortCommand>(e)) {
            return {Aborted{a->reason},
                    {CancelTimer{kPeerLossTimer}, SendMessage{abort_tx(s->transaction_id, a->reason)}, StopSampling{},
                     SubmitReport{s->transaction_id}}};
        }
        if (as<ev::LinkDown>(e)) return {Aborted{"link-down"}, {StopSampling{}, SubmitReport{s->transaction_id}}};
        if (auto* t = as<ev::TimerExpired>(e)) {
            if (t->id != kPeerLossTimer) return unchanged(state);
            return {Aborted{"peer-lost"},
                    {SendMessage{abort_tx(s->transaction_id, "peer-lost")}, StopSampling{},
                     SubmitReport{s->transaction_id}}};
        }
        return protocol_error(state, e);
    }

    if (auto* s = std::get_if<Finalizing>(&state)) {
        if (as<ev::ReportSubmitted>(e)) return {Done{s->end_reason}, {}};
        if (as<ev::LinkDown>(e) || is_stale_timer(e)) return unchanged(state);
        return protocol_error(state, e);
    }

    // Done and Aborted are terminal; late traffic from the peer is dropped.
    if (as<ev::ReportSubmitted>(e) || as<ev::LinkDown>(e) || as<ev::Received>(e) || is_stale_timer(e) ||
        as<ev::AbortCommand>(e)) {
        return unchanged(state);
    }
    return protocol_error(state, e);
}

// ---- provider -------------------------------------------------------------

Transition<ProviderState> provider_handle(const ProviderState& state, const Event& e) {
    using namespace provider;

    // One-to-one mode: only a Connected provider may consider a request.
    if (auto* req = msg_as<proto::EnergyRequest>(e); req && !std::holds_alternative<Connected>(state)) {
        return unchanged(state, {SendMessage{proto::Reject{req->request_id, "busy"}}});
    }

    if (std::holds_alternative<Idle>(state)) {
        if (auto* c = as<ev::LinkConnected>(e)) return {Connected{}, {SendMessage{c->self}}};
        if (auto* a = as<ev::AbortCommand>(e)) return {Aborted{a->reason}, {}};
        if (as<ev::LinkDown>(e) || is_stale_timer(e)) return unchanged(state);
        return protocol_error(state, e);
    }

    if (std::holds_alternative<Connected>(state)) {
        if (msg_as<proto::RoleAnnounce>(e)) return unchanged(state);
        if (auto* req = msg_as<proto::EnergyRequest>(e)) return {Deciding{req->request_id, req->amount}, {}};
        if (auto* a = as<ev::AbortCommand>(e)) return {Aborted{a->reason}, {}};
        if (as<ev::LinkDown>(e)) return {Aborted{"link-down"}, {}};
        if (is_stale_timer(e)) return unchanged(state);
        return protocol_error(state, e);
    }

    if (auto* s = std::get_if<Deciding>(&state)) {
        if (as<ev::AcceptCommand>(e)) return {AwaitingStart{s->request_id}, {SendMessage{proto::Accept{s->request_id}}}};
        if (auto* r = as<ev::RejectCommand>(e)) {
            return {Connected{}, {SendMessage{proto::Reject{s->request_id, r->reason}}}};
        }
        if (auto* m = msg_as<proto::Abort>(e); m && m->id == s->request_id) {
            return {Aborted{"peer-abort:" + m->reason}, {}};
        }
        if (auto* a = as<ev::AbortCommand>(e)) {
            return {Aborted{a->reason}, {SendMessage{abort_req(s->request_id, a->reason)}}};
        }
        if (as<ev::LinkDown>(e)) return {Aborted{"link-down"}, {}};
        if (is_stale_timer(e)) return unchanged(state);
        return protocol_error(state, e);
    }

    if (auto* s = std::get_if<AwaitingStart>(&state)) {
        if (auto* m = msg_as<proto::TransferStart>(e)) {
            return {Transferring{m->transaction_id, e.now_s}, {StartSampling{}}};
        }
        if (auto* m = msg_as<proto::Abort>(e); m && m->id == s->request_id) {
            return {Aborted{"peer-abort:" + m->reason}, {}};
        }
        if (auto* a = as<ev::AbortCommand>(e)) {
            return {Aborted{a->reason}, {SendMessage{abort_req(s->request_id, a->reason)}}};
        }
        if (as<ev::LinkDown>(e)) return {Aborted{"link-down"}, {}};
        if (is_stale_timer(e)) return unchanged(state);
        return protocol_error(state, e);
    }

    if (auto* s = std::get_if<Transferring>(&state)) {
        if (auto* h = as<ev::HeartbeatDue>(e)) return unchanged(state, {SendMessage{proto::Heartbeat{h->t_s}}});
        if (auto* f = as<ev::TransferFinished>(e)) {
            return {Finalizing{s->transaction_id, f->end_reason},
                    {StopSampling{}, SendMessage{proto::TransferComplete{s->transaction_id, f->end_reason}},
                     SubmitReport{s->transaction_id}}};
        }
        if (auto* m = msg_as<proto::Abort>(e); m && m->id == s->transaction_id) {
            return {Aborted{"peer-abort:" + m->reason}, {StopSampling{}, SubmitReport{s->transaction_id}}};
        }
        if (auto* a = as<ev::AbortCommand>(e)) {
            return {Aborted{a->reason},
                    {SendMessage{abort_tx(s->transaction_id, a->reason)}, StopSampling{},
                     SubmitReport{s->transaction_id}}};
        }
        if (as<ev::LinkDown>(e)) return {Aborted{"link-down"}, {StopSampling{}, SubmitReport{s->transaction_id}}};
        if (is_stale_timer(e)) return unchanged(state);
        return protocol_error(state, e);
    }

    if (auto* s = std::get_if<Finalizing>(&state)) {
        if (as<ev::ReportSubmitted>(e)) return {Done{s->end_reason}, {}};
        if (as<ev::LinkDown>(e) || is_stale_timer(e)) return unchanged(state);
        return protocol_error(state, e);
    }

    if (as<ev::ReportSubmitted>(e) || as<ev::LinkDown>(e) || as<ev::Received>(e) || is_stale_timer(e) ||
        as<ev::AbortCommand>(e)) {
        return unchanged(state);
    }
    return protocol_error(state, e);
}

std::optional<std::string> active_transaction(const ConsumerState& state) {
    if (auto* s = std::get_if<consumer::Transferring>(&state)) return s->transaction_id;
    if (auto* s = std::get_if<consumer::Finalizing>(&state)) return s->transaction_id;
    return std::nullopt;
}

std::optional<std::string> active_transaction(const ProviderState& state) {
    if (auto* s = std::get_if<provider::Transferring>(&state)) return s->transaction_id;
    if (auto* s = std::get_if<provider::Finalizing>(&state)) return s->transaction_id;
    return std::nullopt;
}

}  // namespace eshare::session
