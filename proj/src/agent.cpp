#include "eshare/agent.hpp"

#include <algorithm>
#include <chrono>
#include <limits>

#include "eshare/error.hpp"
#include "eshare/wire.hpp"

namespace eshare::agent {

namespace {

template <class... Ts>
struct overloaded : Ts... {
    using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

// The provider cannot see the consumer's battery, so it steps against an
// unbounded sink; a full consumer stops the transfer from its own side.
constexpr double kSinkCapacityMwh = 1e15;

using wire::json;

json sample_json(const sim::TelemetrySample& s) { return wire::encode(s); }

}  // namespace

void AgentConfig::validate() const {
    if (!(profile.capacity_mwh > 0.0)) throw Error(ErrorCode::InvalidCapacity, "capacity must be positive");
    if (!(initial_level_percent >= 0.0 && initial_level_percent <= 100.0)) {
        throw Error(ErrorCode::InvalidArgument, "initial level must lie within [0, 100]");
    }
    params.validate();
}

// ---- connectors -----------------------------------------------------------

link::EndpointPtr ProximityHub::connect(const std::string& self_id, const std::string& provider_id) {
    std::lock_guard lock(mu_);
    auto it = incoming_.find(provider_id);
    if (it == incoming_.end()) throw Error(ErrorCode::LinkDown, "device is not in range", provider_id);
    auto [a, b] = link::pair(params_, clock_);
    it->second.push_back(b);
    issued_[self_id].push_back(a);
    issued_[provider_id].push_back(b);
    return a;
}

link::EndpointPtr ProximityHub::poll_incoming(const std::string& self_id) {
    std::lock_guard lock(mu_);
    auto it = incoming_.find(self_id);
    if (it == incoming_.end() || it->second.empty()) return nullptr;
    auto ep = it->second.front();
    it->second.pop_front();
    return ep;
}

void ProximityHub::announce_presence(const std::string& self_id) {
    std::lock_guard lock(mu_);
    incoming_.try_emplace(self_id);
}

std::vector<link::EndpointPtr> ProximityHub::endpoints_of(const std::string& device_id) const {
    std::lock_guard lock(mu_);
    std::vector<link::EndpointPtr> out;
    if (auto it = issued_.find(device_id); it != issued_.end()) {
        for (const auto& w : it->second) {
            if (auto ep = w.lock()) out.push_back(ep);
        }
    }
    return out;
}

TcpConnector::TcpConnector(link::LinkParams params, std::optional<std::uint16_t> listen_port,
                           std::map<std::string, std::pair<std::string, std::uint16_t>> peers)
    : params_(params), peers_(std::move(peers)) {
    if (listen_port) listener_ = std::make_unique<link::TcpListener>(*listen_port, params_);
}

link::EndpointPtr TcpConnector::connect(const std::string&, const std::string& provider_id) {
    auto it = peers_.find(provider_id);
    if (it == peers_.end()) throw Error(ErrorCode::LinkDown, "no link address known for device", provider_id);
    return link::tcp_connect(it->second.first, it->second.second, params_);
}

link::EndpointPtr TcpConnector::poll_incoming(const std::string&) {
    if (!listener_) return nullptr;
    return listener_->accept(0.0);
}

std::optional<std::uint16_t> TcpConnector::listen_port() const {
    if (!listener_) return std::nullopt;
    return listener_->port();
}

// ---- agent ----------------------------------------------------------------

DeviceAgent::DeviceAgent(AgentConfig config, std::shared_ptr<CoordinatorApi> coordinator,
                         std::shared_ptr<LinkConnector> connector, std::shared_ptr<const Clock> clock)
    : config_(std::move(config)),
      coordinator_(std::move(coordinator)),
      connector_(std::move(connector)),
      clock_(std::move(clock)),
      battery_(BatteryState::at_level(config_.profile.capacity_mwh, config_.initial_level_percent)) {
    config_.validate();
    status_.device_id = config_.profile.device_id;
    status_.battery = battery_;
}

void DeviceAgent::start() {
    try {
        const std::string id = coordinator_->register_device(config_.profile);
        config_.profile.device_id = id;
    } catch (const Error&) {
        throw;
    } catch (const std::exception& e) {
        throw Error(ErrorCode::Unreachable, "coordinator unreachable", e.what());
    }
    connector_->announce_presence(config_.profile.device_id);
    {
        std::lock_guard lock(status_mu_);
        status_.device_id = config_.profile.device_id;
    }
    publish_status();
}

void DeviceAgent::command(const AgentCommand& cmd) {
    {
        std::lock_guard lock(status_mu_);
        const AgentStatus& s = status_;
        auto reject = [](const std::string& why) { throw Error(ErrorCode::InvalidInState, why); };
        std::visit(overloaded{
                       [&](const OfferCmd&) {
                           if (s.session_active) reject("a session is already active");
                           if (battery_.level_percent() <= config_.params.provider_floor_percent) {
                               reject("battery is at or below the provider floor");
                           }
                       },
                       [&](const RequestCmd& r) {
                           if (s.session_active) reject("a session is already active");
                           if (r.duration_s && !(*r.duration_s > 0.0)) reject("duration_s must be positive");
                       },
                       [&](const AcceptPendingCmd&) {
                           if (s.protocol_state != "Deciding") reject("no pending request to accept");
                       },
                       [&](const RejectPendingCmd&) {
                           if (s.protocol_state != "Deciding") reject("no pending request to reject");
                       },
                       [&](const AbortCmd&) {
                           if (!s.session_active) reject("no active session");
                       },
                       [&](const ShutdownCmd&) {},
                   },
                   cmd);
        if (std::holds_alternative<OfferCmd>(cmd) || std::holds_alternative<RequestCmd>(cmd)) {
            status_.session_active = true;
        }
        // Deciding is answered once; a second answer queued behind it would be stale.
        if (std::holds_alternative<AcceptPendingCmd>(cmd) || std::holds_alternative<RejectPendingCmd>(cmd)) {
            status_.protocol_state = "Deciding(answered)";
        }
    }
    {
        std::lock_guard lock(mailbox_mu_);
        mailbox_.push_back(cmd);
    }
    mailbox_cv_.notify_all();
}

void DeviceAgent::wait_for_work(double max_wall_s) {
    std::unique_lock lock(mailbox_mu_);
    mailbox_cv_.wait_for(lock, std::chrono::duration<double>(std::max(0.0, max_wall_s)),
                         [&] { return !mailbox_.empty() || shutdown_; });
}

bool DeviceAgent::shutdown_requested() const {
    std::lock_guard lock(mailbox_mu_);
    return shutdown_;
}

bool DeviceAgent::terminal() const {
    if (auto* c = std::get_if<session::ConsumerState>(&machine_)) {
        return std::holds_alternative<session::consumer::Done>(*c) ||
               std::holds_alternative<session::consumer::Aborted>(*c);
    }
    if (auto* p = std::get_if<session::ProviderState>(&machine_)) {
        return std::holds_alternative<session::provider::Done>(*p) ||
               std::holds_alternative<session::provider::Aborted>(*p);
    }
    return true;
}

std::string DeviceAgent::state_tag() const {
    if (auto* c = std::get_if<session::ConsumerState>(&machine_)) return session::state_name(*c);
    if (auto* p = std::get_if<session::ProviderState>(&machine_)) return session::state_name(*p);
    return "Idle";
}

void DeviceAgent::fail(const std::string& what) {
    std::lock_guard lock(status_mu_);
    status_.last_error = what;
}

bool DeviceAgent::pump() {
    bool progress = false;

    std::deque<AgentCommand> commands;
    {
        std::lock_guard lock(mailbox_mu_);
        commands.swap(mailbox_);
    }
    for (const auto& cmd : commands) {
        handle_command(cmd);
        progress = true;
    }

    // Inbound links: the first one while waiting as an Idle provider becomes
    // the session link; anything else only ever hears Reject(busy).
    while (auto ep = connector_->poll_incoming(config_.profile.device_id)) {
        progress = true;
        auto* p = std::get_if<session::ProviderState>(&machine_);
        if (p && std::holds_alternative<session::provider::Idle>(*p) && !endpoint_) {
            endpoint_ = ep;
            dispatch(session::ev::LinkConnected{proto::RoleAnnounce{
                config_.profile.device_id, Role::Provider, *session_.own_amount, config_.profile.capacity_mwh}});
            drain_events();
        } else {
            extra_links_.push_back(ep);
        }
    }

    for (auto it = extra_links_.begin(); it != extra_links_.end();) {
        auto r = (*it)->recv_frame(0.0);
        if (r.status == link::RecvStatus::LinkDown) {
            it = extra_links_.erase(it);
            continue;
        }
        if (r.status == link::RecvStatus::Timeout) {
            ++it;
            continue;
        }
        progress = true;
        auto decoded = proto::try_decode_message(r.frame.payload);
        if (auto* msg = std::get_if<proto::ProtocolMessage>(&decoded)) {
            session::ProviderState view = session::provider::Idle{};
            if (auto* p = std::get_if<session::ProviderState>(&machine_)) view = *p;
            if (std::holds_alternative<session::provider::Connected>(view)) view = session::provider::Idle{};
            auto t = session::provider_handle(view, {clock_->now_s(), session::ev::Received{*msg}});
            for (const auto& a : t.actions) {
                if (auto* send = std::get_if<session::SendMessage>(&a)) {
                    try {
                        (*it)->send_frame({proto::encode_message(send->msg)});
                    } catch (const Error&) {
                    }
                }
            }
        }
    }

    if (endpoint_ && !session_.link_down_seen) {
        for (;;) {
            auto r = endpoint_->recv_frame(0.0);
            if (r.status == link::RecvStatus::Timeout) break;
            progress = true;
            if (r.status == link::RecvStatus::LinkDown) {
                session_.link_down_seen = true;
                dispatch(session::ev::LinkDown{});
                drain_events();
                break;
            }
            auto decoded = proto::try_decode_message(r.frame.payload);
            if (auto* err = std::get_if<proto::DecodeError>(&decoded)) {
                fail("decode error: " + err->message);
                std::lock_guard lock(status_mu_);
                ++status_.protocol_errors;
                continue;
            }
            const auto& msg = std::get<proto::ProtocolMessage>(decoded);
            if (auto* ann = std::get_if<proto::RoleAnnounce>(&msg)) session_.peer = *ann;
            if (auto* req = std::get_if<proto::EnergyRequest>(&msg)) {
                auto* p = std::get_if<session::ProviderState>(&machine_);
                if (p && std::holds_alternative<session::provider::Connected>(*p)) session_.pending_request = *req;
            }
            if (auto* hb = std::get_if<proto::Heartbeat>(&msg); hb && role_ == Role::Consumer) {
                mirror_heartbeat(hb->t_s);
            }
            dispatch(session::ev::Received{msg});
            drain_events();
            if (!endpoint_ || session_.link_down_seen) break;
        }
    }

    for (;;) {
        const double now = clock_->now_s();
        std::optional<std::pair<double, std::string>> due;
        for (const auto& [id, deadline] : timers_) {
            if (deadline <= now && (!due || deadline < due->first)) due = std::make_pair(deadline, id);
        }
        const bool tick_due = session_.next_tick_abs_s && *session_.next_tick_abs_s <= now &&
                              (!due || *session_.next_tick_abs_s <= due->first);
        if (tick_due) {
            provider_tick();
        } else if (due) {
            timers_.erase(due->second);
            dispatch(session::ev::TimerExpired{due->second});
        } else {
            break;
        }
        drain_events();
        progress = true;
    }

    if (progress) publish_status();
    return progress;
}

std::optional<double> DeviceAgent::next_deadline() const {
    std::optional<double> best;
    auto consider = [&](std::optional<double> t) {
        if (t && (!best || *t < *best)) best = t;
    };
    for (const auto& [id, deadline] : timers_) consider(deadline);
    consider(session_.next_tick_abs_s);
    if (endpoint_ && !session_.link_down_seen) {
        consider(endpoint_->next_delivery_s());
        consider(endpoint_->scheduled_disconnect_s());
    }
    for (const auto& ep : extra_links_) consider(ep->next_delivery_s());
    return best;
}

void DeviceAgent::handle_command(const AgentCommand& cmd) {
    std::visit(overloaded{
                   [&](const OfferCmd& c) { begin_offer(c); },
                   [&](const RequestCmd& c) { begin_request(c); },
                   [&](const AcceptPendingCmd&) { dispatch(session::ev::AcceptCommand{}); },
                   [&](const RejectPendingCmd& c) { dispatch(session::ev::RejectCommand{c.reason}); },
                   [&](const AbortCmd& c) { dispatch(session::ev::AbortCommand{c.reason}); },
                   [&](const ShutdownCmd&) {
                       std::lock_guard lock(mailbox_mu_);
                       shutdown_ = true;
                   },
               },
               cmd);
    drain_events();
}

void DeviceAgent::begin_offer(const OfferCmd& cmd) {
    session_ = SessionData{};
    endpoint_.reset();
    timers_.clear();
    prompt_published_ = false;
    role_ = Role::Provider;
    machine_ = session::ProviderState{session::provider::Idle{}};
    session_.own_amount = cmd.amount;
    try {
        session_.listing_id = coordinator_->post_listing(config_.profile.device_id, Role::Provider, cmd.amount).listing_id;
    } catch (const std::exception& e) {
        fail(std::string("offer failed: ") + e.what());
        machine_ = session::ProviderState{session::provider::Aborted{"listing-failed"}};
        session_.closed = true;
    }
}

void DeviceAgent::begin_request(const RequestCmd& cmd) {
    session_ = SessionData{};
    endpoint_.reset();
    timers_.clear();
    prompt_published_ = false;
    role_ = Role::Consumer;
    machine_ = session::ConsumerState{session::consumer::Idle{}};
    session_.own_amount = cmd.amount;
    session_.duration_s = cmd.duration_s;
    session_.preferred_provider = cmd.provider_id;

    auto abort_with = [&](const std::string& reason, const std::string& detail) {
        fail(reason + ": " + detail);
        machine_ = session::ConsumerState{session::consumer::Aborted{reason}};
        end_session_cleanup();
    };

    try {
        session_.listing_id = coordinator_->post_listing(config_.profile.device_id, Role::Consumer, cmd.amount).listing_id;
    } catch (const std::exception& e) {
        fail(std::string("request failed: ") + e.what());
        machine_ = session::ConsumerState{session::consumer::Aborted{"listing-failed"}};
        session_.closed = true;
        return;
    }

    std::string provider;
    if (cmd.provider_id) {
        provider = *cmd.provider_id;
    } else {
        try {
            for (const auto& l : coordinator_->list_open(config_.profile.microcell_id, Role::Provider)) {
                if (l.amount == cmd.amount && l.device_id != config_.profile.device_id) {
                    provider = l.device_id;
                    break;
                }
            }
        } catch (const std::exception& e) {
            abort_with("no-provider", e.what());
            return;
        }
        if (provider.empty()) {
            abort_with("no-provider", "no open offer with a matching amount");
            return;
        }
    }

    try {
        endpoint_ = connector_->connect(config_.profile.device_id, provider);
    } catch (const std::exception& e) {
        abort_with("link-down", e.what());
        return;
    }
    dispatch(session::ev::LinkConnected{
        proto::RoleAnnounce{config_.profile.device_id, Role::Consumer, cmd.amount, config_.profile.capacity_mwh}});
    dispatch(session::ev::RequestCommand{config_.profile.device_id + "-r" + std::to_string(++request_counter_),
                                         cmd.amount});
}

void DeviceAgent::dispatch(session::EventKind kind) { events_.push_back(std::move(kind)); }

void DeviceAgent::drain_events() {
    while (!events_.empty()) {
        session::Event e{clock_->now_s(), std::move(events_.front())};
        events_.pop_front();
        std::vector<session::Action> actions;
        if (auto* c = std::get_if<session::ConsumerState>(&machine_)) {
            auto t = session::consumer_handle(*c, e, config_.params.sampling_period_s);
            machine_ = std::move(t.state);
            actions = std::move(t.actions);
        } else if (auto* p = std::get_if<session::ProviderState>(&machine_)) {
            auto t = session::provider_handle(*p, e);
            machine_ = std::move(t.state);
            actions = std::move(t.actions);
        } else {
            continue;
        }
        for (const auto& a : actions) execute(a);

        if (auto* p = std::get_if<session::ProviderState>(&machine_)) {
            if (auto* d = std::get_if<session::provider::Deciding>(p); d && !prompt_published_) {
                prompt_published_ = true;
                publish("prompt", json{{"request_id", d->request_id}, {"amount_percent", d->amount.percent()}}.dump());
                if (config_.auto_accept) dispatch(session::ev::AcceptCommand{});
            }
            if (!std::holds_alternative<session::provider::Deciding>(*p)) prompt_published_ = false;
        }
        if (terminal()) end_session_cleanup();
    }
}

void DeviceAgent::execute(const session::Action& action) {
    std::visit(overloaded{
                   [&](const session::SendMessage& a) { send(a.msg); },
                   [&](const session::RegisterTransaction& a) {
                       if (!session_.peer) {
                           dispatch(session::ev::RegistrationFailed{"peer never announced itself"});
                           return;
                       }
                       TransactionRequest req;
                       req.consumer_id = config_.profile.device_id;
                       req.provider_id = session_.peer->device_id;
                       req.amount = a.request.amount;
                       if (session_.duration_s) {
                           req.goal_mode = sim::GoalMode::DurationTarget;
                           req.duration_s = session_.duration_s;
                       }
                       try {
                           session_.transaction_id = coordinator_->create_transaction(req);
                           dispatch(session::ev::RegistrationSucceeded{*session_.transaction_id});
                       } catch (const std::exception& e) {
                           fail(std::string("registration failed: ") + e.what());
                           dispatch(session::ev::RegistrationFailed{e.what()});
                       }
                   },
                   [&](const session::StartSampling&) { start_sampling(); },
                   [&](const session::StopSampling&) { stop_sampling(); },
                   [&](const session::SubmitReport&) { submit_report(); },
                   [&](const session::SetTimer& a) { timers_[a.id] = a.deadline_s; },
                   [&](const session::CancelTimer& a) { timers_.erase(a.id); },
                   [&](const session::RaiseProtocolError& a) {
                       fail("protocol error: " + a.detail);
                       std::lock_guard lock(status_mu_);
                       ++status_.protocol_errors;
                   },
               },
               action);
}

void DeviceAgent::send(const proto::ProtocolMessage& msg) {
    if (!endpoint_ || session_.link_down_seen) return;
    try {
        endpoint_->send_frame({proto::encode_message(msg)});
    } catch (const Error& e) {
        if (e.code() == ErrorCode::LinkDown) {
            session_.link_down_seen = true;
            dispatch(session::ev::LinkDown{});
        } else {
            fail(std::string("send failed: ") + e.what());
        }
    }
}

void DeviceAgent::start_sampling() {
    session_.sampling = true;
    session_.start_abs_s = clock_->now_s();
    session_.elapsed_s = 0.0;
    session_.expended_mwh = 0.0;
    session_.gained_mwh = 0.0;
    session_.log = {sim::TelemetrySample::of(0.0, battery_)};

    if (role_ == Role::Consumer) {
        const double peer_cap = session_.peer ? session_.peer->capacity_mwh : kSinkCapacityMwh;
        session_.peer_view = BatteryState(peer_cap, peer_cap);
        if (battery_.charge_mwh() >= battery_.capacity_mwh()) dispatch(session::ev::AbortCommand{"consumer-full"});
        return;
    }

    auto* p = std::get_if<session::ProviderState>(&machine_);
    const auto tx = p ? session::active_transaction(*p) : std::nullopt;
    session_.transaction_id = tx;
    session_.peer_view = BatteryState(kSinkCapacityMwh, 0.0);
    try {
        const TransactionRecord rec = coordinator_->get_transaction(tx.value_or(""));
        if (rec.goal_mode == sim::GoalMode::DurationTarget) {
            session_.goal = sim::TerminationGoal::duration(rec.duration_s.value_or(0.0));
        } else {
            const double consumer_cap = session_.peer ? session_.peer->capacity_mwh : config_.profile.capacity_mwh;
            const EnergyAmount requested = session_.pending_request ? session_.pending_request->amount : rec.amount;
            session_.goal = sim::TerminationGoal::amount(
                percent_to_energy(*session_.own_amount, config_.profile.capacity_mwh),
                percent_to_energy(requested, consumer_cap));
        }
    } catch (const std::exception& e) {
        fail(std::string("transaction lookup failed: ") + e.what());
        dispatch(session::ev::AbortCommand{"transaction-lookup-failed"});
        return;
    }

    if (auto reason = sim::should_terminate(0.0, 0.0, battery_, *session_.peer_view, *session_.goal, config_.params,
                                            0.0)) {
        dispatch(session::ev::TransferFinished{*reason});
        return;
    }
    plan_next_tick();
}

void DeviceAgent::plan_next_tick() {
    const auto next = sim::clamp_final_dt(battery_, *session_.peer_view, config_.params, *session_.goal,
                                          session_.expended_mwh, session_.gained_mwh, session_.elapsed_s);
    if (next.dt_s <= 0.0) {
        session_.next_tick_abs_s.reset();
        dispatch(session::ev::TransferFinished{next.reason.value_or(sim::EndReason::Aborted)});
        return;
    }
    session_.planned_dt_s = next.dt_s;
    session_.tick_reason = next.reason;
    session_.next_tick_abs_s = session_.start_abs_s + session_.elapsed_s + next.dt_s;
}

void DeviceAgent::provider_tick() {
    session_.next_tick_abs_s.reset();
    if (!session_.sampling) return;
    try {
        auto step = sim::step_transfer(battery_, *session_.peer_view, config_.params, session_.planned_dt_s);
        battery_ = step.provider;
        session_.peer_view = step.consumer;
        session_.expended_mwh += step.drop_mwh;
        session_.gained_mwh += step.gain_mwh;
    } catch (const Error& e) {
        fail(std::string("transfer step failed: ") + e.what());
        dispatch(session::ev::AbortCommand{"step-failed"});
        return;
    }
    session_.elapsed_s += session_.planned_dt_s;
    session_.log.push_back(sim::TelemetrySample::of(session_.elapsed_s, battery_));
    dispatch(session::ev::HeartbeatDue{session_.elapsed_s});
    if (session_.tick_reason) {
        dispatch(session::ev::TransferFinished{*session_.tick_reason});
    } else {
        plan_next_tick();
    }
}

void DeviceAgent::stop_sampling() {
    if (!session_.sampling) return;
    // An aborted provider accounts for energy that flowed since its last tick.
    if (role_ == Role::Provider && terminal() && session_.goal) {
        const double now_rel = clock_->now_s() - session_.start_abs_s;
        const double dt = std::min(now_rel - session_.elapsed_s, session_.planned_dt_s);
        if (dt > 1e-9) {
            try {
                auto step = sim::step_transfer(battery_, *session_.peer_view, config_.params, dt);
                battery_ = step.provider;
                session_.peer_view = step.consumer;
                session_.expended_mwh += step.drop_mwh;
                session_.gained_mwh += step.gain_mwh;
                session_.elapsed_s += dt;
                session_.log.push_back(sim::TelemetrySample::of(session_.elapsed_s, battery_));
            } catch (const Error& e) {
                fail(std::string("final step failed: ") + e.what());
            }
        }
    }
    session_.sampling = false;
    session_.next_tick_abs_s.reset();
}

void DeviceAgent::mirror_heartbeat(double t_s) {
    auto* c = std::get_if<session::ConsumerState>(&machine_);
    if (!c || !std::holds_alternative<session::consumer::Transferring>(*c) || !session_.sampling) return;
    const double dt = t_s - session_.elapsed_s;
    if (!(dt > 0.0)) return;
    try {
        auto step = sim::step_transfer(*session_.peer_view, battery_, config_.params, dt);
        session_.peer_view = step.provider;
        battery_ = step.consumer;
        session_.expended_mwh += step.drop_mwh;
        session_.gained_mwh += step.gain_mwh;
        session_.elapsed_s = t_s;
        session_.log.push_back(sim::TelemetrySample::of(t_s, battery_));
    } catch (const Error& e) {
        if (e.code() != ErrorCode::Overfull) {
            fail(std::string("mirror step failed: ") + e.what());
            return;
        }
        // Full before this heartbeat: land exactly on capacity, then stop.
        const double gain_rate = config_.params.efficiency * config_.params.drop_rate_mwh_per_s();
        const double dt_full = (battery_.capacity_mwh() - battery_.charge_mwh()) / gain_rate;
        if (dt_full > 0.0) {
            auto step = sim::step_transfer(*session_.peer_view, battery_, config_.params, dt_full);
            session_.peer_view = step.provider;
            battery_ = step.consumer;
            session_.expended_mwh += step.drop_mwh;
            session_.gained_mwh += step.gain_mwh;
            session_.elapsed_s += dt_full;
            session_.log.push_back(sim::TelemetrySample::of(session_.elapsed_s, battery_));
        }
        dispatch(session::ev::AbortCommand{"consumer-full"});
    }
}

void DeviceAgent::submit_report() {
    if (session_.report_submitted || !session_.transaction_id || session_.log.empty()) return;
    PartyReport report;
    report.device_id = config_.profile.device_id;
    report.log = session_.log;
    report.final_battery = battery_;
    report.end_reason = sim::EndReason::Aborted;
    if (auto* c = std::get_if<session::ConsumerState>(&machine_)) {
        if (auto* f = std::get_if<session::consumer::Finalizing>(c)) report.end_reason = f->end_reason;
    } else if (auto* p = std::get_if<session::ProviderState>(&machine_)) {
        if (auto* f = std::get_if<session::provider::Finalizing>(p)) report.end_reason = f->end_reason;
    }
    try {
        coordinator_->submit_report(*session_.transaction_id, report);
        session_.report_submitted = true;
        {
            std::lock_guard lock(status_mu_);
            status_.last_transaction_id = session_.transaction_id;
        }
        dispatch(session::ev::ReportSubmitted{});
    } catch (const std::exception& e) {
        fail(std::string("report submission failed: ") + e.what());
    }
}

void DeviceAgent::end_session_cleanup() {
    if (session_.closed) return;
    session_.closed = true;
    timers_.clear();
    session_.next_tick_abs_s.reset();
    if (!session_.transaction_id && session_.listing_id) {
        try {
            coordinator_->withdraw_listing(*session_.listing_id);
        } catch (const std::exception&) {
            // Already matched or withdrawn.
        }
    }
}

void DeviceAgent::inject_link_fault() {
    if (endpoint_) endpoint_->inject_disconnect();
}

AgentStatus DeviceAgent::status() const {
    std::lock_guard lock(status_mu_);
    return status_;
}

std::vector<sim::TelemetrySample> DeviceAgent::telemetry_log() const {
    std::lock_guard lock(status_mu_);
    return log_snapshot_;
}

std::shared_ptr<EventChannel> DeviceAgent::subscribe(std::size_t capacity) {
    auto ch = std::make_shared<EventChannel>(capacity);
    std::lock_guard lock(status_mu_);
    ch->push(json{{"event", "status"}, {"data", json::parse(encode_status(status_))}}.dump());
    listeners_.push_back(ch);
    return ch;
}

void DeviceAgent::publish(const std::string& type, const std::string& data) {
    const std::string event = R"({"event":")" + type + R"(","data":)" + data + "}";
    std::erase_if(listeners_, [&](const std::weak_ptr<EventChannel>& w) {
        auto ch = w.lock();
        if (!ch || ch->closed()) return true;
        ch->push(event);
        return false;
    });
}

void DeviceAgent::publish_status() {
    std::lock_guard lock(status_mu_);
    status_.role = role_;
    status_.protocol_state = state_tag();
    status_.battery = battery_;
    status_.active_transaction_id.reset();
    status_.prompt.reset();
    status_.abort_reason.reset();
    if (auto* c = std::get_if<session::ConsumerState>(&machine_)) {
        status_.active_transaction_id = session::active_transaction(*c);
        if (auto* a = std::get_if<session::consumer::Aborted>(c)) status_.abort_reason = a->reason;
    } else if (auto* p = std::get_if<session::ProviderState>(&machine_)) {
        status_.active_transaction_id = session::active_transaction(*p);
        if (auto* a = std::get_if<session::provider::Aborted>(p)) status_.abort_reason = a->reason;
        if (auto* d = std::get_if<session::provider::Deciding>(p)) status_.prompt = PendingPrompt{d->request_id, d->amount};
    }
    status_.last_sample = session_.log.empty() ? std::nullopt : std::optional(session_.log.back());
    status_.log_size = session_.log.size();
    status_.session_active = !terminal();
    {
        std::lock_guard mlock(mailbox_mu_);
        for (const auto& cmd : mailbox_) {
            if (std::holds_alternative<OfferCmd>(cmd) || std::holds_alternative<RequestCmd>(cmd)) {
                status_.session_active = true;
            }
        }
    }
    log_snapshot_ = session_.log;
    std::string encoded = encode_status(status_);
    if (encoded == last_status_json_) return;
    last_status_json_ = encoded;
    publish("status", encoded);
}

void run_agent_loop(DeviceAgent& agent, const std::atomic<bool>& stop, double acceleration) {
    // Network links deliver asynchronously, so never sleep longer than a poll slice.
    constexpr double kPollSliceS = 0.02;
    while (!stop.load() && !agent.shutdown_requested()) {
        while (agent.pump()) {
        }
        double wait = kPollSliceS;
        if (auto deadline = agent.next_deadline()) {
            wait = std::clamp((*deadline - agent.now_s()) / acceleration, 0.0, kPollSliceS);
        }
        if (wait > 0.0) agent.wait_for_work(wait);
    }
    agent.pump();
}

// ---- JSON -----------------------------------------------------------------

std::string encode_status(const AgentStatus& s) {
    json j;
    j["device_id"] = s.device_id;
    j["role"] = s.role ? json(std::string(to_string(*s.role))) : json(nullptr);
    j["protocol_state"] = s.protocol_state;
    j["battery"] = wire::encode(s.battery);
    j["level_percent"] = s.battery.level_percent();
    j["active_transaction_id"] = s.active_transaction_id ? json(*s.active_transaction_id) : json(nullptr);
    j["last_sample"] = s.last_sample ? sample_json(*s.last_sample) : json(nullptr);
    j["log_size"] = s.log_size;
    j["prompt"] = s.prompt ? json{{"request_id", s.prompt->request_id}, {"amount_percent", s.prompt->amount.percent()}}
                           : json(nullptr);
    j["last_transaction_id"] = s.last_transaction_id ? json(*s.last_transaction_id) : json(nullptr);
    j["last_error"] = s.last_error ? json(*s.last_error) : json(nullptr);
    j["abort_reason"] = s.abort_reason ? json(*s.abort_reason) : json(nullptr);
    j["session_active"] = s.session_active;
    j["protocol_errors"] = s.protocol_errors;
    return j.dump();
}

AgentCommand decode_command(const std::string& text) {
    const json j = wire::parse(text);
    const std::string type = wire::req_string(j, "type");
    auto amount = [&] {
        try {
            return EnergyAmount(wire::req_int(j, "amount_percent"));
        } catch (const Error& e) {
            if (e.code() == ErrorCode::Validation) throw;
            throw Error(ErrorCode::Validation, e.what(), "amount_percent");
        }
    };
    if (type == "Offer") return OfferCmd{amount()};
    if (type == "Request") return RequestCmd{amount(), wire::opt_number(j, "duration_s"), wire::opt_string(j, "provider_id")};
    if (type == "AcceptPending") return AcceptPendingCmd{};
    if (type == "RejectPending") return RejectPendingCmd{wire::opt_string(j, "reason").value_or("declined")};
    if (type == "Abort") return AbortCmd{wire::opt_string(j, "reason").value_or("user-abort")};
    if (type == "Shutdown") return ShutdownCmd{};
    throw Error(ErrorCode::Validation, "unknown command type " + type, "type");
}

std::string encode_command(const AgentCommand& cmd) {
    return std::visit(overloaded{
                          [](const OfferCmd& c) {
                              return json{{"type", "Offer"}, {"amount_percent", c.amount.percent()}}.dump();
                          },
                          [](const RequestCmd& c) {
                              json j{{"type", "Request"}, {"amount_percent", c.amount.percent()}};
                              if (c.duration_s) j["duration_s"] = *c.duration_s;
                              if (c.provider_id) j["provider_id"] = *c.provider_id;
                              return j.dump();
                          },
                          [](const AcceptPendingCmd&) { return json{{"type", "AcceptPending"}}.dump(); },
                          [](const RejectPendingCmd& c) {
                              return json{{"type", "RejectPending"}, {"reason", c.reason}}.dump();
                          },
                          [](const AbortCmd& c) { return json{{"type", "Abort"}, {"reason", c.reason}}.dump(); },
                          [](const ShutdownCmd&) { return json{{"type", "Shutdown"}}.dump(); },
                      },
                      cmd);
}

}  // namespace eshare::agent
