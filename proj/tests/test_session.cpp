#include <gtest/gtest.h>

#include <chrono>
#include <deque>
#include <random>

#include "eshare/session.hpp"
#include "gen.hpp"
#include "trace.hpp"

using namespace eshare;
using namespace eshare::session;

namespace {

template <class T, class V>
bool is(const V& v) {
    return std::holds_alternative<T>(v);
}

proto::RoleAnnounce announce(const std::string& id, Role role) { return {id, role, EnergyAmount(10), 10000.0}; }

template <class A>
const A* action(const std::vector<Action>& actions, std::size_t i) {
    return i < actions.size() ? std::get_if<A>(&actions[i]) : nullptr;
}

}  // namespace

TEST(Consumer, RequestFromConnected) {
    auto t = consumer_handle(consumer::Connected{}, {100.0, ev::RequestCommand{"r1", EnergyAmount(10)}});
    ASSERT_TRUE(is<consumer::AwaitingAccept>(t.state));
    ASSERT_EQ(t.actions.size(), 2u);
    auto* send = action<SendMessage>(t.actions, 0);
    ASSERT_TRUE(send);
    EXPECT_EQ(send->msg, proto::ProtocolMessage(proto::EnergyRequest{"r1", EnergyAmount(10)}));
    auto* timer = action<SetTimer>(t.actions, 1);
    ASSERT_TRUE(timer);
    EXPECT_EQ(timer->id, kAcceptTimer);
    EXPECT_DOUBLE_EQ(timer->deadline_s, 130.0);
}

TEST(Consumer, AcceptStartsRegistration) {
    ConsumerState s = consumer::AwaitingAccept{"r1", EnergyAmount(10), 130.0};
    auto t = consumer_handle(s, {101.0, ev::Received{proto::Accept{"r1"}}});
    ASSERT_TRUE(is<consumer::Registering>(t.state));
    ASSERT_EQ(t.actions.size(), 1u);
    auto* reg = action<RegisterTransaction>(t.actions, 0);
    ASSERT_TRUE(reg);
    EXPECT_EQ(reg->request.request_id, "r1");
}

TEST(Consumer, LinkDownWhileTransferring) {
    ConsumerState s = consumer::Transferring{"tx", 0.0};
    auto t = consumer_handle(s, {600.0, ev::LinkDown{}});
    ASSERT_TRUE(is<consumer::Aborted>(t.state));
    EXPECT_EQ(std::get<consumer::Aborted>(t.state).reason, "link-down");
    ASSERT_EQ(t.actions.size(), 2u);
    EXPECT_TRUE(action<StopSampling>(t.actions, 0));
    EXPECT_TRUE(action<SubmitReport>(t.actions, 1));
}

TEST(Consumer, AcceptTimeoutAbortsRequest) {
    ConsumerState s = consumer::AwaitingAccept{"r1", EnergyAmount(10), 30.0};
    auto t = consumer_handle(s, {30.0, ev::TimerExpired{kAcceptTimer}});
    ASSERT_TRUE(is<consumer::Aborted>(t.state));
    auto* send = action<SendMessage>(t.actions, 0);
    ASSERT_TRUE(send);
    EXPECT_EQ(send->msg, proto::ProtocolMessage(proto::Abort{proto::Abort::Scope::Request, "r1", "timeout"}));
}

TEST(Consumer, RegistrationFailureAbortsBothSides) {
    auto c = consumer_handle(consumer::Registering{"r1"}, {2.0, ev::RegistrationFailed{"busy"}});
    ASSERT_TRUE(is<consumer::Aborted>(c.state));
    auto* send = action<SendMessage>(c.actions, 0);
    ASSERT_TRUE(send);
    auto p = provider_handle(provider::AwaitingStart{"r1"}, {2.0, ev::Received{send->msg}});
    EXPECT_TRUE(is<provider::Aborted>(p.state));
}

TEST(Consumer, PeerLossAfterThreeMissedHeartbeats) {
    auto t = consumer_handle(consumer::Registering{"r1"}, {10.0, ev::RegistrationSucceeded{"tx"}});
    auto* timer = action<SetTimer>(t.actions, 2);
    ASSERT_TRUE(timer);
    EXPECT_DOUBLE_EQ(timer->deadline_s, 25.0);
    auto lost = consumer_handle(t.state, {25.0, ev::TimerExpired{kPeerLossTimer}});
    ASSERT_TRUE(is<consumer::Aborted>(lost.state));
    EXPECT_EQ(std::get<consumer::Aborted>(lost.state).reason, "peer-lost");
}

TEST(Provider, RequestOpensDecision) {
    auto t = provider_handle(provider::Connected{}, {1.0, ev::Received{proto::EnergyRequest{"r1", EnergyAmount(10)}}});
    ASSERT_TRUE(is<provider::Deciding>(t.state));
    EXPECT_TRUE(t.actions.empty());
}

TEST(Provider, AcceptCommandSendsAccept) {
    auto t = provider_handle(provider::Deciding{"r1", EnergyAmount(10)}, {2.0, ev::AcceptCommand{}});
    ASSERT_TRUE(is<provider::AwaitingStart>(t.state));
    ASSERT_EQ(t.actions.size(), 1u);
    EXPECT_EQ(action<SendMessage>(t.actions, 0)->msg, proto::ProtocolMessage(proto::Accept{"r1"}));
}

TEST(Provider, BusyRejectsSecondRequest) {
    const ProviderState busy[] = {provider::Transferring{"tx", 0.0}, provider::Deciding{"r1", EnergyAmount(10)},
                                  provider::AwaitingStart{"r1"}, provider::Finalizing{"tx", sim::EndReason::ProviderCap}};
    for (const auto& s : busy) {
        auto t = provider_handle(s, {50.0, ev::Received{proto::EnergyRequest{"r2", EnergyAmount(10)}}});
        EXPECT_EQ(t.state.index(), s.index());
        ASSERT_EQ(t.actions.size(), 1u);
        EXPECT_EQ(action<SendMessage>(t.actions, 0)->msg, proto::ProtocolMessage(proto::Reject{"r2", "busy"}));
    }
}

TEST(Provider, TransferStartBeginsSampling) {
    auto t = provider_handle(provider::AwaitingStart{"r1"}, {3.0, ev::Received{proto::TransferStart{"tx", 3.0}}});
    ASSERT_TRUE(is<provider::Transferring>(t.state));
    EXPECT_EQ(std::get<provider::Transferring>(t.state).transaction_id, "tx");
    ASSERT_EQ(t.actions.size(), 1u);
    EXPECT_TRUE(action<StartSampling>(t.actions, 0));
}

TEST(Machines, UnknownPairsRaiseProtocolErrorAndKeepState) {
    auto c = consumer_handle(consumer::Idle{}, {0.0, ev::AcceptCommand{}});
    EXPECT_TRUE(is<consumer::Idle>(c.state));
    ASSERT_EQ(c.actions.size(), 1u);
    EXPECT_TRUE(action<RaiseProtocolError>(c.actions, 0));
    auto p = provider_handle(provider::Idle{}, {0.0, ev::Received{proto::Heartbeat{5.0}}});
    EXPECT_TRUE(is<provider::Idle>(p.state));
    EXPECT_TRUE(action<RaiseProtocolError>(p.actions, 0));
}

// Both machines wired back to back over a perfect in-order link; the
// harness plays coordinator, sampler and human.
TEST(HappyPath, GoldenTrace) {
    const auto started = std::chrono::steady_clock::now();
    const trace::Result r = trace::happy_path();
    EXPECT_EQ(r.lines, trace::golden());
    ASSERT_TRUE(is<consumer::Done>(r.consumer));
    ASSERT_TRUE(is<provider::Done>(r.provider));
    EXPECT_EQ(std::get<consumer::Done>(r.consumer).end_reason, sim::EndReason::ProviderCap);
    EXPECT_LT(std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count(), 1.0);
}

// Random event storms: the machines must stay total (no throw), keep
// terminal states absorbing and only reach Transferring legitimately.
TEST(Fuzz, TransitionTablesHoldInvariants) {
    std::mt19937_64 rng(4242);
    std::uniform_int_distribution<int> kind(0, 12);
    std::bernoulli_distribution reuse_id(0.7), reset(0.02);
    ConsumerState cs = consumer::Idle{};
    ProviderState ps = provider::Idle{};
    std::vector<std::string> ids{"r1", "tx"};
    double now = 0.0;
    auto pick_id = [&] { return reuse_id(rng) ? ids[rng() % ids.size()] : gen::ident(rng); };

    for (int i = 0; i < 100000; ++i) {
        now += std::uniform_real_distribution<double>(0.0, 3.0)(rng);
        EventKind k;
        switch (kind(rng)) {
            case 0: k = ev::LinkConnected{announce("x", Role::Provider)}; break;
            case 1: {
                proto::ProtocolMessage m = gen::message(rng);
                std::visit([&](auto& msg) {
                    if constexpr (requires { msg.request_id; }) msg.request_id = pick_id();
                    if constexpr (requires { msg.transaction_id; }) msg.transaction_id = pick_id();
                    if constexpr (requires { msg.id; }) msg.id = pick_id();
                }, m);
                k = ev::Received{m};
                break;
            }
            case 2: k = ev::TimerExpired{reuse_id(rng) ? kAcceptTimer : kPeerLossTimer}; break;
            case 3: k = ev::LinkDown{}; break;
            case 4: k = ev::RequestCommand{"r1", EnergyAmount(10)}; break;
            case 5: k = ev::AcceptCommand{}; break;
            case 6: k = ev::RejectCommand{"no"}; break;
            case 7: k = ev::AbortCommand{"user"}; break;
            case 8: k = ev::RegistrationSucceeded{"tx"}; break;
            case 9: k = ev::RegistrationFailed{"x"}; break;
            case 10: k = ev::HeartbeatDue{now}; break;
            case 11: k = ev::TransferFinished{sim::EndReason::DurationElapsed}; break;
            default: k = ev::ReportSubmitted{}; break;
        }
        const Event e{now, k};

        const bool c_terminal = is<consumer::Done>(cs) || is<consumer::Aborted>(cs);
        auto ct = consumer_handle(cs, e);
        if (c_terminal) { ASSERT_EQ(ct.state.index(), cs.index()) << event_name(e); }
        if (is<consumer::Transferring>(ct.state) && !is<consumer::Transferring>(cs)) {
            ASSERT_TRUE(is<consumer::Registering>(cs));
            ASSERT_TRUE(std::holds_alternative<ev::RegistrationSucceeded>(k));
        }
        for (const auto& a : ct.actions) {
            if (auto* s = std::get_if<SendMessage>(&a); s && is<consumer::Transferring>(cs)) {
                if (auto* ab = std::get_if<proto::Abort>(&s->msg)) {
                    ASSERT_EQ(ab->id, std::get<consumer::Transferring>(cs).transaction_id);
                }
            }
        }
        cs = ct.state;

        const bool p_terminal = is<provider::Done>(ps) || is<provider::Aborted>(ps);
        auto pt = provider_handle(ps, e);
        if (p_terminal) { ASSERT_EQ(pt.state.index(), ps.index()) << event_name(e); }
        if (is<provider::Deciding>(pt.state) && !is<provider::Deciding>(ps)) { ASSERT_TRUE(is<provider::Connected>(ps)); }
        if (is<provider::Transferring>(pt.state) && !is<provider::Transferring>(ps)) {
            ASSERT_TRUE(is<provider::AwaitingStart>(ps));
        }
        if (auto* req = std::get_if<ev::Received>(&k);
            req && std::holds_alternative<proto::EnergyRequest>(req->msg) && !is<provider::Connected>(ps)) {
            ASSERT_EQ(pt.state.index(), ps.index());
            ASSERT_EQ(pt.actions.size(), 1u);
            ASSERT_TRUE(std::holds_alternative<proto::Reject>(std::get<SendMessage>(pt.actions[0]).msg));
        }
        ps = pt.state;

        if (reset(rng)) {
            cs = consumer::Idle{};
            ps = provider::Idle{};
        }
    }
}
