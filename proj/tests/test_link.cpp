#include <gtest/gtest.h>

#include <random>
#include <thread>

#include "eshare/error.hpp"
#include "eshare/link.hpp"
#include "gen.hpp"

using namespace eshare;
using namespace eshare::link;

namespace {

std::shared_ptr<VirtualClock> vclock() { return std::make_shared<VirtualClock>(); }

LinkParams instant() {
    LinkParams p;
    p.latency_ms = 0.0;
    return p;
}

ErrorCode send_error(Endpoint& ep, const Frame& f) {
    try {
        ep.send_frame(f);
    } catch (const Error& e) {
        return e.code();
    }
    ADD_FAILURE() << "send succeeded";
    return ErrorCode::Io;
}

}  // namespace

TEST(InProcess, LoopbackIdentity) {
    auto [a, b] = pair(instant(), vclock());
    a->send_frame({"hello"});
    auto r = b->recv_frame(0.0);
    ASSERT_EQ(r.status, RecvStatus::Ok);
    EXPECT_EQ(r.frame.payload, "hello");
    b->send_frame({std::string(100, 'x')});
    EXPECT_EQ(a->recv_frame(0.0).frame.payload.size(), 100u);
}

TEST(InProcess, OrderPreserved) {
    auto [a, b] = pair(instant(), vclock());
    for (const char* s : {"1", "2", "3"}) a->send_frame({s});
    for (const char* s : {"1", "2", "3"}) EXPECT_EQ(b->recv_frame(0.0).frame.payload, s);
}

TEST(InProcess, DisconnectAtZeroFailsFirstSend) {
    LinkParams p = instant();
    p.disconnect_at_s = 0.0;
    auto [a, b] = pair(p, vclock());
    EXPECT_EQ(send_error(*a, {"x"}), ErrorCode::LinkDown);
    EXPECT_EQ(b->recv_frame(0.0).status, RecvStatus::LinkDown);
}

TEST(InProcess, FrameSizeBoundary) {
    LinkParams p = instant();
    p.max_frame_bytes = 1024;
    auto [a, b] = pair(p, vclock());
    EXPECT_NO_THROW(a->send_frame({std::string(1024, 'y')}));
    EXPECT_EQ(send_error(*a, {std::string(1025, 'y')}), ErrorCode::FrameTooLarge);
    EXPECT_TRUE(a->alive());
}

TEST(InProcess, RecvTimeoutAndLinkDown) {
    auto [a, b] = pair(instant(), vclock());
    const auto t0 = std::chrono::steady_clock::now();
    EXPECT_EQ(b->recv_frame(0.1).status, RecvStatus::Timeout);
    EXPECT_GE(std::chrono::steady_clock::now() - t0, std::chrono::milliseconds(90));
    a->send_frame({"lost"});
    a->inject_disconnect();
    EXPECT_EQ(b->recv_frame(0.0).status, RecvStatus::LinkDown);
    EXPECT_EQ(send_error(*a, {"x"}), ErrorCode::LinkDown);
    EXPECT_EQ(send_error(*b, {"x"}), ErrorCode::LinkDown);
    EXPECT_NO_THROW(a->inject_disconnect());
    EXPECT_FALSE(a->alive());
    EXPECT_FALSE(b->alive());
}

TEST(InProcess, LatencyOnVirtualClock) {
    auto clock = vclock();
    LinkParams p;
    p.latency_ms = 20.0;
    auto [a, b] = pair(p, clock);
    a->send_frame({"hb"});
    EXPECT_EQ(b->recv_frame(0.0).status, RecvStatus::Timeout);
    ASSERT_TRUE(b->next_delivery_s());
    EXPECT_DOUBLE_EQ(*b->next_delivery_s(), 0.02);
    clock->advance_to(0.02);
    EXPECT_EQ(b->recv_frame(0.0).frame.payload, "hb");
}

TEST(InProcess, ScheduledDisconnectOnVirtualClock) {
    auto clock = vclock();
    LinkParams p = instant();
    p.disconnect_at_s = 600.0;
    auto [a, b] = pair(p, clock);
    EXPECT_EQ(a->scheduled_disconnect_s(), 600.0);
    clock->advance_to(599.0);
    EXPECT_NO_THROW(a->send_frame({"ok"}));
    clock->advance_to(600.0);
    EXPECT_EQ(b->recv_frame(0.0).status, RecvStatus::LinkDown);
}

TEST(InProcess, TenThousandFramesInOrderAcrossThreads) {
    auto [a, b] = pair(instant(), vclock());
    std::mt19937_64 rng(5);
    std::vector<std::string> sent;
    for (int i = 0; i < 10000; ++i) sent.push_back(proto::encode_message(gen::message(rng)));
    std::thread writer([&, a = a] {
        for (const auto& s : sent) a->send_frame({s});
    });
    std::vector<std::string> got;
    while (got.size() < sent.size()) {
        auto r = b->recv_frame(1.0);
        ASSERT_EQ(r.status, RecvStatus::Ok);
        got.push_back(r.frame.payload);
    }
    writer.join();
    EXPECT_EQ(got, sent);
    for (std::size_t i = 0; i < got.size(); i += 97) {
        EXPECT_EQ(proto::encode_message(proto::decode_message(got[i])), sent[i]);
    }
}

TEST(InProcess, NothingArrivesAfterDisconnect) {
    auto [a, b] = pair(instant(), vclock());
    for (int i = 0; i < 50; ++i) a->send_frame({std::to_string(i)});
    EXPECT_EQ(b->recv_frame(0.0).frame.payload, "0");
    b->inject_disconnect();
    for (int i = 0; i < 10; ++i) EXPECT_EQ(b->recv_frame(0.0).status, RecvStatus::LinkDown);
    EXPECT_EQ(a->recv_frame(0.0).status, RecvStatus::LinkDown);
}

TEST(Framing, BigEndianLengthPrefix) {
    const std::string f = encode_frame("abc");
    ASSERT_EQ(f.size(), 7u);
    EXPECT_EQ(f.substr(0, 4), std::string("\x00\x00\x00\x03", 4));
    EXPECT_EQ(f.substr(4), "abc");
    EXPECT_EQ(encode_frame(std::string(258, 'z')).substr(0, 4), std::string("\x00\x00\x01\x02", 4));
}

TEST(Framing, DecoderHandlesArbitraryChunking) {
    std::mt19937_64 rng(17);
    std::vector<std::string> payloads;
    std::string stream;
    for (int i = 0; i < 500; ++i) {
        payloads.push_back(proto::encode_message(gen::message(rng)));
        stream += encode_frame(payloads.back());
    }
    FrameDecoder dec(65536);
    std::vector<std::string> out;
    std::size_t pos = 0;
    while (pos < stream.size()) {
        const std::size_t n = std::min<std::size_t>(stream.size() - pos, 1 + rng() % 40);
        dec.feed(std::string_view(stream).substr(pos, n));
        pos += n;
        while (auto p = dec.next()) out.push_back(*p);
    }
    EXPECT_EQ(out, payloads);
}

TEST(Framing, OversizeHeaderRejected) {
    FrameDecoder dec(1024);
    dec.feed(std::string("\x00\x00\x04\x01", 4));
    try {
        dec.next();
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::FrameTooLarge);
    }
}

TEST(LinkParams, Validation) {
    LinkParams p;
    p.max_frame_bytes = 1023;
    EXPECT_THROW(p.validate(), Error);
    p = LinkParams{};
    p.latency_ms = -1;
    EXPECT_THROW(p.validate(), Error);
    EXPECT_NO_THROW(LinkParams{}.validate());
}

TEST(Tcp, SameContractOverLocalhost) {
    TcpListener listener(0, LinkParams{});
    ASSERT_GT(listener.port(), 0);
    EndpointPtr server;
    std::thread acceptor([&] { server = listener.accept(5.0); });
    auto client = tcp_connect("127.0.0.1", listener.port(), LinkParams{});
    acceptor.join();
    ASSERT_TRUE(server);

    std::mt19937_64 rng(9);
    std::vector<std::string> sent;
    for (int i = 0; i < 10000; ++i) {
        sent.push_back(proto::encode_message(gen::message(rng)));
        client->send_frame({sent.back()});
    }
    std::vector<std::string> got;
    while (got.size() < sent.size()) {
        auto r = server->recv_frame(5.0);
        ASSERT_EQ(r.status, RecvStatus::Ok);
        got.push_back(r.frame.payload);
    }
    EXPECT_EQ(got, sent);

    server->send_frame({"pong"});
    EXPECT_EQ(client->recv_frame(5.0).frame.payload, "pong");
    EXPECT_EQ(send_error(*client, {std::string(70000, 'q')}), ErrorCode::FrameTooLarge);

    client->inject_disconnect();
    EXPECT_EQ(send_error(*client, {"x"}), ErrorCode::LinkDown);
    RecvResult r;
    for (int i = 0; i < 100 && (r = server->recv_frame(0.05)).status == RecvStatus::Timeout; ++i) {
    }
    EXPECT_EQ(r.status, RecvStatus::LinkDown);
}

TEST(Tcp, AcceptTimesOut) {
    TcpListener listener(0, LinkParams{});
    EXPECT_EQ(listener.accept(0.05), nullptr);
}
