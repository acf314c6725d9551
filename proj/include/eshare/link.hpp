#pragma once

// Point-to-point proximity link standing in for the Bluetooth pairing
// between two devices. Two backends share one contract: an in-process queue
// pair driven by a Clock, and a localhost TCP stream.
//
// Wire format of a frame: 4-byte big-endian payload length, then payload.

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <utility>

#include "eshare/clock.hpp"

namespace eshare::link {

struct LinkParams {
    double latency_ms = 20.0;
    std::optional<double> disconnect_at_s;
    std::size_t max_frame_bytes = 65536;

    void validate() const;
};

struct Frame {
    std::string payload;
    friend bool operator==(const Frame&, const Frame&) = default;
};

enum class RecvStatus { Ok, Timeout, LinkDown };

struct RecvResult {
    RecvStatus status = RecvStatus::Timeout;
    Frame frame;
};

class Endpoint {
public:
    virtual ~Endpoint() = default;

    /// Throws Error(LinkDown) or Error(FrameTooLarge).
    virtual void send_frame(const Frame& frame) = 0;

    /// Blocks the caller for at most timeout_s wall seconds.
    virtual RecvResult recv_frame(double timeout_s) = 0;

    /// Kills the link for both ends and drops undelivered frames. Idempotent.
    virtual void inject_disconnect() = 0;

    virtual bool alive() const = 0;

    /// Earliest clock time at which a queued inbound frame becomes
    /// deliverable. Lets a virtual-time scheduler know when to wake up.
    virtual std::optional<double> next_delivery_s() const { return std::nullopt; }

    /// Clock time at which the link is scheduled to die, if any.
    virtual std::optional<double> scheduled_disconnect_s() const { return std::nullopt; }
};

using EndpointPtr = std::shared_ptr<Endpoint>;

/// In-process pair. Frames become visible to the peer latency_ms after they
/// were sent, measured on `clock`.
std::pair<EndpointPtr, EndpointPtr> pair(const LinkParams& params, std::shared_ptr<const Clock> clock);

// ---- framing --------------------------------------------------------------

std::string encode_frame(std::string_view payload);

/// Incremental decoder for a length-prefixed byte stream.
class FrameDecoder {
public:
    explicit FrameDecoder(std::size_t max_frame_bytes) : max_(max_frame_bytes) {}

    void feed(std::string_view bytes) { buffer_.append(bytes); }

    /// Next complete payload; throws FrameTooLarge if a header announces an
    /// oversize payload.
    std::optional<std::string> next();

private:
    std::size_t max_;
    std::string buffer_;
};

// ---- TCP backend ----------------------------------------------------------

class TcpListener {
public:
    /// Binds 127.0.0.1:port; port 0 picks a free port.
    TcpListener(std::uint16_t port, LinkParams params);
    ~TcpListener();
    TcpListener(const TcpListener&) = delete;
    TcpListener& operator=(const TcpListener&) = delete;

    std::uint16_t port() const { return port_; }

    /// Waits up to timeout_s for one inbound connection.
    EndpointPtr accept(double timeout_s);

private:
    int fd_ = -1;
    std::uint16_t port_ = 0;
    LinkParams params_;
};

EndpointPtr tcp_connect(const std::string& host, std::uint16_t port, const LinkParams& params);

}  // namespace eshare::link
