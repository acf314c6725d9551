#include "eshare/link.hpp"

#include <arpa/inet.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <algorithm>
#include <atomic>
#include <cerrno>
#include <chrono>
#include <condition_variable>
#include <cstring>
#include <deque>
#include <mutex>
#include <thread>

#include "eshare/error.hpp"

namespace eshare::link {

void LinkParams::validate() const {
    if (!(latency_ms >= 0.0)) throw Error(ErrorCode::InvalidArgument, "latency_ms must be >= 0");
    if (max_frame_bytes < 1024) throw Error(ErrorCode::InvalidArgument, "max_frame_bytes must be >= 1024");
}

namespace {

using steady = std::chrono::steady_clock;

void check_size(const Frame& frame, std::size_t max) {
    if (frame.payload.size() > max) {
        throw Error(ErrorCode::FrameTooLarge, "frame exceeds max_frame_bytes", std::to_string(frame.payload.size()));
    }
}

[[noreturn]] void link_down() { throw Error(ErrorCode::LinkDown, "link is down"); }

// ---- in-process -----------------------------------------------------------

struct Pending {
    double deliver_at_s;
    Frame frame;
};

struct Core {
    LinkParams params;
    std::shared_ptr<const Clock> clock;
    std::mutex mu;
    std::condition_variable cv;
    std::deque<Pending> inbox[2];
    bool killed = false;

    // Caller holds mu.
    bool dead() {
        if (!killed && params.disconnect_at_s && clock->now_s() >= *params.disconnect_at_s) kill();
        return killed;
    }

    void kill() {
        killed = true;
        inbox[0].clear();
        inbox[1].clear();
        cv.notify_all();
    }
};

class QueueEndpoint final : public Endpoint {
public:
    QueueEndpoint(std::shared_ptr<Core> core, int side) : core_(std::move(core)), side_(side) {}

    void send_frame(const Frame& frame) override {
        std::lock_guard lock(core_->mu);
        if (core_->dead()) link_down();
        check_size(frame, core_->params.max_frame_bytes);
        const double at = core_->clock->now_s() + core_->params.latency_ms / 1000.0;
        core_->inbox[1 - side_].push_back({at, frame});
        core_->cv.notify_all();
    }

    RecvResult recv_frame(double timeout_s) override {
        const auto deadline = steady::now() + std::chrono::duration_cast<steady::duration>(
                                                  std::chrono::duration<double>(std::max(0.0, timeout_s)));
        std::unique_lock lock(core_->mu);
        for (;;) {
            if (core_->dead()) return {RecvStatus::LinkDown, {}};
            auto& q = core_->inbox[side_];
            if (!q.empty() && q.front().deliver_at_s <= core_->clock->now_s()) {
                Frame f = std::move(q.front().frame);
                q.pop_front();
                return {RecvStatus::Ok, std::move(f)};
            }
            const auto now = steady::now();
            if (now >= deadline) return {RecvStatus::Timeout, {}};
            // Short slices: a virtual clock may advance without notifying us.
            core_->cv.wait_for(lock, std::min<steady::duration>(deadline - now, std::chrono::milliseconds(5)));
        }
    }

    void inject_disconnect() override {
        std::lock_guard lock(core_->mu);
        if (!core_->killed) core_->kill();
    }

    bool alive() const override {
        std::lock_guard lock(core_->mu);
        return !core_->dead();
    }

    std::optional<double> next_delivery_s() const override {
        std::lock_guard lock(core_->mu);
        if (core_->dead() || core_->inbox[side_].empty()) return std::nullopt;
        return core_->inbox[side_].front().deliver_at_s;
    }

    std::optional<double> scheduled_disconnect_s() const override {
        std::lock_guard lock(core_->mu);
        if (core_->killed) return std::nullopt;
        return core_->params.disconnect_at_s;
    }

private:
    std::shared_ptr<Core> core_;
    int side_;
};

// ---- TCP ------------------------------------------------------------------

class TcpEndpoint final : public Endpoint {
public:
    TcpEndpoint(int fd, LinkParams params) : fd_(fd), params_(params), decoder_(params.max_frame_bytes) {
        int one = 1;
        ::setsockopt(fd_, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
        reader_ = std::thread([this] { read_loop(); });
    }

    ~TcpEndpoint() override {
        ::shutdown(fd_, SHUT_RDWR);
        if (reader_.joinable()) reader_.join();
        ::close(fd_);
    }

    void send_frame(const Frame& frame) override {
        std::lock_guard wlock(write_mu_);
        if (dead_.load()) link_down();
        check_size(frame, params_.max_frame_bytes);
        const std::string bytes = encode_frame(frame.payload);
        std::size_t off = 0;
        while (off < bytes.size()) {
            const ssize_t n = ::send(fd_, bytes.data() + off, bytes.size() - off, MSG_NOSIGNAL);
            if (n < 0 && errno == EINTR) continue;
            if (n <= 0) {
                mark_dead(false);
                link_down();
            }
            off += static_cast<std::size_t>(n);
        }
    }

    RecvResult recv_frame(double timeout_s) override {
        std::unique_lock lock(mu_);
        cv_.wait_for(lock, std::chrono::duration<double>(std::max(0.0, timeout_s)),
                     [&] { return !inbox_.empty() || dead_.load(); });
        if (!inbox_.empty()) {
            Frame f{std::move(inbox_.front())};
            inbox_.pop_front();
            return {RecvStatus::Ok, std::move(f)};
        }
        return {dead_.load() ? RecvStatus::LinkDown : RecvStatus::Timeout, {}};
    }

    void inject_disconnect() override {
        if (dead_.load()) return;
        mark_dead(true);
        ::shutdown(fd_, SHUT_RDWR);
    }

    bool alive() const override { return !dead_.load(); }

private:
    void mark_dead(bool drop_pending) {
        std::lock_guard lock(mu_);
        dead_.store(true);
        if (drop_pending) inbox_.clear();
        cv_.notify_all();
    }

    void read_loop() {
        char buf[8192];
        for (;;) {
            const ssize_t n = ::recv(fd_, buf, sizeof buf, 0);
            if (n < 0 && errno == EINTR) continue;
            if (n <= 0) break;
            try {
                decoder_.feed(std::string_view(buf, static_cast<std::size_t>(n)));
                while (auto payload = decoder_.next()) {
                    std::lock_guard lock(mu_);
                    if (dead_.load()) break;
                    inbox_.push_back(std::move(*payload));
                    cv_.notify_all();
                }
            } catch (const Error&) {
                break;
            }
        }
        mark_dead(false);
    }

    int fd_;
    LinkParams params_;
    FrameDecoder decoder_;
    std::mutex write_mu_;
    std::mutex mu_;
    std::condition_variable cv_;
    std::deque<std::string> inbox_;
    std::atomic<bool> dead_{false};
    std::thread reader_;
};

[[noreturn]] void io_error(const char* what) {
    throw Error(ErrorCode::Io, what, std::strerror(errno));
}

}  // namespace

std::pair<EndpointPtr, EndpointPtr> pair(const LinkParams& params, std::shared_ptr<const Clock> clock) {
    params.validate();
    auto core = std::make_shared<Core>();
    core->params = params;
    core->clock = std::move(clock);
    return {std::make_shared<QueueEndpoint>(core, 0), std::make_shared<QueueEndpoint>(core, 1)};
}

std::string encode_frame(std::string_view payload) {
    const auto n = static_cast<std::uint32_t>(payload.size());
    std::string out;
    out.reserve(4 + payload.size());
    out.push_back(static_cast<char>((n >> 24) & 0xFF));
    out.push_back(static_cast<char>((n >> 16) & 0xFF));
    out.push_back(static_cast<char>((n >> 8) & 0xFF));
    out.push_back(static_cast<char>(n & 0xFF));
    out.append(payload);
    return out;
}

std::optional<std::string> FrameDecoder::next() {
    if (buffer_.size() < 4) return std::nullopt;
    const auto* p = reinterpret_cast<const unsigned char*>(buffer_.data());
    const std::uint32_t n = (std::uint32_t{p[0]} << 24) | (std::uint32_t{p[1]} << 16) | (std::uint32_t{p[2]} << 8) |
                            std::uint32_t{p[3]};
    if (n > max_) throw Error(ErrorCode::FrameTooLarge, "announced frame exceeds max_frame_bytes", std::to_string(n));
    if (buffer_.size() < 4 + std::size_t{n}) return std::nullopt;
    std::string payload = buffer_.substr(4, n);
    buffer_.erase(0, 4 + std::size_t{n});
    return payload;
}

TcpListener::TcpListener(std::uint16_t port, LinkParams params) : params_(params) {
    params_.validate();
    fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
    if (fd_ < 0) io_error("socket");
    int one = 1;
    ::setsockopt(fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_port = htons(port);
    addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
    if (::bind(fd_, reinterpret_cast<sockaddr*>(&addr), sizeof addr) < 0 || ::listen(fd_, 8) < 0) {
        const int err = errno;
        ::close(fd_);
        errno = err;
        io_error("bind/listen");
    }
    socklen_t len = sizeof addr;
    ::getsockname(fd_, reinterpret_cast<sockaddr*>(&addr), &len);
    port_ = ntohs(addr.sin_port);
}

TcpListener::~TcpListener() {
    if (fd_ >= 0) ::close(fd_);
}

EndpointPtr TcpListener::accept(double timeout_s) {
    pollfd pfd{fd_, POLLIN, 0};
    const int ready = ::poll(&pfd, 1, static_cast<int>(std::max(0.0, timeout_s) * 1000.0));
    if (ready <= 0) return nullptr;
    const int client = ::accept(fd_, nullptr, nullptr);
    if (client < 0) return nullptr;
    return std::make_shared<TcpEndpoint>(client, params_);
}

EndpointPtr tcp_connect(const std::string& host, std::uint16_t port, const LinkParams& params) {
    params.validate();
    const int fd = ::socket(AF_INET, SOCK_STREAM, 0);
    if (fd < 0) io_error("socket");
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_port = htons(port);
    if (::inet_pton(AF_INET, host == "localhost" ? "127.0.0.1" : host.c_str(), &addr.sin_addr) != 1) {
        ::close(fd);
        throw Error(ErrorCode::InvalidArgument, "unsupported link host", host);
    }
    if (::connect(fd, reinterpret_cast<sockaddr*>(&addr), sizeof addr) < 0) {
        ::close(fd);
        throw Error(ErrorCode::LinkDown, "could not connect link", host + ":" + std::to_string(port));
    }
    return std::make_shared<TcpEndpoint>(fd, params);
}

}  // namespace eshare::link
