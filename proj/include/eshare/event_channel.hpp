#pragma once

#include <condition_variable>
#include <deque>
#include <mutex>
#include <optional>
#include <string>

namespace eshare {

/// Bounded single-subscriber queue of serialized events. Producers never
/// block: when the buffer is full the channel closes and drops its backlog,
/// which disconnects a slow subscriber instead of stalling the writer.
class EventChannel {
public:
    explicit EventChannel(std::size_t capacity) : capacity_(capacity) {}

    void push(std::string event);

    /// Next event, or nullopt on timeout or once closed and drained.
    std::optional<std::string> next(double timeout_s);

    bool closed() const;
    void cancel();

private:
    std::size_t capacity_;
    mutable std::mutex mu_;
    std::condition_variable cv_;
    std::deque<std::string> queue_;
    bool closed_ = false;
};

}  // namespace eshare
