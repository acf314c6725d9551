#include "eshare/event_channel.hpp"

#include <algorithm>
#include <chrono>

namespace eshare {

void EventChannel::push(std::string event) {
    std::lock_guard lock(mu_);
    if (closed_) return;
    if (queue_.size() >= capacity_) {
        closed_ = true;
        queue_.clear();
    } else {
        queue_.push_back(std::move(event));
    }
    cv_.notify_all();
}

std::optional<std::string> EventChannel::next(double timeout_s) {
    std::unique_lock lock(mu_);
    cv_.wait_for(lock, std::chrono::duration<double>(std::max(0.0, timeout_s)),
                 [&] { return !queue_.empty() || closed_; });
    if (queue_.empty()) return std::nullopt;
    std::string e = std::move(queue_.front());
    queue_.pop_front();
    return e;
}

bool EventChannel::closed() const {
    std::lock_guard lock(mu_);
    return closed_;
}

void EventChannel::cancel() {
    std::lock_guard lock(mu_);
    closed_ = true;
    cv_.notify_all();
}

}  // namespace eshare
