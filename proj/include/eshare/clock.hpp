#pragma once

#include <atomic>
#include <chrono>
#include <memory>

namespace eshare {

/// Source of "now" in seconds. Virtual clocks start at zero; the system
/// clock reports seconds since the Unix epoch.
class Clock {
public:
    virtual ~Clock() = default;
    virtual double now_s() const = 0;
};

class SystemClock final : public Clock {
public:
    double now_s() const override {
        using namespace std::chrono;
        return duration<double>(system_clock::now().time_since_epoch()).count();
    }
};

/// Manually advanced clock. Time never moves backwards.
class VirtualClock final : public Clock {
public:
    explicit VirtualClock(double start_s = 0.0) : now_(start_s) {}

    double now_s() const override { return now_.load(std::memory_order_acquire); }

    void advance_to(double t_s) {
        double cur = now_.load(std::memory_order_acquire);
        while (t_s > cur && !now_.compare_exchange_weak(cur, t_s, std::memory_order_acq_rel)) {
        }
    }

private:
    std::atomic<double> now_;
};

/// Virtual time paced against the steady wall clock:
/// now = acceleration * (wall seconds since construction).
class PacedClock final : public Clock {
public:
    explicit PacedClock(double acceleration = 1.0)
        : acceleration_(acceleration), origin_(std::chrono::steady_clock::now()) {}

    double now_s() const override {
        using namespace std::chrono;
        return acceleration_ * duration<double>(steady_clock::now() - origin_).count();
    }

    double acceleration() const { return acceleration_; }

private:
    double acceleration_;
    std::chrono::steady_clock::time_point origin_;
};

}  // namespace eshare
