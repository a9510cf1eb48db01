#pragma once

#include <atomic>
#include <cstdint>
#include <mutex>
#include <string>
#include <vector>

namespace dtsr {

class Counter {
public:
    void inc(std::int64_t delta = 1) { value_.fetch_add(delta, std::memory_order_relaxed); }
    std::int64_t value() const { return value_.load(std::memory_order_relaxed); }

private:
    std::atomic<std::int64_t> value_{0};
};

class Histogram {
public:
    explicit Histogram(std::vector<std::int64_t> bounds) : bounds_(std::move(bounds)) {
        counts_.assign(bounds_.size() + 1, 0);
    }

    void observe(std::int64_t value);
    void expose(const std::string& name, std::string& out) const;

private:
    std::vector<std::int64_t> bounds_;
    mutable std::mutex mutex_;
    std::vector<std::int64_t> counts_;  // last slot: > all bounds
    std::int64_t sum_ = 0;
    std::int64_t count_ = 0;
};

/// Counters and histograms an operator watches on a running gateway.
/// Safe to update from any number of concurrent sessions.
struct SessionMetrics {
    Counter requests_total;
    Counter early_exits_total;
    Counter budget_forced_total;
    Counter checks_total;
    Counter tokens_saved_estimate;
    Histogram latency_us{{1000, 10000, 100000, 1000000, 10000000}};
    Histogram trace_tokens{{128, 512, 2048, 8192, 16384}};

    /// Line-oriented exposition: every line is "<name> <value>".
    std::string expose() const;
};

}  // namespace dtsr
