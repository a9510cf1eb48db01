#include "dtsr/metrics.hpp"

namespace dtsr {

void Histogram::observe(std::int64_t value) {
    std::lock_guard<std::mutex> lock(mutex_);
    std::size_t slot = bounds_.size();
    for (std::size_t i = 0; i < bounds_.size(); ++i) {
        if (value <= bounds_[i]) {
            slot = i;
            break;
        }
    }
    ++counts_[slot];
    sum_ += value;
    ++count_;
}

void Histogram::expose(const std::string& name, std::string& out) const {
    std::lock_guard<std::mutex> lock(mutex_);
    std::int64_t cumulative = 0;
    for (std::size_t i = 0; i < bounds_.size(); ++i) {
        cumulative += counts_[i];
        out += name + "_bucket_le_" + std::to_string(bounds_[i]) + " " +
               std::to_string(cumulative) + "\n";
    }
    out += name + "_count " + std::to_string(count_) + "\n";
    out += name + "_sum " + std::to_string(sum_) + "\n";
}

std::string SessionMetrics::expose() const {
    std::string out;
    out += "dtsr_requests_total " + std::to_string(requests_total.value()) + "\n";
    out += "dtsr_early_exits_total " + std::to_string(early_exits_total.value()) + "\n";
    out += "dtsr_budget_forced_total " + std::to_string(budget_forced_total.value()) + "\n";
    out += "dtsr_checks_total " + std::to_string(checks_total.value()) + "\n";
    out += "dtsr_tokens_saved_estimate " + std::to_string(tokens_saved_estimate.value()) + "\n";
    latency_us.expose("dtsr_latency_us", out);
    trace_tokens.expose("dtsr_trace_tokens", out);
    return out;
}

}  // namespace dtsr
