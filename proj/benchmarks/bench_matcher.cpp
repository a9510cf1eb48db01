#include <benchmark/benchmark.h>

#include <random>
#include <string>
#include <vector>

#include "dtsr/signal_matcher.hpp"

namespace {

std::string make_text(std::size_t words, double signal_rate, unsigned seed) {
    static const std::vector<std::string> filler = {
        "the", "prime", "factor", "sum",  "value", "equals", "term",
        "so",  "then",  "step",   "gives", "bound", "digit",  "count"};
    static const std::vector<std::string> signals = {"Wait", "Alternatively", "But wait",
                                                     "But let me"};
    std::mt19937 rng(seed);
    std::uniform_real_distribution<double> coin(0.0, 1.0);
    std::string text;
    for (std::size_t i = 0; i < words; ++i) {
        if (coin(rng) < signal_rate) {
            text += signals[rng() % signals.size()] + ", ";
        } else {
            text += filler[rng() % filler.size()] + " ";
        }
    }
    return text;
}

void feed_in_chunks(dtsr::SignalMatcher& matcher, const std::string& text, std::size_t chunk) {
    std::size_t at = 0;
    while (at < text.size()) {
        const std::size_t len = std::min(chunk, text.size() - at);
        benchmark::DoNotOptimize(matcher.feed(std::string_view(text).substr(at, len)));
        at += len;
    }
    benchmark::DoNotOptimize(matcher.finish());
}

void BM_matcher_no_signals(benchmark::State& state) {
    const std::string text = make_text(4000, 0.0, 1);
    for (auto _ : state) {
        dtsr::SignalMatcher matcher(dtsr::SignalMatcher::default_patterns());
        feed_in_chunks(matcher, text, static_cast<std::size_t>(state.range(0)));
    }
    state.SetBytesProcessed(static_cast<std::int64_t>(state.iterations() * text.size()));
}
BENCHMARK(BM_matcher_no_signals)->Arg(8)->Arg(64)->Arg(4096);

void BM_matcher_dense_signals(benchmark::State& state) {
    const std::string text = make_text(4000, 0.15, 2);
    for (auto _ : state) {
        dtsr::SignalMatcher matcher(dtsr::SignalMatcher::default_patterns());
        feed_in_chunks(matcher, text, static_cast<std::size_t>(state.range(0)));
    }
    state.SetBytesProcessed(static_cast<std::int64_t>(state.iterations() * text.size()));
}
BENCHMARK(BM_matcher_dense_signals)->Arg(8)->Arg(64)->Arg(4096);

}  // namespace
