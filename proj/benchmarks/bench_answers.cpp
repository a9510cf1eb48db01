#include <benchmark/benchmark.h>

#include <string>

#include "dtsr/answers.hpp"

namespace {

void BM_extract_boxed(benchmark::State& state) {
    std::string text(static_cast<std::size_t>(state.range(0)), 'a');
    text += " and so the final answer is \\boxed{\\frac{7}{3}} as claimed.";
    for (auto _ : state) {
        benchmark::DoNotOptimize(
            dtsr::extract_answer(text, dtsr::TaskKind::boxed_expression));
    }
    state.SetBytesProcessed(static_cast<std::int64_t>(state.iterations() * text.size()));
}
BENCHMARK(BM_extract_boxed)->Arg(256)->Arg(8192);

void BM_extract_numeric(benchmark::State& state) {
    std::string text;
    for (int i = 0; i < 64; ++i) {
        text += "value " + std::to_string(i * 37) + " then 1,234.5 and ";
    }
    text += "finally 42.";
    for (auto _ : state) {
        benchmark::DoNotOptimize(dtsr::extract_answer(text, dtsr::TaskKind::numeric));
    }
}
BENCHMARK(BM_extract_numeric);

void BM_grade_numeric(benchmark::State& state) {
    for (auto _ : state) {
        benchmark::DoNotOptimize(dtsr::grade("0.5", "1/2", dtsr::TaskKind::numeric));
        benchmark::DoNotOptimize(dtsr::grade("1,234", "1234", dtsr::TaskKind::numeric));
    }
}
BENCHMARK(BM_grade_numeric);

}  // namespace
