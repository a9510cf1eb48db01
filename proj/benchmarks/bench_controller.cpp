#include <benchmark/benchmark.h>

#include <string>
#include <vector>

#include "dtsr/controller.hpp"
#include "dtsr/mock_backend.hpp"
#include "dtsr/prompting.hpp"

namespace {

// A self-contained supervised run: 40 chunks, a check at 3 signals, exit on
// the third. Measures controller overhead, not model time.
struct BenchScenario {
    std::string question = "What is 12 times 11?";
    dtsr::ControllerConfig config;
    dtsr::MockScript script;

    BenchScenario() {
        config.max_len = 4096;
        config.conclusion_reserve = 128;
        config.k = 32;

        const std::string base =
            dtsr::render_reasoning_prompt(question, config.system_prompt, config.format, false);
        const auto tmpl = dtsr::PromptTemplate::sufficiency_default(config.format);

        std::vector<dtsr::ScriptChunk> think;
        std::string joined;
        std::vector<std::size_t> signal_chunks;
        for (int i = 0; i < 40; ++i) {
            dtsr::ScriptChunk c;
            c.text = (i % 12 == 11 ? std::string("Wait, segment ") : std::string("segment ")) +
                     std::to_string(i) + " of the derivation continues. ";
            c.token_count = 8;
            if (i % 12 == 11) {
                signal_chunks.push_back(static_cast<std::size_t>(i));
            }
            joined += c.text;
            think.push_back(std::move(c));
        }

        dtsr::ScriptEntry main;
        main.kind = dtsr::MatchKind::prefix;
        main.match_text = base;
        main.response = think;
        script.entries.push_back(std::move(main));

        const std::vector<std::string> scores = {"60", "85", "100"};
        std::string prefix;
        std::size_t upto = 0;
        for (std::size_t s = 0; s < signal_chunks.size() && s < scores.size(); ++s) {
            while (upto <= signal_chunks[s]) {
                prefix += think[upto].text;
                ++upto;
            }
            dtsr::ScriptEntry check;
            check.kind = dtsr::MatchKind::exact;
            check.match_text = dtsr::render_sufficiency_prompt(
                question, config.format.think_open + prefix, config.format, tmpl);
            dtsr::ScriptChunk reply;
            reply.text = " " + scores[s];
            reply.token_count = 2;
            check.response = {reply};
            script.entries.push_back(std::move(check));

            dtsr::ScriptEntry conclusion;
            conclusion.kind = dtsr::MatchKind::exact;
            conclusion.match_text = base + dtsr::force_exit(prefix, config);
            dtsr::ScriptChunk answer;
            answer.text = "The product is \\boxed{132}.";
            answer.token_count = 8;
            conclusion.response = {answer};
            script.entries.push_back(std::move(conclusion));
        }
    }
};

void BM_controller_dtsr_run(benchmark::State& state) {
    BenchScenario scenario;
    dtsr::MockBackend backend(scenario.script);
    const auto policy = dtsr::ExitPolicy::from_name("dtsr");
    for (auto _ : state) {
        benchmark::DoNotOptimize(
            dtsr::run(scenario.question, policy, scenario.config, backend, nullptr, "bench"));
    }
}
BENCHMARK(BM_controller_dtsr_run);

void BM_controller_vanilla_run(benchmark::State& state) {
    BenchScenario scenario;
    dtsr::MockBackend backend(scenario.script);
    const auto policy = dtsr::ExitPolicy::from_name("vanilla");
    for (auto _ : state) {
        benchmark::DoNotOptimize(
            dtsr::run(scenario.question, policy, scenario.config, backend, nullptr, "bench"));
    }
}
BENCHMARK(BM_controller_vanilla_run);

void BM_prompt_render(benchmark::State& state) {
    const dtsr::ChatFormat fmt;
    const auto tmpl = dtsr::PromptTemplate::sufficiency_default(fmt);
    const std::string thought(static_cast<std::size_t>(state.range(0)), 'x');
    for (auto _ : state) {
        benchmark::DoNotOptimize(
            dtsr::render_sufficiency_prompt("What is 12 times 11?", thought, fmt, tmpl));
    }
}
BENCHMARK(BM_prompt_render)->Arg(512)->Arg(8192);

}  // namespace
