#include <doctest.h>

#include <random>
#include <string>
#include <vector>

#include "dtsr/controller.hpp"
#include "dtsr/mock_backend.hpp"
#include "support/backend_wrappers.hpp"
#include "support/script_helpers.hpp"

using dtsr::CheckDecision;
using dtsr::ControllerConfig;
using dtsr::Error;
using dtsr::ErrorKind;
using dtsr::ExitKind;
using dtsr::ExitPolicy;
using dtsr::MatchKind;
using dtsr::MockBackend;
using dtsr::MockScript;
using dtsr::RunError;
using dtsr::RunRecord;
using testsupport::chunk;
using testsupport::CountingBackend;
using testsupport::entry;
using testsupport::exact_reply;
using testsupport::FlakyBackend;
using testsupport::ScenarioBuilder;

namespace {

ControllerConfig small_config() {
    ControllerConfig cfg;
    cfg.max_len = 4096;
    cfg.conclusion_reserve = 128;
    cfg.k = 4;
    cfg.tau = 100.0;
    return cfg;
}

// Three signals with check scores 60 / 80 / 100 at 12 / 24 / 36 tokens.
ScenarioBuilder monotonic_scenario() {
    ScenarioBuilder sb;
    sb.config = small_config();
    sb.think_chunks = {
        chunk("First I set up the problem ", 4),        // 4
        chunk("and compute a candidate value. ", 4),    // 8
        chunk("Wait, the factorization matters. ", 4),  // 12  <- signal, score 60
        chunk("Recomputing with primes now ", 4),       // 16
        chunk("gives me a cleaner path. ", 4),          // 20
        chunk("Alternatively, count the exponents. ", 4),  // 24  <- signal, score 80
        chunk("Each exponent adds one choice ", 4),        // 28
        chunk("and the product covers all cases. ", 4),    // 32
        chunk("But wait, the result is nine. ", 4),        // 36  <- signal, score 100
        chunk("Extra text the run should never need ", 4),
        chunk("because every tau exits above. ", 4),
    };
    sb.check_replies = {{2, "60"}, {5, "80"}, {8, "100"}};
    sb.natural_close = true;
    return sb;
}

}  // namespace

TEST_CASE("vanilla is a pass-through of the scripted stream") {
    ScenarioBuilder sb = monotonic_scenario();
    MockBackend backend(sb.build());
    const RunRecord rec = dtsr::run(sb.question, ExitPolicy::from_name("vanilla"), sb.config,
                                    backend, nullptr, "q1");
    CHECK(rec.check_events.empty());
    CHECK(rec.exit_kind == ExitKind::natural);
    CHECK(rec.trace == sb.prefix_through(10) + "\n" + sb.config.format.think_close);
    CHECK(rec.conclusion == sb.natural_conclusion());
    CHECK(rec.answer == "9");
    CHECK(rec.tokens_main == 44 + 2 + sb.conclusion_tokens);
}

TEST_CASE("a sufficient score exits early and the conclusion is generated") {
    ScenarioBuilder sb = monotonic_scenario();
    MockBackend backend(sb.build());
    ControllerConfig cfg = sb.config;
    cfg.tau = 100.0;
    const RunRecord rec =
        dtsr::run(sb.question, ExitPolicy::from_name("dtsr"), cfg, backend, nullptr, "q1");

    REQUIRE(rec.check_events.size() == 3);
    CHECK(rec.check_events[0].score_value == doctest::Approx(60));
    CHECK(rec.check_events[1].score_value == doctest::Approx(80));
    CHECK(rec.check_events[2].score_value == doctest::Approx(100));
    CHECK(rec.check_events[0].decision == CheckDecision::keep_going);
    CHECK(rec.check_events[2].decision == CheckDecision::exit_now);
    CHECK(rec.exit_kind == ExitKind::early_exit);
    CHECK(rec.trace == dtsr::force_exit(sb.prefix_through(8), cfg));
    CHECK(rec.conclusion == sb.conclusion_text);
    CHECK(rec.check_events[0].trace_token_position == 12);
    CHECK(rec.check_events[1].trace_token_position == 24);
    CHECK(rec.check_events[2].trace_token_position == 36);
    CHECK(rec.skipped_signals == 0);

    // the trace never absorbs check-prompt or reply text
    CHECK(rec.trace.find("Assess the confidence") == std::string::npos);
    CHECK(rec.trace.find("Confidence:") == std::string::npos);
}

TEST_CASE("threshold monotonicity: lower tau exits strictly earlier") {
    ScenarioBuilder sb = monotonic_scenario();
    MockBackend backend(sb.build());

    std::vector<std::size_t> trace_lengths;
    std::vector<std::int64_t> exit_positions;
    for (const double tau : {50.0, 75.0, 100.0}) {
        ControllerConfig cfg = sb.config;
        cfg.tau = tau;
        const RunRecord rec =
            dtsr::run(sb.question, ExitPolicy::from_name("dtsr"), cfg, backend, nullptr, "q");
        REQUIRE(rec.exit_kind == ExitKind::early_exit);
        trace_lengths.push_back(rec.trace.size());
        exit_positions.push_back(rec.check_events.back().trace_token_position);
    }
    CHECK(exit_positions[0] < exit_positions[1]);
    CHECK(exit_positions[1] < exit_positions[2]);
    CHECK(trace_lengths[0] < trace_lengths[1]);
    CHECK(trace_lengths[1] < trace_lengths[2]);
}

TEST_CASE("unreachable tau reproduces vanilla byte for byte") {
    ScenarioBuilder sb = monotonic_scenario();
    MockBackend backend(sb.build());

    const RunRecord vanilla = dtsr::run(sb.question, ExitPolicy::from_name("vanilla"), sb.config,
                                        backend, nullptr, "q");
    ControllerConfig cfg = sb.config;
    cfg.tau = 101.0;
    const RunRecord dtsr_run =
        dtsr::run(sb.question, ExitPolicy::from_name("dtsr"), cfg, backend, nullptr, "q");

    CHECK(dtsr_run.check_events.size() == 3);  // checks happen, none sufficient
    CHECK(dtsr_run.trace == vanilla.trace);
    CHECK(dtsr_run.conclusion == vanilla.conclusion);
    CHECK(dtsr_run.answer == vanilla.answer);
    CHECK(dtsr_run.exit_kind == vanilla.exit_kind);
    CHECK(dtsr_run.tokens_main == vanilla.tokens_main);
}

TEST_CASE("a signal-free stream reproduces vanilla with zero checks") {
    ScenarioBuilder sb;
    sb.config = small_config();
    sb.think_chunks = {chunk("plain reasoning with no cue words ", 6),
                       chunk("just arithmetic all the way down. ", 6)};
    sb.natural_close = true;
    MockBackend backend(sb.build());

    const RunRecord vanilla = dtsr::run(sb.question, ExitPolicy::from_name("vanilla"), sb.config,
                                        backend, nullptr, "q");
    const RunRecord managed = dtsr::run(sb.question, ExitPolicy::from_name("dtsr"), sb.config,
                                        backend, nullptr, "q");
    CHECK(managed.check_events.empty());
    CHECK(managed.skipped_signals == 0);
    CHECK(managed.trace == vanilla.trace);
    CHECK(managed.conclusion == vanilla.conclusion);
    CHECK(managed.tokens_main == vanilla.tokens_main);
}

TEST_CASE("k larger than the stream skips every signal") {
    ScenarioBuilder sb = monotonic_scenario();
    MockBackend backend(sb.build());
    ControllerConfig cfg = sb.config;
    cfg.k = 100000;
    const RunRecord rec =
        dtsr::run(sb.question, ExitPolicy::from_name("dtsr"), cfg, backend, nullptr, "q");
    CHECK(rec.check_events.empty());
    CHECK(rec.skipped_signals == 3);
    CHECK(rec.exit_kind == ExitKind::natural);
}

TEST_CASE("signals inside the first k tokens are skipped and do not reset the counter") {
    // signals at 12 and 40 tokens with k = 64: both skipped, zero checks
    ScenarioBuilder sb;
    sb.config = small_config();
    sb.config.k = 64;
    sb.think_chunks = {
        chunk("warm up text before anything ", 8),          // 8
        chunk("Wait, a first early signal here. ", 4),      // 12 skipped
        chunk("long stretch of derivation work ", 12),      // 24
        chunk("more steps accumulate steadily ", 12),       // 36
        chunk("Wait, a second early signal too. ", 4),      // 40 skipped
        chunk("and the wrap-up of the reasoning. ", 8),     // 48
    };
    sb.natural_close = true;
    MockBackend backend(sb.build());
    const RunRecord rec =
        dtsr::run(sb.question, ExitPolicy::from_name("dtsr"), sb.config, backend, nullptr, "q");
    CHECK(rec.check_events.empty());
    CHECK(rec.skipped_signals == 2);
    CHECK(rec.exit_kind == ExitKind::natural);
}

TEST_CASE("a single signal past k triggers one check and an exit") {
    // signal lands at 72 tokens, k = 64, scripted score 100
    ScenarioBuilder sb;
    sb.config = small_config();
    sb.config.k = 64;
    sb.think_chunks = {
        chunk("long opening segment of reasoning ", 24),     // 24
        chunk("more derivation keeps flowing here ", 24),    // 48
        chunk("nearly at the interval boundary ", 20),       // 68
        chunk("Wait, now the answer is clear. ", 4),         // 72 <- check
        chunk("unused continuation text ", 8),
    };
    sb.check_replies = {{3, "100"}};
    MockBackend backend(sb.build());
    const RunRecord rec =
        dtsr::run(sb.question, ExitPolicy::from_name("dtsr"), sb.config, backend, nullptr, "q");
    REQUIRE(rec.check_events.size() == 1);
    CHECK(rec.check_events[0].trace_token_position == 72);
    CHECK(rec.exit_kind == ExitKind::early_exit);
    CHECK(rec.trace == dtsr::force_exit(sb.prefix_through(3), sb.config));
    const std::string marker_tail = "\n" + sb.config.format.think_close + "\n\n";
    CHECK(rec.trace.size() >= marker_tail.size());
    CHECK(rec.trace.compare(rec.trace.size() - marker_tail.size(), marker_tail.size(),
                            marker_tail) == 0);
}

TEST_CASE("budget exhaustion forces the exit and still produces a conclusion") {
    ScenarioBuilder sb;
    sb.config = small_config();
    sb.config.max_len = 48;
    sb.config.conclusion_reserve = 16;
    for (int i = 0; i < 12; ++i) {
        sb.think_chunks.push_back(chunk("segment " + std::to_string(i) + " goes on ", 4));
    }
    MockBackend backend(sb.build());
    const RunRecord rec =
        dtsr::run(sb.question, ExitPolicy::from_name("dtsr"), sb.config, backend, nullptr, "q");
    CHECK(rec.exit_kind == ExitKind::budget_forced);
    CHECK(rec.conclusion == sb.conclusion_text);
    CHECK(rec.tokens_main <= sb.config.max_len);
    CHECK(rec.trace == dtsr::force_exit(sb.prefix_through(7), sb.config));
}

TEST_CASE("vanilla truncation at max_len is reported as budget_forced") {
    ScenarioBuilder sb;
    sb.config = small_config();
    sb.config.max_len = 16;
    sb.config.conclusion_reserve = 4;
    for (int i = 0; i < 8; ++i) {
        sb.think_chunks.push_back(chunk("filler piece " + std::to_string(i) + " ", 4));
    }
    MockBackend backend(sb.build());
    const RunRecord rec = dtsr::run(sb.question, ExitPolicy::from_name("vanilla"), sb.config,
                                    backend, nullptr, "q");
    CHECK(rec.exit_kind == ExitKind::budget_forced);
    CHECK(rec.conclusion.empty());
    CHECK(rec.tokens_main == 16);
}

TEST_CASE("a think-close marker split across chunks is still detected") {
    ScenarioBuilder sb;
    sb.config = small_config();
    MockScript script;
    script.entries.push_back(entry(
        MatchKind::prefix, sb.base_prompt(),
        {chunk("short reasoning done.", 4), chunk("\n</thi", 2), chunk("nk>\n\nAnswer: \\boxed{9}", 6)}));
    MockBackend backend(std::move(script));
    const RunRecord rec =
        dtsr::run(sb.question, ExitPolicy::from_name("dtsr"), sb.config, backend, nullptr, "q");
    CHECK(rec.exit_kind == ExitKind::natural);
    CHECK(rec.trace == "short reasoning done.\n</think>");
    CHECK(rec.conclusion == "\n\nAnswer: \\boxed{9}");
    CHECK(rec.answer == "9");
}

TEST_CASE("unparseable check replies mean keep reasoning") {
    ScenarioBuilder sb = monotonic_scenario();
    sb.check_replies = {{2, "hmm, not sure"}, {5, "no score here"}, {8, "100"}};
    MockBackend backend(sb.build());
    const RunRecord rec =
        dtsr::run(sb.question, ExitPolicy::from_name("dtsr"), sb.config, backend, nullptr, "q");
    REQUIRE(rec.check_events.size() == 3);
    CHECK_FALSE(rec.check_events[0].score_parsed);
    CHECK(rec.check_events[0].decision == CheckDecision::keep_going);
    CHECK_FALSE(rec.check_events[1].score_parsed);
    CHECK(rec.check_events[2].score_parsed);
    CHECK(rec.exit_kind == ExitKind::early_exit);
}

TEST_CASE("a failed check retries once and then continues reasoning") {
    ScenarioBuilder sb = monotonic_scenario();
    sb.check_replies = {{2, "100"}, {5, "100"}, {8, "100"}};
    MockBackend backend(sb.build());

    SUBCASE("retry succeeds: the run exits at the first signal") {
        MockBackend check_inner(sb.build());
        FlakyBackend flaky(check_inner, 1);
        const RunRecord rec = dtsr::run(sb.question, ExitPolicy::from_name("dtsr"), sb.config,
                                        backend, &flaky, "q");
        REQUIRE(rec.check_events.size() == 1);
        CHECK(rec.check_events[0].trace_token_position == 12);
        CHECK(rec.exit_kind == ExitKind::early_exit);
    }
    SUBCASE("both attempts fail: the signal is treated as insufficient") {
        MockBackend check_inner(sb.build());
        FlakyBackend flaky(check_inner, 2);  // first check fails twice, later checks work
        const RunRecord rec = dtsr::run(sb.question, ExitPolicy::from_name("dtsr"), sb.config,
                                        backend, &flaky, "q");
        REQUIRE(rec.check_events.size() == 2);
        CHECK_FALSE(rec.check_events[0].score_parsed);
        CHECK(rec.check_events[0].decision == CheckDecision::keep_going);
        CHECK(rec.check_events[1].decision == CheckDecision::exit_now);
    }
}

TEST_CASE("main-stream failures propagate with the partial record attached") {
    ScenarioBuilder sb;
    sb.config = small_config();
    MockScript script;
    script.entries.push_back(
        entry(MatchKind::prefix, sb.base_prompt(),
              {chunk("some progress ", 3),
               testsupport::fault_chunk(ErrorKind::connection, "dropped mid-think")}));
    MockBackend backend(std::move(script));
    try {
        dtsr::run(sb.question, ExitPolicy::from_name("dtsr"), sb.config, backend, nullptr, "q7");
        FAIL("expected RunError");
    } catch (const RunError& e) {
        CHECK(e.kind() == ErrorKind::connection);
        CHECK(e.partial_record.question_id == "q7");
        CHECK(e.partial_record.tokens_main == 3);
    }
}

TEST_CASE("force_exit appends the marker once and rejects closed traces") {
    const ControllerConfig cfg;
    CHECK(dtsr::force_exit("…answer is 28.", cfg) == "…answer is 28.\n</think>\n\n");
    CHECK(dtsr::force_exit("", cfg) == "\n</think>\n\n");
    CHECK_THROWS_AS(dtsr::force_exit("done\n</think>\n\n", cfg), Error);
    CHECK_THROWS_AS(dtsr::force_exit("done</think>", cfg), Error);
}

TEST_CASE("run records serialize to JSONL and back") {
    ScenarioBuilder sb = monotonic_scenario();
    MockBackend backend(sb.build());
    const RunRecord rec =
        dtsr::run(sb.question, ExitPolicy::from_name("dtsr"), sb.config, backend, nullptr, "q9");
    const RunRecord back = RunRecord::from_json_string(rec.to_json_string());
    CHECK(back.question_id == rec.question_id);
    CHECK(back.trace == rec.trace);
    CHECK(back.conclusion == rec.conclusion);
    CHECK(back.exit_kind == rec.exit_kind);
    CHECK(back.tokens_main == rec.tokens_main);
    CHECK(back.tokens_check_overhead == rec.tokens_check_overhead);
    CHECK(back.check_events.size() == rec.check_events.size());
    for (std::size_t i = 0; i < rec.check_events.size(); ++i) {
        CHECK(back.check_events[i].trace_token_position ==
              rec.check_events[i].trace_token_position);
        CHECK(back.check_events[i].decision == rec.check_events[i].decision);
        CHECK(back.check_events[i].score_value ==
              doctest::Approx(rec.check_events[i].score_value));
    }
}

TEST_CASE("interval enforcement holds under randomized signal placement") {
    std::mt19937 rng(424242);
    const std::vector<std::string> words = {"step", "value", "prime", "sum",   "case",
                                            "bound", "check", "term",  "digit", "half"};
    for (int round = 0; round < 200; ++round) {
        ScenarioBuilder sb;
        sb.config = small_config();
        sb.config.k = static_cast<std::int64_t>(rng() % 48);
        sb.config.tau = 100.0;

        const int n_chunks = 6 + static_cast<int>(rng() % 24);
        std::int64_t total_signals = 0;
        for (int i = 0; i < n_chunks; ++i) {
            const bool signal = rng() % 3 == 0;
            std::string text;
            if (signal) {
                text = "Wait, ";
                ++total_signals;
            }
            for (int w = 0; w < 3; ++w) {
                text += words[rng() % words.size()] + " ";
            }
            text += std::to_string(i) + " ";
            const auto tokens = static_cast<std::int64_t>(1 + rng() % 6);
            sb.think_chunks.push_back(chunk(text, tokens));
            if (signal) {
                sb.check_replies.push_back({static_cast<std::size_t>(i),
                                            rng() % 4 == 0 ? "100" : "50"});
            }
        }
        sb.natural_close = true;

        MockBackend inner(sb.build());
        CountingBackend counting(inner);
        const RunRecord rec = dtsr::run(sb.question, ExitPolicy::from_name("dtsr"), sb.config,
                                        counting, nullptr, "fuzz");

        std::int64_t last = -1;
        for (const auto& ev : rec.check_events) {
            CHECK(ev.trace_token_position >= sb.config.k);  // counter counts from run start
            if (last >= 0) {
                CHECK(ev.trace_token_position - last >= sb.config.k);
            }
            last = ev.trace_token_position;
        }
        // every detected signal either checked or skipped
        CHECK(static_cast<std::int64_t>(rec.check_events.size()) + rec.skipped_signals <=
              total_signals);
        // accounting conservation across all requests of the run
        CHECK(rec.tokens_main + rec.tokens_check_overhead == counting.total_completion_tokens);
    }
}

TEST_CASE("k=0 checks every signal, including several in one chunk") {
    ScenarioBuilder sb;
    sb.config = small_config();
    sb.config.k = 0;
    sb.think_chunks = {
        chunk("warmup text first ", 4),
        chunk("Wait, one cue. Wait, another cue. ", 4),  // two hits, same chunk
        chunk("closing stretch of reasoning ", 4),
    };
    // one reply serves both checks: same trace prefix, same prompt
    sb.check_replies = {{1, "50"}};
    sb.natural_close = true;
    MockBackend backend(sb.build());
    const RunRecord rec =
        dtsr::run(sb.question, ExitPolicy::from_name("dtsr"), sb.config, backend, nullptr, "k0");
    CHECK(rec.check_events.size() == 2);
    CHECK(rec.skipped_signals == 0);
    CHECK(rec.check_events[0].trace_token_position == 8);
    CHECK(rec.check_events[1].trace_token_position == 8);
    CHECK(rec.exit_kind == ExitKind::natural);
}
