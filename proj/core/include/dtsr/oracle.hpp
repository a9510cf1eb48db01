#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "dtsr/answers.hpp"
#include "dtsr/backend.hpp"
#include "dtsr/controller.hpp"
#include "dtsr/harness.hpp"

namespace dtsr {

struct SentenceBoundary {
    std::int64_t index = 0;
    std::size_t char_offset = 0;  // immediately after the terminator
    std::int64_t preceding_text_tokens = 0;
};

struct OptimalExit {
    std::string sample_id;
    std::optional<SentenceBoundary> boundary;  // none: no prefix answers correctly
    std::int64_t optimal_tokens = 0;
    std::int64_t full_tokens = 0;
    double overthink_ratio = 0.0;  // (full - optimal) / full, 0 when no boundary
    bool verified = false;
    std::int64_t boundaries_tried = 0;
    std::int64_t boundaries_unknown = 0;  // backend failures, skipped

    std::string to_json_string() const;
    static OptimalExit from_json_string(const std::string& json_text);
};

struct SentenceSplitOptions {
    // Tokens whose trailing period must not end a sentence.
    std::vector<std::string> abbreviations = {"e.g", "i.e", "etc", "vs", "cf",
                                              "Dr", "Mr", "Mrs", "Ms", "Fig", "Eq"};
};

/// Boundaries after '.', '?' or '!' followed by whitespace, and after blank-
/// line paragraph breaks. Decimal points and known abbreviations are skipped.
std::vector<SentenceBoundary> segment_sentences(const std::string& trace,
                                                const SentenceSplitOptions& options = {});

/// Earliest sentence boundary whose forced conclusion already grades correct.
/// Scans linearly from the start: correctness is not monotone in prefix
/// length, so bisection would be wrong.
OptimalExit find_optimal_exit(const Sample& sample, const RunRecord& record, Backend& backend,
                              const ControllerConfig& config,
                              const SentenceSplitOptions& options = {});

struct GapSummary {
    struct PolicyGap {
        std::string policy;
        double mean_gap_tokens = 0.0;   // policy exit tokens - optimal tokens
        double frac_before_optimal = 0.0;  // exits earlier than optimal (risking errors)
        double frac_after_optimal = 0.0;   // exits later (wasting tokens)
        std::int64_t n = 0;
    };
    std::vector<PolicyGap> policies;
    std::int64_t missing_pairs = 0;

    std::string to_csv() const;
};

/// Per-policy exit-gap statistics for runs that have a matching oracle entry
/// (keyed by sample id). Unmatched runs are counted, not guessed.
GapSummary gap_report(const std::vector<BenchRun>& runs,
                      const std::vector<OptimalExit>& oracles);

}  // namespace dtsr
