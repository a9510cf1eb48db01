#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "dtsr/backend.hpp"
#include "dtsr/prompting.hpp"
#include "dtsr/signal_matcher.hpp"
#include "dtsr/types.hpp"

namespace dtsr {

enum class PolicyVariant {
    vanilla,
    dtsr,
    dtsr_first_person,
    no_thinking,
    budget_force,
    answer_probe,
    entropy_exit,
    nowait,
};

enum class EntropyMode { deer, deer1, deer2 };

struct ExitPolicy {
    PolicyVariant variant = PolicyVariant::dtsr;

    // answer_probe
    std::int64_t probe_interval = 256;
    std::int64_t probe_window = 3;

    // entropy_exit
    EntropyMode entropy_mode = EntropyMode::deer;
    double conf_threshold = 0.95;

    // nowait: word -> token ids to suppress
    std::map<std::string, std::vector<std::int64_t>> banned_words;

    void validate() const;

    static ExitPolicy from_name(const std::string& name);
    std::string name() const;
};

struct ControllerConfig {
    double tau = 100.0;
    std::int64_t k = 64;
    std::int64_t max_len = 16384;
    std::int64_t conclusion_reserve = 512;
    std::int64_t check_max_tokens = 16;
    double check_temperature = 0.0;
    double temperature = 0.6;
    double top_p = 0.95;
    int seeds = 3;  // used by the bench harness

    std::optional<std::int64_t> seed;  // per-run decode seed
    std::string system_prompt;         // empty -> default reasoning system line
    ChatFormat format;
    std::optional<PromptTemplate> check_template;  // default: built-in third-person template
    std::vector<SignalPattern> signal_patterns;    // empty -> built-in set

    // Suffix appended when eliciting a trial answer (probe and entropy exits).
    std::string probe_suffix = "\n\n…Final answer: \\boxed{";
    std::int64_t probe_max_tokens = 32;

    // force_exit spacing: trace + exit_prefix + think_close + exit_suffix
    std::string exit_prefix = "\n";
    std::string exit_suffix = "\n\n";

    void validate() const;
    std::int64_t think_budget() const { return max_len - conclusion_reserve; }
};

enum class CheckKind { sufficiency, probe, trial };
enum class CheckDecision { exit_now, keep_going };
enum class ExitKind { natural, early_exit, budget_forced, no_think };

const char* to_string(CheckKind kind);
const char* to_string(CheckDecision decision);
const char* to_string(ExitKind kind);
ExitKind exit_kind_from_string(const std::string& s);

struct CheckEvent {
    CheckKind kind = CheckKind::sufficiency;
    std::int64_t trace_token_position = 0;
    std::optional<SignalHit> signal;  // absent for interval probes
    bool score_parsed = false;
    double score_value = 0.0;
    std::string score_raw;
    CheckDecision decision = CheckDecision::keep_going;
    std::int64_t check_tokens_used = 0;
    std::int64_t check_latency_us = 0;

    // probe / trial extras
    std::string probe_answer;
    std::optional<double> trial_confidence;
    bool saw_think_close = false;
};

/// Full outcome of one controlled generation.
struct RunRecord {
    std::string question_id;
    std::string trace;       // think-phase content, including the close marker when present
    std::string conclusion;  // text after the think phase
    ExitKind exit_kind = ExitKind::natural;
    std::vector<CheckEvent> check_events;
    std::int64_t tokens_main = 0;            // think + conclusion tokens
    std::int64_t tokens_check_overhead = 0;  // sufficiency/probe/trial tokens
    std::int64_t wall_latency_us = 0;
    std::string answer;
    std::int64_t skipped_signals = 0;

    std::string to_json_string(bool pretty = false) const;
    static RunRecord from_json_string(const std::string& json_text);
};

/// Backend error that aborted a run; carries whatever was produced so far.
class RunError : public Error {
public:
    RunError(Error cause, RunRecord partial)
        : Error(cause.kind(), cause.what()), partial_record(std::move(partial)) {}

    RunRecord partial_record;
};

/// Append the end-of-thinking marker. Throws Error(config) when the trace
/// already ends with it (ignoring trailing whitespace).
std::string force_exit(const std::string& trace, const ControllerConfig& config);

/// Think-phase share of tokens_main, estimated proportionally by characters
/// (the stream does not preserve a char-to-token map).
std::int64_t estimated_trace_tokens(const RunRecord& record);

/// Run one question under the given exit policy. `check_backend` may be null,
/// in which case checks go to the main backend.
RunRecord run(const std::string& question,
              const ExitPolicy& policy,
              const ControllerConfig& config,
              Backend& backend,
              Backend* check_backend = nullptr,
              const std::string& question_id = "");

}  // namespace dtsr
