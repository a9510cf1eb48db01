#include "dtsr/controller.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <deque>

#include <json.hpp>

#include "dtsr/answers.hpp"

namespace dtsr {

const char* to_string(CheckKind kind) {
    switch (kind) {
        case CheckKind::sufficiency: return "sufficiency";
        case CheckKind::probe:       return "probe";
        case CheckKind::trial:       return "trial";
    }
    return "unknown";
}

const char* to_string(CheckDecision decision) {
    return decision == CheckDecision::exit_now ? "exit" : "continue";
}

const char* to_string(ExitKind kind) {
    switch (kind) {
        case ExitKind::natural:       return "natural";
        case ExitKind::early_exit:    return "early_exit";
        case ExitKind::budget_forced: return "budget_forced";
        case ExitKind::no_think:      return "no_think";
    }
    return "unknown";
}

ExitKind exit_kind_from_string(const std::string& s) {
    if (s == "natural") return ExitKind::natural;
    if (s == "early_exit") return ExitKind::early_exit;
    if (s == "budget_forced") return ExitKind::budget_forced;
    if (s == "no_think") return ExitKind::no_think;
    throw Error(ErrorKind::parse, "unknown exit kind '" + s + "'");
}

void ExitPolicy::validate() const {
    if (variant == PolicyVariant::answer_probe) {
        if (probe_interval < 1) {
            throw Error(ErrorKind::config, "answer_probe: interval must be >= 1");
        }
        if (probe_window < 2) {
            throw Error(ErrorKind::config, "answer_probe: window must be >= 2");
        }
    }
    if (variant == PolicyVariant::entropy_exit &&
        !(conf_threshold > 0.0 && conf_threshold <= 1.0)) {
        throw Error(ErrorKind::config, "entropy_exit: conf_threshold must be in (0, 1]");
    }
}

ExitPolicy ExitPolicy::from_name(const std::string& name) {
    ExitPolicy p;
    if (name == "vanilla") {
        p.variant = PolicyVariant::vanilla;
    } else if (name == "dtsr") {
        p.variant = PolicyVariant::dtsr;
    } else if (name == "dtsr1" || name == "dtsr_first_person") {
        p.variant = PolicyVariant::dtsr_first_person;
    } else if (name == "nothinking" || name == "no_thinking") {
        p.variant = PolicyVariant::no_thinking;
    } else if (name == "budget_force" || name == "budget") {
        p.variant = PolicyVariant::budget_force;
    } else if (name == "probe" || name == "answer_probe") {
        p.variant = PolicyVariant::answer_probe;
    } else if (name == "deer" || name == "deer1" || name == "deer2") {
        p.variant = PolicyVariant::entropy_exit;
        p.entropy_mode = name == "deer" ? EntropyMode::deer
                                        : (name == "deer1" ? EntropyMode::deer1 : EntropyMode::deer2);
    } else if (name == "nowait") {
        p.variant = PolicyVariant::nowait;
    } else {
        throw Error(ErrorKind::config, "unknown policy '" + name + "'");
    }
    return p;
}

std::string ExitPolicy::name() const {
    switch (variant) {
        case PolicyVariant::vanilla:           return "vanilla";
        case PolicyVariant::dtsr:              return "dtsr";
        case PolicyVariant::dtsr_first_person: return "dtsr1";
        case PolicyVariant::no_thinking:       return "nothinking";
        case PolicyVariant::budget_force:      return "budget_force";
        case PolicyVariant::answer_probe:      return "probe";
        case PolicyVariant::entropy_exit:
            switch (entropy_mode) {
                case EntropyMode::deer:  return "deer";
                case EntropyMode::deer1: return "deer1";
                case EntropyMode::deer2: return "deer2";
            }
            return "deer";
        case PolicyVariant::nowait:            return "nowait";
    }
    return "unknown";
}

void ControllerConfig::validate() const {
    if (tau < 0.0) {
        throw Error(ErrorKind::config, "controller: tau must be >= 0");
    }
    if (k < 0) {
        throw Error(ErrorKind::config, "controller: k must be >= 0");
    }
    if (max_len < 1) {
        throw Error(ErrorKind::config, "controller: max_len must be >= 1");
    }
    if (conclusion_reserve < 0 || conclusion_reserve >= max_len) {
        throw Error(ErrorKind::config, "controller: conclusion_reserve must be in [0, max_len)");
    }
    if (check_max_tokens < 1) {
        throw Error(ErrorKind::config, "controller: check_max_tokens must be >= 1");
    }
    if (seeds < 1) {
        throw Error(ErrorKind::config, "controller: seeds must be >= 1");
    }
    if (probe_max_tokens < 1) {
        throw Error(ErrorKind::config, "controller: probe_max_tokens must be >= 1");
    }
    format.validate();
}

std::int64_t estimated_trace_tokens(const RunRecord& record) {
    const std::size_t trace_chars = record.trace.size();
    const std::size_t total_chars = trace_chars + record.conclusion.size();
    if (total_chars == 0) {
        return 0;
    }
    return static_cast<std::int64_t>(
        std::llround(static_cast<double>(record.tokens_main) * static_cast<double>(trace_chars) /
                     static_cast<double>(total_chars)));
}

std::string force_exit(const std::string& trace, const ControllerConfig& config) {
    std::string_view view(trace);
    while (!view.empty() && std::isspace(static_cast<unsigned char>(view.back())) != 0) {
        view.remove_suffix(1);
    }
    const auto& close = config.format.think_close;
    if (view.size() >= close.size() &&
        view.substr(view.size() - close.size()) == close) {
        throw Error(ErrorKind::config, "force_exit: trace already ends with the close marker");
    }
    return trace + config.exit_prefix + close + config.exit_suffix;
}

namespace {

std::string default_answer(const std::string& text) {
    std::string a = extract_answer(text, TaskKind::boxed_expression);
    if (a.empty()) {
        a = extract_answer(text, TaskKind::numeric);
    }
    return a;
}

std::string ltrim(std::string s) {
    std::size_t i = 0;
    while (i < s.size() && std::isspace(static_cast<unsigned char>(s[i])) != 0) {
        ++i;
    }
    return s.substr(i);
}

std::string trim(std::string s) {
    s = ltrim(std::move(s));
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back())) != 0) {
        s.pop_back();
    }
    return s;
}

/// One controlled generation, start to finish.
class Session {
public:
    Session(std::string question, const ExitPolicy& policy, const ControllerConfig& config,
            Backend& backend, Backend* check_backend, std::string question_id)
        : question_(std::move(question)),
          policy_(policy),
          config_(config),
          backend_(backend),
          check_backend_(check_backend != nullptr ? *check_backend : backend),
          patterns_(config.signal_patterns.empty() ? SignalMatcher::default_patterns()
                                                   : config.signal_patterns) {
        rec_.question_id = std::move(question_id);
        if (config_.check_template) {
            template_ = *config_.check_template;
        } else {
            template_ = PromptTemplate::sufficiency_default(config_.format);
        }
    }

    RunRecord execute() {
        policy_.validate();
        config_.validate();
        if (question_.empty()) {
            throw Error(ErrorKind::config, "run: empty question");
        }
        const auto t0 = std::chrono::steady_clock::now();
        try {
            switch (policy_.variant) {
                case PolicyVariant::vanilla:
                    run_passthrough({});
                    break;
                case PolicyVariant::nowait:
                    run_passthrough(nowait_bias());
                    break;
                case PolicyVariant::no_thinking:
                    run_no_thinking();
                    break;
                case PolicyVariant::dtsr:
                case PolicyVariant::dtsr_first_person:
                case PolicyVariant::budget_force:
                case PolicyVariant::entropy_exit:
                    run_managed();
                    break;
                case PolicyVariant::answer_probe:
                    run_probe();
                    break;
            }
        } catch (const Error& e) {
            // Text and tokens served before the failure still count.
            rec_.tokens_main += e.partial_completion_tokens;
            if (rec_.trace.empty() && !e.partial.empty()) {
                rec_.trace = e.partial;
            }
            finalize_latency(t0);
            throw RunError(e, rec_);
        }
        finalize_latency(t0);
        const std::string& src = rec_.conclusion.empty() ? rec_.trace : rec_.conclusion;
        rec_.answer = default_answer(src);
        return rec_;
    }

private:
    void finalize_latency(std::chrono::steady_clock::time_point t0) {
        if (backend_.virtual_time()) {
            rec_.wall_latency_us = virtual_us_;
        } else {
            rec_.wall_latency_us = std::chrono::duration_cast<std::chrono::microseconds>(
                                       std::chrono::steady_clock::now() - t0)
                                       .count();
        }
    }

    CompletionRequest base_request() const {
        CompletionRequest req;
        req.temperature = config_.temperature;
        req.top_p = config_.top_p;
        req.seed = config_.seed;
        req.stream = true;
        return req;
    }

    std::map<std::int64_t, double> nowait_bias() const {
        std::map<std::int64_t, double> bias;
        for (const auto& [word, ids] : policy_.banned_words) {
            for (const auto id : ids) {
                bias[id] = -100.0;
            }
        }
        if (!bias.empty() && !backend_.capabilities().supports_logit_bias) {
            throw Error(ErrorKind::capability, "nowait: backend does not support logit_bias");
        }
        return bias;
    }

    // vanilla / nowait: one uninterrupted stream, no intervention.
    void run_passthrough(std::map<std::int64_t, double> bias) {
        const std::string base =
            render_reasoning_prompt(question_, config_.system_prompt, config_.format, false);
        CompletionRequest req = base_request();
        req.prompt = base;
        req.max_tokens = config_.max_len;
        req.logit_bias = std::move(bias);

        std::string text;
        std::optional<FinishReason> finish;
        const Usage usage = backend_.stream_complete(req, [&](const TokenChunk& chunk) {
            text += chunk.text;
            if (chunk.finish_reason) {
                finish = chunk.finish_reason;
            }
            return true;
        });
        account_main(usage);

        const auto close_pos = text.find(config_.format.think_close);
        if (close_pos != std::string::npos) {
            const auto end = close_pos + config_.format.think_close.size();
            rec_.trace = text.substr(0, end);
            rec_.conclusion = text.substr(end);
            rec_.exit_kind = ExitKind::natural;
        } else {
            rec_.trace = std::move(text);
            rec_.exit_kind = (finish && *finish == FinishReason::length) ? ExitKind::budget_forced
                                                                         : ExitKind::natural;
        }
    }

    void run_no_thinking() {
        const std::string base =
            render_reasoning_prompt(question_, config_.system_prompt, config_.format, true);
        CompletionRequest req = base_request();
        req.prompt = base;
        req.max_tokens = config_.max_len;

        std::string text;
        const Usage usage = backend_.stream_complete(req, [&](const TokenChunk& chunk) {
            text += chunk.text;
            return true;
        });
        account_main(usage);
        rec_.conclusion = std::move(text);
        rec_.exit_kind = ExitKind::no_think;
    }

    // dtsr / dtsr1 / budget_force / entropy_exit: think-phase supervision with
    // signal-triggered checks and budget forcing at max_len - reserve.
    void run_managed() {
        if (policy_.variant == PolicyVariant::entropy_exit &&
            policy_.entropy_mode != EntropyMode::deer2 &&
            !backend_.capabilities().supports_logprobs) {
            throw Error(ErrorKind::capability,
                        "entropy_exit: backend does not support logprobs");
        }
        const bool with_checks = policy_.variant != PolicyVariant::budget_force;
        const bool gate_by_k = policy_.variant == PolicyVariant::dtsr ||
                               policy_.variant == PolicyVariant::dtsr_first_person;

        const std::string base =
            render_reasoning_prompt(question_, config_.system_prompt, config_.format, false);
        SignalMatcher matcher(patterns_);

        std::string text;                       // think-phase text generated so far
        std::int64_t tokens = 0;                // generated main tokens
        std::int64_t last_reset = 0;            // token position of the last counter reset
        std::optional<std::size_t> close_pos;   // naturally generated close marker
        std::size_t close_from = 0;
        std::optional<FinishReason> finish;
        bool exited = false;
        struct QueuedHit {
            SignalHit hit;
            std::int64_t token_pos;
        };
        std::deque<QueuedHit> queue;

        const std::int64_t think_budget = config_.think_budget();

        while (true) {
            while (with_checks && !queue.empty() && !exited) {
                const QueuedHit q = queue.front();
                queue.pop_front();
                if (gate_by_k && q.token_pos - last_reset < config_.k) {
                    ++rec_.skipped_signals;
                    continue;
                }
                CheckEvent ev = policy_.variant == PolicyVariant::entropy_exit
                                    ? run_trial(q, base, text)
                                    : run_sufficiency_check(q, text);
                rec_.check_events.push_back(ev);
                if (ev.decision == CheckDecision::exit_now) {
                    exited = true;
                } else if (gate_by_k) {
                    last_reset = q.token_pos;
                }
            }
            if (exited || close_pos || tokens >= think_budget || finish) {
                break;
            }

            CompletionRequest req = base_request();
            req.prompt = base + text;
            req.max_tokens = think_budget - tokens;
            const Usage usage = backend_.stream_complete(req, [&](const TokenChunk& chunk) {
                text += chunk.text;
                tokens += chunk.token_count;
                if (chunk.finish_reason) {
                    finish = chunk.finish_reason;
                }

                const auto found = text.find(config_.format.think_close, close_from);
                if (found != std::string::npos) {
                    close_pos = found;
                    return false;  // think phase over; checks are disabled past here
                }
                const std::size_t marker = config_.format.think_close.size();
                close_from = text.size() >= marker - 1 ? text.size() - (marker - 1) : 0;

                if (with_checks) {
                    for (const auto& hit : matcher.feed(chunk.text)) {
                        queue.push_back({hit, tokens});
                    }
                    if (!queue.empty()) {
                        return false;  // pause generation to evaluate
                    }
                }
                return true;
            });
            account_main(usage);
        }

        if (exited) {
            rec_.exit_kind = ExitKind::early_exit;
            rec_.trace = force_exit(text, config_);
            generate_conclusion(base + rec_.trace, config_.conclusion_reserve);
        } else if (close_pos) {
            const auto end = *close_pos + config_.format.think_close.size();
            rec_.trace = text.substr(0, end);
            rec_.conclusion = text.substr(end);
            rec_.exit_kind = ExitKind::natural;
            if (!finish && tokens < config_.max_len) {
                continue_conclusion(base + text, config_.max_len - tokens);
            }
        } else if (finish && *finish != FinishReason::length) {
            rec_.trace = std::move(text);
            rec_.exit_kind = ExitKind::natural;
        } else {
            rec_.exit_kind = ExitKind::budget_forced;
            rec_.trace = force_exit(text, config_);
            generate_conclusion(base + rec_.trace, config_.conclusion_reserve);
        }
    }

    // Dynasor-style consistency probing at a fixed token interval.
    void run_probe() {
        const std::string base =
            render_reasoning_prompt(question_, config_.system_prompt, config_.format, false);

        std::string text;
        std::int64_t tokens = 0;
        std::optional<std::size_t> close_pos;
        std::size_t close_from = 0;
        std::optional<FinishReason> finish;
        bool exited = false;
        bool probe_due = false;
        std::int64_t next_probe = policy_.probe_interval;
        std::deque<std::string> recent;

        const std::int64_t think_budget = config_.think_budget();

        while (true) {
            if (probe_due && !exited) {
                probe_due = false;
                next_probe = (tokens / policy_.probe_interval + 1) * policy_.probe_interval;
                CheckEvent ev;
                if (run_answer_probe(base, text, tokens, ev)) {
                    if (!ev.probe_answer.empty()) {
                        recent.push_back(ev.probe_answer);
                    } else {
                        recent.clear();
                    }
                    while (recent.size() > static_cast<std::size_t>(policy_.probe_window)) {
                        recent.pop_front();
                    }
                    const bool consistent =
                        recent.size() == static_cast<std::size_t>(policy_.probe_window) &&
                        std::all_of(recent.begin(), recent.end(),
                                    [&](const std::string& a) { return a == recent.front(); });
                    if (consistent) {
                        ev.decision = CheckDecision::exit_now;
                        exited = true;
                    }
                    rec_.check_events.push_back(ev);
                }
            }
            if (exited || close_pos || tokens >= think_budget || finish) {
                break;
            }

            CompletionRequest req = base_request();
            req.prompt = base + text;
            req.max_tokens = think_budget - tokens;
            const Usage usage = backend_.stream_complete(req, [&](const TokenChunk& chunk) {
                text += chunk.text;
                tokens += chunk.token_count;
                if (chunk.finish_reason) {
                    finish = chunk.finish_reason;
                }
                const auto found = text.find(config_.format.think_close, close_from);
                if (found != std::string::npos) {
                    close_pos = found;
                    return false;
                }
                const std::size_t marker = config_.format.think_close.size();
                close_from = text.size() >= marker - 1 ? text.size() - (marker - 1) : 0;
                if (tokens >= next_probe) {
                    probe_due = true;
                    return false;
                }
                return true;
            });
            account_main(usage);
        }

        if (exited) {
            rec_.exit_kind = ExitKind::early_exit;
            rec_.trace = force_exit(text, config_);
            generate_conclusion(base + rec_.trace, config_.conclusion_reserve);
        } else if (close_pos) {
            const auto end = *close_pos + config_.format.think_close.size();
            rec_.trace = text.substr(0, end);
            rec_.conclusion = text.substr(end);
            rec_.exit_kind = ExitKind::natural;
            if (!finish && tokens < config_.max_len) {
                continue_conclusion(base + text, config_.max_len - tokens);
            }
        } else if (finish && *finish != FinishReason::length) {
            rec_.trace = std::move(text);
            rec_.exit_kind = ExitKind::natural;
        } else {
            rec_.exit_kind = ExitKind::budget_forced;
            rec_.trace = force_exit(text, config_);
            generate_conclusion(base + rec_.trace, config_.conclusion_reserve);
        }
    }

    template <typename Q>
    CheckEvent run_sufficiency_check(const Q& q, const std::string& text) {
        CheckEvent ev;
        ev.kind = CheckKind::sufficiency;
        ev.trace_token_position = q.token_pos;
        ev.signal = q.hit;

        const std::string thought = config_.format.think_open + text;
        const std::string prompt =
            policy_.variant == PolicyVariant::dtsr_first_person
                ? render_first_person_prompt(question_, thought, config_.format)
                : render_sufficiency_prompt(question_, thought, config_.format, template_);

        CompletionRequest req = base_request();
        req.prompt = prompt;
        req.stream = false;
        req.max_tokens = config_.check_max_tokens;
        req.temperature = config_.check_temperature;
        req.stop = {"\n"};

        std::string reply;
        bool got_reply = false;
        // One silent retry: the check is idempotent, the main stream is not.
        for (int attempt = 0; attempt < 2 && !got_reply; ++attempt) {
            const auto t0 = std::chrono::steady_clock::now();
            try {
                const CompletionResult res = check_backend_.complete(req);
                reply = res.text;
                got_reply = true;
                ev.check_tokens_used += res.usage.completion_tokens;
                account_check(res.usage, ev, t0);
            } catch (const Error& e) {
                ev.check_tokens_used += e.partial_completion_tokens;
                rec_.tokens_check_overhead += e.partial_completion_tokens;
            }
        }

        if (got_reply) {
            ev.score_raw = reply;
            try {
                const ConfidenceScore score = parse_confidence(reply);
                ev.score_parsed = true;
                ev.score_value = score.value;
                ev.decision = score.value >= config_.tau ? CheckDecision::exit_now
                                                         : CheckDecision::keep_going;
            } catch (const Error&) {
                // Unparseable replies mean "insufficient": keep reasoning.
                ev.score_parsed = false;
                ev.decision = CheckDecision::keep_going;
            }
        } else {
            ev.score_parsed = false;
            ev.decision = CheckDecision::keep_going;
        }
        return ev;
    }

    template <typename Q>
    CheckEvent run_trial(const Q& q, const std::string& base, const std::string& text) {
        CheckEvent ev;
        ev.kind = CheckKind::trial;
        ev.trace_token_position = q.token_pos;
        ev.signal = q.hit;

        CompletionRequest req = base_request();
        req.prompt = base + text + config_.probe_suffix;
        req.max_tokens = config_.probe_max_tokens;
        req.temperature = config_.check_temperature;
        req.want_logprobs = policy_.entropy_mode != EntropyMode::deer2;

        std::vector<TokenChunk> chunks;
        const auto t0 = std::chrono::steady_clock::now();
        Usage usage;
        try {
            usage = backend_.stream_complete(req, [&](const TokenChunk& chunk) {
                chunks.push_back(chunk);
                return true;
            });
        } catch (const Error& e) {
            ev.check_tokens_used += e.partial_completion_tokens;
            rec_.tokens_check_overhead += e.partial_completion_tokens;
            ev.decision = CheckDecision::keep_going;
            return ev;
        }
        ev.check_tokens_used += usage.completion_tokens;
        account_check(usage, ev, t0);

        std::string full;
        for (const auto& c : chunks) {
            full += c.text;
        }
        const auto brace = full.find('}');
        ev.probe_answer = trim(full.substr(0, brace == std::string::npos ? full.size() : brace));

        if (brace != std::string::npos) {
            const std::string after = ltrim(full.substr(brace + 1));
            ev.saw_think_close = after.rfind(config_.format.think_close, 0) == 0;
        }

        // Confidence of the trial-answer span: exp(mean per-token logprob)
        // over the chunks up to and including the one closing the box.
        if (policy_.entropy_mode != EntropyMode::deer2) {
            double sum = 0.0;
            std::int64_t count = 0;
            std::size_t covered = 0;
            for (const auto& c : chunks) {
                if (c.token_count > 0) {
                    if (!c.logprobs) {
                        throw Error(ErrorKind::protocol,
                                    "entropy_exit: trial chunk missing logprobs");
                    }
                    for (const double lp : *c.logprobs) {
                        sum += lp;
                    }
                    count += c.token_count;
                }
                covered += c.text.size();
                if (brace != std::string::npos && covered > brace) {
                    break;
                }
            }
            ev.trial_confidence = count > 0 ? std::exp(sum / static_cast<double>(count)) : 0.0;
        }

        const bool answered = !ev.probe_answer.empty();
        bool exit_now = false;
        switch (policy_.entropy_mode) {
            case EntropyMode::deer1:
                exit_now = ev.trial_confidence && *ev.trial_confidence >= policy_.conf_threshold;
                break;
            case EntropyMode::deer2:
                exit_now = answered && ev.saw_think_close;
                break;
            case EntropyMode::deer:
                exit_now = answered && ev.saw_think_close && ev.trial_confidence &&
                           *ev.trial_confidence >= policy_.conf_threshold;
                break;
        }
        ev.decision = exit_now ? CheckDecision::exit_now : CheckDecision::keep_going;
        return ev;
    }

    bool run_answer_probe(const std::string& base, const std::string& text,
                          std::int64_t token_pos, CheckEvent& ev) {
        ev.kind = CheckKind::probe;
        ev.trace_token_position = token_pos;

        CompletionRequest req = base_request();
        req.prompt = base + text + config_.probe_suffix;
        req.stream = false;
        req.max_tokens = config_.probe_max_tokens;
        req.temperature = config_.check_temperature;
        req.stop = {"}"};

        const auto t0 = std::chrono::steady_clock::now();
        try {
            const CompletionResult res = check_backend_.complete(req);
            ev.check_tokens_used += res.usage.completion_tokens;
            account_check(res.usage, ev, t0);
            ev.probe_answer = trim(res.text);
            ev.decision = CheckDecision::keep_going;
            return true;
        } catch (const Error& e) {
            // Failed probes are skipped.
            rec_.tokens_check_overhead += e.partial_completion_tokens;
            return false;
        }
    }

    void generate_conclusion(const std::string& prompt, std::int64_t budget) {
        if (budget <= 0) {
            return;
        }
        CompletionRequest req = base_request();
        req.prompt = prompt;
        req.stream = false;
        req.max_tokens = budget;
        const CompletionResult res = backend_.complete(req);
        rec_.conclusion = res.text;
        account_main(res.usage);
    }

    // Resume the stream that produced a natural close and append the rest of
    // the conclusion.
    void continue_conclusion(const std::string& prompt, std::int64_t budget) {
        if (budget <= 0) {
            return;
        }
        CompletionRequest req = base_request();
        req.prompt = prompt;
        req.stream = false;
        req.max_tokens = budget;
        const CompletionResult res = backend_.complete(req);
        rec_.conclusion += res.text;
        account_main(res.usage);
    }

    void account_main(const Usage& usage) {
        rec_.tokens_main += usage.completion_tokens;
        virtual_us_ += usage.virtual_elapsed_us;
    }

    void account_check(const Usage& usage, CheckEvent& ev,
                       std::chrono::steady_clock::time_point t0) {
        rec_.tokens_check_overhead += usage.completion_tokens;
        virtual_us_ += usage.virtual_elapsed_us;
        if (check_backend_.virtual_time()) {
            ev.check_latency_us += usage.virtual_elapsed_us;
        } else {
            ev.check_latency_us += std::chrono::duration_cast<std::chrono::microseconds>(
                                       std::chrono::steady_clock::now() - t0)
                                       .count();
        }
    }

    std::string question_;
    ExitPolicy policy_;
    ControllerConfig config_;
    Backend& backend_;
    Backend& check_backend_;
    std::vector<SignalPattern> patterns_;
    PromptTemplate template_;
    RunRecord rec_;
    std::int64_t virtual_us_ = 0;
};

}  // namespace

RunRecord run(const std::string& question, const ExitPolicy& policy,
              const ControllerConfig& config, Backend& backend, Backend* check_backend,
              const std::string& question_id) {
    Session session(question, policy, config, backend, check_backend, question_id);
    return session.execute();
}

namespace {

nlohmann::json check_event_to_json(const CheckEvent& ev) {
    nlohmann::json j{
        {"kind", to_string(ev.kind)},
        {"trace_token_position", ev.trace_token_position},
        {"score_parsed", ev.score_parsed},
        {"score_value", ev.score_value},
        {"score_raw", ev.score_raw},
        {"decision", to_string(ev.decision)},
        {"check_tokens_used", ev.check_tokens_used},
        {"check_latency_us", ev.check_latency_us},
    };
    if (ev.signal) {
        j["signal"] = {{"pattern_id", ev.signal->pattern_id},
                       {"start_offset", ev.signal->start_offset},
                       {"end_offset", ev.signal->end_offset},
                       {"token_index", ev.signal->token_index}};
    }
    if (!ev.probe_answer.empty() || ev.kind != CheckKind::sufficiency) {
        j["probe_answer"] = ev.probe_answer;
    }
    if (ev.trial_confidence) {
        j["trial_confidence"] = *ev.trial_confidence;
    }
    if (ev.kind == CheckKind::trial) {
        j["saw_think_close"] = ev.saw_think_close;
    }
    return j;
}

CheckEvent check_event_from_json(const nlohmann::json& j) {
    CheckEvent ev;
    const std::string kind = j.value("kind", std::string("sufficiency"));
    ev.kind = kind == "probe" ? CheckKind::probe
                              : (kind == "trial" ? CheckKind::trial : CheckKind::sufficiency);
    ev.trace_token_position = j.value("trace_token_position", std::int64_t{0});
    ev.score_parsed = j.value("score_parsed", false);
    ev.score_value = j.value("score_value", 0.0);
    ev.score_raw = j.value("score_raw", std::string());
    ev.decision = j.value("decision", std::string("continue")) == "exit"
                      ? CheckDecision::exit_now
                      : CheckDecision::keep_going;
    ev.check_tokens_used = j.value("check_tokens_used", std::int64_t{0});
    ev.check_latency_us = j.value("check_latency_us", std::int64_t{0});
    if (j.contains("signal")) {
        const auto& s = j.at("signal");
        SignalHit hit;
        hit.pattern_id = s.value("pattern_id", 0);
        hit.start_offset = s.value("start_offset", std::size_t{0});
        hit.end_offset = s.value("end_offset", std::size_t{0});
        hit.token_index = s.value("token_index", std::size_t{0});
        ev.signal = hit;
    }
    ev.probe_answer = j.value("probe_answer", std::string());
    if (j.contains("trial_confidence")) {
        ev.trial_confidence = j.at("trial_confidence").get<double>();
    }
    ev.saw_think_close = j.value("saw_think_close", false);
    return ev;
}

}  // namespace

std::string RunRecord::to_json_string(bool pretty) const {
    nlohmann::json j{
        {"question_id", question_id},
        {"trace", trace},
        {"conclusion", conclusion},
        {"exit_kind", to_string(exit_kind)},
        {"tokens_main", tokens_main},
        {"tokens_check_overhead", tokens_check_overhead},
        {"wall_latency_us", wall_latency_us},
        {"answer", answer},
        {"skipped_signals", skipped_signals},
    };
    j["check_events"] = nlohmann::json::array();
    for (const auto& ev : check_events) {
        j["check_events"].push_back(check_event_to_json(ev));
    }
    return pretty ? j.dump(2) : j.dump();
}

RunRecord RunRecord::from_json_string(const std::string& json_text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(json_text);
    } catch (const nlohmann::json::parse_error& e) {
        throw Error(ErrorKind::parse, std::string("run record: ") + e.what());
    }
    RunRecord rec;
    rec.question_id = j.value("question_id", std::string());
    rec.trace = j.value("trace", std::string());
    rec.conclusion = j.value("conclusion", std::string());
    rec.exit_kind = exit_kind_from_string(j.value("exit_kind", std::string("natural")));
    rec.tokens_main = j.value("tokens_main", std::int64_t{0});
    rec.tokens_check_overhead = j.value("tokens_check_overhead", std::int64_t{0});
    rec.wall_latency_us = j.value("wall_latency_us", std::int64_t{0});
    rec.answer = j.value("answer", std::string());
    rec.skipped_signals = j.value("skipped_signals", std::int64_t{0});
    if (j.contains("check_events")) {
        for (const auto& ev : j.at("check_events")) {
            rec.check_events.push_back(check_event_from_json(ev));
        }
    }
    return rec;
}

}  // namespace dtsr
