#include "dtsr/oracle.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <map>
#include <sstream>

#include <json.hpp>

#include "dtsr/prompting.hpp"

namespace dtsr {

namespace {

bool is_terminator(char c) { return c == '.' || c == '?' || c == '!'; }

bool is_space(char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; }

// Token counts for offsets are estimated proportionally by characters; the
// recorded stream does not preserve a char-to-token map.
std::int64_t scale_tokens(std::int64_t total, std::size_t part, std::size_t whole) {
    if (whole == 0) {
        return 0;
    }
    return static_cast<std::int64_t>(std::llround(
        static_cast<double>(total) * static_cast<double>(part) / static_cast<double>(whole)));
}

// The word ending right before `dot`, scanning across letters and inner dots
// ("e.g." matches the "e.g" abbreviation entry).
std::string word_before(const std::string& text, std::size_t dot) {
    std::size_t begin = dot;
    while (begin > 0) {
        const char c = text[begin - 1];
        if (std::isalnum(static_cast<unsigned char>(c)) != 0 || c == '.') {
            --begin;
        } else {
            break;
        }
    }
    return text.substr(begin, dot - begin);
}

}  // namespace

std::vector<SentenceBoundary> segment_sentences(const std::string& trace,
                                                const SentenceSplitOptions& options) {
    if (trace.empty()) {
        throw Error(ErrorKind::config, "segment_sentences: empty trace");
    }
    std::vector<SentenceBoundary> boundaries;
    auto push = [&](std::size_t offset) {
        if (offset == 0 || offset > trace.size()) {
            return;
        }
        if (!boundaries.empty() && boundaries.back().char_offset >= offset) {
            return;
        }
        SentenceBoundary b;
        b.index = static_cast<std::int64_t>(boundaries.size());
        b.char_offset = offset;
        b.preceding_text_tokens = static_cast<std::int64_t>((offset + 3) / 4);
        boundaries.push_back(b);
    };

    for (std::size_t i = 0; i < trace.size(); ++i) {
        const char c = trace[i];
        if (is_terminator(c)) {
            const bool end_ok = i + 1 == trace.size() || is_space(trace[i + 1]);
            if (!end_ok) {
                continue;  // decimal points, "?!", ellipses mid-run
            }
            if (c == '.') {
                const std::string word = word_before(trace, i);
                if (std::find(options.abbreviations.begin(), options.abbreviations.end(), word) !=
                    options.abbreviations.end()) {
                    continue;
                }
            }
            push(i + 1);
            continue;
        }
        if (c == '\n') {
            // paragraph break: a whitespace run containing a second newline
            std::size_t j = i + 1;
            int newlines = 1;
            while (j < trace.size() && is_space(trace[j])) {
                if (trace[j] == '\n') {
                    ++newlines;
                }
                ++j;
            }
            if (newlines >= 2) {
                // skip when the paragraph already ended at a terminator
                std::size_t k = i;
                while (k > 0 && is_space(trace[k - 1])) {
                    --k;
                }
                if (k == 0 || !is_terminator(trace[k - 1])) {
                    push(j);
                }
                i = j - 1;
            }
        }
    }
    return boundaries;
}

OptimalExit find_optimal_exit(const Sample& sample, const RunRecord& record, Backend& backend,
                              const ControllerConfig& config,
                              const SentenceSplitOptions& options) {
    config.validate();
    OptimalExit result;
    result.sample_id = sample.id;

    // Strip the close marker so prefixes stay inside the reasoning body.
    std::string body = record.trace;
    const auto close_pos = body.rfind(config.format.think_close);
    if (close_pos != std::string::npos) {
        body = body.substr(0, close_pos);
    }
    result.full_tokens = estimated_trace_tokens(record);
    if (body.empty()) {
        return result;
    }

    const std::string base =
        render_reasoning_prompt(sample.question, config.system_prompt, config.format, false);

    auto conclude_at = [&](std::size_t offset) -> std::optional<bool> {
        const std::string prefix = body.substr(0, offset);
        CompletionRequest req;
        req.prompt = base + force_exit(prefix, config);
        req.max_tokens = config.conclusion_reserve > 0 ? config.conclusion_reserve : 512;
        req.temperature = 0.0;  // replay must be reproducible
        req.top_p = config.top_p;
        req.seed = config.seed;
        try {
            const CompletionResult res = backend.complete(req);
            const std::string pred = extract_answer(res.text, sample.task_kind);
            return grade(pred, sample.gold_answer, sample.task_kind);
        } catch (const Error&) {
            return std::nullopt;
        }
    };

    for (auto boundary : segment_sentences(body, options)) {
        ++result.boundaries_tried;
        const auto correct = conclude_at(boundary.char_offset);
        if (!correct) {
            ++result.boundaries_unknown;
            continue;
        }
        if (*correct) {
            boundary.preceding_text_tokens =
                scale_tokens(result.full_tokens, boundary.char_offset, body.size());
            result.boundary = boundary;
            result.optimal_tokens = boundary.preceding_text_tokens;
            if (result.full_tokens > 0) {
                result.overthink_ratio =
                    static_cast<double>(result.full_tokens - result.optimal_tokens) /
                    static_cast<double>(result.full_tokens);
            }
            const auto confirm = conclude_at(boundary.char_offset);
            result.verified = confirm && *confirm;
            return result;
        }
    }

    result.optimal_tokens = result.full_tokens;
    result.overthink_ratio = 0.0;
    return result;
}

std::string OptimalExit::to_json_string() const {
    nlohmann::json j{
        {"sample_id", sample_id},
        {"optimal_tokens", optimal_tokens},
        {"full_tokens", full_tokens},
        {"overthink_ratio", overthink_ratio},
        {"verified", verified},
        {"boundaries_tried", boundaries_tried},
        {"boundaries_unknown", boundaries_unknown},
    };
    if (boundary) {
        j["boundary"] = {{"index", boundary->index},
                         {"char_offset", boundary->char_offset},
                         {"preceding_text_tokens", boundary->preceding_text_tokens}};
    }
    return j.dump();
}

OptimalExit OptimalExit::from_json_string(const std::string& json_text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(json_text);
    } catch (const nlohmann::json::parse_error& e) {
        throw Error(ErrorKind::parse, std::string("optimal exit: ") + e.what());
    }
    OptimalExit out;
    out.sample_id = j.value("sample_id", std::string());
    out.optimal_tokens = j.value("optimal_tokens", std::int64_t{0});
    out.full_tokens = j.value("full_tokens", std::int64_t{0});
    out.overthink_ratio = j.value("overthink_ratio", 0.0);
    out.verified = j.value("verified", false);
    out.boundaries_tried = j.value("boundaries_tried", std::int64_t{0});
    out.boundaries_unknown = j.value("boundaries_unknown", std::int64_t{0});
    if (j.contains("boundary")) {
        SentenceBoundary b;
        b.index = j.at("boundary").value("index", std::int64_t{0});
        b.char_offset = j.at("boundary").value("char_offset", std::size_t{0});
        b.preceding_text_tokens = j.at("boundary").value("preceding_text_tokens", std::int64_t{0});
        out.boundary = b;
    }
    return out;
}

GapSummary gap_report(const std::vector<BenchRun>& runs,
                      const std::vector<OptimalExit>& oracles) {
    std::map<std::string, const OptimalExit*> by_id;
    for (const auto& oracle : oracles) {
        by_id.emplace(oracle.sample_id, &oracle);
    }

    struct Acc {
        double gap_sum = 0.0;
        std::int64_t before = 0;
        std::int64_t after = 0;
        std::int64_t n = 0;
    };
    std::map<std::string, Acc> by_policy;
    GapSummary summary;

    for (const auto& run : runs) {
        if (run.failed) {
            continue;
        }
        const auto it = by_id.find(run.sample_id);
        if (it == by_id.end()) {
            ++summary.missing_pairs;
            continue;
        }
        const double exit_tokens = static_cast<double>(estimated_trace_tokens(run.record));
        const double gap = exit_tokens - static_cast<double>(it->second->optimal_tokens);
        auto& acc = by_policy[run.policy];
        acc.gap_sum += gap;
        if (gap < 0) {
            ++acc.before;
        } else if (gap > 0) {
            ++acc.after;
        }
        ++acc.n;
    }

    for (const auto& [policy, acc] : by_policy) {
        GapSummary::PolicyGap gap;
        gap.policy = policy;
        gap.n = acc.n;
        if (acc.n > 0) {
            gap.mean_gap_tokens = acc.gap_sum / static_cast<double>(acc.n);
            gap.frac_before_optimal = static_cast<double>(acc.before) / static_cast<double>(acc.n);
            gap.frac_after_optimal = static_cast<double>(acc.after) / static_cast<double>(acc.n);
        }
        summary.policies.push_back(std::move(gap));
    }
    return summary;
}

std::string GapSummary::to_csv() const {
    std::ostringstream os;
    os << "policy,mean_gap_tokens,frac_before_optimal,frac_after_optimal,n\n";
    os.precision(12);
    for (const auto& p : policies) {
        os << p.policy << ',' << p.mean_gap_tokens << ',' << p.frac_before_optimal << ','
           << p.frac_after_optimal << ',' << p.n << "\n";
    }
    return os.str();
}

}  // namespace dtsr
