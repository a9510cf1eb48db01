#include "dtsr/signal_matcher.hpp"

#include <algorithm>
#include <cctype>
#include <unordered_set>

#include <json.hpp>

namespace dtsr {

const char* to_string(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::config:     return "config";
        case ErrorKind::capability: return "capability";
        case ErrorKind::connection: return "connection";
        case ErrorKind::timeout:    return "timeout";
        case ErrorKind::protocol:   return "protocol";
        case ErrorKind::server:     return "server";
        case ErrorKind::parse:      return "parse";
        case ErrorKind::script:     return "script";
        case ErrorKind::io:         return "io";
    }
    return "unknown";
}

const char* to_string(FinishReason reason) {
    switch (reason) {
        case FinishReason::length: return "length";
        case FinishReason::stop:   return "stop";
        case FinishReason::eos:    return "eos";
    }
    return "unknown";
}

bool SignalMatcher::is_boundary_before(char c) {
    return std::isspace(static_cast<unsigned char>(c)) != 0;
}

bool SignalMatcher::is_boundary_after(char c) {
    const auto uc = static_cast<unsigned char>(c);
    return std::isspace(uc) != 0 || std::ispunct(uc) != 0;
}

SignalMatcher::SignalMatcher(std::vector<SignalPattern> patterns)
    : patterns_(std::move(patterns)) {
    if (patterns_.empty()) {
        throw Error(ErrorKind::config, "signal matcher: empty pattern set");
    }
    std::unordered_set<int> ids;
    std::unordered_set<std::string> literals;
    for (const auto& p : patterns_) {
        if (p.literal.empty()) {
            throw Error(ErrorKind::config, "signal matcher: empty pattern literal");
        }
        if (is_boundary_before(p.literal.front()) ||
            std::isspace(static_cast<unsigned char>(p.literal.back())) != 0) {
            throw Error(ErrorKind::config,
                        "signal matcher: literal has leading/trailing whitespace: '" + p.literal + "'");
        }
        if (!ids.insert(p.id).second) {
            throw Error(ErrorKind::config,
                        "signal matcher: duplicate pattern id " + std::to_string(p.id));
        }
        if (!literals.insert(p.literal).second) {
            throw Error(ErrorKind::config,
                        "signal matcher: duplicate pattern literal '" + p.literal + "'");
        }
        max_literal_len_ = std::max(max_literal_len_, p.literal.size());
    }
}

std::vector<SignalPattern> SignalMatcher::default_patterns() {
    return {
        {0, "Wait"},
        {1, "Alternative"},
        {2, "Alternatively"},
        {3, "But wait"},
        {4, "But let me"},
        {5, "But let's"},
    };
}

std::vector<SignalPattern> SignalMatcher::patterns_from_json(const std::string& json_text) {
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(json_text);
    } catch (const nlohmann::json::parse_error& e) {
        throw Error(ErrorKind::parse, std::string("pattern set: ") + e.what());
    }
    if (!doc.is_array()) {
        throw Error(ErrorKind::parse, "pattern set: expected a JSON array of strings");
    }
    std::vector<SignalPattern> out;
    out.reserve(doc.size());
    for (const auto& item : doc) {
        if (!item.is_string()) {
            throw Error(ErrorKind::parse, "pattern set: array entries must be strings");
        }
        out.push_back({static_cast<int>(out.size()), item.get<std::string>()});
    }
    return out;
}

void SignalMatcher::step(char c, std::vector<SignalHit>& out) {
    // Resolve pendings and advance viable prefixes. A pending match ends
    // exactly at pos_, so c is its trailing character.
    for (auto& st : active_) {
        if (st.pending >= 0) {
            if (is_boundary_after(c)) {
                const auto& lit = patterns_[static_cast<std::size_t>(st.pending)].literal;
                if (st.resolved < 0 ||
                    lit.size() > patterns_[static_cast<std::size_t>(st.resolved)].literal.size()) {
                    st.resolved = st.pending;
                    st.resolved_token = st.pending_token;
                }
            }
            st.pending = -1;
        }
        const std::size_t matched = pos_ - st.start;
        std::size_t kept = 0;
        for (std::size_t vi = 0; vi < st.viable.size(); ++vi) {
            const auto pi = st.viable[vi];
            const auto& lit = patterns_[pi].literal;
            if (lit[matched] != c) {
                continue;
            }
            if (matched + 1 == lit.size()) {
                st.pending = static_cast<int>(pi);
                st.pending_token = tokens_consumed_;
            } else {
                st.viable[kept++] = pi;
            }
        }
        st.viable.resize(kept);
    }

    // A new match may begin at pos_ when preceded by start-of-text or whitespace.
    if (at_start_ || is_boundary_before(prev_char_)) {
        ActiveStart st;
        st.start = pos_;
        for (std::size_t pi = 0; pi < patterns_.size(); ++pi) {
            const auto& lit = patterns_[pi].literal;
            if (lit[0] != c) {
                continue;
            }
            if (lit.size() == 1) {
                st.pending = static_cast<int>(pi);
                st.pending_token = tokens_consumed_;
            } else {
                st.viable.push_back(pi);
            }
        }
        if (st.pending >= 0 || !st.viable.empty()) {
            active_.push_back(std::move(st));
        }
    }

    prev_char_ = c;
    at_start_ = false;
    ++pos_;
    flush_front(out);
}

void SignalMatcher::flush_front(std::vector<SignalHit>& out) {
    while (!active_.empty()) {
        auto& st = active_.front();
        if (!st.viable.empty() || st.pending >= 0) {
            break;
        }
        if (st.resolved >= 0) {
            const auto& pat = patterns_[static_cast<std::size_t>(st.resolved)];
            out.push_back({pat.id, st.start, st.start + pat.literal.size(), st.resolved_token});
        }
        active_.pop_front();
    }
}

void SignalMatcher::rebuild_carryover(std::string_view tail) {
    // Keep only text that is still a viable prefix of some literal; fully
    // matched pendings are tracked positionally and need no text.
    std::size_t keep_from = pos_;
    for (const auto& st : active_) {
        if (!st.viable.empty()) {
            keep_from = std::min(keep_from, st.start);
        }
    }
    const std::size_t old_base = pos_ - tail.size() - carryover_.size();
    std::string next;
    if (keep_from < pos_) {
        if (keep_from >= old_base + carryover_.size()) {
            next = tail.substr(keep_from - old_base - carryover_.size());
        } else {
            next = carryover_.substr(keep_from - old_base);
            next.append(tail);
        }
    }
    carryover_ = std::move(next);
}

std::vector<SignalHit> SignalMatcher::feed(std::string_view text) {
    std::vector<SignalHit> out;
    for (char c : text) {
        step(c, out);
    }
    rebuild_carryover(text);
    ++tokens_consumed_;
    return out;
}

std::vector<SignalHit> SignalMatcher::finish() {
    std::vector<SignalHit> out;
    for (auto& st : active_) {
        if (st.pending >= 0) {
            // trailing boundary is end-of-text
            const auto& lit = patterns_[static_cast<std::size_t>(st.pending)].literal;
            if (st.resolved < 0 ||
                lit.size() > patterns_[static_cast<std::size_t>(st.resolved)].literal.size()) {
                st.resolved = st.pending;
                st.resolved_token = st.pending_token;
            }
            st.pending = -1;
        }
        st.viable.clear();
    }
    flush_front(out);
    carryover_.clear();
    return out;
}

}  // namespace dtsr
