#pragma once

#include <cstddef>
#include <deque>
#include <string>
#include <string_view>
#include <vector>

#include "dtsr/types.hpp"

namespace dtsr {

struct SignalPattern {
    int id = 0;
    std::string literal;  // non-empty, no leading/trailing whitespace
};

/// A completed reflection-signal match in the concatenated stream.
struct SignalHit {
    int pattern_id = 0;
    std::size_t start_offset = 0;  // char index into the concatenated trace
    std::size_t end_offset = 0;    // exclusive
    std::size_t token_index = 0;   // index of the chunk whose arrival completed the match
};

/// Streaming multi-pattern detector for reflection signals.
///
/// Matching rules:
///  - case-sensitive literal match;
///  - a match must be preceded by start-of-text or whitespace, and followed
///    by end-of-text, whitespace, or punctuation;
///  - longest match wins at a given start offset (one hit per start);
///  - matches split across chunk boundaries are found, and hits are emitted
///    in strictly increasing start_offset order.
///
/// A matcher is a single-session object: one logical consumer at a time.
class SignalMatcher {
public:
    explicit SignalMatcher(std::vector<SignalPattern> patterns);

    /// Feed one chunk of decoded text; returns matches completed so far.
    std::vector<SignalHit> feed(std::string_view text);
    std::vector<SignalHit> feed(const TokenChunk& chunk) { return feed(chunk.text); }

    /// End of stream: resolves matches whose trailing boundary is end-of-text.
    /// Incomplete prefixes held in the carryover never produce hits.
    std::vector<SignalHit> finish();

    /// Unresolved text suffix retained for cross-chunk matching.
    /// Always shorter than the longest pattern literal.
    std::string_view carryover() const { return carryover_; }
    std::size_t chars_consumed() const { return pos_ - carryover_.size(); }
    std::size_t tokens_consumed() const { return tokens_consumed_; }

    const std::vector<SignalPattern>& patterns() const { return patterns_; }

    /// The six built-in reflection-signal literals.
    static std::vector<SignalPattern> default_patterns();
    /// Load a pattern set from a JSON array of strings; ids are array indices.
    static std::vector<SignalPattern> patterns_from_json(const std::string& json_text);

private:
    // One in-flight start position. Tracks which literals are still viable
    // prefixes and the best fully-matched literal seen so far.
    struct ActiveStart {
        std::size_t start = 0;
        std::vector<std::size_t> viable;  // pattern indices, literal prefix still matching
        int pending = -1;       // fully matched, trailing char not yet seen
        std::size_t pending_token = 0;
        int resolved = -1;      // fully matched with trailing boundary satisfied
        std::size_t resolved_token = 0;
    };

    void step(char c, std::vector<SignalHit>& out);
    void flush_front(std::vector<SignalHit>& out);
    void rebuild_carryover(std::string_view tail);

    static bool is_boundary_before(char c);
    static bool is_boundary_after(char c);

    std::vector<SignalPattern> patterns_;
    std::size_t max_literal_len_ = 0;

    std::deque<ActiveStart> active_;
    std::string carryover_;            // text from the earliest viable start onward
    std::size_t pos_ = 0;              // absolute char index of the next char
    std::size_t tokens_consumed_ = 0;  // chunks fed so far
    char prev_char_ = '\0';
    bool at_start_ = true;
};

}  // namespace dtsr
