#include <doctest.h>

#include <algorithm>
#include <map>
#include <random>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "dtsr/signal_matcher.hpp"
#include "support/reference_scan.hpp"

using dtsr::Error;
using dtsr::SignalHit;
using dtsr::SignalMatcher;
using dtsr::SignalPattern;
using testsupport::reference_scan;

namespace {

std::vector<SignalHit> feed_all(SignalMatcher& m, const std::vector<std::string>& chunks) {
    std::vector<SignalHit> hits;
    for (const auto& c : chunks) {
        const auto part = m.feed(c);
        hits.insert(hits.end(), part.begin(), part.end());
    }
    const auto tail = m.finish();
    hits.insert(hits.end(), tail.begin(), tail.end());
    return hits;
}

std::multiset<std::pair<int, std::size_t>> keyset(const std::vector<SignalHit>& hits) {
    std::multiset<std::pair<int, std::size_t>> keys;
    for (const auto& h : hits) {
        keys.insert({h.pattern_id, h.start_offset});
    }
    return keys;
}

}  // namespace

TEST_CASE("default pattern set matches the built-in signal list") {
    const auto patterns = SignalMatcher::default_patterns();
    REQUIRE(patterns.size() == 6);
    std::vector<std::string> literals;
    for (const auto& p : patterns) {
        literals.push_back(p.literal);
    }
    CHECK(literals == std::vector<std::string>{"Wait", "Alternative", "Alternatively", "But wait",
                                               "But let me", "But let's"});
}

TEST_CASE("constructor rejects bad pattern sets") {
    CHECK_THROWS_AS(SignalMatcher({}), Error);
    CHECK_THROWS_AS(SignalMatcher({{0, "Wait"}, {0, "Hmm"}}), Error);
    CHECK_THROWS_AS(SignalMatcher({{0, ""}}), Error);
    CHECK_THROWS_AS(SignalMatcher({{0, " Wait"}}), Error);
    CHECK_THROWS_AS(SignalMatcher({{0, "Wait"}, {1, "Wait"}}), Error);
}

TEST_CASE("pattern sets load from a JSON array of strings") {
    const auto patterns = SignalMatcher::patterns_from_json(R"(["Wait", "Hmm"])");
    REQUIRE(patterns.size() == 2);
    CHECK(patterns[0].id == 0);
    CHECK(patterns[1].literal == "Hmm");
    CHECK_THROWS_AS(SignalMatcher::patterns_from_json("{}"), Error);
    CHECK_THROWS_AS(SignalMatcher::patterns_from_json("[1]"), Error);
    CHECK_THROWS_AS(SignalMatcher::patterns_from_json("not json"), Error);
}

TEST_CASE("a match split across chunks is found on the completing feed") {
    SignalMatcher m(SignalMatcher::default_patterns());
    CHECK(m.feed(std::string_view("But wa")).empty());
    const auto hits = m.feed(std::string_view("it, let me"));
    REQUIRE(hits.size() == 1);
    CHECK(hits[0].pattern_id == 3);  // "But wait"
    CHECK(hits[0].start_offset == 0);
    CHECK(hits[0].end_offset == 8);
    CHECK(hits[0].token_index == 1);
}

TEST_CASE("empty feeds yield nothing") {
    SignalMatcher m(SignalMatcher::default_patterns());
    CHECK(m.feed(std::string_view("")).empty());
    CHECK(m.tokens_consumed() == 1);
}

TEST_CASE("longest match wins at one start offset") {
    SignalMatcher m(SignalMatcher::default_patterns());
    auto hits = feed_all(m, {"Alternatively, consider"});
    REQUIRE(hits.size() == 1);
    CHECK(hits[0].pattern_id == 2);  // "Alternatively", not "Alternative"

    SignalMatcher m2(SignalMatcher::default_patterns());
    hits = feed_all(m2, {"Alternative, consider"});
    REQUIRE(hits.size() == 1);
    CHECK(hits[0].pattern_id == 1);
}

TEST_CASE("finish flushes a complete trailing match but never an incomplete prefix") {
    SignalMatcher incomplete(SignalMatcher::default_patterns());
    CHECK(incomplete.feed(std::string_view("But le")).empty());
    CHECK(incomplete.carryover() == "But le");
    CHECK(incomplete.finish().empty());

    SignalMatcher complete(SignalMatcher::default_patterns());
    CHECK(complete.feed(std::string_view("Wait")).empty());  // trailing boundary unknown
    const auto hits = complete.finish();
    REQUIRE(hits.size() == 1);
    CHECK(hits[0].pattern_id == 0);

    SignalMatcher fresh(SignalMatcher::default_patterns());
    CHECK(fresh.finish().empty());
}

TEST_CASE("word boundaries suppress embedded and suffixed literals") {
    SignalMatcher m(SignalMatcher::default_patterns());
    const auto hits =
        feed_all(m, {"I awaited the result. Waiting, waiting. The Waiter? Wait, yes."});
    // Only the standalone "Wait," fires.
    REQUIRE(hits.size() == 1);
    CHECK(hits[0].pattern_id == 0);
}

TEST_CASE("matching is case-sensitive") {
    SignalMatcher m(SignalMatcher::default_patterns());
    CHECK(feed_all(m, {"wait, but wait, alternatively"}).empty());
}

TEST_CASE("hits report spans that reproduce the literal exactly") {
    const auto patterns = SignalMatcher::default_patterns();
    SignalMatcher m(patterns);
    const std::string text = "Hmm. Wait, no. But let me check. Alternatively: use primes. Wait";
    std::string accum;
    std::vector<SignalHit> hits;
    for (const char c : text) {
        accum += c;
        for (const auto& h : m.feed(std::string_view(&c, 1))) {
            hits.push_back(h);
        }
    }
    for (const auto& h : m.finish()) {
        hits.push_back(h);
    }
    REQUIRE(hits.size() == 4);
    std::map<int, std::string> by_id;
    for (const auto& p : patterns) {
        by_id[p.id] = p.literal;
    }
    for (const auto& h : hits) {
        CHECK(accum.substr(h.start_offset, h.end_offset - h.start_offset) == by_id[h.pattern_id]);
    }
}

TEST_CASE("chunking invariance against the reference scan") {
    const auto patterns = SignalMatcher::default_patterns();
    std::mt19937 rng(20240817);

    const std::vector<std::string> pool = {
        "Wait",       "wait",      "Alternative", "Alternatively", "But",      "But wait",
        "But let me", "But let's", "awaited",     "the",           "answer",   "is",
        "196",        "3.14",      ",",           ".",             "—",        "so",
        "\n",         " ",         "Waiter",      "Alternatives",  "But wait,"};

    for (int text_i = 0; text_i < 60; ++text_i) {
        std::string text;
        std::uniform_int_distribution<int> words(5, 60);
        std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
        const int n = words(rng);
        for (int w = 0; w < n; ++w) {
            text += pool[pick(rng)];
            if (w + 1 < n) {
                text += (rng() % 4 == 0) ? "" : " ";
            }
        }
        const auto expected = keyset(reference_scan(text, patterns));

        for (int part_i = 0; part_i < 40; ++part_i) {
            std::vector<std::string> chunks;
            std::size_t at = 0;
            std::uniform_int_distribution<std::size_t> step(1, 9);
            while (at < text.size()) {
                const std::size_t len = std::min(step(rng), text.size() - at);
                chunks.push_back(text.substr(at, len));
                at += len;
            }
            SignalMatcher m(patterns);
            const auto got = keyset(feed_all(m, chunks));
            REQUIRE(got == expected);
        }
    }
}

TEST_CASE("start offsets are strictly increasing and runs are deterministic") {
    const auto patterns = SignalMatcher::default_patterns();
    std::mt19937 rng(7);
    for (int round = 0; round < 30; ++round) {
        std::string text = "Wait. But let me see. Alternatively no. But wait yes. Wait";
        std::shuffle(text.begin(), text.begin() + 4, rng);  // perturb the head a little

        std::vector<std::string> chunks;
        std::size_t at = 0;
        while (at < text.size()) {
            const std::size_t len = std::min<std::size_t>(1 + rng() % 5, text.size() - at);
            chunks.push_back(text.substr(at, len));
            at += len;
        }

        SignalMatcher a(patterns);
        SignalMatcher b(patterns);
        const auto hits_a = feed_all(a, chunks);
        const auto hits_b = feed_all(b, chunks);
        REQUIRE(hits_a.size() == hits_b.size());
        for (std::size_t i = 0; i < hits_a.size(); ++i) {
            CHECK(hits_a[i].pattern_id == hits_b[i].pattern_id);
            CHECK(hits_a[i].start_offset == hits_b[i].start_offset);
            if (i > 0) {
                CHECK(hits_a[i].start_offset > hits_a[i - 1].start_offset);
            }
        }
    }
}

TEST_CASE("carryover stays below the longest literal length") {
    const auto patterns = SignalMatcher::default_patterns();
    std::size_t max_len = 0;
    for (const auto& p : patterns) {
        max_len = std::max(max_len, p.literal.size());
    }
    SignalMatcher m(patterns);
    std::mt19937 rng(99);
    std::string fed;
    const std::string source = "But let me think. Alternativ Alternativel But But wait, e.g. Wait";
    std::size_t at = 0;
    while (at < source.size()) {
        const std::size_t len = std::min<std::size_t>(1 + rng() % 7, source.size() - at);
        m.feed(std::string_view(source).substr(at, len));
        fed += source.substr(at, len);
        at += len;
        CHECK(m.carryover().size() < max_len);
        CHECK(m.chars_consumed() == fed.size() - m.carryover().size());
    }
}
