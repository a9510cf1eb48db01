#include <doctest.h>

#include <cstdio>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include "dtsr/mock_backend.hpp"
#include "support/script_helpers.hpp"

using dtsr::CompletionRequest;
using dtsr::Error;
using dtsr::ErrorKind;
using dtsr::FinishReason;
using dtsr::MatchKind;
using dtsr::MockBackend;
using dtsr::MockScript;
using dtsr::TokenChunk;
using dtsr::Usage;
using testsupport::chunk;
using testsupport::entry;
using testsupport::fault_chunk;

namespace {

CompletionRequest request(std::string prompt, std::int64_t max_tokens = 1024) {
    CompletionRequest req;
    req.prompt = std::move(prompt);
    req.max_tokens = max_tokens;
    req.stream = true;
    return req;
}

struct Collected {
    std::vector<TokenChunk> chunks;
    Usage usage;
    std::string text() const {
        std::string t;
        for (const auto& c : chunks) {
            t += c.text;
        }
        return t;
    }
};

Collected collect(MockBackend& backend, const CompletionRequest& req) {
    Collected out;
    out.usage = backend.stream_complete(req, [&](const TokenChunk& c) {
        out.chunks.push_back(c);
        return true;
    });
    return out;
}

}  // namespace

TEST_CASE("scripted echo streams chunks and reports usage") {
    MockScript script;
    script.entries.push_back(entry(MatchKind::exact, "P", {chunk("Hello"), chunk(" world")}));
    MockBackend backend(std::move(script));

    const auto got = collect(backend, request("P"));
    REQUIRE(got.chunks.size() == 2);
    CHECK(got.text() == "Hello world");
    CHECK(got.usage.completion_tokens == 2);
    CHECK(got.chunks.back().finish_reason == FinishReason::eos);
}

TEST_CASE("max_tokens=1 truncates to one chunk with finish_reason=length") {
    MockScript script;
    script.entries.push_back(entry(MatchKind::exact, "P", {chunk("Hello"), chunk(" world")}));
    MockBackend backend(std::move(script));

    const auto got = collect(backend, request("P", 1));
    REQUIRE(got.chunks.size() == 1);
    CHECK(got.text() == "Hello");
    CHECK(got.chunks[0].finish_reason == FinishReason::length);
    CHECK(got.usage.completion_tokens == 1);
}

TEST_CASE("a mid-stream fault surfaces the error after the served chunks") {
    MockScript script;
    script.entries.push_back(entry(
        MatchKind::exact, "P",
        {chunk("partial "), fault_chunk(ErrorKind::connection, "boom"), chunk("never")}));
    MockBackend backend(std::move(script));

    std::string seen;
    try {
        backend.stream_complete(request("P"), [&](const TokenChunk& c) {
            seen += c.text;
            return true;
        });
        FAIL("expected a connection error");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::connection);
        CHECK(e.partial == "partial ");
        CHECK(e.partial_completion_tokens == 1);
    }
    CHECK(seen == "partial ");
}

TEST_CASE("stop sequences truncate the reply and exclude the stop text") {
    MockScript script;
    script.entries.push_back(entry(MatchKind::exact, "P", {chunk("42\nextra", 3)}));
    MockBackend backend(std::move(script));

    CompletionRequest req = request("P");
    req.stop = {"\n"};
    const auto res = backend.complete(req);
    CHECK(res.text == "42");
    CHECK(res.finish_reason == FinishReason::stop);
}

TEST_CASE("stop sequences spanning chunk boundaries still fire") {
    MockScript script;
    script.entries.push_back(
        entry(MatchKind::exact, "P", {chunk("answer EN"), chunk("D more text")}));
    MockBackend backend(std::move(script));

    CompletionRequest req = request("P");
    req.stop = {"END"};
    const auto res = backend.complete(req);
    CHECK(res.text == "answer EN");  // chars already streamed stay; stop text is excluded
    CHECK(res.finish_reason == FinishReason::stop);
}

TEST_CASE("stream and non-stream paths agree on the mock") {
    MockScript script;
    script.entries.push_back(entry(
        MatchKind::exact, "P", {chunk("a", 1), chunk("bb", 2), chunk("ccc", 3), chunk("!", 1)}));
    MockBackend backend(std::move(script));

    const auto streamed = collect(backend, request("P"));
    const auto direct = backend.complete(request("P"));
    CHECK(streamed.text() == direct.text);
    CHECK(streamed.usage.completion_tokens == direct.usage.completion_tokens);
}

TEST_CASE("usage equals the sum of streamed token counts") {
    std::mt19937 rng(11);
    for (int round = 0; round < 20; ++round) {
        MockScript script;
        std::vector<dtsr::ScriptChunk> chunks;
        const int n = 1 + static_cast<int>(rng() % 12);
        for (int i = 0; i < n; ++i) {
            chunks.push_back(chunk("x" + std::to_string(i), 1 + static_cast<int>(rng() % 4)));
        }
        script.entries.push_back(entry(MatchKind::exact, "P", chunks));
        MockBackend backend(std::move(script));

        const auto got = collect(backend, request("P"));
        std::int64_t sum = 0;
        for (const auto& c : got.chunks) {
            sum += c.token_count;
        }
        CHECK(got.usage.completion_tokens == sum);
    }
}

TEST_CASE("continuation resumes exactly where the script left off") {
    MockScript script;
    script.entries.push_back(entry(
        MatchKind::prefix, "BASE",
        {chunk("one "), chunk("two "), chunk("three "), chunk("four")}));
    MockBackend backend(std::move(script));

    // consume the first two chunks, then abort
    std::string first;
    int seen = 0;
    backend.stream_complete(request("BASE"), [&](const TokenChunk& c) {
        first += c.text;
        return ++seen < 2;
    });
    CHECK(first == "one two ");

    // re-issue with prompt = previous prompt + previous output
    const auto rest = collect(backend, request("BASE" + first));
    CHECK(rest.text() == "three four");
    CHECK(rest.usage.completion_tokens == 2);
}

TEST_CASE("mock is deterministic across repeated identical request sequences") {
    auto make = [] {
        MockScript script;
        script.entries.push_back(entry(MatchKind::prefix, "A",
                                       {chunk("x", 1), chunk("y", 2), chunk("z", 1)}));
        script.entries.back().delay_per_chunk_us = 50;
        return MockBackend(script);
    };
    auto run_once = [](MockBackend backend) {
        auto a = backend.complete(request("A"));
        auto b = backend.complete(request("A mid", 2));
        return a.text + "|" + b.text + "|" + std::to_string(a.usage.virtual_elapsed_us);
    };
    CHECK(run_once(make()) == run_once(make()));
}

TEST_CASE("entry conditions select on logit_bias and seed") {
    MockScript script;
    {
        auto biased = entry(MatchKind::exact, "P", {chunk("short")});
        biased.when_logit_bias = true;
        script.entries.push_back(biased);
        auto plain = entry(MatchKind::exact, "P", {chunk("a long wait-filled answer", 5)});
        plain.when_logit_bias = false;
        script.entries.push_back(plain);
        auto seed1 = entry(MatchKind::exact, "S", {chunk("seed one")});
        seed1.when_seed = 1;
        script.entries.push_back(seed1);
        auto other = entry(MatchKind::exact, "S", {chunk("other seed")});
        script.entries.push_back(other);
    }
    MockBackend backend(std::move(script));

    CompletionRequest plain = request("P");
    CHECK(backend.complete(plain).text == "a long wait-filled answer");
    CompletionRequest biased = request("P");
    biased.logit_bias[42] = -100.0;
    CHECK(backend.complete(biased).text == "short");

    CompletionRequest s1 = request("S");
    s1.seed = 1;
    CHECK(backend.complete(s1).text == "seed one");
    CompletionRequest s2 = request("S");
    s2.seed = 2;
    CHECK(backend.complete(s2).text == "other seed");
}

TEST_CASE("contains entries resolve by the latest occurrence in the prompt") {
    MockScript script;
    script.entries.push_back(entry(MatchKind::contains, "alpha", {chunk("60")}));
    script.entries.push_back(entry(MatchKind::contains, "bravo", {chunk("80")}));
    MockBackend backend(std::move(script));

    CHECK(backend.complete(request("... alpha ...")).text == "60");
    CHECK(backend.complete(request("... alpha ... bravo ...")).text == "80");
    CHECK(backend.complete(request("... bravo ... alpha ...")).text == "60");
}

TEST_CASE("script loading reports parse errors with line numbers") {
    const std::string dir = DTSR_FIXTURES_DIR;

    const std::string bad_path = "/tmp/dtsr_bad_script.json";
    {
        std::ofstream out(bad_path);
        out << "{\n  \"entries\": [\n    {\"match\": }\n  ]\n}\n";
    }
    try {
        MockScript::load(bad_path);
        FAIL("expected a parse error");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::parse);
        CHECK(std::string(e.what()).find(":3") != std::string::npos);
    }
    std::remove(bad_path.c_str());

    const std::string empty_path = "/tmp/dtsr_empty_script.json";
    {
        std::ofstream out(empty_path);
        out << "\n";
    }
    CHECK_THROWS_AS(MockScript::load(empty_path), Error);
    std::remove(empty_path.c_str());

    CHECK_THROWS_AS(MockScript::load("/tmp/does_not_exist_dtsr.json"), Error);
}

TEST_CASE("ambiguous duplicate entries are rejected") {
    MockScript script;
    script.entries.push_back(entry(MatchKind::exact, "same", {chunk("a")}));
    script.entries.push_back(entry(MatchKind::exact, "same", {chunk("b")}));
    CHECK_THROWS_AS(script.validate(), Error);
}

TEST_CASE("no matching entry is a script error naming the prompt") {
    MockScript script;
    script.entries.push_back(entry(MatchKind::exact, "known", {chunk("x")}));
    MockBackend backend(std::move(script));
    try {
        backend.complete(request("unknown prompt"));
        FAIL("expected script error");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::script);
        CHECK(std::string(e.what()).find("unknown prompt") != std::string::npos);
    }
}

TEST_CASE("logprobs ride along with scripted chunks") {
    MockScript script;
    script.entries.push_back(
        entry(MatchKind::exact, "P", {testsupport::chunk_lp("42", {0.0, 0.0})}));
    MockBackend backend(std::move(script));
    CompletionRequest req = request("P");
    req.want_logprobs = true;
    const auto res = backend.complete(req);
    REQUIRE(res.logprobs.has_value());
    CHECK(res.logprobs->size() == 2);
}

TEST_CASE("script JSON round-trips through the documented schema") {
    const std::string json = R"({
      "entries": [
        {
          "match": {"kind": "prefix", "text": "BASE"},
          "delay_per_chunk_us": 10,
          "response": [
            "plain string chunk",
            {"text": " typed", "tokens": 2, "logprobs": [-0.1, -0.2]},
            {"text": "", "tokens": 0, "finish": "stop"}
          ]
        },
        {
          "match": {"kind": "contains", "text": "marker"},
          "when": {"seed": 3},
          "response": [{"text": "conditional", "tokens": 1}]
        }
      ]
    })";
    const MockScript script = MockScript::from_json(json);
    REQUIRE(script.entries.size() == 2);
    CHECK(script.entries[0].kind == MatchKind::prefix);
    CHECK(script.entries[0].response.size() == 3);
    CHECK(script.entries[0].response[1].logprobs->size() == 2);
    CHECK(script.entries[0].response[2].finish_reason == FinishReason::stop);
    CHECK(script.entries[1].when_seed == 3);

    MockBackend backend(script);
    CompletionRequest req = request("BASE");
    const auto res = backend.complete(req);
    CHECK(res.text == "plain string chunk typed");
}
