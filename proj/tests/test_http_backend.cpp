#include <doctest.h>

#include <string>

#include "dtsr/http_backend.hpp"
#include "dtsr/mock_backend.hpp"
#include "support/mock_http_server.hpp"
#include "support/script_helpers.hpp"

using dtsr::CompletionRequest;
using dtsr::Error;
using dtsr::ErrorKind;
using dtsr::HttpBackend;
using dtsr::HttpBackendOptions;
using dtsr::MatchKind;
using dtsr::MockScript;
using dtsr::TokenChunk;
using testsupport::chunk;
using testsupport::entry;
using testsupport::MockCompletionsServer;

namespace {

MockScript demo_script() {
    MockScript script;
    script.entries.push_back(entry(
        MatchKind::prefix, "Q:", {chunk("The "), chunk("answer "), chunk("is "), chunk("42.")}));
    return script;
}

HttpBackend client_for(const MockCompletionsServer& server) {
    HttpBackendOptions options;
    options.base_url = server.url();
    options.capabilities.supports_logprobs = true;
    options.capabilities.supports_logit_bias = true;
    return HttpBackend(options);
}

}  // namespace

TEST_CASE("http client streams SSE events and honors the final usage object") {
    MockCompletionsServer server(demo_script());
    HttpBackend client = client_for(server);

    CompletionRequest req;
    req.prompt = "Q: life, the universe, everything";
    req.max_tokens = 64;
    req.stream = true;

    std::string text;
    int chunks = 0;
    const auto usage = client.stream_complete(req, [&](const TokenChunk& c) {
        text += c.text;
        ++chunks;
        return true;
    });
    CHECK(text == "The answer is 42.");
    CHECK(chunks == 4);
    CHECK(usage.completion_tokens == 4);  // from the server usage event
    CHECK(usage.prompt_tokens > 0);
}

TEST_CASE("http client complete() concatenates the stream") {
    MockCompletionsServer server(demo_script());
    HttpBackend client = client_for(server);

    CompletionRequest req;
    req.prompt = "Q: again";
    req.max_tokens = 64;
    const auto res = client.complete(req);
    CHECK(res.text == "The answer is 42.");
    CHECK(res.usage.completion_tokens == 4);
}

TEST_CASE("http client aborts the stream when the callback declines") {
    MockCompletionsServer server(demo_script());
    HttpBackend client = client_for(server);

    CompletionRequest req;
    req.prompt = "Q: partial";
    req.max_tokens = 64;
    req.stream = true;
    std::string text;
    int seen = 0;
    const auto usage = client.stream_complete(req, [&](const TokenChunk& c) {
        text += c.text;
        return ++seen < 2;
    });
    CHECK(text == "The answer ");
    CHECK(usage.completion_tokens == 2);
}

TEST_CASE("connection refused maps to a connection error") {
    HttpBackendOptions options;
    options.base_url = "http://127.0.0.1:9";  // discard port, nothing listens
    options.connect_timeout_ms = 200;
    HttpBackend client(options);

    CompletionRequest req;
    req.prompt = "Q";
    req.max_tokens = 4;
    try {
        client.complete(req);
        FAIL("expected connection error");
    } catch (const Error& e) {
        CHECK((e.kind() == ErrorKind::connection || e.kind() == ErrorKind::timeout));
    }
    CHECK_FALSE(client.healthy());
}

TEST_CASE("server error status maps to a server error with the body attached") {
    MockCompletionsServer server(demo_script());
    server.respond_500 = true;
    HttpBackend client = client_for(server);

    CompletionRequest req;
    req.prompt = "Q: any";
    req.max_tokens = 4;
    try {
        client.complete(req);
        FAIL("expected server error");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::server);
        CHECK(std::string(e.what()).find("500") != std::string::npos);
    }
}

TEST_CASE("malformed stream events map to a protocol error") {
    MockCompletionsServer server(demo_script());
    server.emit_garbage_event = true;
    HttpBackend client = client_for(server);

    CompletionRequest req;
    req.prompt = "Q: any";
    req.max_tokens = 4;
    try {
        client.complete(req);
        FAIL("expected protocol error");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::protocol);
    }
}

TEST_CASE("capability gating rejects unsupported features before any request") {
    HttpBackendOptions options;
    options.base_url = "http://127.0.0.1:9";
    HttpBackend client(options);  // default capabilities: no logprobs, no bias

    CompletionRequest req;
    req.prompt = "Q";
    req.max_tokens = 4;
    req.want_logprobs = true;
    CHECK_THROWS_AS(client.complete(req), Error);

    CompletionRequest biased;
    biased.prompt = "Q";
    biased.max_tokens = 4;
    biased.logit_bias[7] = -100.0;
    CHECK_THROWS_AS(client.complete(biased), Error);

    CHECK_FALSE(client.capabilities().supports_logprobs);
    CHECK(client.capabilities().supports_echoless_continuation);
}

TEST_CASE("http client is reachable through make_backend and healthy()") {
    MockCompletionsServer server(demo_script());
    const auto backend = dtsr::make_backend(server.url());
    CHECK(backend->healthy());
    CompletionRequest req;
    req.prompt = "Q: via factory";
    req.max_tokens = 8;
    CHECK(backend->complete(req).text == "The answer is 42.");
}
