#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "dtsr/backend.hpp"

namespace dtsr {

enum class MatchKind { exact, prefix, contains };

/// One scripted exchange. A `fault` chunk aborts the stream with the given
/// error kind after everything before it has been served.
struct ScriptChunk {
    std::string text;
    std::int64_t token_count = 1;
    std::optional<std::vector<double>> logprobs;
    std::optional<FinishReason> finish_reason;
    std::optional<ErrorKind> fault;
    std::string fault_message;
};

struct ScriptEntry {
    MatchKind kind = MatchKind::exact;
    std::string match_text;
    std::vector<ScriptChunk> response;
    std::int64_t delay_per_chunk_us = 0;
    std::int64_t delay_us = 0;  // fixed per-request cost
    // Optional conditions; an entry with conditions only matches requests
    // that satisfy them.
    std::optional<bool> when_logit_bias;
    std::optional<std::int64_t> when_seed;
};

/// Deterministic scripted backend. Entry resolution, in order:
///  1. exact: match_text equals the prompt;
///  2. continuation: the prompt equals match_text plus a chunk-aligned
///     prefix of the entry's response text — the remainder is served,
///     which is how a re-issued prompt resumes where the script left off
///     (longest match_text wins);
///  3. prefix: the prompt starts with match_text (longest wins);
///  4. contains: match_text occurs in the prompt (latest occurrence wins,
///     then longest marker, then file order).
struct MockScript {
    std::vector<ScriptEntry> entries;

    void validate() const;

    static MockScript load(const std::string& path);
    static MockScript from_json(const std::string& json_text, const std::string& origin = "<inline>");
};

class MockBackend : public Backend {
public:
    explicit MockBackend(MockScript script);

    Usage stream_complete(const CompletionRequest& request,
                          const ChunkCallback& on_chunk) override;

    BackendCapabilities capabilities() const override {
        return {.supports_logprobs = true,
                .supports_logit_bias = true,
                .supports_echoless_continuation = true};
    }

    bool virtual_time() const override { return true; }

    const MockScript& script() const { return script_; }

private:
    struct Resolution {
        const ScriptEntry* entry = nullptr;
        std::size_t first_chunk = 0;  // continuation resume point
    };
    Resolution resolve(const CompletionRequest& request) const;

    MockScript script_;
};

}  // namespace dtsr
