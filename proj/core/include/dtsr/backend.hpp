#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "dtsr/types.hpp"

namespace dtsr {

struct CompletionRequest {
    std::string prompt;
    std::int64_t max_tokens = 16384;
    double temperature = 0.6;
    double top_p = 0.95;
    std::vector<std::string> stop;
    bool want_logprobs = false;
    std::map<std::int64_t, double> logit_bias;
    bool stream = false;
    std::optional<std::int64_t> seed;

    void validate() const;
};

struct CompletionResult {
    std::string text;
    Usage usage;
    std::optional<std::vector<double>> logprobs;
    std::optional<FinishReason> finish_reason;
};

struct BackendCapabilities {
    bool supports_logprobs = false;
    bool supports_logit_bias = false;
    bool supports_echoless_continuation = true;
};

/// Returning false from the callback aborts the stream after the current
/// chunk; the partial Usage still reflects everything served.
using ChunkCallback = std::function<bool(const TokenChunk&)>;

/// Uniform client for text-completion backends. Shareable across sessions;
/// each individual stream has exactly one consumer.
class Backend {
public:
    virtual ~Backend() = default;

    /// Yields chunks in generation order, then returns the final Usage.
    virtual Usage stream_complete(const CompletionRequest& request,
                                  const ChunkCallback& on_chunk) = 0;

    /// Full completion; stop-sequence text is excluded from the result.
    virtual CompletionResult complete(const CompletionRequest& request);

    virtual BackendCapabilities capabilities() const = 0;

    /// Latency accounting is virtual (deterministic logical clock) when true.
    virtual bool virtual_time() const { return false; }

    /// Cheap reachability probe for health endpoints.
    virtual bool healthy() { return true; }
};

/// `mock:<path>` selects the scripted backend; anything else is an HTTP base
/// URL. Env vars DTSR_BACKEND_URL / DTSR_API_KEY supply defaults.
std::unique_ptr<Backend> make_backend(const std::string& spec);

}  // namespace dtsr
