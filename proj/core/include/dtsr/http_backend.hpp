#pragma once

#include <condition_variable>
#include <memory>
#include <mutex>
#include <string>

#include "dtsr/backend.hpp"

namespace dtsr {

struct HttpBackendOptions {
    std::string base_url;  // e.g. "http://127.0.0.1:8000"; "/v1/completions" is appended
    std::string api_key;
    std::string log_path;  // JSONL request/response log when non-empty
    BackendCapabilities capabilities{.supports_logprobs = false,
                                     .supports_logit_bias = false,
                                     .supports_echoless_continuation = true};
    int connect_timeout_ms = 5000;
    int read_timeout_ms = 120000;
    int max_in_flight = 64;  // concurrent requests through one client
};

/// Streaming client for any OpenAI-compatible completions server.
/// Speaks POST /v1/completions with SSE ("data: <json>" events, terminated
/// by "data: [DONE]"); the final usage object is honored when present.
class HttpBackend : public Backend {
public:
    explicit HttpBackend(HttpBackendOptions options);
    ~HttpBackend() override;

    Usage stream_complete(const CompletionRequest& request,
                          const ChunkCallback& on_chunk) override;

    BackendCapabilities capabilities() const override { return options_.capabilities; }

    bool healthy() override;

private:
    void log_exchange(const std::string& line);

    HttpBackendOptions options_;
    std::string host_;         // scheme://host:port for the client
    std::string path_prefix_;  // path portion of base_url, if any
    std::mutex log_mutex_;

    // bounded in-flight requests
    std::mutex slot_mutex_;
    std::condition_variable slot_cv_;
    int in_flight_ = 0;
};

}  // namespace dtsr
