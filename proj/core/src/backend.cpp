#include "dtsr/backend.hpp"

#include <cstdlib>

#include "dtsr/http_backend.hpp"
#include "dtsr/mock_backend.hpp"

namespace dtsr {

void CompletionRequest::validate() const {
    if (max_tokens < 1) {
        throw Error(ErrorKind::config, "completion request: max_tokens must be >= 1");
    }
    if (!(top_p > 0.0 && top_p <= 1.0)) {
        throw Error(ErrorKind::config, "completion request: top_p must be in (0, 1]");
    }
    if (temperature < 0.0) {
        throw Error(ErrorKind::config, "completion request: temperature must be >= 0");
    }
}

CompletionResult Backend::complete(const CompletionRequest& request) {
    request.validate();
    CompletionRequest streaming = request;
    streaming.stream = true;

    CompletionResult result;
    std::vector<double> logprobs;
    bool any_logprobs = false;
    result.usage = stream_complete(streaming, [&](const TokenChunk& chunk) {
        result.text += chunk.text;
        if (chunk.logprobs) {
            any_logprobs = true;
            logprobs.insert(logprobs.end(), chunk.logprobs->begin(), chunk.logprobs->end());
        }
        if (chunk.finish_reason) {
            result.finish_reason = chunk.finish_reason;
        }
        return true;
    });
    if (any_logprobs) {
        result.logprobs = std::move(logprobs);
    }
    return result;
}

std::unique_ptr<Backend> make_backend(const std::string& spec) {
    std::string resolved = spec;
    if (resolved.empty()) {
        if (const char* env = std::getenv("DTSR_BACKEND_URL")) {
            resolved = env;
        }
    }
    if (resolved.empty()) {
        throw Error(ErrorKind::config,
                    "no backend given: pass --backend or set DTSR_BACKEND_URL");
    }
    if (resolved.rfind("mock:", 0) == 0) {
        return std::make_unique<MockBackend>(MockScript::load(resolved.substr(5)));
    }
    HttpBackendOptions options;
    options.base_url = resolved;
    if (const char* key = std::getenv("DTSR_API_KEY")) {
        options.api_key = key;
    }
    if (const char* log = std::getenv("DTSR_HTTP_LOG")) {
        options.log_path = log;
    }
    return std::make_unique<HttpBackend>(options);
}

}  // namespace dtsr
