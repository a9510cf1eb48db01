#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace dtsr {

enum class ErrorKind {
    config,      // invalid configuration or arguments
    capability,  // backend lacks a required feature
    connection,  // transport-level failure
    timeout,     // request deadline exceeded
    protocol,    // malformed server event / wire violation
    server,      // non-2xx server status
    parse,       // unparseable content (scores, datasets, scripts)
    script,      // no mock script entry matches / script misuse
    io,          // filesystem failure
};

const char* to_string(ErrorKind kind);

/// Single error type for the library. `partial` carries any output that was
/// produced before the failure (e.g. text streamed before a connection drop).
class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, std::string message)
        : std::runtime_error(std::move(message)), kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }

    std::string partial;
    std::int64_t partial_completion_tokens = 0;

private:
    ErrorKind kind_;
};

enum class FinishReason { length, stop, eos };

const char* to_string(FinishReason reason);

/// One streamed generation increment.
struct TokenChunk {
    std::string text;
    std::int64_t token_count = 1;
    std::optional<std::vector<double>> logprobs;  // one entry per token when present
    std::optional<FinishReason> finish_reason;    // only on the final chunk of a stream
};

struct Usage {
    std::int64_t prompt_tokens = 0;
    std::int64_t completion_tokens = 0;
    // Virtual time consumed serving the request, in microseconds. Real
    // backends leave this 0; the scripted mock reports its logical clock so
    // latency accounting stays deterministic in tests.
    std::int64_t virtual_elapsed_us = 0;
};

}  // namespace dtsr
