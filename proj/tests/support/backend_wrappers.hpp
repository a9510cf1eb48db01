#pragma once

#include <cstdint>

#include "dtsr/backend.hpp"

namespace testsupport {

/// Accumulates every Usage a backend reports, for conservation checks.
class CountingBackend : public dtsr::Backend {
public:
    explicit CountingBackend(dtsr::Backend& inner) : inner_(inner) {}

    dtsr::Usage stream_complete(const dtsr::CompletionRequest& request,
                                const dtsr::ChunkCallback& on_chunk) override {
        const dtsr::Usage usage = inner_.stream_complete(request, on_chunk);
        total_completion_tokens += usage.completion_tokens;
        ++requests;
        return usage;
    }

    dtsr::BackendCapabilities capabilities() const override { return inner_.capabilities(); }
    bool virtual_time() const override { return inner_.virtual_time(); }
    bool healthy() override { return inner_.healthy(); }

    std::int64_t total_completion_tokens = 0;
    std::int64_t requests = 0;

private:
    dtsr::Backend& inner_;
};

/// Overrides the advertised capabilities of a backend.
class CapabilityMask : public dtsr::Backend {
public:
    CapabilityMask(dtsr::Backend& inner, dtsr::BackendCapabilities caps)
        : inner_(inner), caps_(caps) {}

    dtsr::Usage stream_complete(const dtsr::CompletionRequest& request,
                                const dtsr::ChunkCallback& on_chunk) override {
        if (request.want_logprobs && !caps_.supports_logprobs) {
            throw dtsr::Error(dtsr::ErrorKind::capability, "logprobs not supported");
        }
        if (!request.logit_bias.empty() && !caps_.supports_logit_bias) {
            throw dtsr::Error(dtsr::ErrorKind::capability, "logit_bias not supported");
        }
        return inner_.stream_complete(request, on_chunk);
    }

    dtsr::BackendCapabilities capabilities() const override { return caps_; }
    bool virtual_time() const override { return inner_.virtual_time(); }

private:
    dtsr::Backend& inner_;
    dtsr::BackendCapabilities caps_;
};

/// Fails the first N requests with a connection error, then delegates.
class FlakyBackend : public dtsr::Backend {
public:
    FlakyBackend(dtsr::Backend& inner, int failures) : inner_(inner), failures_(failures) {}

    dtsr::Usage stream_complete(const dtsr::CompletionRequest& request,
                                const dtsr::ChunkCallback& on_chunk) override {
        if (failures_ > 0) {
            --failures_;
            throw dtsr::Error(dtsr::ErrorKind::connection, "flaky backend");
        }
        return inner_.stream_complete(request, on_chunk);
    }

    dtsr::BackendCapabilities capabilities() const override { return inner_.capabilities(); }
    bool virtual_time() const override { return inner_.virtual_time(); }

private:
    dtsr::Backend& inner_;
    int failures_;
};

}  // namespace testsupport
