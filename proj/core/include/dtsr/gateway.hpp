#pragma once

#include <memory>
#include <string>

#include "dtsr/backend.hpp"
#include "dtsr/controller.hpp"
#include "dtsr/metrics.hpp"

namespace dtsr {

struct GatewayConfig {
    std::string listen_host = "127.0.0.1";
    int listen_port = 8080;
    std::string backend_url;        // "mock:<path>" or an HTTP base URL
    std::string check_backend_url;  // empty: same as backend
    ExitPolicy default_policy = ExitPolicy::from_name("dtsr");
    ControllerConfig controller;
    bool allow_overrides = true;
    std::string log_level = "info";
    bool metrics_enabled = true;

    void validate() const;

    static GatewayConfig from_json(const std::string& json_text);
    static GatewayConfig from_json_file(const std::string& path);
    /// Environment overrides: DTSR_LISTEN, DTSR_BACKEND_URL,
    /// DTSR_CHECK_BACKEND_URL, DTSR_POLICY, DTSR_ALLOW_OVERRIDES.
    void apply_env();
};

/// OpenAI-compatible chat-completions front that applies an exit policy in
/// front of a completions backend.
///
///   POST /v1/chat/completions   standard body; optional "dtsr" extension
///                               {policy, tau, k, show_think} when overrides
///                               are permitted
///   GET  /healthz               backend reachability, re-probed when stale
///   GET  /metrics               line-oriented name/value exposition
class GatewayServer {
public:
    GatewayServer(GatewayConfig config, Backend& backend, Backend* check_backend = nullptr);
    ~GatewayServer();

    GatewayServer(const GatewayServer&) = delete;
    GatewayServer& operator=(const GatewayServer&) = delete;

    /// Bind and serve on a background thread. Throws Error(connection) when
    /// the backend startup probe fails, Error(io) when binding fails.
    void start();
    void stop();
    /// Block until stop() (for the CLI `serve` path).
    void wait();

    int port() const;
    const SessionMetrics& metrics() const;

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

}  // namespace dtsr
