#include "dtsr/gateway.hpp"

#include <atomic>
#include <cctype>
#include <chrono>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <iostream>
#include <mutex>
#include <sstream>
#include <thread>

#include <httplib.h>
#include <json.hpp>

namespace dtsr {

namespace {

std::pair<std::string, int> split_listen(const std::string& listen) {
    const auto colon = listen.rfind(':');
    if (colon == std::string::npos) {
        return {listen, 8080};
    }
    return {listen.substr(0, colon), std::atoi(listen.c_str() + colon + 1)};
}

std::string host_port_of_url(const std::string& url) {
    std::string rest = url;
    const auto scheme = rest.find("://");
    if (scheme != std::string::npos) {
        rest = rest.substr(scheme + 3);
    }
    const auto slash = rest.find('/');
    if (slash != std::string::npos) {
        rest = rest.substr(0, slash);
    }
    return rest;
}

std::string ltrim_copy(const std::string& s) {
    std::size_t i = 0;
    while (i < s.size() && std::isspace(static_cast<unsigned char>(s[i])) != 0) {
        ++i;
    }
    return s.substr(i);
}

}  // namespace

void GatewayConfig::validate() const {
    if (backend_url.empty()) {
        throw Error(ErrorKind::config, "gateway: backend URL required");
    }
    if (backend_url.rfind("mock:", 0) != 0) {
        const std::string listen = listen_host + ":" + std::to_string(listen_port);
        if (host_port_of_url(backend_url) == listen) {
            throw Error(ErrorKind::config, "gateway: listen and backend addresses must differ");
        }
    }
    controller.validate();
    default_policy.validate();
}

GatewayConfig GatewayConfig::from_json(const std::string& json_text) {
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(json_text);
    } catch (const nlohmann::json::parse_error& e) {
        throw Error(ErrorKind::parse, std::string("gateway config: ") + e.what());
    }

    GatewayConfig cfg;
    if (doc.contains("listen")) {
        const auto [host, port] = split_listen(doc.at("listen").get<std::string>());
        cfg.listen_host = host;
        cfg.listen_port = port;
    }
    cfg.backend_url = doc.value("backend", std::string());
    cfg.check_backend_url = doc.value("check_backend", std::string());
    if (doc.contains("policy")) {
        cfg.default_policy = ExitPolicy::from_name(doc.at("policy").get<std::string>());
    }
    cfg.allow_overrides = doc.value("allow_overrides", true);
    cfg.log_level = doc.value("log_level", std::string("info"));
    cfg.metrics_enabled = doc.value("metrics", true);

    if (doc.contains("controller")) {
        const auto& c = doc.at("controller");
        auto& ctl = cfg.controller;
        ctl.tau = c.value("tau", ctl.tau);
        ctl.k = c.value("k", ctl.k);
        ctl.max_len = c.value("max_len", ctl.max_len);
        ctl.conclusion_reserve = c.value("conclusion_reserve", ctl.conclusion_reserve);
        ctl.check_max_tokens = c.value("check_max_tokens", ctl.check_max_tokens);
        ctl.check_temperature = c.value("check_temperature", ctl.check_temperature);
        ctl.temperature = c.value("temperature", ctl.temperature);
        ctl.top_p = c.value("top_p", ctl.top_p);
        ctl.seeds = c.value("seeds", ctl.seeds);
        ctl.system_prompt = c.value("system_prompt", ctl.system_prompt);
        ctl.probe_max_tokens = c.value("probe_max_tokens", ctl.probe_max_tokens);
        ctl.probe_suffix = c.value("probe_suffix", ctl.probe_suffix);
    }
    if (doc.contains("policy_options")) {
        const auto& p = doc.at("policy_options");
        cfg.default_policy.probe_interval =
            p.value("probe_interval", cfg.default_policy.probe_interval);
        cfg.default_policy.probe_window = p.value("probe_window", cfg.default_policy.probe_window);
        cfg.default_policy.conf_threshold =
            p.value("conf_threshold", cfg.default_policy.conf_threshold);
    }
    return cfg;
}

GatewayConfig GatewayConfig::from_json_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw Error(ErrorKind::io, "gateway config: cannot open " + path);
    }
    std::ostringstream buf;
    buf << in.rdbuf();
    return from_json(buf.str());
}

void GatewayConfig::apply_env() {
    if (const char* v = std::getenv("DTSR_LISTEN")) {
        const auto [host, port] = split_listen(v);
        listen_host = host;
        listen_port = port;
    }
    if (const char* v = std::getenv("DTSR_BACKEND_URL")) {
        backend_url = v;
    }
    if (const char* v = std::getenv("DTSR_CHECK_BACKEND_URL")) {
        check_backend_url = v;
    }
    if (const char* v = std::getenv("DTSR_POLICY")) {
        default_policy = ExitPolicy::from_name(v);
    }
    if (const char* v = std::getenv("DTSR_ALLOW_OVERRIDES")) {
        const std::string s = v;
        allow_overrides = s == "1" || s == "true" || s == "yes";
    }
}

struct GatewayServer::Impl {
    GatewayConfig config;
    Backend& backend;
    Backend* check_backend;
    SessionMetrics metrics;
    httplib::Server server;
    std::thread serve_thread;
    int bound_port = 0;
    std::atomic<std::int64_t> request_ids{0};

    std::mutex health_mutex;
    std::chrono::steady_clock::time_point last_probe{};
    bool last_healthy = false;

    Impl(GatewayConfig cfg, Backend& be, Backend* check)
        : config(std::move(cfg)), backend(be), check_backend(check) {
        setup_routes();
    }

    bool probe_health() {
        std::lock_guard<std::mutex> lock(health_mutex);
        const auto now = std::chrono::steady_clock::now();
        if (last_probe.time_since_epoch().count() != 0 &&
            now - last_probe < std::chrono::seconds(5)) {
            return last_healthy;
        }
        last_healthy = backend.healthy();
        last_probe = now;
        return last_healthy;
    }

    void log(const std::string& line) {
        if (config.log_level == "debug" || config.log_level == "info") {
            std::cerr << "[gateway] " << line << "\n";
        }
    }

    static void fail(httplib::Response& res, int status, const std::string& message,
                     const nlohmann::json& extra = nlohmann::json::object()) {
        nlohmann::json err{{"error", {{"message", message}, {"type", "invalid_request_error"}}}};
        for (auto it = extra.begin(); it != extra.end(); ++it) {
            err["error"][it.key()] = it.value();
        }
        res.status = status;
        res.set_content(err.dump(), "application/json");
    }

    void setup_routes() {
        server.Post("/v1/chat/completions", [this](const httplib::Request& req,
                                                   httplib::Response& res) {
            handle_chat(req, res);
        });
        server.Get("/healthz", [this](const httplib::Request&, httplib::Response& res) {
            const bool ok = probe_health();
            nlohmann::json body{{"status", ok ? "ok" : "degraded"},
                                {"backend_healthy", ok}};
            res.status = ok ? 200 : 503;
            res.set_content(body.dump(), "application/json");
        });
        server.Get("/metrics", [this](const httplib::Request&, httplib::Response& res) {
            if (!config.metrics_enabled) {
                res.status = 404;
                return;
            }
            res.set_content(metrics.expose(), "text/plain; version=0.0.4");
        });
    }

    void handle_chat(const httplib::Request& req, httplib::Response& res) {
        nlohmann::json body;
        try {
            body = nlohmann::json::parse(req.body);
        } catch (const nlohmann::json::parse_error& e) {
            fail(res, 400, std::string("malformed JSON body: ") + e.what());
            return;
        }
        if (!body.is_object() || !body.contains("messages") || !body.at("messages").is_array()) {
            fail(res, 400, "body must contain a 'messages' array");
            return;
        }

        std::string question;
        std::string system_prompt;
        for (const auto& msg : body.at("messages")) {
            if (!msg.is_object()) {
                fail(res, 400, "messages entries must be objects");
                return;
            }
            const std::string role = msg.value("role", std::string());
            const std::string content = msg.value("content", std::string());
            if (role == "user") {
                question = content;
            } else if (role == "system") {
                system_prompt = content;
            }
        }
        if (question.empty()) {
            fail(res, 400, "no user message with content");
            return;
        }

        const bool stream = body.value("stream", false);
        ControllerConfig cfg = config.controller;
        if (!system_prompt.empty()) {
            cfg.system_prompt = system_prompt;
        }
        ExitPolicy policy = config.default_policy;
        bool show_think = false;

        try {
            if (body.contains("temperature")) {
                cfg.temperature = body.at("temperature").get<double>();
            }
            if (body.contains("top_p")) {
                cfg.top_p = body.at("top_p").get<double>();
            }
            if (body.contains("max_tokens")) {
                cfg.max_len = body.at("max_tokens").get<std::int64_t>();
                if (cfg.conclusion_reserve >= cfg.max_len) {
                    cfg.conclusion_reserve = cfg.max_len / 4;
                }
            }
            if (body.contains("seed")) {
                cfg.seed = body.at("seed").get<std::int64_t>();
            }

            if (body.contains("dtsr")) {
                if (!config.allow_overrides) {
                    fail(res, 400, "per-request dtsr overrides are disabled on this gateway");
                    return;
                }
                const auto& d = body.at("dtsr");
                if (!d.is_object()) {
                    fail(res, 400, "'dtsr' must be an object");
                    return;
                }
                if (d.contains("policy")) {
                    policy = ExitPolicy::from_name(d.at("policy").get<std::string>());
                }
                if (d.contains("tau")) {
                    const double tau = d.at("tau").get<double>();
                    if (tau < 0.0 || tau > 100.0) {
                        fail(res, 400, "dtsr.tau must be in [0, 100]");
                        return;
                    }
                    cfg.tau = tau;
                }
                if (d.contains("k")) {
                    const auto k = d.at("k").get<std::int64_t>();
                    if (k < 0) {
                        fail(res, 400, "dtsr.k must be >= 0");
                        return;
                    }
                    cfg.k = k;
                }
                if (d.contains("conf_threshold")) {
                    policy.conf_threshold = d.at("conf_threshold").get<double>();
                }
                if (d.contains("probe_interval")) {
                    policy.probe_interval = d.at("probe_interval").get<std::int64_t>();
                }
                if (d.contains("probe_window")) {
                    policy.probe_window = d.at("probe_window").get<std::int64_t>();
                }
                show_think = d.value("show_think", false);
            }
            cfg.validate();
            policy.validate();
        } catch (const Error& e) {
            fail(res, 400, e.what());
            return;
        } catch (const nlohmann::json::exception& e) {
            fail(res, 400, std::string("invalid parameter: ") + e.what());
            return;
        }

        const std::int64_t id_num = request_ids.fetch_add(1) + 1;
        const std::string id = "chatcmpl-" + std::to_string(id_num);

        RunRecord rec;
        try {
            rec = run(question, policy, cfg, backend, check_backend, id);
        } catch (const RunError& e) {
            metrics.requests_total.inc();
            const int status = e.kind() == ErrorKind::timeout ? 504 : 502;
            fail(res, status, e.what(),
                 nlohmann::json{{"partial",
                                 {{"trace_tokens", estimated_trace_tokens(e.partial_record)},
                                  {"exit_kind", to_string(e.partial_record.exit_kind)},
                                  {"checks", e.partial_record.check_events.size()}}}});
            log("chat " + id + " -> " + std::to_string(status));
            return;
        }

        // metrics
        metrics.requests_total.inc();
        metrics.checks_total.inc(static_cast<std::int64_t>(rec.check_events.size()));
        const std::int64_t trace_tokens = estimated_trace_tokens(rec);
        metrics.trace_tokens.observe(trace_tokens);
        metrics.latency_us.observe(rec.wall_latency_us);
        if (rec.exit_kind == ExitKind::early_exit) {
            metrics.early_exits_total.inc();
            const std::int64_t saved = cfg.think_budget() - trace_tokens;
            if (saved > 0) {
                metrics.tokens_saved_estimate.inc(saved);
            }
        } else if (rec.exit_kind == ExitKind::budget_forced) {
            metrics.budget_forced_total.inc();
        }

        const std::string content =
            show_think ? rec.trace + rec.conclusion : ltrim_copy(rec.conclusion);
        const auto created = static_cast<std::int64_t>(std::time(nullptr));

        nlohmann::json usage{
            {"prompt_tokens", 0},
            {"completion_tokens", rec.tokens_main},
            {"total_tokens", rec.tokens_main},
            {"dtsr",
             {{"checks", rec.check_events.size()},
              {"check_tokens", rec.tokens_check_overhead},
              {"exit_kind", to_string(rec.exit_kind)},
              {"trace_tokens", trace_tokens}}},
        };

        if (!stream) {
            nlohmann::json out{
                {"id", id},
                {"object", "chat.completion"},
                {"created", created},
                {"model", "dtsr-gateway"},
                {"choices",
                 {{{"index", 0},
                   {"message", {{"role", "assistant"}, {"content", content}}},
                   {"finish_reason", "stop"}}}},
                {"usage", usage},
            };
            res.set_content(out.dump(), "application/json");
        } else {
            auto chunk = [&](const nlohmann::json& delta, const nlohmann::json& finish) {
                return nlohmann::json{{"id", id},
                                      {"object", "chat.completion.chunk"},
                                      {"created", created},
                                      {"model", "dtsr-gateway"},
                                      {"choices",
                                       {{{"index", 0},
                                         {"delta", delta},
                                         {"finish_reason", finish}}}}};
            };
            std::string sse;
            sse += "data: " + chunk({{"role", "assistant"}}, nullptr).dump() + "\n\n";
            sse += "data: " + chunk({{"content", content}}, nullptr).dump() + "\n\n";
            auto final_chunk = chunk(nlohmann::json::object(), "stop");
            final_chunk["usage"] = usage;
            sse += "data: " + final_chunk.dump() + "\n\n";
            sse += "data: [DONE]\n\n";
            res.set_content(sse, "text/event-stream");
        }
        log("chat " + id + " -> 200 exit=" + to_string(rec.exit_kind) +
            " checks=" + std::to_string(rec.check_events.size()));
    }
};

GatewayServer::GatewayServer(GatewayConfig config, Backend& backend, Backend* check_backend)
    : impl_(std::make_unique<Impl>(std::move(config), backend, check_backend)) {}

GatewayServer::~GatewayServer() {
    stop();
}

void GatewayServer::start() {
    impl_->config.validate();
    if (!impl_->backend.healthy()) {
        throw Error(ErrorKind::connection,
                    "gateway: backend unreachable at startup probe: " + impl_->config.backend_url);
    }
    if (impl_->config.listen_port == 0) {
        impl_->bound_port = impl_->server.bind_to_any_port(impl_->config.listen_host.c_str());
        if (impl_->bound_port <= 0) {
            throw Error(ErrorKind::io, "gateway: cannot bind to " + impl_->config.listen_host);
        }
    } else {
        if (!impl_->server.bind_to_port(impl_->config.listen_host.c_str(),
                                        impl_->config.listen_port)) {
            throw Error(ErrorKind::io,
                        "gateway: cannot bind to " + impl_->config.listen_host + ":" +
                            std::to_string(impl_->config.listen_port));
        }
        impl_->bound_port = impl_->config.listen_port;
    }
    impl_->serve_thread = std::thread([this] { impl_->server.listen_after_bind(); });
    impl_->server.wait_until_ready();
    impl_->log("listening on " + impl_->config.listen_host + ":" +
               std::to_string(impl_->bound_port));
}

void GatewayServer::stop() {
    if (impl_ && impl_->server.is_running()) {
        impl_->server.stop();
    }
    if (impl_ && impl_->serve_thread.joinable()) {
        impl_->serve_thread.join();
    }
}

void GatewayServer::wait() {
    if (impl_ && impl_->serve_thread.joinable()) {
        impl_->serve_thread.join();
    }
}

int GatewayServer::port() const { return impl_->bound_port; }

const SessionMetrics& GatewayServer::metrics() const { return impl_->metrics; }

}  // namespace dtsr
