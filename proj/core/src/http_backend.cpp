#include "dtsr/http_backend.hpp"

#include <chrono>
#include <fstream>

#include <httplib.h>
#include <json.hpp>

namespace dtsr {

namespace {

// Splits "http://host:port/prefix" into client target and path prefix.
void split_base_url(const std::string& base_url, std::string& host, std::string& prefix) {
    std::string url = base_url;
    while (!url.empty() && url.back() == '/') {
        url.pop_back();
    }
    const auto scheme_end = url.find("://");
    const auto path_start =
        url.find('/', scheme_end == std::string::npos ? 0 : scheme_end + 3);
    if (path_start == std::string::npos) {
        host = url;
        prefix.clear();
    } else {
        host = url.substr(0, path_start);
        prefix = url.substr(path_start);
    }
    // Callers often pass ".../v1" already.
    if (prefix.size() >= 3 && prefix.compare(prefix.size() - 3, 3, "/v1") == 0) {
        prefix.resize(prefix.size() - 3);
    }
}

FinishReason finish_from_wire(const std::string& s) {
    if (s == "length") {
        return FinishReason::length;
    }
    if (s == "eos" || s == "eos_token") {
        return FinishReason::eos;
    }
    return FinishReason::stop;
}

}  // namespace

HttpBackend::HttpBackend(HttpBackendOptions options) : options_(std::move(options)) {
    if (options_.base_url.empty()) {
        throw Error(ErrorKind::config, "http backend: empty base URL");
    }
    split_base_url(options_.base_url, host_, path_prefix_);
}

HttpBackend::~HttpBackend() = default;

void HttpBackend::log_exchange(const std::string& line) {
    if (options_.log_path.empty()) {
        return;
    }
    std::lock_guard<std::mutex> lock(log_mutex_);
    std::ofstream out(options_.log_path, std::ios::app);
    out << line << "\n";
}

bool HttpBackend::healthy() {
    httplib::Client client(host_);
    client.set_connection_timeout(0, options_.connect_timeout_ms * 1000);
    client.set_read_timeout(options_.read_timeout_ms / 1000,
                            (options_.read_timeout_ms % 1000) * 1000);
    auto res = client.Get((path_prefix_ + "/v1/models").c_str());
    return res && res->status < 500;
}

namespace {

class SlotGuard {
public:
    SlotGuard(std::mutex& mutex, std::condition_variable& cv, int& count, int limit)
        : mutex_(mutex), cv_(cv), count_(count) {
        std::unique_lock<std::mutex> lock(mutex_);
        cv_.wait(lock, [&] { return limit <= 0 || count_ < limit; });
        ++count_;
    }
    ~SlotGuard() {
        {
            std::lock_guard<std::mutex> lock(mutex_);
            --count_;
        }
        cv_.notify_one();
    }

private:
    std::mutex& mutex_;
    std::condition_variable& cv_;
    int& count_;
};

}  // namespace

Usage HttpBackend::stream_complete(const CompletionRequest& request,
                                   const ChunkCallback& on_chunk) {
    request.validate();
    SlotGuard slot(slot_mutex_, slot_cv_, in_flight_, options_.max_in_flight);
    if (request.want_logprobs && !options_.capabilities.supports_logprobs) {
        throw Error(ErrorKind::capability, "backend does not support logprobs");
    }
    if (!request.logit_bias.empty() && !options_.capabilities.supports_logit_bias) {
        throw Error(ErrorKind::capability, "backend does not support logit_bias");
    }

    nlohmann::json body{
        {"prompt", request.prompt},
        {"max_tokens", request.max_tokens},
        {"temperature", request.temperature},
        {"top_p", request.top_p},
        {"stream", true},
    };
    if (!request.stop.empty()) {
        body["stop"] = request.stop;
    }
    if (request.want_logprobs) {
        body["logprobs"] = 1;
    }
    if (!request.logit_bias.empty()) {
        nlohmann::json bias = nlohmann::json::object();
        for (const auto& [token, value] : request.logit_bias) {
            bias[std::to_string(token)] = value;
        }
        body["logit_bias"] = bias;
    }
    if (request.seed) {
        body["seed"] = *request.seed;
    }

    httplib::Client client(host_);
    client.set_connection_timeout(0, options_.connect_timeout_ms * 1000);
    client.set_read_timeout(options_.read_timeout_ms / 1000,
                            (options_.read_timeout_ms % 1000) * 1000);
    httplib::Headers headers;
    if (!options_.api_key.empty()) {
        headers.emplace("Authorization", "Bearer " + options_.api_key);
    }

    Usage usage;
    std::int64_t counted_tokens = 0;
    bool usage_from_server = false;
    bool done = false;
    bool aborted = false;
    std::string partial_text;
    std::string buffer;
    std::optional<Error> stream_error;
    std::size_t events = 0;

    auto handle_payload = [&](const std::string& payload) -> bool {
        if (payload == "[DONE]") {
            done = true;
            return true;
        }
        nlohmann::json event;
        try {
            event = nlohmann::json::parse(payload);
        } catch (const nlohmann::json::parse_error& e) {
            stream_error = Error(ErrorKind::protocol,
                                 std::string("malformed stream event: ") + e.what());
            return false;
        }
        ++events;
        if (event.contains("usage") && event.at("usage").is_object()) {
            const auto& u = event.at("usage");
            usage.prompt_tokens = u.value("prompt_tokens", std::int64_t{0});
            usage.completion_tokens = u.value("completion_tokens", std::int64_t{0});
            usage_from_server = true;
        }
        if (!event.contains("choices") || event.at("choices").empty()) {
            return true;  // usage-only event
        }
        const auto& choice = event.at("choices").at(0);
        TokenChunk chunk;
        chunk.text = choice.value("text", std::string());
        if (choice.contains("logprobs") && choice.at("logprobs").is_object() &&
            choice.at("logprobs").contains("token_logprobs")) {
            std::vector<double> lps;
            for (const auto& lp : choice.at("logprobs").at("token_logprobs")) {
                lps.push_back(lp.is_null() ? 0.0 : lp.get<double>());
            }
            chunk.logprobs = std::move(lps);
            chunk.token_count = static_cast<std::int64_t>(chunk.logprobs->size());
        } else {
            chunk.token_count = 1;
        }
        if (choice.contains("finish_reason") && choice.at("finish_reason").is_string()) {
            chunk.finish_reason = finish_from_wire(choice.at("finish_reason").get<std::string>());
        }
        counted_tokens += chunk.token_count;
        partial_text += chunk.text;
        if (!on_chunk(chunk)) {
            aborted = true;
            return false;
        }
        return true;
    };

    int status = 0;
    std::string error_body;
    httplib::Request http_req;
    http_req.method = "POST";
    http_req.path = path_prefix_ + "/v1/completions";
    http_req.headers = headers;
    http_req.body = body.dump();
    http_req.set_header("Content-Type", "application/json");
    http_req.content_receiver = [&](const char* data, std::size_t len, std::uint64_t,
                                    std::uint64_t) -> bool {
        buffer.append(data, len);
        std::size_t line_end;
        while ((line_end = buffer.find('\n')) != std::string::npos) {
            std::string line = buffer.substr(0, line_end);
            buffer.erase(0, line_end + 1);
            if (!line.empty() && line.back() == '\r') {
                line.pop_back();
            }
            if (line.rfind("data: ", 0) == 0) {
                if (!handle_payload(line.substr(6))) {
                    return false;
                }
            } else if (line.rfind("data:", 0) == 0) {
                if (!handle_payload(line.substr(5))) {
                    return false;
                }
            }
        }
        error_body.append(data, len);  // kept for non-SSE error bodies
        return true;
    };
    auto result = client.send(http_req);

    if (result) {
        status = result->status;
        if (!result->body.empty()) {
            error_body = result->body;
        }
    }

    {
        nlohmann::json log_line;
        log_line["ts_us"] = std::chrono::duration_cast<std::chrono::microseconds>(
                                std::chrono::system_clock::now().time_since_epoch())
                                .count();
        log_line["path"] = path_prefix_ + "/v1/completions";
        log_line["status"] = status;
        log_line["events"] = events;
        log_line["error"] = result ? std::string() : httplib::to_string(result.error());
        log_line["prompt_chars"] = request.prompt.size();
        log_exchange(log_line.dump());
    }

    auto attach_partial = [&](Error err) {
        err.partial = partial_text;
        err.partial_completion_tokens = counted_tokens;
        return err;
    };

    if (stream_error) {
        throw attach_partial(*stream_error);
    }
    if (aborted) {
        // Consumer stopped the stream; not an error.
        if (!usage_from_server) {
            usage.completion_tokens = counted_tokens;
        }
        return usage;
    }
    if (!result) {
        switch (result.error()) {
            case httplib::Error::ConnectionTimeout:
            case httplib::Error::Read:
            case httplib::Error::Write:
                throw attach_partial(Error(ErrorKind::timeout,
                                           "backend timeout: " + httplib::to_string(result.error())));
            default:
                throw attach_partial(Error(
                    ErrorKind::connection, "backend connection failed: " +
                                               httplib::to_string(result.error())));
        }
    }
    if (status != 200) {
        throw attach_partial(Error(ErrorKind::server, "backend returned status " +
                                                          std::to_string(status) + ": " +
                                                          error_body.substr(0, 300)));
    }
    if (!done && events == 0) {
        throw attach_partial(Error(ErrorKind::protocol, "backend sent no stream events"));
    }
    if (!usage_from_server) {
        usage.completion_tokens = counted_tokens;
    }
    return usage;
}

}  // namespace dtsr
