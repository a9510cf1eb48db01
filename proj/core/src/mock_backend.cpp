#include "dtsr/mock_backend.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace dtsr {

namespace {

ErrorKind fault_kind_from_string(const std::string& s) {
    if (s == "connection") return ErrorKind::connection;
    if (s == "timeout") return ErrorKind::timeout;
    if (s == "protocol") return ErrorKind::protocol;
    if (s == "server") return ErrorKind::server;
    throw Error(ErrorKind::parse, "mock script: unknown fault kind '" + s + "'");
}

FinishReason finish_from_string(const std::string& s) {
    if (s == "length") return FinishReason::length;
    if (s == "stop") return FinishReason::stop;
    if (s == "eos") return FinishReason::eos;
    throw Error(ErrorKind::parse, "mock script: unknown finish reason '" + s + "'");
}

std::size_t line_of_byte(const std::string& text, std::size_t byte) {
    return 1 + static_cast<std::size_t>(
                   std::count(text.begin(), text.begin() + static_cast<std::ptrdiff_t>(
                                                               std::min(byte, text.size())),
                              '\n'));
}

ScriptChunk parse_chunk(const nlohmann::json& node, const std::string& where) {
    ScriptChunk chunk;
    if (node.is_string()) {
        chunk.text = node.get<std::string>();
        return chunk;
    }
    if (!node.is_object()) {
        throw Error(ErrorKind::parse, where + ": chunk must be a string or object");
    }
    if (node.contains("fault")) {
        chunk.fault = fault_kind_from_string(node.at("fault").get<std::string>());
        chunk.fault_message = node.value("message", std::string("scripted fault"));
        chunk.token_count = 0;
        return chunk;
    }
    chunk.text = node.value("text", std::string());
    chunk.token_count = node.value("tokens", std::int64_t{1});
    if (chunk.token_count < 0) {
        throw Error(ErrorKind::parse, where + ": negative token count");
    }
    if (node.contains("logprobs")) {
        chunk.logprobs = node.at("logprobs").get<std::vector<double>>();
        if (static_cast<std::int64_t>(chunk.logprobs->size()) != chunk.token_count) {
            throw Error(ErrorKind::parse, where + ": logprobs length must equal token count");
        }
    }
    if (node.contains("finish")) {
        chunk.finish_reason = finish_from_string(node.at("finish").get<std::string>());
    }
    return chunk;
}

}  // namespace

void MockScript::validate() const {
    if (entries.empty()) {
        throw Error(ErrorKind::parse, "mock script: no entries");
    }
    for (std::size_t i = 0; i < entries.size(); ++i) {
        const auto& e = entries[i];
        if (e.match_text.empty()) {
            throw Error(ErrorKind::parse,
                        "mock script: entry " + std::to_string(i) + ": empty match text");
        }
        if (e.response.empty()) {
            throw Error(ErrorKind::parse,
                        "mock script: entry " + std::to_string(i) + ": empty response");
        }
        for (std::size_t j = i + 1; j < entries.size(); ++j) {
            const auto& other = entries[j];
            if (e.kind == other.kind && e.match_text == other.match_text &&
                e.when_logit_bias == other.when_logit_bias && e.when_seed == other.when_seed) {
                throw Error(ErrorKind::parse,
                            "mock script: entries " + std::to_string(i) + " and " +
                                std::to_string(j) + " are ambiguous (same match)");
            }
        }
    }
}

MockScript MockScript::from_json(const std::string& json_text, const std::string& origin) {
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(json_text);
    } catch (const nlohmann::json::parse_error& e) {
        throw Error(ErrorKind::parse, origin + ":" + std::to_string(line_of_byte(json_text, e.byte)) +
                                          ": " + e.what());
    }
    if (!doc.is_object() || !doc.contains("entries") || !doc.at("entries").is_array()) {
        throw Error(ErrorKind::parse, origin + ": expected an object with an 'entries' array");
    }

    MockScript script;
    std::size_t index = 0;
    for (const auto& node : doc.at("entries")) {
        const std::string where = origin + ": entry " + std::to_string(index++);
        ScriptEntry entry;
        if (!node.contains("match")) {
            throw Error(ErrorKind::parse, where + ": missing 'match'");
        }
        const auto& match = node.at("match");
        const std::string kind = match.value("kind", std::string("exact"));
        if (kind == "exact") {
            entry.kind = MatchKind::exact;
        } else if (kind == "prefix") {
            entry.kind = MatchKind::prefix;
        } else if (kind == "contains") {
            entry.kind = MatchKind::contains;
        } else {
            throw Error(ErrorKind::parse, where + ": unknown match kind '" + kind + "'");
        }
        entry.match_text = match.value("text", std::string());
        entry.delay_per_chunk_us = node.value("delay_per_chunk_us", std::int64_t{0});
        entry.delay_us = node.value("delay_us", std::int64_t{0});
        if (node.contains("when")) {
            const auto& when = node.at("when");
            if (when.contains("logit_bias")) {
                entry.when_logit_bias = when.at("logit_bias").get<bool>();
            }
            if (when.contains("seed")) {
                entry.when_seed = when.at("seed").get<std::int64_t>();
            }
        }
        if (!node.contains("response") || !node.at("response").is_array()) {
            throw Error(ErrorKind::parse, where + ": missing 'response' array");
        }
        for (const auto& chunk_node : node.at("response")) {
            entry.response.push_back(parse_chunk(chunk_node, where));
        }
        script.entries.push_back(std::move(entry));
    }
    script.validate();
    return script;
}

MockScript MockScript::load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw Error(ErrorKind::io, "mock script: cannot open " + path);
    }
    std::ostringstream buf;
    buf << in.rdbuf();
    const std::string text = buf.str();
    if (text.find_first_not_of(" \t\r\n") == std::string::npos) {
        throw Error(ErrorKind::parse, path + ": empty script file");
    }
    return from_json(text, path);
}

MockBackend::MockBackend(MockScript script) : script_(std::move(script)) {
    script_.validate();
}

MockBackend::Resolution MockBackend::resolve(const CompletionRequest& request) const {
    const std::string& prompt = request.prompt;

    auto conditions_ok = [&](const ScriptEntry& e) {
        if (e.when_logit_bias && *e.when_logit_bias != !request.logit_bias.empty()) {
            return false;
        }
        if (e.when_seed && (!request.seed || *request.seed != *e.when_seed)) {
            return false;
        }
        return true;
    };

    // 1. exact
    for (const auto& e : script_.entries) {
        if (e.kind == MatchKind::exact && e.match_text == prompt && conditions_ok(e)) {
            return {&e, 0};
        }
    }

    // 2. continuation: prompt == match_text + chunk-aligned response prefix
    Resolution best;
    std::size_t best_len = 0;
    for (const auto& e : script_.entries) {
        if (e.kind == MatchKind::contains || !conditions_ok(e)) {
            continue;
        }
        if (prompt.size() <= e.match_text.size() || prompt.rfind(e.match_text, 0) != 0) {
            continue;
        }
        std::string_view excess(prompt.data() + e.match_text.size(),
                                prompt.size() - e.match_text.size());
        std::size_t off = 0;
        std::size_t chunk_index = 0;
        for (; chunk_index < e.response.size() && off < excess.size(); ++chunk_index) {
            const auto& text = e.response[chunk_index].text;
            if (excess.compare(off, text.size(), text) != 0) {
                break;
            }
            off += text.size();
        }
        if (off == excess.size() && off > 0 && e.match_text.size() >= best_len) {
            best = {&e, chunk_index};
            best_len = e.match_text.size();
        }
    }
    if (best.entry) {
        return best;
    }

    // 3. prefix
    best_len = 0;
    for (const auto& e : script_.entries) {
        if (e.kind == MatchKind::prefix && conditions_ok(e) &&
            prompt.rfind(e.match_text, 0) == 0 && e.match_text.size() >= best_len) {
            best = {&e, 0};
            best_len = e.match_text.size();
        }
    }
    if (best.entry) {
        return best;
    }

    // 4. contains, latest occurrence first
    std::size_t best_pos = 0;
    bool found = false;
    for (const auto& e : script_.entries) {
        if (e.kind != MatchKind::contains || !conditions_ok(e)) {
            continue;
        }
        const auto pos = prompt.rfind(e.match_text);
        if (pos == std::string::npos) {
            continue;
        }
        if (!found || pos > best_pos ||
            (pos == best_pos && e.match_text.size() > best.entry->match_text.size())) {
            best = {&e, 0};
            best_pos = pos;
            found = true;
        }
    }
    if (found) {
        return best;
    }

    const std::string head = prompt.substr(0, 80);
    const std::string tail = prompt.size() > 80 ? prompt.substr(prompt.size() - 80) : "";
    throw Error(ErrorKind::script,
                "mock script: no entry matches prompt (head='" + head + "' tail='" + tail + "')");
}

Usage MockBackend::stream_complete(const CompletionRequest& request,
                                   const ChunkCallback& on_chunk) {
    request.validate();
    const auto resolution = resolve(request);
    const auto& entry = *resolution.entry;

    Usage usage;
    usage.prompt_tokens = static_cast<std::int64_t>((request.prompt.size() + 3) / 4);
    usage.virtual_elapsed_us = entry.delay_us;

    std::size_t max_stop = 0;
    for (const auto& s : request.stop) {
        max_stop = std::max(max_stop, s.size());
    }

    std::string served;
    for (std::size_t i = resolution.first_chunk; i < entry.response.size(); ++i) {
        const auto& scripted = entry.response[i];
        if (scripted.fault) {
            Error err(*scripted.fault, scripted.fault_message);
            err.partial = served;
            err.partial_completion_tokens = usage.completion_tokens;
            throw err;
        }
        if (usage.completion_tokens + scripted.token_count > request.max_tokens) {
            // Budget exhausted before this chunk; close the stream.
            TokenChunk final_chunk;
            final_chunk.token_count = 0;
            final_chunk.finish_reason = FinishReason::length;
            on_chunk(final_chunk);
            return usage;
        }

        TokenChunk out;
        out.text = scripted.text;
        out.token_count = scripted.token_count;
        out.logprobs = scripted.logprobs;
        out.finish_reason = scripted.finish_reason;

        // Stop sequences may span chunk boundaries; an occurrence counts when
        // it completes inside the new text.
        bool stopped = false;
        if (!request.stop.empty()) {
            const std::size_t window = std::min(served.size(), max_stop > 0 ? max_stop - 1 : 0);
            std::string combined = served.substr(served.size() - window) + out.text;
            std::size_t cut = std::string::npos;
            for (const auto& s : request.stop) {
                if (s.empty()) {
                    continue;
                }
                for (std::size_t pos = combined.find(s); pos != std::string::npos;
                     pos = combined.find(s, pos + 1)) {
                    if (pos + s.size() > window) {  // completes in new text
                        cut = std::min(cut, pos);
                        break;
                    }
                }
            }
            if (cut != std::string::npos) {
                out.text = combined.substr(window, cut > window ? cut - window : 0);
                out.logprobs.reset();
                out.finish_reason = FinishReason::stop;
                stopped = true;
            }
        }

        const bool is_last_scripted = (i + 1 == entry.response.size());
        const bool next_fits =
            !is_last_scripted && (entry.response[i + 1].fault.has_value() ||
                                  usage.completion_tokens + scripted.token_count +
                                          entry.response[i + 1].token_count <=
                                      request.max_tokens);
        if (!out.finish_reason) {
            if (is_last_scripted) {
                out.finish_reason = FinishReason::eos;
            } else if (!next_fits) {
                out.finish_reason = FinishReason::length;
            }
        }

        usage.completion_tokens += out.token_count;
        usage.virtual_elapsed_us += entry.delay_per_chunk_us;
        served += out.text;
        const bool keep_going = on_chunk(out);
        if (stopped || !keep_going || out.finish_reason) {
            return usage;
        }
    }
    return usage;
}

}  // namespace dtsr
