#include "dtsr/prompting.hpp"

#include <cctype>
#include <cstdlib>

#include <json.hpp>

namespace dtsr {

const char* const kDefaultReasoningSystemPrompt =
    "Please reason step by step, and put your final answer within \\boxed{}.";

const char* const kSufficiencyInstruction =
    "Assess the confidence that the provided thought is sufficient to solve the question.\n"
    "Output only in the format: Confidence: <number>, where <number> is a real value\n"
    "between 0 and 100. Here, 100 means the thought is fully sufficient to reach the\n"
    "final answer directly without additional reasoning, and 0 means the thought is\n"
    "completely insufficient to do so.";

namespace {

std::size_t count_occurrences(const std::string& haystack, const std::string& needle) {
    std::size_t count = 0;
    for (std::size_t pos = haystack.find(needle); pos != std::string::npos;
         pos = haystack.find(needle, pos + needle.size())) {
        ++count;
    }
    return count;
}

std::string replace_once(std::string text, const std::string& placeholder,
                         const std::string& value) {
    const auto pos = text.find(placeholder);
    text.replace(pos, placeholder.size(), value);
    return text;
}

std::string open_turn(const ChatFormat& f, const std::string& role) {
    return f.turn_open + role + "\n";
}

std::string close_turn(const ChatFormat& f) { return "\n" + f.turn_close + "\n"; }

}  // namespace

void ChatFormat::validate() const {
    if (think_open.empty() || think_close.empty()) {
        throw Error(ErrorKind::config, "chat format: think markers must be non-empty");
    }
    if (think_open == think_close) {
        throw Error(ErrorKind::config, "chat format: think markers must differ");
    }
    if (turn_open.empty() || turn_close.empty()) {
        throw Error(ErrorKind::config, "chat format: turn markers must be non-empty");
    }
}

ChatFormat ChatFormat::from_json(const std::string& json_text) {
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(json_text);
    } catch (const nlohmann::json::parse_error& e) {
        throw Error(ErrorKind::parse, std::string("chat format: ") + e.what());
    }
    ChatFormat f;
    auto get = [&](const char* key, std::string& field) {
        if (doc.contains(key)) {
            field = doc.at(key).get<std::string>();
        }
    };
    get("turn_open", f.turn_open);
    get("turn_close", f.turn_close);
    get("system_role_name", f.system_role_name);
    get("user_role_name", f.user_role_name);
    get("assistant_role_name", f.assistant_role_name);
    get("think_open", f.think_open);
    get("think_close", f.think_close);
    f.validate();
    return f;
}

std::string ChatFormat::to_json() const {
    nlohmann::json doc{
        {"turn_open", turn_open},
        {"turn_close", turn_close},
        {"system_role_name", system_role_name},
        {"user_role_name", user_role_name},
        {"assistant_role_name", assistant_role_name},
        {"think_open", think_open},
        {"think_close", think_close},
    };
    return doc.dump(2);
}

void PromptTemplate::validate() const {
    if (body.empty()) {
        throw Error(ErrorKind::config, "prompt template: empty body");
    }
    for (const char* placeholder : {"{question}", "{thought}"}) {
        const auto n = count_occurrences(body, placeholder);
        if (n != 1) {
            throw Error(ErrorKind::config,
                        std::string("prompt template: body must contain ") + placeholder +
                            " exactly once (found " + std::to_string(n) + ")");
        }
    }
}

PromptTemplate PromptTemplate::sufficiency_default(const ChatFormat& format) {
    PromptTemplate t;
    t.body = std::string(kSufficiencyInstruction) +
             "\n\n### Question\n{question}\n\n### Thought\n{thought}";
    t.assistant_primer =
        format.think_open + "\n\n" + format.think_close + "\n\nConfidence:";
    return t;
}

PromptTemplate PromptTemplate::from_json(const std::string& json_text) {
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(json_text);
    } catch (const nlohmann::json::parse_error& e) {
        throw Error(ErrorKind::parse, std::string("prompt template: ") + e.what());
    }
    PromptTemplate t;
    t.body = doc.at("body").get<std::string>();
    if (doc.contains("assistant_primer")) {
        t.assistant_primer = doc.at("assistant_primer").get<std::string>();
    }
    t.validate();
    return t;
}

std::string render_sufficiency_prompt(const std::string& question,
                                      const std::string& thought,
                                      const ChatFormat& format,
                                      const PromptTemplate& tmpl) {
    if (question.empty()) {
        throw Error(ErrorKind::config, "sufficiency prompt: empty question");
    }
    if (thought.empty()) {
        throw Error(ErrorKind::config, "sufficiency prompt: empty thought");
    }
    format.validate();
    tmpl.validate();

    std::string body = replace_once(tmpl.body, "{question}", question);
    body = replace_once(std::move(body), "{thought}", thought);

    std::string out = open_turn(format, format.user_role_name);
    out += body;
    out += close_turn(format);
    out += open_turn(format, format.assistant_role_name);
    out += tmpl.assistant_primer;
    return out;
}

std::string render_first_person_prompt(const std::string& question,
                                       const std::string& thought,
                                       const ChatFormat& format) {
    if (question.empty()) {
        throw Error(ErrorKind::config, "first-person prompt: empty question");
    }
    if (thought.empty()) {
        throw Error(ErrorKind::config, "first-person prompt: empty thought");
    }
    format.validate();

    std::string out = open_turn(format, format.system_role_name);
    out += kDefaultReasoningSystemPrompt;
    out += close_turn(format);
    out += open_turn(format, format.user_role_name);
    out += question;
    out += close_turn(format);
    out += open_turn(format, format.assistant_role_name);
    out += thought;
    out += "\n\n";
    out += kSufficiencyInstruction;
    out += "\n\nConfidence:";
    return out;
}

std::string render_reasoning_prompt(const std::string& question,
                                    const std::string& system_prompt,
                                    const ChatFormat& format,
                                    bool nothinking) {
    if (question.empty()) {
        throw Error(ErrorKind::config, "reasoning prompt: empty question");
    }
    format.validate();

    std::string out = open_turn(format, format.system_role_name);
    out += system_prompt.empty() ? kDefaultReasoningSystemPrompt : system_prompt.c_str();
    out += close_turn(format);
    out += open_turn(format, format.user_role_name);
    out += question;
    out += close_turn(format);
    out += open_turn(format, format.assistant_role_name);
    out += format.think_open;
    if (nothinking) {
        out += "\n";
        out += format.think_close;
    }
    return out;
}

ConfidenceScore parse_confidence(const std::string& reply) {
    // Search after the label when present, otherwise the whole reply.
    std::size_t from = 0;
    static const std::string kLabel = "confidence:";
    for (std::size_t i = 0; i + kLabel.size() <= reply.size(); ++i) {
        bool match = true;
        for (std::size_t j = 0; j < kLabel.size(); ++j) {
            if (std::tolower(static_cast<unsigned char>(reply[i + j])) != kLabel[j]) {
                match = false;
                break;
            }
        }
        if (match) {
            from = i + kLabel.size();
            break;
        }
    }

    std::size_t digit = std::string::npos;
    for (std::size_t i = from; i < reply.size(); ++i) {
        if (std::isdigit(static_cast<unsigned char>(reply[i]))) {
            digit = i;
            break;
        }
    }
    if (digit == std::string::npos) {
        throw Error(ErrorKind::parse, "confidence: no number in reply: '" + reply + "'");
    }
    std::size_t begin = digit;
    if (begin > from && reply[begin - 1] == '.') {
        --begin;
    }
    if (begin > from && (reply[begin - 1] == '-' || reply[begin - 1] == '+')) {
        --begin;
    }
    const double parsed = std::strtod(reply.c_str() + begin, nullptr);

    ConfidenceScore score;
    score.raw = reply;
    score.value = parsed < 0.0 ? 0.0 : (parsed > 100.0 ? 100.0 : parsed);
    return score;
}

}  // namespace dtsr
