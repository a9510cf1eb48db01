#pragma once

#include <string>

#include "dtsr/types.hpp"

namespace dtsr {

/// Chat rendering conventions for a model family. Defaults follow the
/// role-header style used by the Qwen-family chat template.
struct ChatFormat {
    std::string turn_open = "<|im_start|>";
    std::string turn_close = "<|im_end|>";
    std::string system_role_name = "system";
    std::string user_role_name = "users";
    std::string assistant_role_name = "assistant";
    std::string think_open = "<think>";
    std::string think_close = "</think>";

    void validate() const;

    static ChatFormat from_json(const std::string& json_text);
    std::string to_json() const;
};

/// Template for the thought-sufficiency check. The body must contain the
/// placeholders {question} and {thought} exactly once each; the primer is
/// appended as the start of the assistant turn so the model completes only
/// the score.
struct PromptTemplate {
    std::string body;
    std::string assistant_primer;

    void validate() const;

    static PromptTemplate sufficiency_default(const ChatFormat& format);
    static PromptTemplate from_json(const std::string& json_text);
};

struct ConfidenceScore {
    double value = 0.0;  // clamped to [0, 100]
    std::string raw;
};

/// Default system line for the main reasoning prompt.
extern const char* const kDefaultReasoningSystemPrompt;
/// Instruction block of the sufficiency check, shared by both check forms.
extern const char* const kSufficiencyInstruction;

/// Third-person check: the thought is quoted as an object inside the user
/// turn and the assistant turn is primed so the reply is a bare score.
std::string render_sufficiency_prompt(const std::string& question,
                                      const std::string& thought,
                                      const ChatFormat& format,
                                      const PromptTemplate& tmpl);

/// First-person variant: the sufficiency instruction is inlined after the
/// in-progress assistant thought, so the model scores itself mid-stream.
std::string render_first_person_prompt(const std::string& question,
                                       const std::string& thought,
                                       const ChatFormat& format);

/// Main reasoning prompt ending at the opened assistant think block. With
/// `nothinking` the think block is primed already closed so generation
/// starts at the conclusion.
std::string render_reasoning_prompt(const std::string& question,
                                    const std::string& system_prompt,
                                    const ChatFormat& format,
                                    bool nothinking);

/// Extract the first real number after an optional "Confidence:" label and
/// clamp it to [0, 100]. Throws Error(parse) when no number is present.
ConfidenceScore parse_confidence(const std::string& reply);

}  // namespace dtsr
