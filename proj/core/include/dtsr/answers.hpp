#pragma once

#include <string>
#include <vector>

#include "dtsr/types.hpp"

namespace dtsr {

enum class TaskKind { numeric, boxed_expression, multiple_choice, code };

const char* to_string(TaskKind kind);
TaskKind task_kind_from_string(const std::string& s);

/// Benchmark input row.
struct Sample {
    std::string id;
    std::string question;
    std::string gold_answer;
    TaskKind task_kind = TaskKind::boxed_expression;
};

/// Load a JSONL dataset (one object per line: id/question/answer/kind).
/// Per-line parse errors are collected and reported together, with line
/// numbers, as a single Error(parse).
std::vector<Sample> load_dataset(const std::string& path);

/// Pull the final answer out of generated text. Returns "" when nothing is
/// found (an empty extraction grades as incorrect).
///  - boxed_expression: content of the last balanced-brace \boxed{...};
///  - numeric: last number token, commas/currency stripped;
///  - multiple_choice: last standalone letter A-E;
///  - code: last fenced code block, else the text verbatim.
std::string extract_answer(const std::string& text, TaskKind kind);

/// Grade a prediction against gold. Numeric comparison parses simple
/// fractions/decimals and compares with tolerance 1e-9; boxed expressions
/// compare after whitespace/brace normalization with a numeric fallback.
bool grade(const std::string& pred, const std::string& gold, TaskKind kind);

}  // namespace dtsr
