#include "dtsr/answers.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <limits>
#include <optional>
#include <set>
#include <sstream>

#include <json.hpp>

namespace dtsr {

const char* to_string(TaskKind kind) {
    switch (kind) {
        case TaskKind::numeric:          return "numeric";
        case TaskKind::boxed_expression: return "boxed_expression";
        case TaskKind::multiple_choice:  return "multiple_choice";
        case TaskKind::code:             return "code";
    }
    return "unknown";
}

TaskKind task_kind_from_string(const std::string& s) {
    if (s == "numeric") return TaskKind::numeric;
    if (s == "boxed_expression" || s == "boxed") return TaskKind::boxed_expression;
    if (s == "multiple_choice" || s == "mc") return TaskKind::multiple_choice;
    if (s == "code") return TaskKind::code;
    throw Error(ErrorKind::parse, "unknown task kind '" + s + "'");
}

std::vector<Sample> load_dataset(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw Error(ErrorKind::io, "dataset: cannot open " + path);
    }

    std::vector<Sample> samples;
    std::set<std::string> seen_ids;
    std::vector<std::string> problems;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) {
            continue;
        }
        nlohmann::json doc;
        try {
            doc = nlohmann::json::parse(line);
        } catch (const nlohmann::json::parse_error& e) {
            problems.push_back("line " + std::to_string(line_no) + ": " + e.what());
            continue;
        }
        try {
            Sample s;
            s.id = doc.at("id").get<std::string>();
            s.question = doc.at("question").get<std::string>();
            s.gold_answer = doc.value("answer", std::string());
            s.task_kind = task_kind_from_string(doc.value("kind", std::string("boxed_expression")));
            if (!seen_ids.insert(s.id).second) {
                problems.push_back("line " + std::to_string(line_no) + ": duplicate id '" + s.id + "'");
                continue;
            }
            if (s.gold_answer.empty() && s.task_kind != TaskKind::code) {
                problems.push_back("line " + std::to_string(line_no) + ": missing answer for id '" +
                                   s.id + "'");
                continue;
            }
            samples.push_back(std::move(s));
        } catch (const std::exception& e) {
            problems.push_back("line " + std::to_string(line_no) + ": " + e.what());
        }
    }
    if (!problems.empty()) {
        std::string msg = "dataset " + path + ": " + std::to_string(problems.size()) + " bad line(s):";
        for (const auto& p : problems) {
            msg += "\n  " + p;
        }
        throw Error(ErrorKind::parse, msg);
    }
    if (samples.empty()) {
        throw Error(ErrorKind::parse, "dataset " + path + ": no samples");
    }
    return samples;
}

namespace {

bool is_digit(char c) { return std::isdigit(static_cast<unsigned char>(c)) != 0; }

// Last \boxed{...} with balanced braces; walks earlier boxes when the last
// one is unbalanced.
std::string extract_boxed(const std::string& text) {
    static const std::string kBox = "\\boxed{";
    std::vector<std::size_t> starts;
    for (std::size_t pos = text.find(kBox); pos != std::string::npos;
         pos = text.find(kBox, pos + 1)) {
        starts.push_back(pos);
    }
    for (auto it = starts.rbegin(); it != starts.rend(); ++it) {
        std::size_t i = *it + kBox.size();
        int depth = 1;
        std::string content;
        for (; i < text.size(); ++i) {
            const char c = text[i];
            if (c == '{') {
                ++depth;
            } else if (c == '}') {
                if (--depth == 0) {
                    return content;
                }
            }
            content += c;
        }
    }
    return "";
}

// Last number token. Commas count as thousands separators only in groups of
// three; simple a/b fractions stay together; a '-' is a sign only when it is
// not a binary minus. No scientific notation.
std::string extract_numeric(const std::string& text) {
    std::string best;
    std::size_t i = 0;

    auto digits_ahead = [&](std::size_t pos) {
        std::size_t n = 0;
        while (pos + n < text.size() && is_digit(text[pos + n])) {
            ++n;
        }
        return n;
    };

    while (i < text.size()) {
        if (!is_digit(text[i])) {
            ++i;
            continue;
        }
        const std::size_t begin = i;
        const bool negative = begin > 0 && text[begin - 1] == '-' &&
                              (begin == 1 || !is_digit(text[begin - 2]));
        std::string token;
        auto scan_number = [&] {
            bool seen_dot = false;
            while (i < text.size()) {
                const char c = text[i];
                if (is_digit(c)) {
                    token += c;
                    ++i;
                } else if (c == ',' && digits_ahead(i + 1) == 3) {
                    ++i;
                } else if (c == '.' && !seen_dot && i + 1 < text.size() && is_digit(text[i + 1])) {
                    token += c;
                    seen_dot = true;
                    ++i;
                } else {
                    break;
                }
            }
        };
        scan_number();
        if (i + 1 < text.size() && text[i] == '/' && is_digit(text[i + 1])) {
            token += '/';
            ++i;
            scan_number();
        }
        best = (negative ? "-" : "") + token;
    }
    return best;
}

std::string extract_choice(const std::string& text) {
    std::string best;
    for (std::size_t i = 0; i < text.size(); ++i) {
        const char c = text[i];
        if (c < 'A' || c > 'E') {
            continue;
        }
        const bool left_ok = i == 0 || std::isalnum(static_cast<unsigned char>(text[i - 1])) == 0;
        const bool right_ok =
            i + 1 == text.size() || std::isalnum(static_cast<unsigned char>(text[i + 1])) == 0;
        if (left_ok && right_ok) {
            best = std::string(1, c);
        }
    }
    return best;
}

std::string extract_code(const std::string& text) {
    static const std::string kFence = "```";
    const auto last_close = text.rfind(kFence);
    if (last_close == std::string::npos) {
        return text;
    }
    const auto open = text.rfind(kFence, last_close - 1);
    if (open == std::string::npos) {
        return text;
    }
    auto body_start = text.find('\n', open);
    if (body_start == std::string::npos || body_start > last_close) {
        return text;
    }
    return text.substr(body_start + 1, last_close - body_start - 1);
}

struct Rational {
    long long num = 0;
    long long den = 1;
};

// Parses integers, decimals and a/b fractions exactly when they fit in
// long long; nullopt otherwise.
std::optional<Rational> parse_rational(const std::string& s) {
    if (s.empty()) {
        return std::nullopt;
    }
    const auto slash = s.find('/');
    if (slash != std::string::npos) {
        const auto left = parse_rational(s.substr(0, slash));
        const auto right = parse_rational(s.substr(slash + 1));
        if (!left || !right || right->num == 0 || left->den != 1 || right->den != 1) {
            return std::nullopt;
        }
        return Rational{left->num, right->num};
    }
    std::size_t i = 0;
    bool negative = false;
    if (i < s.size() && (s[i] == '-' || s[i] == '+')) {
        negative = s[i] == '-';
        ++i;
    }
    long long num = 0;
    long long den = 1;
    bool any_digit = false;
    bool after_dot = false;
    for (; i < s.size(); ++i) {
        const char c = s[i];
        if (is_digit(c)) {
            if (num > (std::numeric_limits<long long>::max() - 9) / 10) {
                return std::nullopt;
            }
            num = num * 10 + (c - '0');
            if (after_dot) {
                if (den > std::numeric_limits<long long>::max() / 10) {
                    return std::nullopt;
                }
                den *= 10;
            }
            any_digit = true;
        } else if (c == '.' && !after_dot) {
            after_dot = true;
        } else {
            return std::nullopt;
        }
    }
    if (!any_digit) {
        return std::nullopt;
    }
    return Rational{negative ? -num : num, den};
}

std::string normalize_numeric_string(const std::string& s) {
    std::string out;
    for (const char c : s) {
        if (c == ',' || c == '$' || c == ' ') {
            continue;
        }
        out += c;
    }
    while (!out.empty() && out.back() == '.') {
        out.pop_back();
    }
    return out;
}

bool numeric_equal(const std::string& a, const std::string& b) {
    const std::string na = normalize_numeric_string(a);
    const std::string nb = normalize_numeric_string(b);
    if (na.empty() || nb.empty()) {
        return false;
    }
    auto value_of = [](const std::string& s) -> std::optional<long double> {
        if (const auto r = parse_rational(s)) {
            return static_cast<long double>(r->num) / static_cast<long double>(r->den);
        }
        char* end = nullptr;
        const double v = std::strtod(s.c_str(), &end);
        if (end == s.c_str() || *end != '\0') {
            return std::nullopt;
        }
        return static_cast<long double>(v);
    };
    const auto va = value_of(na);
    const auto vb = value_of(nb);
    if (!va || !vb) {
        return false;
    }
    const long double scale = std::max<long double>(
        {1.0L, std::fabs(static_cast<double>(*va)), std::fabs(static_cast<double>(*vb))});
    return std::fabs(static_cast<double>(*va - *vb)) <= 1e-9L * scale;
}

// \frac{a}{b} -> a/b so the numeric fallback can compare simple fractions.
std::string rewrite_frac(const std::string& s) {
    std::string out;
    std::size_t i = 0;
    while (i < s.size()) {
        bool matched = false;
        for (const char* name : {"\\frac{", "\\dfrac{", "\\tfrac{"}) {
            const std::size_t n = std::string(name).size();
            if (s.compare(i, n, name) != 0) {
                continue;
            }
            const auto num_end = s.find('}', i + n);
            if (num_end == std::string::npos || num_end + 1 >= s.size() || s[num_end + 1] != '{') {
                break;
            }
            const auto den_end = s.find('}', num_end + 2);
            if (den_end == std::string::npos) {
                break;
            }
            out += s.substr(i + n, num_end - i - n);
            out += '/';
            out += s.substr(num_end + 2, den_end - num_end - 2);
            i = den_end + 1;
            matched = true;
            break;
        }
        if (!matched) {
            out += s[i++];
        }
    }
    return out;
}

std::string normalize_expression(const std::string& s) {
    std::string out;
    for (const char c : s) {
        if (std::isspace(static_cast<unsigned char>(c)) != 0) {
            continue;
        }
        out += c;
    }
    // strip one layer of redundant outer braces
    while (out.size() >= 2 && out.front() == '{' && out.back() == '}') {
        int depth = 0;
        bool wraps = true;
        for (std::size_t i = 0; i < out.size(); ++i) {
            if (out[i] == '{') {
                ++depth;
            } else if (out[i] == '}') {
                --depth;
                if (depth == 0 && i + 1 != out.size()) {
                    wraps = false;
                    break;
                }
            }
        }
        if (!wraps) {
            break;
        }
        out = out.substr(1, out.size() - 2);
    }
    return out;
}

}  // namespace

std::string extract_answer(const std::string& text, TaskKind kind) {
    switch (kind) {
        case TaskKind::boxed_expression:
            return extract_boxed(text);
        case TaskKind::numeric: {
            const std::string boxed = extract_boxed(text);
            if (!boxed.empty()) {
                const std::string inner = extract_numeric(boxed);
                return inner.empty() ? boxed : inner;
            }
            return extract_numeric(text);
        }
        case TaskKind::multiple_choice: {
            const std::string boxed = extract_boxed(text);
            if (boxed.size() == 1 && boxed[0] >= 'A' && boxed[0] <= 'E') {
                return boxed;
            }
            return extract_choice(boxed.empty() ? text : boxed);
        }
        case TaskKind::code:
            return extract_code(text);
    }
    return "";
}

bool grade(const std::string& pred, const std::string& gold, TaskKind kind) {
    if (pred.empty()) {
        return false;
    }
    switch (kind) {
        case TaskKind::numeric:
            return numeric_equal(pred, gold);
        case TaskKind::boxed_expression: {
            const std::string np = normalize_expression(rewrite_frac(pred));
            const std::string ng = normalize_expression(rewrite_frac(gold));
            if (np == ng) {
                return true;
            }
            return numeric_equal(np, ng);
        }
        case TaskKind::multiple_choice: {
            auto letter = [](const std::string& s) -> char {
                for (const char c : s) {
                    if (std::isalpha(static_cast<unsigned char>(c)) != 0) {
                        return static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
                    }
                }
                return '\0';
            };
            const char lp = letter(pred);
            return lp != '\0' && lp == letter(gold);
        }
        case TaskKind::code:
            // graded externally; recorded verbatim
            return false;
    }
    return false;
}

}  // namespace dtsr
