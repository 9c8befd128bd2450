#pragma once

#include <cerrno>
#include <cstdlib>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "gatescope/text.hpp"
#include "gatescope/util.hpp"

namespace gatescope {

enum class Domain { math, gpqa, factual, geo };

inline const char* to_string(Domain d) {
    switch (d) {
        case Domain::math: return "math";
        case Domain::gpqa: return "gpqa";
        case Domain::factual: return "factual";
        case Domain::geo: return "geo";
    }
    return "?";
}

inline std::optional<Domain> parse_domain(std::string_view s) {
    if (s == "math") return Domain::math;
    if (s == "gpqa") return Domain::gpqa;
    if (s == "factual") return Domain::factual;
    if (s == "geo") return Domain::geo;
    return std::nullopt;
}

inline const std::vector<Domain>& all_domains() {
    static const std::vector<Domain> d{Domain::math, Domain::gpqa, Domain::factual, Domain::geo};
    return d;
}

enum class AnswerRule { numeric_exact, multiple_choice_letter, normalized_string_contains };

inline const char* to_string(AnswerRule r) {
    switch (r) {
        case AnswerRule::numeric_exact: return "numeric_exact";
        case AnswerRule::multiple_choice_letter: return "multiple_choice_letter";
        case AnswerRule::normalized_string_contains: return "normalized_string_contains";
    }
    return "?";
}

inline std::optional<AnswerRule> parse_answer_rule(std::string_view s) {
    if (s == "numeric_exact") return AnswerRule::numeric_exact;
    if (s == "multiple_choice_letter") return AnswerRule::multiple_choice_letter;
    if (s == "normalized_string_contains") return AnswerRule::normalized_string_contains;
    return std::nullopt;
}

inline AnswerRule default_rule_for(Domain d) {
    switch (d) {
        case Domain::math: return AnswerRule::numeric_exact;
        case Domain::gpqa: return AnswerRule::multiple_choice_letter;
        case Domain::factual:
        case Domain::geo: return AnswerRule::normalized_string_contains;
    }
    return AnswerRule::normalized_string_contains;
}

struct Probe {
    std::string id;
    Domain domain = Domain::factual;
    std::string question_text;
    std::string reference_answer;
    AnswerRule answer_rule = AnswerRule::normalized_string_contains;
};

class ProbeError : public Error {
public:
    using Error::Error;
};

struct ProbeSuite {
    std::string name;
    std::vector<Probe> probes;

    std::map<Domain, std::size_t> domain_counts() const {
        std::map<Domain, std::size_t> counts;
        for (Domain d : all_domains()) counts[d] = 0;
        for (const auto& p : probes) ++counts[p.domain];
        return counts;
    }

    const Probe* find(std::string_view id) const {
        for (const auto& p : probes) {
            if (p.id == id) return &p;
        }
        return nullptr;
    }

    std::vector<std::string> validation_warnings() const {
        std::vector<std::string> w;
        for (const auto& [d, n] : domain_counts()) {
            if (n == 0) w.push_back(std::string("suite has no probes in domain ") + to_string(d));
        }
        return w;
    }
};

namespace detail {

inline Probe probe_from_json(const nlohmann::json& j, std::size_t index) {
    const std::string where = "probe[" + std::to_string(index) + "]";
    if (!j.is_object()) throw ProbeError(where + ": entry is not an object");
    auto need_string = [&](const char* field) {
        if (!j.contains(field) || !j.at(field).is_string()) {
            throw ProbeError(where + ": missing or non-string field \"" + field + "\"");
        }
        return j.at(field).get<std::string>();
    };
    Probe p;
    p.id = need_string("id");
    const std::string domain = need_string("domain");
    const auto d = parse_domain(domain);
    if (!d) throw ProbeError(where + ": unknown domain \"" + domain + "\"");
    p.domain = *d;
    p.question_text = need_string("question");
    p.reference_answer = need_string("reference_answer");
    if (p.id.empty()) throw ProbeError(where + ": empty id");
    if (p.question_text.empty()) throw ProbeError(where + ": empty question");
    if (p.reference_answer.empty()) throw ProbeError(where + ": empty reference_answer");
    if (j.contains("answer_rule")) {
        if (!j.at("answer_rule").is_string()) {
            throw ProbeError(where + ": answer_rule must be a string");
        }
        const std::string rule = j.at("answer_rule").get<std::string>();
        const auto r = parse_answer_rule(rule);
        if (!r) throw ProbeError(where + ": unknown answer_rule \"" + rule + "\"");
        p.answer_rule = *r;
    } else {
        p.answer_rule = default_rule_for(p.domain);
    }
    return p;
}

}  // namespace detail

inline ProbeSuite load_suite_from_json(const nlohmann::json& doc, const std::string& name) {
    if (!doc.is_array()) throw ProbeError(name + ": probe file must be a JSON array");
    ProbeSuite suite;
    suite.name = name;
    std::set<std::string> seen;
    std::vector<std::string> dups;
    for (std::size_t i = 0; i < doc.size(); ++i) {
        Probe p = detail::probe_from_json(doc[i], i);
        if (!seen.insert(p.id).second) dups.push_back(p.id);
        suite.probes.push_back(std::move(p));
    }
    if (!dups.empty()) {
        std::string msg = name + ": duplicate probe ids:";
        for (const auto& d : dups) msg += " " + d;
        throw ProbeError(msg);
    }
    return suite;
}

inline ProbeSuite load_suite(const std::string& path) {
    const std::string text = read_file(path);
    nlohmann::json doc = nlohmann::json::parse(text, nullptr, false);
    if (doc.is_discarded()) throw ProbeError(path + ": file is not valid JSON");
    return load_suite_from_json(doc, path);
}

inline nlohmann::json suite_to_json(const ProbeSuite& suite) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& p : suite.probes) {
        arr.push_back({{"id", p.id},
                       {"domain", to_string(p.domain)},
                       {"question", p.question_text},
                       {"reference_answer", p.reference_answer},
                       {"answer_rule", to_string(p.answer_rule)}});
    }
    return arr;
}

struct PromptEnvelope {
    std::string system_message;
    std::string user_message;
    bool requires_structured_output = true;
};

inline const char* dcc_system_message() {
    return "You are a meticulous reasoning engine. Your task is to solve multi-step problems "
           "by thinking step-by-step and to clearly articulate your reasoning process. "
           "Your final output must be a single JSON object.";
}

// Marker used by the simulator to recover the live question from a rendered
// prompt. The template places the live question before the worked example,
// so the first occurrence is always the real one.
inline const char* dcc_question_prefix() { return "Question: "; }

inline PromptEnvelope render_prompt(const Probe& probe) {
    if (probe.question_text.empty()) throw ProbeError("render_prompt: empty question_text");
    PromptEnvelope env;
    env.system_message = dcc_system_message();
    env.user_message =
        "Based on the following question, provide your step-by-step reasoning path and the "
        "final answer.\n"
        "\n"
        "Question: " + probe.question_text + "\n"
        "\n"
        "Required Output Format:\n"
        "Your entire response must be a single JSON object containing the following two keys:\n"
        "\n"
        "1. knowledge_path: An array of strings. Each string in the array should represent a "
        "distinct step in your reasoning process.\n"
        "\n"
        "2. final_answer: A string containing the final answer.\n"
        "\n"
        "Example:\n"
        "\n"
        "Question: What is the highest geographic feature associated with the origin area of "
        "the Starbucks corporation?\n"
        "\n"
        "Your Output should be:\n"
        "\n"
        "{ \"knowledge_path\": [\"Starbucks originated in Seattle, Washington.\", \"The highest "
        "geographic feature in the state of Washington is Mount Rainier.\"], \"final_answer\": "
        "\"Mount Rainier\" }\n"
        "\n"
        "Now, please apply this reasoning process and format to the following question.\n"
        "\n"
        "Question: " + probe.question_text;
    return env;
}

namespace detail {

inline bool parse_integer(std::string_view s, long long& out) {
    const std::string t = trim(s);
    if (t.empty()) return false;
    errno = 0;
    char* end = nullptr;
    const long long v = std::strtoll(t.c_str(), &end, 10);
    if (errno != 0 || end != t.c_str() + t.size()) return false;
    out = v;
    return true;
}

inline bool parse_decimal(std::string_view s, double& out) {
    const std::string t = trim(s);
    if (t.empty()) return false;
    errno = 0;
    char* end = nullptr;
    const double v = std::strtod(t.c_str(), &end);
    if (errno != 0 || end != t.c_str() + t.size()) return false;
    out = v;
    return true;
}

inline std::string letters_only(std::string_view s) {
    std::string out;
    for (char c : s) {
        if (std::isalnum(static_cast<unsigned char>(c))) {
            out.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
        }
    }
    return out;
}

}  // namespace detail

inline bool validate_answer(const Probe& probe, std::string_view candidate) {
    switch (probe.answer_rule) {
        case AnswerRule::numeric_exact: {
            long long ci = 0, ri = 0;
            if (detail::parse_integer(candidate, ci) &&
                detail::parse_integer(probe.reference_answer, ri)) {
                return ci == ri;
            }
            double cd = 0, rd = 0;
            if (detail::parse_decimal(candidate, cd) &&
                detail::parse_decimal(probe.reference_answer, rd)) {
                // tolerance only guards decimal round-trips; AIME answers stay integral
                return std::abs(cd - rd) <= 1e-9;
            }
            return false;
        }
        case AnswerRule::multiple_choice_letter: {
            const std::string c = detail::letters_only(candidate);
            const std::string r = detail::letters_only(probe.reference_answer);
            return c.size() == 1 && c == r;
        }
        case AnswerRule::normalized_string_contains: {
            const std::string c = normalize_text(candidate);
            const std::string r = normalize_text(probe.reference_answer);
            if (c.empty() || r.empty()) return false;
            return c.find(r) != std::string::npos || r.find(c) != std::string::npos;
        }
    }
    return false;
}

}  // namespace gatescope
