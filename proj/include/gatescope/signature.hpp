#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <fstream>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "gatescope/probe.hpp"
#include "gatescope/records.hpp"
#include "gatescope/stats.hpp"
#include "gatescope/util.hpp"

namespace gatescope {

inline constexpr double kContrastiveEpsilon = 1e-9;
inline constexpr double kCohensDCap = 1e6;
inline constexpr int kOverlapBins = 10;
inline constexpr std::size_t kBaseFeatureCount = 11;

struct ParsedResponse {
    std::vector<std::string> knowledge_path;
    std::string final_answer;
    int parse_success = 0;
    double parse_degree = 0.0;
};

struct BaseFeatures {
    double answer_match = 0;
    double answer_position = 0;
    double depth = 0;
    double mean_step_length = 0;
    double step_length_var = 0;
    double response_length = 0;
    double density = 0;
    double has_numeric = 0;
    double has_latex = 0;
    double parse_success = 0;
    double parse_degree = 0;

    std::array<double, kBaseFeatureCount> to_array() const {
        return {answer_match, answer_position, depth,        mean_step_length,
                step_length_var, response_length, density,   has_numeric,
                has_latex,       parse_success,   parse_degree};
    }
};

inline const std::array<const char*, kBaseFeatureCount>& base_feature_names() {
    static const std::array<const char*, kBaseFeatureCount> names{
        "answer_match",   "answer_position", "depth",           "mean_step_length",
        "step_length_var", "response_length", "density",        "has_numeric",
        "has_latex",       "parse_success",   "parse_degree"};
    return names;
}

struct ContrastiveStats {
    double mean_diff = 0;
    double relative_diff = 0;
    double cohens_d = 0;
    double std_ratio = 0;
    double overlap = 0;
    int rank = 1;
};

struct SignatureRow {
    std::string model_name;
    std::string probe_id;
    int repetition_index = 0;
    BaseFeatures base;
    std::array<ContrastiveStats, kBaseFeatureCount> contrastive;

    std::vector<double> flatten() const {
        std::vector<double> v;
        v.reserve(kBaseFeatureCount * 7);
        for (double x : base.to_array()) v.push_back(x);
        for (const auto& c : contrastive) {
            v.push_back(c.mean_diff);
            v.push_back(c.relative_diff);
            v.push_back(c.cohens_d);
            v.push_back(c.std_ratio);
            v.push_back(c.overlap);
        }
        for (const auto& c : contrastive) v.push_back(static_cast<double>(c.rank));
        return v;
    }
};

inline std::vector<std::string> signature_feature_schema() {
    std::vector<std::string> cols;
    for (const char* n : base_feature_names()) cols.emplace_back(n);
    for (const char* n : base_feature_names()) {
        for (const char* suffix : {"mean_diff", "relative_diff", "cohens_d", "std_ratio", "overlap"}) {
            cols.push_back(std::string(n) + "__" + suffix);
        }
    }
    for (const char* n : base_feature_names()) cols.push_back(std::string(n) + "__rank");
    return cols;
}

struct SignatureMatrix {
    std::vector<SignatureRow> rows;

    std::vector<std::string> schema() const { return signature_feature_schema(); }
};

// ---------------------------------------------------------------------------
// Structured-response parsing

namespace detail {

// Removes markdown code-fence lines, keeping the fenced payload.
inline std::string strip_code_fences(std::string_view raw) {
    if (raw.find("```") == std::string_view::npos) return std::string(raw);
    std::string out;
    out.reserve(raw.size());
    std::size_t pos = 0;
    while (pos < raw.size()) {
        std::size_t eol = raw.find('\n', pos);
        if (eol == std::string_view::npos) eol = raw.size();
        std::string_view line = raw.substr(pos, eol - pos);
        std::string_view t = line;
        while (!t.empty() && (t.front() == ' ' || t.front() == '\t')) t.remove_prefix(1);
        if (t.substr(0, 3) != "```") {
            out.append(line);
            out.push_back('\n');
        }
        pos = eol + 1;
    }
    return out;
}

// Finds the first balanced top-level {...} that parses as JSON. Brace
// matching is string-aware so braces inside values do not end the scan.
inline bool extract_first_object(std::string_view text, nlohmann::json& out) {
    for (std::size_t start = 0; start < text.size(); ++start) {
        if (text[start] != '{') continue;
        int depth = 0;
        bool in_string = false;
        bool escaped = false;
        for (std::size_t i = start; i < text.size(); ++i) {
            const char c = text[i];
            if (in_string) {
                if (escaped) {
                    escaped = false;
                } else if (c == '\\') {
                    escaped = true;
                } else if (c == '"') {
                    in_string = false;
                }
                continue;
            }
            if (c == '"') {
                in_string = true;
            } else if (c == '{') {
                ++depth;
            } else if (c == '}') {
                --depth;
                if (depth == 0) {
                    nlohmann::json j = nlohmann::json::parse(
                        text.substr(start, i - start + 1), nullptr, false);
                    if (!j.is_discarded() && j.is_object()) {
                        out = std::move(j);
                        return true;
                    }
                    break;  // balanced but unparsable; try the next '{'
                }
            }
        }
    }
    return false;
}

}  // namespace detail

inline ParsedResponse parse_structured(std::string_view raw_text) {
    ParsedResponse r;
    const std::string text = detail::strip_code_fences(raw_text);
    nlohmann::json obj;
    if (!detail::extract_first_object(text, obj)) {
        return r;  // parse_success 0, parse_degree 0
    }
    bool path_ok = false;
    if (obj.contains("knowledge_path") && obj.at("knowledge_path").is_array()) {
        path_ok = true;
        for (const auto& e : obj.at("knowledge_path")) {
            if (!e.is_string()) {
                path_ok = false;
                break;
            }
        }
        if (path_ok) {
            for (const auto& e : obj.at("knowledge_path")) {
                r.knowledge_path.push_back(e.get<std::string>());
            }
        }
    }
    bool answer_ok = obj.contains("final_answer") && obj.at("final_answer").is_string();
    if (answer_ok) r.final_answer = obj.at("final_answer").get<std::string>();

    if (path_ok && answer_ok) {
        r.parse_success = 1;
        r.parse_degree = 1.0;
    } else if (path_ok || answer_ok) {
        r.parse_degree = 0.5;
    } else {
        r.parse_degree = 0.25;  // an object parsed, but neither field conforms
    }
    return r;
}

// ---------------------------------------------------------------------------
// Base feature extraction

inline const std::array<const char*, 6>& latex_markers() {
    static const std::array<const char*, 6> markers{"\\(", "\\[", "$", "\\frac", "\\sqrt", "\\text"};
    return markers;
}

inline BaseFeatures extract_base(const ParsedResponse& parsed, std::string_view raw_text,
                                 const Probe& probe) {
    BaseFeatures f;
    if (!parsed.final_answer.empty() && validate_answer(probe, parsed.final_answer)) {
        f.answer_match = 1;
        f.answer_position = 1;
    } else if (validate_answer(probe, raw_text)) {
        f.answer_match = 1;
        f.answer_position = 0;
    }
    f.depth = static_cast<double>(parsed.knowledge_path.size());
    if (!parsed.knowledge_path.empty()) {
        std::vector<double> lens;
        lens.reserve(parsed.knowledge_path.size());
        for (const auto& s : parsed.knowledge_path) lens.push_back(static_cast<double>(s.size()));
        f.mean_step_length = mean_of(lens);
        f.step_length_var = variance_population(lens);
    }
    f.response_length = static_cast<double>(raw_text.size());
    f.density = f.response_length / std::max(f.depth, 1.0);
    for (char c : raw_text) {
        if (c >= '0' && c <= '9') {
            f.has_numeric = 1;
            break;
        }
    }
    for (const char* m : latex_markers()) {
        if (raw_text.find(m) != std::string_view::npos) {
            f.has_latex = 1;
            break;
        }
    }
    f.parse_success = parsed.parse_success;
    f.parse_degree = parsed.parse_degree;
    return f;
}

// ---------------------------------------------------------------------------
// Contrastive statistics

namespace detail {

struct FeatureColumn {
    std::vector<double> values;

    double mean() const { return mean_of(values); }
    // sample std; groups below 2 observations contribute 0 spread
    double spread() const { return values.size() < 2 ? 0.0 : stddev_sample(values); }
};

inline double overlap_coefficient(const std::vector<double>& a, const std::vector<double>& b) {
    double lo = a[0], hi = a[0];
    for (double x : a) { lo = std::min(lo, x); hi = std::max(hi, x); }
    for (double x : b) { lo = std::min(lo, x); hi = std::max(hi, x); }
    if (hi <= lo) return 1.0;  // all mass in one point for both groups
    std::array<double, kOverlapBins> ha{}, hb{};
    auto bin_of = [&](double x) {
        int b = static_cast<int>((x - lo) / (hi - lo) * kOverlapBins);
        return std::clamp(b, 0, kOverlapBins - 1);
    };
    for (double x : a) ha[bin_of(x)] += 1.0 / static_cast<double>(a.size());
    for (double x : b) hb[bin_of(x)] += 1.0 / static_cast<double>(b.size());
    double ov = 0;
    for (int i = 0; i < kOverlapBins; ++i) ov += std::min(ha[i], hb[i]);
    return ov;
}

}  // namespace detail

// Per-feature samples of one model on one probe.
using FeatureSamples = std::vector<BaseFeatures>;

// Contrastive block of the target model against every other model's samples
// on the same probe. other_models maps model name -> samples and must hold at
// least one non-empty entry.
inline std::array<ContrastiveStats, kBaseFeatureCount> contrastive_features(
    const FeatureSamples& target, const std::map<std::string, FeatureSamples>& other_models,
    const std::string& target_model_name) {
    if (target.empty()) throw Error("contrastive_features: no target samples");
    bool any_other = false;
    for (const auto& [name, samples] : other_models) {
        if (name != target_model_name && !samples.empty()) any_other = true;
    }
    if (!any_other) throw Error("contrastive_features: no other-model samples");

    std::array<ContrastiveStats, kBaseFeatureCount> out{};
    for (std::size_t f = 0; f < kBaseFeatureCount; ++f) {
        detail::FeatureColumn t, pooled;
        for (const auto& s : target) t.values.push_back(s.to_array()[f]);
        std::vector<std::pair<double, std::string>> means;  // (mean, model), target included
        means.emplace_back(t.mean(), target_model_name);
        for (const auto& [name, samples] : other_models) {
            if (name == target_model_name || samples.empty()) continue;
            detail::FeatureColumn col;
            for (const auto& s : samples) {
                col.values.push_back(s.to_array()[f]);
                pooled.values.push_back(s.to_array()[f]);
            }
            means.emplace_back(col.mean(), name);
        }

        ContrastiveStats c;
        const double mean_t = t.mean();
        const double mean_o = pooled.mean();
        c.mean_diff = mean_t - mean_o;
        c.relative_diff = c.mean_diff / (std::abs(mean_o) + kContrastiveEpsilon);

        const double st = t.spread(), so = pooled.spread();
        const double nt = static_cast<double>(t.values.size());
        const double no = static_cast<double>(pooled.values.size());
        const double dof = std::max(nt + no - 2.0, 1.0);
        const double pooled_std =
            std::sqrt(((nt - 1.0) * st * st + (no - 1.0) * so * so) / dof);
        if (pooled_std > 0) {
            c.cohens_d = c.mean_diff / pooled_std;
        } else {
            c.cohens_d = c.mean_diff / kContrastiveEpsilon;
        }
        c.cohens_d = std::clamp(c.cohens_d, -kCohensDCap, kCohensDCap);
        c.std_ratio = st / (so + kContrastiveEpsilon);
        c.overlap = detail::overlap_coefficient(t.values, pooled.values);

        std::sort(means.begin(), means.end(), [](const auto& a, const auto& b) {
            if (a.first != b.first) return a.first > b.first;
            return a.second < b.second;
        });
        for (std::size_t i = 0; i < means.size(); ++i) {
            if (means[i].second == target_model_name) {
                c.rank = static_cast<int>(i + 1);
                break;
            }
        }
        out[f] = c;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Matrix assembly

// Baseline base-feature samples per model per probe; the contrastive
// reference. Persisted with the classifier store so audits recompute the
// same contrastive columns later.
struct ReferenceBank {
    std::map<std::string, std::map<std::string, FeatureSamples>> samples;  // model -> probe -> rows

    static ReferenceBank from_records(const std::vector<CallRecord>& records,
                                      const ProbeSuite& suite) {
        ReferenceBank bank;
        for (const auto& r : records) {
            if (!r.ok()) continue;
            const Probe* p = suite.find(r.probe_id);
            if (!p) continue;
            bank.samples[r.model][r.probe_id].push_back(
                extract_base(parse_structured(r.raw_text), r.raw_text, *p));
        }
        return bank;
    }

    nlohmann::json to_json() const {
        nlohmann::json j = nlohmann::json::object();
        for (const auto& [model, probes] : samples) {
            nlohmann::json pj = nlohmann::json::object();
            for (const auto& [probe, rows] : probes) {
                nlohmann::json arr = nlohmann::json::array();
                for (const auto& b : rows) {
                    const auto a = b.to_array();
                    arr.push_back(std::vector<double>(a.begin(), a.end()));
                }
                pj[probe] = std::move(arr);
            }
            j[model] = std::move(pj);
        }
        return j;
    }

    static ReferenceBank from_json(const nlohmann::json& j) {
        ReferenceBank bank;
        for (auto it = j.begin(); it != j.end(); ++it) {
            for (auto pit = it.value().begin(); pit != it.value().end(); ++pit) {
                FeatureSamples rows;
                for (const auto& arr : pit.value()) {
                    const auto v = arr.get<std::vector<double>>();
                    if (v.size() != kBaseFeatureCount) throw Error("reference bank: bad row width");
                    BaseFeatures b;
                    b.answer_match = v[0];
                    b.answer_position = v[1];
                    b.depth = v[2];
                    b.mean_step_length = v[3];
                    b.step_length_var = v[4];
                    b.response_length = v[5];
                    b.density = v[6];
                    b.has_numeric = v[7];
                    b.has_latex = v[8];
                    b.parse_success = v[9];
                    b.parse_degree = v[10];
                    rows.push_back(b);
                }
                bank.samples[it.key()][pit.key()] = std::move(rows);
            }
        }
        return bank;
    }
};

// One row per accepted record; contrastive columns computed against the
// reference bank. Records whose probe_id is unknown are skipped with a
// warning; rows keep the input order.
inline SignatureMatrix build_matrix(const std::vector<CallRecord>& records,
                                    const ProbeSuite& suite, const ReferenceBank& reference,
                                    std::vector<std::string>* warnings = nullptr) {
    SignatureMatrix m;
    std::map<std::pair<std::string, std::string>, std::array<ContrastiveStats, kBaseFeatureCount>>
        block_cache;
    std::map<std::pair<std::string, std::string>, FeatureSamples> group_bases;

    struct Pending {
        std::size_t record_index;
        BaseFeatures base;
    };
    std::vector<Pending> pending;
    for (std::size_t i = 0; i < records.size(); ++i) {
        const auto& r = records[i];
        if (!r.ok()) {
            if (warnings) {
                warnings->push_back("record " + std::to_string(i) + " skipped: outcome " +
                                    to_string(r.outcome));
            }
            continue;
        }
        const Probe* p = suite.find(r.probe_id);
        if (!p) {
            if (warnings) {
                warnings->push_back("record " + std::to_string(i) + " skipped: unknown probe_id " +
                                    r.probe_id);
            }
            continue;
        }
        const BaseFeatures base = extract_base(parse_structured(r.raw_text), r.raw_text, *p);
        group_bases[{r.model, r.probe_id}].push_back(base);
        pending.push_back({i, base});
    }

    for (const auto& item : pending) {
        const auto& r = records[item.record_index];
        const std::pair<std::string, std::string> key{r.model, r.probe_id};
        auto cached = block_cache.find(key);
        if (cached == block_cache.end()) {
            std::map<std::string, FeatureSamples> others;
            auto ref_it = reference.samples.end();
            for (auto it = reference.samples.begin(); it != reference.samples.end(); ++it) {
                if (it->first == r.model) {
                    ref_it = it;
                    continue;
                }
                auto pit = it->second.find(r.probe_id);
                if (pit != it->second.end() && !pit->second.empty()) {
                    others[it->first] = pit->second;
                }
            }
            (void)ref_it;
            std::array<ContrastiveStats, kBaseFeatureCount> block{};
            if (!others.empty()) {
                block = contrastive_features(group_bases[key], others, r.model);
            } else if (warnings) {
                warnings->push_back("no reference samples for probe " + r.probe_id +
                                    "; contrastive columns zeroed");
            }
            cached = block_cache.emplace(key, block).first;
        }
        SignatureRow row;
        row.model_name = r.model;
        row.probe_id = r.probe_id;
        row.repetition_index = r.repetition_index;
        row.base = item.base;
        row.contrastive = cached->second;
        m.rows.push_back(std::move(row));
    }
    return m;
}

// ---------------------------------------------------------------------------
// CSV persistence (header row + sidecar schema file)

inline std::string csv_escape(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += "\"\"";
        else out.push_back(c);
    }
    out += "\"";
    return out;
}

inline void save_matrix_csv(const SignatureMatrix& m, const std::string& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw Error("cannot write " + path);
    out << "model_name,probe_id,repetition";
    const auto schema = signature_feature_schema();
    for (const auto& c : schema) out << ',' << c;
    out << '\n';
    out.precision(17);
    for (const auto& row : m.rows) {
        out << csv_escape(row.model_name) << ',' << csv_escape(row.probe_id) << ','
            << row.repetition_index;
        for (double v : row.flatten()) out << ',' << v;
        out << '\n';
    }
    nlohmann::json sidecar = {{"key_columns", {"model_name", "probe_id", "repetition"}},
                              {"feature_columns", schema}};
    write_file(path + ".schema.json", sidecar.dump(2) + "\n");
}

}  // namespace gatescope
