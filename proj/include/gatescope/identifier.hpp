#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "gatescope/boosting.hpp"
#include "gatescope/signature.hpp"
#include "gatescope/util.hpp"

namespace gatescope {

enum class Difficulty { automatic, easy, medium, hard };

inline const char* to_string(Difficulty d) {
    switch (d) {
        case Difficulty::automatic: return "auto";
        case Difficulty::easy: return "easy";
        case Difficulty::medium: return "medium";
        case Difficulty::hard: return "hard";
    }
    return "?";
}

inline Difficulty parse_difficulty(std::string_view s) {
    if (s == "auto") return Difficulty::automatic;
    if (s == "easy") return Difficulty::easy;
    if (s == "medium") return Difficulty::medium;
    if (s == "hard") return Difficulty::hard;
    throw Error("unknown difficulty: " + std::string(s));
}

struct TrainingConfig {
    int train_per_cell = 10;
    int test_per_cell = 2;
    double oversample_factor = 20.0;
    Difficulty difficulty = Difficulty::automatic;
    TreeParams tree;
    std::uint64_t seed = 20250825;
};

inline void to_json(nlohmann::json& j, const TrainingConfig& c) {
    j = {{"train_per_cell", c.train_per_cell},
         {"test_per_cell", c.test_per_cell},
         {"oversample_factor", c.oversample_factor},
         {"difficulty", to_string(c.difficulty)},
         {"tree", c.tree},
         {"seed", c.seed}};
}

inline void from_json(const nlohmann::json& j, TrainingConfig& c) {
    c.train_per_cell = j.value("train_per_cell", 10);
    c.test_per_cell = j.value("test_per_cell", 2);
    c.oversample_factor = j.value("oversample_factor", 20.0);
    c.difficulty = parse_difficulty(j.value("difficulty", std::string{"auto"}));
    c.tree = j.value("tree", TreeParams{});
    c.seed = j.value("seed", std::uint64_t{20250825});
}

// Positive-class weight from the post-oversampling negative:positive ratio.
inline double pos_weight(Difficulty d, double rho) {
    if (rho <= 0) throw Error("pos_weight: rho must be positive");
    switch (d) {
        case Difficulty::easy: return std::sqrt(rho);
        case Difficulty::medium: return std::pow(rho, 0.7);
        case Difficulty::hard: return std::pow(rho, 0.9);
        case Difficulty::automatic: break;
    }
    throw Error("pos_weight: difficulty not resolved");
}

// ---------------------------------------------------------------------------
// Threshold sweep

struct ThresholdPolicy {
    enum class Objective { f1, recall };
    Objective objective = Objective::f1;
    double min_precision = 0.5;

    static ThresholdPolicy for_difficulty(Difficulty d) {
        ThresholdPolicy p;
        if (d == Difficulty::hard) {
            p.objective = Objective::recall;
            p.min_precision = 0.35;
        }
        return p;
    }

    static std::vector<double> grid() {
        std::vector<double> g;
        for (int i = 10; i <= 95; i += 5) g.push_back(static_cast<double>(i) / 100.0);
        return g;
    }
};

struct BinaryMetrics {
    long tp = 0, fp = 0, fn = 0, tn = 0;
    double precision = 0, recall = 0, f1 = 0;
};

// Positive prediction rule: score >= threshold.
inline BinaryMetrics metrics_at(const std::vector<double>& scores, const std::vector<int>& labels,
                                double threshold) {
    if (scores.size() != labels.size()) throw Error("metrics_at: size mismatch");
    BinaryMetrics m;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        const bool pred = scores[i] >= threshold;
        const bool truth = labels[i] != 0;
        if (pred && truth) ++m.tp;
        else if (pred && !truth) ++m.fp;
        else if (!pred && truth) ++m.fn;
        else ++m.tn;
    }
    m.precision = (m.tp + m.fp) ? static_cast<double>(m.tp) / static_cast<double>(m.tp + m.fp) : 0.0;
    m.recall = (m.tp + m.fn) ? static_cast<double>(m.tp) / static_cast<double>(m.tp + m.fn) : 0.0;
    m.f1 = (m.precision + m.recall) > 0
               ? 2.0 * m.precision * m.recall / (m.precision + m.recall)
               : 0.0;
    return m;
}

struct SweepResult {
    double threshold = 0.5;
    double precision = 0;
    double recall = 0;
    double f1 = 0;
    bool unconstrained = false;  // no grid point met min_precision
};

inline SweepResult sweep_threshold(const std::vector<double>& scores,
                                   const std::vector<int>& labels, const ThresholdPolicy& policy) {
    if (scores.empty()) throw Error("sweep_threshold: empty input");
    if (scores.size() != labels.size()) throw Error("sweep_threshold: size mismatch");

    std::optional<SweepResult> best;           // among thresholds meeting min_precision
    std::optional<SweepResult> best_fallback;  // maximum precision otherwise
    for (double t : ThresholdPolicy::grid()) {
        const BinaryMetrics m = metrics_at(scores, labels, t);
        SweepResult r;
        r.threshold = t;
        r.precision = m.precision;
        r.recall = m.recall;
        r.f1 = m.f1;
        const double objective =
            policy.objective == ThresholdPolicy::Objective::recall ? m.recall : m.f1;
        if (m.precision >= policy.min_precision) {
            const double best_objective =
                !best ? -1.0
                      : (policy.objective == ThresholdPolicy::Objective::recall ? best->recall
                                                                                : best->f1);
            if (objective > best_objective) best = r;  // ascending grid keeps lowest tie
        }
        if (!best_fallback || m.precision > best_fallback->precision) best_fallback = r;
    }
    if (best) return *best;
    best_fallback->unconstrained = true;
    return *best_fallback;
}

// ---------------------------------------------------------------------------
// Dataset split

struct DatasetSplit {
    SignatureMatrix train;
    SignatureMatrix test;
};

// Deterministic 10/2 per-(model, probe) split; with more repetitions than
// train+test the surplus rows are dropped so cells stay balanced.
inline DatasetSplit split_dataset(const SignatureMatrix& matrix, const TrainingConfig& config) {
    std::map<std::pair<std::string, std::string>, std::vector<std::size_t>> cells;
    for (std::size_t i = 0; i < matrix.rows.size(); ++i) {
        cells[{matrix.rows[i].model_name, matrix.rows[i].probe_id}].push_back(i);
    }
    DatasetSplit split;
    const std::size_t need =
        static_cast<std::size_t>(config.train_per_cell + config.test_per_cell);
    for (auto& [key, idx] : cells) {
        if (idx.size() < need) {
            throw Error("cell (" + key.first + ", " + key.second + ") has " +
                        std::to_string(idx.size()) + " rows; need " + std::to_string(need));
        }
        std::mt19937_64 rng(mix_hash(config.seed, mix_hash(fnv1a64(key.first), fnv1a64(key.second))));
        detail::deterministic_shuffle(idx, rng);
        for (int k = 0; k < config.train_per_cell; ++k) {
            split.train.rows.push_back(matrix.rows[idx[static_cast<std::size_t>(k)]]);
        }
        for (int k = 0; k < config.test_per_cell; ++k) {
            split.test.rows.push_back(
                matrix.rows[idx[static_cast<std::size_t>(config.train_per_cell + k)]]);
        }
    }
    return split;
}

// ---------------------------------------------------------------------------
// One-vs-rest training

struct ModelClassifier {
    std::string model_name;
    BoostedClassifier booster;
    double threshold = 0.5;
    Difficulty difficulty = Difficulty::medium;
    std::vector<std::string> feature_schema;
    std::string config_digest;
    SweepResult sweep;

    double proba(const std::vector<double>& features) const {
        return booster.predict_proba(features);
    }
    double proba(const SignatureRow& row) const { return proba(row.flatten()); }
    bool fires(const std::vector<double>& features) const { return proba(features) >= threshold; }
    bool fires(const SignatureRow& row) const { return fires(row.flatten()); }

    nlohmann::json to_json() const {
        nlohmann::json sj = {{"threshold", sweep.threshold},
                             {"precision", sweep.precision},
                             {"recall", sweep.recall},
                             {"f1", sweep.f1},
                             {"unconstrained", sweep.unconstrained}};
        return {{"model_name", model_name},
                {"ensemble", booster.to_json()},
                {"threshold", threshold},
                {"difficulty", to_string(difficulty)},
                {"feature_schema", feature_schema},
                {"config_digest", config_digest},
                {"holdout", std::move(sj)}};
    }

    static ModelClassifier from_json(const nlohmann::json& j) {
        ModelClassifier c;
        j.at("model_name").get_to(c.model_name);
        c.booster = BoostedClassifier::from_json(j.at("ensemble"));
        c.threshold = j.at("threshold").get<double>();
        c.difficulty = parse_difficulty(j.at("difficulty").get<std::string>());
        c.feature_schema = j.value("feature_schema", std::vector<std::string>{});
        c.config_digest = j.value("config_digest", std::string{});
        if (j.contains("holdout")) {
            const auto& h = j.at("holdout");
            c.sweep.threshold = h.value("threshold", c.threshold);
            c.sweep.precision = h.value("precision", 0.0);
            c.sweep.recall = h.value("recall", 0.0);
            c.sweep.f1 = h.value("f1", 0.0);
            c.sweep.unconstrained = h.value("unconstrained", false);
        }
        return c;
    }
};

namespace detail {

inline constexpr int kPreliminaryRounds = 60;

struct FlatDataset {
    std::vector<std::vector<double>> x;
    std::vector<int> y;
};

inline FlatDataset flatten_for(const SignatureMatrix& matrix, const std::string& model_name) {
    FlatDataset d;
    d.x.reserve(matrix.rows.size());
    d.y.reserve(matrix.rows.size());
    for (const auto& row : matrix.rows) {
        d.x.push_back(row.flatten());
        d.y.push_back(row.model_name == model_name ? 1 : 0);
    }
    return d;
}

// Oversamples positives to factor * n_pos draws with replacement; negatives
// kept once. Returns (rows, labels, rho).
struct OversampledSet {
    std::vector<std::vector<double>> x;
    std::vector<int> y;
    double rho = 0;
};

inline OversampledSet oversample(const FlatDataset& d, double factor, std::mt19937_64& rng) {
    std::vector<std::size_t> pos, neg;
    for (std::size_t i = 0; i < d.y.size(); ++i) (d.y[i] ? pos : neg).push_back(i);
    if (pos.empty()) throw Error("no positive rows");
    if (neg.empty()) throw Error("no negative rows");
    OversampledSet out;
    for (std::size_t i : neg) {
        out.x.push_back(d.x[i]);
        out.y.push_back(0);
    }
    const std::size_t n_draw =
        static_cast<std::size_t>(factor * static_cast<double>(pos.size()));
    for (std::size_t k = 0; k < n_draw; ++k) {
        const std::size_t i = pos[static_cast<std::size_t>(rng() % pos.size())];
        out.x.push_back(d.x[i]);
        out.y.push_back(1);
    }
    out.rho = static_cast<double>(neg.size()) / static_cast<double>(n_draw);
    return out;
}

// Mean F1 of a 3-fold stratified cross-validation with a reduced-round
// booster; decides the difficulty tier.
inline double preliminary_cv_f1(const FlatDataset& d, const TrainingConfig& config,
                                std::uint64_t seed) {
    std::vector<std::size_t> pos, neg;
    for (std::size_t i = 0; i < d.y.size(); ++i) (d.y[i] ? pos : neg).push_back(i);
    std::mt19937_64 rng(seed);
    deterministic_shuffle(pos, rng);
    deterministic_shuffle(neg, rng);

    double f1_sum = 0;
    int folds_run = 0;
    for (int fold = 0; fold < 3; ++fold) {
        FlatDataset tr;
        std::vector<std::size_t> held;
        auto assign = [&](const std::vector<std::size_t>& group) {
            for (std::size_t k = 0; k < group.size(); ++k) {
                if (static_cast<int>(k % 3) == fold) {
                    held.push_back(group[k]);
                } else {
                    tr.x.push_back(d.x[group[k]]);
                    tr.y.push_back(d.y[group[k]]);
                }
            }
        };
        assign(pos);
        assign(neg);
        bool has_pos = false, has_neg = false;
        for (int y : tr.y) (y ? has_pos : has_neg) = true;
        if (!has_pos || !has_neg || held.empty()) continue;

        OversampledSet os = oversample(tr, config.oversample_factor, rng);
        const double w_pos = pos_weight(Difficulty::medium, os.rho);
        std::vector<double> w(os.y.size(), 1.0);
        for (std::size_t i = 0; i < os.y.size(); ++i) {
            if (os.y[i]) w[i] = w_pos;
        }
        TreeParams tp = config.tree;
        tp.rounds = std::min(tp.rounds, kPreliminaryRounds);
        tp.early_stop_rounds = 0;
        tp.validation_fraction = 0.0;
        const auto model = BoostedClassifier::train(os.x, os.y, w, tp, mix_hash(seed, fold));

        std::vector<double> scores;
        std::vector<int> labels;
        for (std::size_t i : held) {
            scores.push_back(model.predict_proba(d.x[i]));
            labels.push_back(d.y[i]);
        }
        f1_sum += metrics_at(scores, labels, 0.5).f1;
        ++folds_run;
    }
    return folds_run ? f1_sum / folds_run : 0.0;
}

}  // namespace detail

inline Difficulty assign_difficulty_from_f1(double f1) {
    if (f1 >= 0.95) return Difficulty::easy;
    if (f1 >= 0.85) return Difficulty::medium;
    return Difficulty::hard;
}

// Trains one binary classifier separating model_name from all other rows.
// The returned threshold is the 0.5 default; callers sweep it on held-out
// scores afterwards.
inline ModelClassifier train_one_vs_rest(const SignatureMatrix& train_set,
                                         const std::string& model_name,
                                         const TrainingConfig& config) {
    const detail::FlatDataset d = detail::flatten_for(train_set, model_name);
    bool has_pos = false, has_neg = false;
    for (int y : d.y) (y ? has_pos : has_neg) = true;
    if (!has_pos) throw Error("train_one_vs_rest: no rows for model " + model_name);
    if (!has_neg) throw Error("train_one_vs_rest: no contrast rows for model " + model_name);

    ModelClassifier c;
    c.model_name = model_name;
    c.feature_schema = train_set.schema();

    const std::uint64_t model_seed = mix_hash(config.seed, fnv1a64(model_name));
    Difficulty tier = config.difficulty;
    if (tier == Difficulty::automatic) {
        tier = assign_difficulty_from_f1(
            detail::preliminary_cv_f1(d, config, mix_hash(model_seed, 0xCF01)));
    }
    c.difficulty = tier;

    std::mt19937_64 rng(mix_hash(model_seed, 0x05A3));
    detail::OversampledSet os = detail::oversample(d, config.oversample_factor, rng);
    const double w_pos = pos_weight(tier, os.rho);
    std::vector<double> w(os.y.size(), 1.0);
    for (std::size_t i = 0; i < os.y.size(); ++i) {
        if (os.y[i]) w[i] = w_pos;
    }
    c.booster = BoostedClassifier::train(os.x, os.y, w, config.tree, mix_hash(model_seed, 0x7147));

    nlohmann::json cfg = config;
    c.config_digest = to_hex(fnv1a64(cfg.dump()));
    return c;
}

// ---------------------------------------------------------------------------
// Elite probe selection (top-Q separation under margin delta)

struct EliteSubset {
    std::string model_name;
    std::vector<std::string> probe_ids;
    int q = 12;
    double delta = 0.35;
};

inline constexpr int kDefaultEliteQ = 12;
inline constexpr double kDefaultEliteDelta = 0.35;

enum class BackfillMode { score_proxy, gain_importance };

// probe -> model -> mean probability of that model's samples under f_m
using EliteScoreTable = std::map<std::string, std::map<std::string, double>>;

inline EliteSubset select_elite_from_table(const EliteScoreTable& table,
                                           const std::string& model_name, int q, double delta,
                                           const std::vector<std::string>* backfill_order = nullptr) {
    if (q <= 0) throw Error("select_elite: Q must be positive");
    EliteSubset out;
    out.model_name = model_name;
    out.q = q;
    out.delta = delta;

    struct Entry {
        std::string probe;
        double p_target;
        double margin;
    };
    std::vector<Entry> candidates, rest;
    for (const auto& [probe, per_model] : table) {
        auto it = per_model.find(model_name);
        if (it == per_model.end()) continue;
        double other_max = -std::numeric_limits<double>::infinity();
        for (const auto& [m, p] : per_model) {
            if (m != model_name) other_max = std::max(other_max, p);
        }
        const double margin = it->second - other_max;  // +inf when no other model scored
        Entry e{probe, it->second, margin};
        if (margin >= delta) candidates.push_back(e);
        else rest.push_back(e);
    }
    auto by_score = [](const Entry& a, const Entry& b) {
        if (a.p_target != b.p_target) return a.p_target > b.p_target;
        return a.probe < b.probe;
    };
    std::sort(candidates.begin(), candidates.end(), by_score);
    for (const auto& e : candidates) {
        if (static_cast<int>(out.probe_ids.size()) >= q) break;
        out.probe_ids.push_back(e.probe);
    }
    if (static_cast<int>(out.probe_ids.size()) < q && !rest.empty()) {
        if (backfill_order) {
            std::map<std::string, std::size_t> pos;
            for (std::size_t i = 0; i < backfill_order->size(); ++i) pos[(*backfill_order)[i]] = i;
            std::sort(rest.begin(), rest.end(), [&pos, &by_score](const Entry& a, const Entry& b) {
                const auto ia = pos.find(a.probe), ib = pos.find(b.probe);
                const std::size_t ra = ia == pos.end() ? pos.size() : ia->second;
                const std::size_t rb = ib == pos.end() ? pos.size() : ib->second;
                if (ra != rb) return ra < rb;
                return by_score(a, b);
            });
        } else {
            std::sort(rest.begin(), rest.end(), by_score);
        }
        for (const auto& e : rest) {
            if (static_cast<int>(out.probe_ids.size()) >= q) break;
            out.probe_ids.push_back(e.probe);
        }
    }
    return out;
}

inline EliteScoreTable elite_score_table(const ModelClassifier& classifier,
                                         const SignatureMatrix& matrix) {
    std::map<std::string, std::map<std::string, std::pair<double, std::size_t>>> acc;
    for (const auto& row : matrix.rows) {
        auto& cell = acc[row.probe_id][row.model_name];
        cell.first += classifier.proba(row);
        ++cell.second;
    }
    EliteScoreTable table;
    for (const auto& [probe, per_model] : acc) {
        for (const auto& [model, sum_count] : per_model) {
            table[probe][model] = sum_count.first / static_cast<double>(sum_count.second);
        }
    }
    return table;
}

inline EliteSubset select_elite(const ModelClassifier& classifier, const SignatureMatrix& matrix,
                                int q = kDefaultEliteQ, double delta = kDefaultEliteDelta,
                                BackfillMode mode = BackfillMode::score_proxy) {
    const EliteScoreTable table = elite_score_table(classifier, matrix);
    if (mode == BackfillMode::score_proxy) {
        return select_elite_from_table(table, classifier.model_name, q, delta);
    }

    // Gain-importance backfill: remaining probes ranked by the dot product of
    // per-feature split gain with the probe's min-max-normalized mean
    // activation over the target model's rows. Heuristic; the proxy ranking
    // by mean probability is the default path.
    std::map<std::string, std::vector<double>> probe_mean;
    std::map<std::string, std::size_t> probe_n;
    for (const auto& row : matrix.rows) {
        if (row.model_name != classifier.model_name) continue;
        auto& m = probe_mean[row.probe_id];
        const auto f = row.flatten();
        if (m.empty()) m.assign(f.size(), 0.0);
        for (std::size_t i = 0; i < f.size(); ++i) m[i] += f[i];
        ++probe_n[row.probe_id];
    }
    for (auto& [probe, m] : probe_mean) {
        for (auto& v : m) v /= static_cast<double>(probe_n[probe]);
    }
    std::vector<std::pair<std::string, double>> scored;
    if (!probe_mean.empty()) {
        const std::size_t dims = probe_mean.begin()->second.size();
        std::vector<double> lo(dims, std::numeric_limits<double>::infinity());
        std::vector<double> hi(dims, -std::numeric_limits<double>::infinity());
        for (const auto& [probe, m] : probe_mean) {
            for (std::size_t i = 0; i < dims; ++i) {
                lo[i] = std::min(lo[i], m[i]);
                hi[i] = std::max(hi[i], m[i]);
            }
        }
        const auto& gain = classifier.booster.feature_gain();
        for (const auto& [probe, m] : probe_mean) {
            double s = 0;
            for (std::size_t i = 0; i < dims && i < gain.size(); ++i) {
                const double width = hi[i] - lo[i];
                if (width > 0) s += gain[i] * (m[i] - lo[i]) / width;
            }
            scored.emplace_back(probe, s);
        }
    }
    std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
    });
    std::vector<std::string> order;
    for (const auto& [probe, s] : scored) order.push_back(probe);
    return select_elite_from_table(table, classifier.model_name, q, delta, &order);
}

// ---------------------------------------------------------------------------
// Claim verification

struct ClaimReport {
    struct Label {
        std::string kind;   // "claimed" | "other" | "none"
        std::string model;  // firing model for "other"
    };
    double fraction_claimed = 0;
    std::vector<Label> labels;
    std::size_t record_count = 0;
};

inline ClaimReport verify_claim(const std::vector<CallRecord>& records,
                                const std::string& claimed_model, const ProbeSuite& suite,
                                const ReferenceBank& reference,
                                const std::vector<ModelClassifier>& classifiers,
                                const EliteSubset* elite = nullptr) {
    const ModelClassifier* claimed_clf = nullptr;
    for (const auto& c : classifiers) {
        if (c.model_name == claimed_model) claimed_clf = &c;
    }
    if (!claimed_clf) throw Error("verify_claim: no classifier for " + claimed_model);

    std::set<std::string> elite_ids;
    if (elite) elite_ids.insert(elite->probe_ids.begin(), elite->probe_ids.end());
    std::vector<CallRecord> filtered;
    for (const auto& r : records) {
        if (!r.ok()) continue;
        if (elite && !elite_ids.count(r.probe_id)) continue;
        filtered.push_back(r);
    }
    if (filtered.empty()) throw Error("verify_claim: no usable records");

    const SignatureMatrix m = build_matrix(filtered, suite, reference);
    ClaimReport report;
    report.record_count = m.rows.size();
    std::size_t claimed_count = 0;
    for (const auto& row : m.rows) {
        const auto features = row.flatten();
        ClaimReport::Label label{"none", ""};
        if (claimed_clf->fires(features)) {
            label = {"claimed", claimed_model};
            ++claimed_count;
        } else {
            double best_margin = 0;
            for (const auto& c : classifiers) {
                if (c.model_name == claimed_model) continue;
                const double p = c.proba(features);
                const double margin = p - c.threshold;
                if (p >= c.threshold && (label.kind != "other" || margin > best_margin)) {
                    label = {"other", c.model_name};
                    best_margin = margin;
                }
            }
        }
        report.labels.push_back(std::move(label));
    }
    report.fraction_claimed =
        static_cast<double>(claimed_count) / static_cast<double>(report.record_count);
    return report;
}

// ---------------------------------------------------------------------------
// Classifier store: one file per model plus manifest, elites, reference bank

class ClassifierStore {
public:
    explicit ClassifierStore(std::string dir) : dir_(std::move(dir)) {
        std::filesystem::create_directories(dir_);
    }

    const std::string& dir() const { return dir_; }

    void save(const ModelClassifier& c) {
        nlohmann::json manifest = load_manifest();
        const std::string filename = file_for(c.model_name);
        write_file(path_of(filename), c.to_json().dump(2) + "\n");
        manifest["members"][c.model_name] = filename;
        manifest["feature_schema"] = c.feature_schema;
        write_file(path_of("manifest.json"), manifest.dump(2) + "\n");
    }

    ModelClassifier load(const std::string& model_name) const {
        const nlohmann::json manifest = load_manifest();
        if (!manifest.contains("members") || !manifest.at("members").contains(model_name)) {
            throw Error("classifier store has no entry for " + model_name);
        }
        const std::string filename = manifest.at("members").at(model_name).get<std::string>();
        return ModelClassifier::from_json(nlohmann::json::parse(read_file(path_of(filename))));
    }

    std::vector<std::string> list() const {
        const nlohmann::json manifest = load_manifest();
        std::vector<std::string> names;
        if (manifest.contains("members")) {
            for (auto it = manifest.at("members").begin(); it != manifest.at("members").end(); ++it) {
                names.push_back(it.key());
            }
        }
        return names;
    }

    std::vector<ModelClassifier> load_all() const {
        std::vector<ModelClassifier> out;
        for (const auto& name : list()) out.push_back(load(name));
        return out;
    }

    void save_elites(const std::map<std::string, EliteSubset>& elites) {
        nlohmann::json j = nlohmann::json::object();
        for (const auto& [model, e] : elites) {
            j[model] = {{"probe_ids", e.probe_ids}, {"q", e.q}, {"delta", e.delta}};
        }
        write_file(path_of("elites.json"), j.dump(2) + "\n");
    }

    std::map<std::string, EliteSubset> load_elites() const {
        std::map<std::string, EliteSubset> out;
        const std::string p = path_of("elites.json");
        if (!std::filesystem::exists(p)) return out;
        const nlohmann::json j = nlohmann::json::parse(read_file(p));
        for (auto it = j.begin(); it != j.end(); ++it) {
            EliteSubset e;
            e.model_name = it.key();
            e.probe_ids = it.value().at("probe_ids").get<std::vector<std::string>>();
            e.q = it.value().value("q", kDefaultEliteQ);
            e.delta = it.value().value("delta", kDefaultEliteDelta);
            out[e.model_name] = std::move(e);
        }
        return out;
    }

    void save_reference(const ReferenceBank& bank) {
        write_file(path_of("reference.json"), bank.to_json().dump() + "\n");
    }

    ReferenceBank load_reference() const {
        const std::string p = path_of("reference.json");
        if (!std::filesystem::exists(p)) throw Error("classifier store lacks reference.json");
        return ReferenceBank::from_json(nlohmann::json::parse(read_file(p)));
    }

    std::string path_of(const std::string& filename) const {
        return (std::filesystem::path(dir_) / filename).string();
    }

    std::string file_for(const std::string& model_name) const {
        std::string sanitized;
        for (char c : model_name) {
            sanitized.push_back(std::isalnum(static_cast<unsigned char>(c)) ? c : '_');
        }
        if (sanitized != model_name) {
            sanitized += "-" + to_hex(fnv1a64(model_name)).substr(0, 8);
        }
        return sanitized + ".json";
    }

private:
    nlohmann::json load_manifest() const {
        const std::string p = path_of("manifest.json");
        if (!std::filesystem::exists(p)) {
            return {{"members", nlohmann::json::object()},
                    {"feature_schema", nlohmann::json::array()}};
        }
        return nlohmann::json::parse(read_file(p));
    }

    std::string dir_;
};

}  // namespace gatescope
