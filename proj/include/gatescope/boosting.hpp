#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "gatescope/util.hpp"

namespace gatescope {

struct TreeParams {
    int max_depth = 6;
    int rounds = 500;
    double learning_rate = 0.1;
    double row_subsample = 0.8;
    double column_subsample = 0.8;
    double l1 = 0.1;
    double l2 = 1.0;
    int early_stop_rounds = 30;
    double min_child_weight = 1.0;
    double validation_fraction = 0.10;
};

inline void to_json(nlohmann::json& j, const TreeParams& p) {
    j = {{"max_depth", p.max_depth},
         {"rounds", p.rounds},
         {"learning_rate", p.learning_rate},
         {"row_subsample", p.row_subsample},
         {"column_subsample", p.column_subsample},
         {"l1", p.l1},
         {"l2", p.l2},
         {"early_stop_rounds", p.early_stop_rounds},
         {"min_child_weight", p.min_child_weight},
         {"validation_fraction", p.validation_fraction}};
}

inline void from_json(const nlohmann::json& j, TreeParams& p) {
    p.max_depth = j.value("max_depth", 6);
    p.rounds = j.value("rounds", 500);
    p.learning_rate = j.value("learning_rate", 0.1);
    p.row_subsample = j.value("row_subsample", 0.8);
    p.column_subsample = j.value("column_subsample", 0.8);
    p.l1 = j.value("l1", 0.1);
    p.l2 = j.value("l2", 1.0);
    p.early_stop_rounds = j.value("early_stop_rounds", 30);
    p.min_child_weight = j.value("min_child_weight", 1.0);
    p.validation_fraction = j.value("validation_fraction", 0.10);
}

class TrainError : public Error {
public:
    using Error::Error;
};

struct TreeNode {
    int feature = -1;  // -1 marks a leaf
    double threshold = 0.0;
    int left = -1;
    int right = -1;
    double value = 0.0;  // leaf weight, shrinkage already applied

    bool leaf() const { return feature < 0; }
};

struct RegressionTree {
    std::vector<TreeNode> nodes;

    double predict(const std::vector<double>& row) const {
        int idx = 0;
        while (!nodes[idx].leaf()) {
            idx = row[static_cast<std::size_t>(nodes[idx].feature)] < nodes[idx].threshold
                      ? nodes[idx].left
                      : nodes[idx].right;
        }
        return nodes[idx].value;
    }
};

inline double sigmoid(double x) {
    if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

namespace detail {

inline double soft_threshold(double g, double alpha) {
    if (g > alpha) return g - alpha;
    if (g < -alpha) return g + alpha;
    return 0.0;
}

// In-place Fisher-Yates; hand-rolled so the permutation depends only on the
// engine's raw output stream, not a library's distribution internals.
template <typename T>
void deterministic_shuffle(std::vector<T>& v, std::mt19937_64& rng) {
    for (std::size_t i = v.size(); i > 1; --i) {
        const std::size_t k = static_cast<std::size_t>(rng() % i);
        std::swap(v[i - 1], v[k]);
    }
}

}  // namespace detail

// Binary gradient-boosted trees with logistic loss: g = p - y, h = p(1 - p),
// both weight-scaled; split gain and leaf weights use L1 soft-thresholding
// and L2 shrinkage; exact greedy splits over presorted feature columns.
class BoostedClassifier {
public:
    static BoostedClassifier train(const std::vector<std::vector<double>>& rows,
                                   const std::vector<int>& labels,
                                   const std::vector<double>& weights, const TreeParams& params,
                                   std::uint64_t seed) {
        const std::size_t n = rows.size();
        if (n == 0) throw TrainError("training set empty");
        if (labels.size() != n || weights.size() != n) {
            throw TrainError("labels/weights length mismatch");
        }
        const std::size_t d = rows[0].size();
        for (const auto& r : rows) {
            if (r.size() != d) throw TrainError("ragged feature rows");
        }

        // column-major copy for scan locality
        std::vector<double> vals(n * d);
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t f = 0; f < d; ++f) vals[f * n + i] = rows[i][f];
        }
        // one global presort per feature, ties broken by row index
        std::vector<std::vector<std::uint32_t>> order(d);
        for (std::size_t f = 0; f < d; ++f) {
            auto& ord = order[f];
            ord.resize(n);
            for (std::size_t i = 0; i < n; ++i) ord[i] = static_cast<std::uint32_t>(i);
            const double* col = vals.data() + f * n;
            std::sort(ord.begin(), ord.end(), [col](std::uint32_t a, std::uint32_t b) {
                if (col[a] != col[b]) return col[a] < col[b];
                return a < b;
            });
        }

        std::mt19937_64 rng(seed);
        std::vector<std::uint32_t> shuffled(n);
        for (std::size_t i = 0; i < n; ++i) shuffled[i] = static_cast<std::uint32_t>(i);
        detail::deterministic_shuffle(shuffled, rng);

        std::size_t n_val = 0;
        if (params.early_stop_rounds > 0 && params.validation_fraction > 0 && n >= 10) {
            n_val = static_cast<std::size_t>(
                std::ceil(params.validation_fraction * static_cast<double>(n)));
            if (n_val >= n) n_val = 0;
        }
        const std::vector<std::uint32_t> train_idx(shuffled.begin(), shuffled.end() - n_val);
        const std::vector<std::uint32_t> val_idx(shuffled.end() - n_val, shuffled.end());

        std::vector<double> margin(n, 0.0);
        std::vector<double> grad(n, 0.0), hess(n, 0.0);
        std::vector<int> node_of_row(n, -1);

        BoostedClassifier model;
        model.feature_gain_.assign(d, 0.0);
        std::vector<std::vector<std::pair<int, double>>> tree_gains;

        double best_val = std::numeric_limits<double>::infinity();
        int best_round = -1;

        std::vector<std::uint32_t> sample_pool = train_idx;
        for (int round = 0; round < params.rounds; ++round) {
            for (std::uint32_t i : train_idx) {
                const double p = sigmoid(margin[i]);
                grad[i] = (p - static_cast<double>(labels[i])) * weights[i];
                hess[i] = std::max(p * (1.0 - p), 1e-16) * weights[i];
            }

            detail::deterministic_shuffle(sample_pool, rng);
            std::size_t n_sample = static_cast<std::size_t>(
                params.row_subsample * static_cast<double>(sample_pool.size()));
            if (n_sample == 0) n_sample = sample_pool.size();

            std::vector<std::uint32_t> cols(d);
            for (std::size_t f = 0; f < d; ++f) cols[f] = static_cast<std::uint32_t>(f);
            detail::deterministic_shuffle(cols, rng);
            std::size_t n_cols = static_cast<std::size_t>(
                std::lround(params.column_subsample * static_cast<double>(d)));
            n_cols = std::clamp<std::size_t>(n_cols, 1, d);
            cols.resize(n_cols);
            std::sort(cols.begin(), cols.end());

            RegressionTree tree;
            std::vector<std::pair<int, double>> gains_this_tree;
            build_tree(tree, gains_this_tree, vals, order, cols, grad, hess, node_of_row,
                       sample_pool, n_sample, n, params);

            // margin update for every row (train, unsampled, validation)
            for (std::size_t i = 0; i < n; ++i) margin[i] += tree.predict(rows[i]);

            model.trees_.push_back(std::move(tree));
            tree_gains.push_back(std::move(gains_this_tree));

            double val_loss = 0.0;
            if (!val_idx.empty()) {
                for (std::uint32_t i : val_idx) {
                    const double p =
                        std::clamp(sigmoid(margin[i]), 1e-15, 1.0 - 1e-15);
                    val_loss -= weights[i] * (labels[i] ? std::log(p) : std::log(1.0 - p));
                }
                if (!std::isfinite(val_loss)) {
                    throw TrainError("non-finite validation loss at round " +
                                     std::to_string(round));
                }
                if (val_loss < best_val - 1e-12) {
                    best_val = val_loss;
                    best_round = round;
                } else if (round - best_round >= params.early_stop_rounds) {
                    break;
                }
            } else {
                best_round = round;
            }
        }

        if (best_round < 0) best_round = static_cast<int>(model.trees_.size()) - 1;
        model.trees_.resize(static_cast<std::size_t>(best_round) + 1);
        tree_gains.resize(model.trees_.size());
        for (const auto& tg : tree_gains) {
            for (const auto& [f, g] : tg) model.feature_gain_[static_cast<std::size_t>(f)] += g;
        }
        model.best_iteration_ = best_round;
        model.feature_count_ = d;
        return model;
    }

    double predict_margin(const std::vector<double>& row) const {
        double m = 0.0;
        for (const auto& t : trees_) m += t.predict(row);
        return m;
    }

    double predict_proba(const std::vector<double>& row) const {
        return sigmoid(predict_margin(row));
    }

    const std::vector<double>& feature_gain() const { return feature_gain_; }
    std::size_t tree_count() const { return trees_.size(); }
    int best_iteration() const { return best_iteration_; }
    std::size_t feature_count() const { return feature_count_; }

    nlohmann::json to_json() const {
        nlohmann::json trees = nlohmann::json::array();
        for (const auto& t : trees_) {
            nlohmann::json nodes = nlohmann::json::array();
            for (const auto& nd : t.nodes) {
                nodes.push_back({{"f", nd.feature},
                                 {"t", nd.threshold},
                                 {"l", nd.left},
                                 {"r", nd.right},
                                 {"v", nd.value}});
            }
            trees.push_back({{"nodes", std::move(nodes)}});
        }
        return {{"trees", std::move(trees)},
                {"feature_gain", feature_gain_},
                {"best_iteration", best_iteration_},
                {"feature_count", feature_count_}};
    }

    static BoostedClassifier from_json(const nlohmann::json& j) {
        BoostedClassifier model;
        for (const auto& tj : j.at("trees")) {
            RegressionTree t;
            for (const auto& nj : tj.at("nodes")) {
                TreeNode nd;
                nd.feature = nj.at("f").get<int>();
                nd.threshold = nj.at("t").get<double>();
                nd.left = nj.at("l").get<int>();
                nd.right = nj.at("r").get<int>();
                nd.value = nj.at("v").get<double>();
                t.nodes.push_back(nd);
            }
            model.trees_.push_back(std::move(t));
        }
        model.feature_gain_ = j.value("feature_gain", std::vector<double>{});
        model.best_iteration_ = j.value("best_iteration", -1);
        model.feature_count_ = j.value("feature_count", std::size_t{0});
        return model;
    }

private:
    static void build_tree(RegressionTree& tree, std::vector<std::pair<int, double>>& gains_out,
                           const std::vector<double>& vals,
                           const std::vector<std::vector<std::uint32_t>>& order,
                           const std::vector<std::uint32_t>& cols,
                           const std::vector<double>& grad, const std::vector<double>& hess,
                           std::vector<int>& node_of_row,
                           const std::vector<std::uint32_t>& sample_pool, std::size_t n_sample,
                           std::size_t n, const TreeParams& params) {
        struct Building {
            double g_sum = 0, h_sum = 0;
            int depth = 0;
            int best_feature = -1;
            double best_gain = 0, best_threshold = 0, best_gl = 0, best_hl = 0;
        };

        std::fill(node_of_row.begin(), node_of_row.end(), -1);
        Building root;
        for (std::size_t k = 0; k < n_sample; ++k) {
            const std::uint32_t r = sample_pool[k];
            node_of_row[r] = 0;
            root.g_sum += grad[r];
            root.h_sum += hess[r];
        }
        tree.nodes.push_back(TreeNode{});
        std::vector<Building> building{root};
        std::vector<int> active{0};

        const double alpha = params.l1, lambda = params.l2;
        auto leaf_objective = [&](double g, double h) {
            const double sg = detail::soft_threshold(g, alpha);
            return sg * sg / (h + lambda);
        };

        std::vector<int> slot_of_node;
        while (!active.empty()) {
            slot_of_node.assign(tree.nodes.size(), -1);
            for (std::size_t s = 0; s < active.size(); ++s) slot_of_node[active[s]] = static_cast<int>(s);

            std::vector<double> gl(active.size()), hl(active.size()), last(active.size());
            std::vector<char> started(active.size());
            for (std::uint32_t f : cols) {
                std::fill(gl.begin(), gl.end(), 0.0);
                std::fill(hl.begin(), hl.end(), 0.0);
                std::fill(started.begin(), started.end(), 0);
                const double* col = vals.data() + f * n;
                for (std::uint32_t r : order[f]) {
                    const int node = node_of_row[r];
                    if (node < 0 || node >= static_cast<int>(slot_of_node.size())) continue;
                    const int s = slot_of_node[node];
                    if (s < 0) continue;
                    const double v = col[r];
                    Building& b = building[node];
                    if (started[s] && v > last[s] + 1e-12) {
                        const double hr = b.h_sum - hl[s];
                        if (hl[s] >= params.min_child_weight && hr >= params.min_child_weight) {
                            const double gr = b.g_sum - gl[s];
                            const double gain =
                                0.5 * (leaf_objective(gl[s], hl[s]) + leaf_objective(gr, hr) -
                                       leaf_objective(b.g_sum, b.h_sum));
                            if (gain > b.best_gain + 1e-12) {
                                b.best_gain = gain;
                                b.best_feature = static_cast<int>(f);
                                b.best_threshold = (last[s] + v) / 2.0;
                                b.best_gl = gl[s];
                                b.best_hl = hl[s];
                            }
                        }
                    }
                    gl[s] += grad[r];
                    hl[s] += hess[r];
                    last[s] = v;
                    started[s] = 1;
                }
            }

            std::vector<int> next_active;
            std::vector<char> splits(tree.nodes.size(), 0);
            for (int node : active) {
                Building& b = building[node];
                const bool can_split =
                    b.depth < params.max_depth && b.best_feature >= 0 && b.best_gain > 1e-12;
                if (!can_split) {
                    tree.nodes[node].feature = -1;
                    tree.nodes[node].value = -params.learning_rate *
                                             detail::soft_threshold(b.g_sum, alpha) /
                                             (b.h_sum + lambda);
                    continue;
                }
                const int left = static_cast<int>(tree.nodes.size());
                tree.nodes.push_back(TreeNode{});
                const int right = static_cast<int>(tree.nodes.size());
                tree.nodes.push_back(TreeNode{});
                tree.nodes[node].feature = b.best_feature;
                tree.nodes[node].threshold = b.best_threshold;
                tree.nodes[node].left = left;
                tree.nodes[node].right = right;
                gains_out.emplace_back(b.best_feature, b.best_gain);

                Building bl, br;
                bl.depth = br.depth = b.depth + 1;
                bl.g_sum = b.best_gl;
                bl.h_sum = b.best_hl;
                br.g_sum = b.g_sum - b.best_gl;
                br.h_sum = b.h_sum - b.best_hl;
                building.resize(tree.nodes.size());
                building[left] = bl;
                building[right] = br;
                splits.resize(tree.nodes.size(), 0);
                splits[static_cast<std::size_t>(node)] = 1;
                next_active.push_back(left);
                next_active.push_back(right);
            }

            if (!next_active.empty()) {
                for (std::size_t k = 0; k < n_sample; ++k) {
                    const std::uint32_t r = sample_pool[k];
                    const int node = node_of_row[r];
                    if (node < 0 || !splits[static_cast<std::size_t>(node)]) continue;
                    const TreeNode& nd = tree.nodes[static_cast<std::size_t>(node)];
                    const double v = vals[static_cast<std::size_t>(nd.feature) * n + r];
                    node_of_row[r] = v < nd.threshold ? nd.left : nd.right;
                }
            }
            active = std::move(next_active);
        }
    }

    std::vector<RegressionTree> trees_;
    std::vector<double> feature_gain_;
    int best_iteration_ = -1;
    std::size_t feature_count_ = 0;
};

}  // namespace gatescope
