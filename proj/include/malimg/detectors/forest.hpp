#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "malimg/detectors/common.hpp"
#include "malimg/errors.hpp"
#include "malimg/parallel.hpp"
#include "malimg/rng.hpp"

namespace malimg {

// Bagged CART forest. Each tree is grown on a bootstrap resample with
// per-split feature subsampling; leaves store the malware fraction so the
// forest doubles as the regression-form estimator f_hat = mean_b f_b.
struct RfTree {
    struct Node {
        int feature = -1;  // -1 marks a leaf
        double threshold = 0.0;
        int left = -1, right = -1;
        double value = 0.0;  // leaf malware fraction
        int count = 0;
    };
    std::vector<Node> nodes;

    double predict(const std::vector<double>& features) const {
        int idx = 0;
        while (nodes[static_cast<std::size_t>(idx)].feature >= 0) {
            const Node& nd = nodes[static_cast<std::size_t>(idx)];
            idx = features[static_cast<std::size_t>(nd.feature)] <= nd.threshold ? nd.left
                                                                                 : nd.right;
        }
        return nodes[static_cast<std::size_t>(idx)].value;
    }
};

struct RfModel {
    std::vector<RfTree> trees;
    std::size_t n_features = 0;
    int mtry = 0;
    std::uint64_t seed = 0;
    double oob_error = 0.0;       // out-of-bag majority-vote error rate
    std::size_t oob_evaluated = 0;  // samples that had at least one OOB tree
    PipelineTag tag = PipelineTag::raw;
    std::string layout_version;
};

struct RfPrediction {
    double probability = 0.0;  // f_hat, mean of per-tree leaf fractions
    double sigma = 0.0;        // sqrt(sum (f_b - f_hat)^2 / (B-1))
    Kind label = Kind::benign; // per-tree majority vote, ties read benign
};

namespace detail_rf {

struct GrowContext {
    const std::vector<std::vector<double>>& x;
    const std::vector<std::uint8_t>& y;  // 1 = malware
    int mtry;
    int max_depth;
    int min_leaf;
    int max_nodes;
    Rng& rng;
    std::vector<std::size_t>& feature_pool;  // permuted in place per split
    RfTree& tree;
};

inline int make_leaf(GrowContext& ctx, const std::vector<std::size_t>& idx) {
    RfTree::Node node;
    node.count = static_cast<int>(idx.size());
    double pos = 0.0;
    for (std::size_t i : idx) pos += ctx.y[i];
    node.value = idx.empty() ? 0.0 : pos / static_cast<double>(idx.size());
    ctx.tree.nodes.push_back(node);
    return static_cast<int>(ctx.tree.nodes.size()) - 1;
}

// `budget` is the node allowance for this subtree; splitting costs one node
// plus at least one per child, so the whole tree never exceeds max_nodes.
inline int grow(GrowContext& ctx, std::vector<std::size_t>& idx, int depth, int budget) {
    const std::size_t n = idx.size();
    double pos = 0.0;
    for (std::size_t i : idx) pos += ctx.y[i];
    const bool pure = (pos == 0.0 || pos == static_cast<double>(n));

    if (pure || depth >= ctx.max_depth || n < 2 * static_cast<std::size_t>(ctx.min_leaf) ||
        budget < 3)
        return make_leaf(ctx, idx);

    // Candidate features: partial Fisher-Yates over the persistent pool.
    const std::size_t d = ctx.feature_pool.size();
    const std::size_t mtry = std::min<std::size_t>(static_cast<std::size_t>(ctx.mtry), d);
    for (std::size_t i = 0; i < mtry; ++i) {
        const std::size_t j = i + ctx.rng.uniform_int(d - i);
        std::swap(ctx.feature_pool[i], ctx.feature_pool[j]);
    }

    int best_feature = -1;
    double best_threshold = 0.0;
    double best_score = std::numeric_limits<double>::infinity();
    std::vector<std::pair<double, std::uint8_t>> column(n);

    for (std::size_t fi = 0; fi < mtry; ++fi) {
        const std::size_t f = ctx.feature_pool[fi];
        for (std::size_t i = 0; i < n; ++i)
            column[i] = {ctx.x[idx[i]][f], ctx.y[idx[i]]};
        std::sort(column.begin(), column.end());
        if (column.front().first == column.back().first) continue;

        double left_pos = 0.0;
        const double total_pos = pos;
        for (std::size_t i = 0; i + 1 < n; ++i) {
            left_pos += column[i].second;
            if (column[i].first == column[i + 1].first) continue;
            const double nl = static_cast<double>(i + 1);
            const double nr = static_cast<double>(n - i - 1);
            if (nl < ctx.min_leaf || nr < ctx.min_leaf) continue;
            const double pl = left_pos / nl;
            const double pr = (total_pos - left_pos) / nr;
            const double score = nl * 2.0 * pl * (1.0 - pl) + nr * 2.0 * pr * (1.0 - pr);
            if (score < best_score - 1e-15) {
                best_score = score;
                best_feature = static_cast<int>(f);
                best_threshold = 0.5 * (column[i].first + column[i + 1].first);
            }
        }
    }

    const double parent_score =
        static_cast<double>(n) * 2.0 * (pos / n) * (1.0 - pos / n);
    if (best_feature < 0 || best_score >= parent_score - 1e-15)
        return make_leaf(ctx, idx);

    std::vector<std::size_t> left_idx, right_idx;
    left_idx.reserve(n);
    right_idx.reserve(n);
    for (std::size_t i : idx)
        (ctx.x[i][static_cast<std::size_t>(best_feature)] <= best_threshold ? left_idx
                                                                            : right_idx)
            .push_back(i);
    if (left_idx.empty() || right_idx.empty()) return make_leaf(ctx, idx);

    RfTree::Node node;
    node.feature = best_feature;
    node.threshold = best_threshold;
    node.count = static_cast<int>(n);
    ctx.tree.nodes.push_back(node);
    const int self = static_cast<int>(ctx.tree.nodes.size()) - 1;
    idx.clear();
    idx.shrink_to_fit();

    const int child_budget = budget - 1;
    int left_budget = static_cast<int>(
        static_cast<long long>(child_budget) * static_cast<long long>(left_idx.size()) /
        static_cast<long long>(n));
    left_budget = std::clamp(left_budget, 1, child_budget - 1);
    const int right_budget = child_budget - left_budget;

    const int left = grow(ctx, left_idx, depth + 1, left_budget);
    const int right = grow(ctx, right_idx, depth + 1, right_budget);
    ctx.tree.nodes[static_cast<std::size_t>(self)].left = left;
    ctx.tree.nodes[static_cast<std::size_t>(self)].right = right;
    return self;
}

inline const std::vector<double>& feature_view(const DetectorInput& input) {
    return input.is_tensor() ? input.tensor().values : input.features().values;
}

}  // namespace detail_rf

inline RfModel train_rf(const std::vector<LabeledInput>& train, const RfConfig& cfg,
                        std::uint64_t seed) {
    if (train.empty()) throw DegenerateData("train_rf: empty training set");
    require_both_classes(train, "train_rf");
    if (cfg.trees <= 0 || cfg.max_depth <= 0 || cfg.min_leaf <= 0 || cfg.max_nodes < 3)
        throw ConfigError("train_rf: hyperparameters out of range");

    const std::size_t n = train.size();
    std::vector<std::vector<double>> x(n);
    std::vector<std::uint8_t> y(n);
    const PipelineTag tag = train.front().first.tag;
    for (std::size_t i = 0; i < n; ++i) {
        if (train[i].first.tag != tag) throw ShapeError("train_rf: mixed pipeline tags");
        x[i] = detail_rf::feature_view(train[i].first);
        if (x[i].size() != x[0].size())
            throw ShapeError("train_rf: inconsistent feature dimension");
        y[i] = train[i].second.kind == Kind::malware ? 1 : 0;
    }
    const std::size_t d = x[0].size();
    if (d == 0) throw ShapeError("train_rf: zero-dimensional features");

    RfModel model;
    model.n_features = d;
    model.mtry = cfg.mtry > 0 ? cfg.mtry
                              : std::max(1, static_cast<int>(std::sqrt(static_cast<double>(d))));
    model.seed = seed;
    model.tag = tag;
    model.trees.resize(static_cast<std::size_t>(cfg.trees));

    std::vector<std::vector<std::uint8_t>> in_bag(static_cast<std::size_t>(cfg.trees),
                                                  std::vector<std::uint8_t>(n, 0));

    parallel_for(static_cast<std::size_t>(cfg.trees), [&](std::size_t t) {
        Rng rng(derive_seed(seed, "rf-tree", t));
        std::vector<std::size_t> boot(n);
        for (auto& b : boot) {
            b = rng.uniform_int(n);
            in_bag[t][b] = 1;
        }
        std::vector<std::size_t> pool(d);
        for (std::size_t i = 0; i < d; ++i) pool[i] = i;
        detail_rf::GrowContext ctx{x, y, model.mtry, cfg.max_depth,
                                   cfg.min_leaf, cfg.max_nodes, rng, pool, model.trees[t]};
        detail_rf::grow(ctx, boot, 0, cfg.max_nodes);
    });

    // Out-of-bag majority-vote error.
    std::size_t counted = 0, wrong = 0;
    for (std::size_t i = 0; i < n; ++i) {
        int votes = 0, total = 0;
        for (std::size_t t = 0; t < model.trees.size(); ++t) {
            if (in_bag[t][i]) continue;
            ++total;
            if (model.trees[t].predict(x[i]) > 0.5) ++votes;
        }
        if (total == 0) continue;
        ++counted;
        const bool predicted_malware = 2 * votes > total;
        if (predicted_malware != (y[i] == 1)) ++wrong;
    }
    model.oob_evaluated = counted;
    model.oob_error = counted ? static_cast<double>(wrong) / static_cast<double>(counted) : 0.0;
    return model;
}

inline RfPrediction rf_predict(const RfModel& model, const DetectorInput& x) {
    const auto& q = detail_rf::feature_view(x);
    if (q.size() != model.n_features)
        throw ShapeError("rf_predict: feature dimension mismatch");

    const std::size_t B = model.trees.size();
    double sum = 0.0;
    std::size_t votes = 0;
    std::vector<double> outputs(B);
    for (std::size_t t = 0; t < B; ++t) {
        outputs[t] = model.trees[t].predict(q);
        sum += outputs[t];
        if (outputs[t] > 0.5) ++votes;
    }
    RfPrediction pred;
    pred.probability = sum / static_cast<double>(B);
    if (B > 1) {
        double ss = 0.0;
        for (double v : outputs) {
            const double dlt = v - pred.probability;
            ss += dlt * dlt;
        }
        pred.sigma = std::sqrt(ss / static_cast<double>(B - 1));
    }
    pred.label = 2 * votes > B ? Kind::malware : Kind::benign;
    return pred;
}

}  // namespace malimg
