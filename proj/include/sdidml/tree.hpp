#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include <Eigen/Dense>

#include "sdidml/errors.hpp"
#include "sdidml/rng.hpp"

namespace sdidml {

// CART regression tree. Split criterion is variance reduction; candidate
// thresholds are midpoints of consecutive distinct feature values; ties are
// broken toward the lowest feature index, then the lowest threshold.
struct TreeNode {
    int feature = -1;  // -1 marks a leaf
    double threshold = 0.0;
    int left = -1;
    int right = -1;
    double value = 0.0;
};

struct RegressionTree {
    std::vector<TreeNode> nodes;

    double predict_row(const double* x) const {
        int i = 0;
        while (nodes[static_cast<std::size_t>(i)].feature >= 0) {
            const TreeNode& nd = nodes[static_cast<std::size_t>(i)];
            i = (x[nd.feature] <= nd.threshold) ? nd.left : nd.right;
        }
        return nodes[static_cast<std::size_t>(i)].value;
    }
};

namespace detail {

// Builds one tree over sample slots (bootstrap indices into X's rows) using
// presorted per-feature orderings partitioned at each split, so no per-node
// sorting is needed.
class TreeBuilder {
public:
    TreeBuilder(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, std::vector<int> sample_rows,
                int max_depth, int min_leaf, int mtry, Rng& rng)
        : X_(X), max_depth_(max_depth), min_leaf_(min_leaf), mtry_(mtry), rng_(rng),
          rows_(std::move(sample_rows)) {
        const std::size_t m = rows_.size();
        const int p = static_cast<int>(X_.cols());
        ys_.resize(m);
        for (std::size_t s = 0; s < m; ++s) ys_[s] = y(rows_[s]);
        order_.assign(static_cast<std::size_t>(p), std::vector<int>(m));
        for (int f = 0; f < p; ++f) {
            auto& ord = order_[static_cast<std::size_t>(f)];
            for (std::size_t s = 0; s < m; ++s) ord[s] = static_cast<int>(s);
            std::stable_sort(ord.begin(), ord.end(), [&](int a, int b) {
                return X_(rows_[static_cast<std::size_t>(a)], f) < X_(rows_[static_cast<std::size_t>(b)], f);
            });
        }
        side_.resize(m);
        scratch_.resize(m);
        feature_pool_.resize(static_cast<std::size_t>(p));
        for (int f = 0; f < p; ++f) feature_pool_[static_cast<std::size_t>(f)] = f;
    }

    RegressionTree build() {
        RegressionTree tree;
        build_node(tree, 0, static_cast<int>(rows_.size()), 0);
        return tree;
    }

private:
    double feature_value(int slot, int f) const { return X_(rows_[static_cast<std::size_t>(slot)], f); }

    // Chooses mtry candidate features without replacement, evaluated in
    // ascending index order for deterministic tie-breaking.
    void sample_features(std::vector<int>& out) {
        const int p = static_cast<int>(feature_pool_.size());
        if (mtry_ >= p) {
            out = feature_pool_;
            return;
        }
        for (int i = 0; i < mtry_; ++i) {
            int j = i + static_cast<int>(rng_.uniform_int(static_cast<std::uint64_t>(p - i)));
            std::swap(feature_pool_[static_cast<std::size_t>(i)], feature_pool_[static_cast<std::size_t>(j)]);
        }
        out.assign(feature_pool_.begin(), feature_pool_.begin() + mtry_);
        std::sort(out.begin(), out.end());
    }

    int build_node(RegressionTree& tree, int start, int end, int depth) {
        const int m = end - start;
        const auto& any_order = order_[0];
        double sum = 0.0, sum_sq = 0.0;
        for (int i = start; i < end; ++i) {
            const double v = ys_[static_cast<std::size_t>(any_order[static_cast<std::size_t>(i)])];
            sum += v;
            sum_sq += v * v;
        }
        const double node_mean = sum / m;

        const int node_id = static_cast<int>(tree.nodes.size());
        tree.nodes.push_back(TreeNode{});
        tree.nodes[static_cast<std::size_t>(node_id)].value = node_mean;

        const bool pure = sum_sq - sum * sum / m <= 1e-12 * (std::fabs(sum_sq) + 1.0);
        if (depth >= max_depth_ || m < 2 * min_leaf_ || pure) return node_id;

        std::vector<int> candidates;
        sample_features(candidates);

        int best_feature = -1;
        double best_threshold = 0.0;
        double best_score = sum * sum / m;  // score of not splitting
        for (int f : candidates) {
            const auto& ord = order_[static_cast<std::size_t>(f)];
            double left_sum = 0.0;
            for (int i = start; i < end - 1; ++i) {
                const int slot = ord[static_cast<std::size_t>(i)];
                left_sum += ys_[static_cast<std::size_t>(slot)];
                const double v = feature_value(slot, f);
                const double v_next = feature_value(ord[static_cast<std::size_t>(i + 1)], f);
                if (v == v_next) continue;  // not a boundary between distinct values
                const int n_left = i - start + 1;
                const int n_right = m - n_left;
                if (n_left < min_leaf_ || n_right < min_leaf_) continue;
                const double right_sum = sum - left_sum;
                const double score = left_sum * left_sum / n_left + right_sum * right_sum / n_right;
                if (score > best_score) {
                    best_score = score;
                    best_feature = f;
                    best_threshold = v + 0.5 * (v_next - v);
                }
            }
        }
        if (best_feature < 0) return node_id;

        // Stable partition every feature ordering by the chosen split, so
        // children inherit sorted per-feature orderings.
        for (int i = start; i < end; ++i) {
            const int slot = order_[static_cast<std::size_t>(best_feature)][static_cast<std::size_t>(i)];
            side_[static_cast<std::size_t>(slot)] =
                feature_value(slot, best_feature) <= best_threshold ? 1 : 0;
        }
        int mid = start;
        for (std::size_t f = 0; f < order_.size(); ++f) {
            auto& ord = order_[f];
            int l = start;
            int r = 0;
            for (int i = start; i < end; ++i) {
                const int slot = ord[static_cast<std::size_t>(i)];
                if (side_[static_cast<std::size_t>(slot)]) ord[static_cast<std::size_t>(l++)] = slot;
                else scratch_[static_cast<std::size_t>(r++)] = slot;
            }
            for (int i = 0; i < r; ++i) ord[static_cast<std::size_t>(l + i)] = scratch_[static_cast<std::size_t>(i)];
            mid = l;
        }

        const int left_id = build_node(tree, start, mid, depth + 1);
        const int right_id = build_node(tree, mid, end, depth + 1);
        tree.nodes[static_cast<std::size_t>(node_id)].feature = best_feature;
        tree.nodes[static_cast<std::size_t>(node_id)].threshold = best_threshold;
        tree.nodes[static_cast<std::size_t>(node_id)].left = left_id;
        tree.nodes[static_cast<std::size_t>(node_id)].right = right_id;
        return node_id;
    }

    const Eigen::MatrixXd& X_;
    const int max_depth_;
    const int min_leaf_;
    const int mtry_;
    Rng& rng_;
    std::vector<int> rows_;
    std::vector<double> ys_;
    std::vector<std::vector<int>> order_;
    std::vector<char> side_;
    std::vector<int> scratch_;
    std::vector<int> feature_pool_;
};

inline RegressionTree fit_tree(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                               std::vector<int> sample_rows, int max_depth, int min_leaf, int mtry,
                               Rng& rng) {
    TreeBuilder b(X, y, std::move(sample_rows), max_depth, min_leaf, mtry, rng);
    return b.build();
}

} // namespace detail

} // namespace sdidml
