#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "bezierseg/errors.hpp"

namespace bezierseg {

struct MatchPair {
    int pred = 0;  // predicted primitive k
    int gt = 0;    // ground-truth primitive k-hat

    friend bool operator==(MatchPair, MatchPair) = default;
};

struct MatchResult {
    std::vector<MatchPair> pairs;  // sorted by predicted index
    double objective = 0.0;

    /// gt index matched to predicted k, or -1.
    [[nodiscard]] int gt_of(int pred) const {
        for (const auto& p : pairs)
            if (p.pred == pred) return p.gt;
        return -1;
    }

    /// Checks the pairs form a partial injection of size min(K, K_hat).
    void validate(int num_pred, int num_gt) const {
        detail::require<ContractError>(
            static_cast<int>(pairs.size()) == std::min(num_pred, num_gt),
            "matching must pair min(K, K_hat) primitives");
        std::vector<char> seen_pred(static_cast<std::size_t>(num_pred), 0);
        std::vector<char> seen_gt(static_cast<std::size_t>(num_gt), 0);
        for (const auto& p : pairs) {
            detail::require<ContractError>(p.pred >= 0 && p.pred < num_pred && p.gt >= 0 &&
                                               p.gt < num_gt,
                                           "matched index out of range");
            detail::require<ContractError>(!seen_pred[p.pred] && !seen_gt[p.gt],
                                           "matching is not injective");
            seen_pred[p.pred] = seen_gt[p.gt] = 1;
        }
    }
};

/// Minimum-cost assignment of rows (predicted) to columns (ground truth).
/// Rectangular input is padded to square with a constant above every real
/// cost; padded pairs are dropped. objective is the total matched cost.
inline MatchResult hungarian(const Eigen::MatrixXd& cost) {
    const int rows = static_cast<int>(cost.rows());
    const int cols = static_cast<int>(cost.cols());
    detail::require<ContractError>(rows >= 1 && cols >= 1, "cost matrix must be non-empty");
    detail::require<ContractError>(cost.allFinite(), "cost matrix contains NaN or inf");

    const int n = std::max(rows, cols);
    const double pad = cost.maxCoeff() + 1.0;
    auto at = [&](int i, int j) { return (i < rows && j < cols) ? cost(i, j) : pad; };

    // Shortest augmenting path with dual potentials, 1-based with a virtual
    // column 0. Rows are inserted in increasing order and the strict `<` picks
    // the lowest column on ties, so the result is deterministic.
    const double inf = std::numeric_limits<double>::infinity();
    std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
    std::vector<int> p(n + 1, 0), way(n + 1, 0);
    for (int i = 1; i <= n; ++i) {
        p[0] = i;
        int j0 = 0;
        std::vector<double> minv(n + 1, inf);
        std::vector<char> used(n + 1, 0);
        do {
            used[j0] = 1;
            const int i0 = p[j0];
            double delta = inf;
            int j1 = 0;
            for (int j = 1; j <= n; ++j) {
                if (used[j]) continue;
                const double cur = at(i0 - 1, j - 1) - u[i0] - v[j];
                if (cur < minv[j]) {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if (minv[j] < delta) {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for (int j = 0; j <= n; ++j) {
                if (used[j]) {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
        } while (p[j0] != 0);
        do {
            const int j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
        } while (j0 != 0);
    }

    std::vector<int> row_to_col(n, -1);
    for (int j = 1; j <= n; ++j) row_to_col[p[j] - 1] = j - 1;

    MatchResult result;
    for (int i = 0; i < rows; ++i) {
        const int j = row_to_col[i];
        if (j < cols) {
            result.pairs.push_back({i, j});
            result.objective += cost(i, j);
        }
    }
    return result;
}

/// One-hot N x K_hat encoding of integer labels in [0, K_hat).
inline Eigen::MatrixXd one_hot(const std::vector<int>& labels, int num_classes) {
    Eigen::MatrixXd m = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(labels.size()), num_classes);
    for (std::size_t i = 0; i < labels.size(); ++i) {
        detail::require<ContractError>(labels[i] >= 0 && labels[i] < num_classes,
                                       "label out of range for one-hot encoding");
        m(static_cast<Eigen::Index>(i), labels[i]) = 1.0;
    }
    return m;
}

/// Relaxed IOU between a soft column and a one-hot column:
/// w.h / (|w|_1 + |h|_1 - w.h). Entries must be non-negative.
inline double relaxed_iou(const Eigen::Ref<const Eigen::VectorXd>& soft,
                          const Eigen::Ref<const Eigen::VectorXd>& hard) {
    const double inter = soft.dot(hard);
    const double uni = soft.sum() + hard.sum() - inter;
    detail::require<ContractError>(uni > 0.0, "relaxed IOU denominator is not positive");
    return inter / uni;
}

namespace detail {

inline void check_ground_truth(const Eigen::MatrixXd& gt_onehot) {
    require<ContractError>(gt_onehot.allFinite(), "ground-truth membership is not finite");
    for (Eigen::Index i = 0; i < gt_onehot.rows(); ++i) {
        int ones = 0;
        for (Eigen::Index k = 0; k < gt_onehot.cols(); ++k) {
            const double v = gt_onehot(i, k);
            require<ContractError>(v == 0.0 || v == 1.0, "ground-truth membership must be 0/1");
            ones += v == 1.0;
        }
        require<ContractError>(ones == 1, "ground-truth row " + std::to_string(i) + " is not one-hot");
    }
    for (Eigen::Index k = 0; k < gt_onehot.cols(); ++k)
        require<ContractError>(gt_onehot.col(k).sum() > 0.0,
                               "ground-truth primitive " + std::to_string(k) + " is empty");
}

}  // namespace detail

/// Pairs predicted columns of W with ground-truth columns maximizing total
/// relaxed IOU. objective is the sum of matched IOUs.
inline MatchResult match_primitives(const Eigen::MatrixXd& membership, const Eigen::MatrixXd& gt_onehot) {
    detail::require<ContractError>(membership.rows() == gt_onehot.rows(),
                                   "membership and ground truth differ in point count");
    detail::require<ContractError>(membership.allFinite() && (membership.array() >= 0.0).all(),
                                   "membership must be finite and non-negative");
    detail::check_ground_truth(gt_onehot);

    Eigen::MatrixXd cost(membership.cols(), gt_onehot.cols());
    for (Eigen::Index k = 0; k < membership.cols(); ++k)
        for (Eigen::Index g = 0; g < gt_onehot.cols(); ++g)
            cost(k, g) = -relaxed_iou(membership.col(k), gt_onehot.col(g));

    MatchResult result = hungarian(cost);
    result.objective = 0.0;
    for (const auto& p : result.pairs) result.objective -= cost(p.pred, p.gt);
    return result;
}

}  // namespace bezierseg
