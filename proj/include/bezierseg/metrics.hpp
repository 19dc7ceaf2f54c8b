#pragma once

#include <Eigen/Dense>

#include <nlohmann/json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <map>
#include <numbers>
#include <string>
#include <vector>

#include "bezierseg/errors.hpp"
#include "bezierseg/matching.hpp"

namespace bezierseg {

/// Fraction of matched primitives whose type (degree class) agrees. The
/// denominator is the number of matched pairs.
inline double type_accuracy(const std::vector<int>& pred_types, const std::vector<int>& gt_types,
                            const std::vector<MatchPair>& pairs) {
    detail::require<ContractError>(!pairs.empty(), "type accuracy needs at least one matched pair");
    int hits = 0;
    for (const auto& p : pairs) {
        detail::require<ContractError>(p.pred >= 0 && p.pred < static_cast<int>(pred_types.size()) && p.gt >= 0 &&
                                           p.gt < static_cast<int>(gt_types.size()),
                                       "matched index has no type");
        hits += pred_types[static_cast<std::size_t>(p.pred)] == gt_types[static_cast<std::size_t>(p.gt)];
    }
    return static_cast<double>(hits) / static_cast<double>(pairs.size());
}

/// Rand index from the contingency table: agreeing pairs over all pairs.
/// Counts are exact in 64-bit integers.
inline double rand_index(const std::vector<int>& a, const std::vector<int>& b) {
    detail::require<ContractError>(a.size() == b.size(), "labelings differ in length");
    detail::require<ContractError>(a.size() >= 2, "rand index needs at least two points");
    auto pairs = [](std::int64_t c) { return c * (c - 1) / 2; };
    std::map<std::pair<int, int>, std::int64_t> joint;
    std::map<int, std::int64_t> ra, rb;
    for (std::size_t i = 0; i < a.size(); ++i) {
        ++joint[{a[i], b[i]}];
        ++ra[a[i]];
        ++rb[b[i]];
    }
    const auto n = static_cast<std::int64_t>(a.size());
    std::int64_t same_both = 0, same_a = 0, same_b = 0;
    for (const auto& [k, c] : joint) same_both += pairs(c);
    for (const auto& [k, c] : ra) same_a += pairs(c);
    for (const auto& [k, c] : rb) same_b += pairs(c);
    const std::int64_t total = pairs(n);
    // pairs together in both, plus pairs apart in both
    const std::int64_t agree = total - same_a - same_b + 2 * same_both;
    return static_cast<double>(agree) / static_cast<double>(total);
}

inline constexpr double kUnitTolerance = 1e-6;

/// Mean unsigned angle between corresponding unit normals, in radians.
inline double normal_error(const Eigen::MatrixXd& n_gt, const Eigen::MatrixXd& n_pred) {
    detail::require<ContractError>(n_gt.cols() == 3 && n_pred.cols() == 3 && n_gt.rows() == n_pred.rows(),
                                   "normal arrays must both be N x 3");
    detail::require<ContractError>(n_gt.rows() >= 1, "normal error needs at least one point");
    double sum = 0.0;
    for (Eigen::Index i = 0; i < n_gt.rows(); ++i) {
        detail::require<ContractError>(std::abs(n_gt.row(i).norm() - 1.0) <= kUnitTolerance &&
                                           std::abs(n_pred.row(i).norm() - 1.0) <= kUnitTolerance,
                                       "normal " + std::to_string(i) + " is not unit length");
        const Eigen::Vector3d a = n_gt.row(i).transpose(), b = n_pred.row(i).transpose();
        // atan2 form: exact zero for identical or opposite vectors, well conditioned near 0
        sum += std::atan2(a.cross(b).norm(), std::abs(a.dot(b)));
    }
    return sum / static_cast<double>(n_gt.rows());
}

/// Point labels with a type per label id and per-point normals.
struct Segmentation {
    std::vector<int> labels;
    std::vector<int> types;  // indexed by label id
    Eigen::MatrixXd normals;
};

struct EvalSummary {
    double acc = 0.0;
    double rand_index = 0.0;
    double normal_err = 0.0;
    double num_primitives = 0.0;
    double wall_time = 0.0;  // seconds

    [[nodiscard]] nlohmann::ordered_json to_json() const {
        nlohmann::ordered_json j;
        j["acc"] = acc;
        j["rand_index"] = rand_index;
        j["normal_err"] = normal_err;
        j["num_primitives"] = num_primitives;
        j["wall_time"] = wall_time;
        return j;
    }
};

class Stopwatch {
public:
    Stopwatch() : start_(std::chrono::steady_clock::now()) {}
    void restart() { start_ = std::chrono::steady_clock::now(); }
    [[nodiscard]] double seconds() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    }

private:
    std::chrono::steady_clock::time_point start_;
};

namespace detail {

// Maps used label ids to 0..L-1 in ascending order.
inline std::vector<int> dense_ids(const std::vector<int>& labels, std::vector<int>& original) {
    std::map<int, int> ids;
    for (int l : labels) {
        require<ContractError>(l >= 0, "labels must be non-negative");
        ids.emplace(l, 0);
    }
    original.clear();
    for (auto& [l, idx] : ids) {
        idx = static_cast<int>(original.size());
        original.push_back(l);
    }
    std::vector<int> out(labels.size());
    for (std::size_t i = 0; i < labels.size(); ++i) out[i] = ids[labels[i]];
    return out;
}

inline std::vector<int> remap_types(const Segmentation& s, const std::vector<int>& original) {
    std::vector<int> t;
    for (int l : original) {
        require<ContractError>(l < static_cast<int>(s.types.size()), "label " + std::to_string(l) + " has no type");
        t.push_back(s.types[static_cast<std::size_t>(l)]);
    }
    return t;
}

}  // namespace detail

/// Aggregates all metrics. Predicted and ground-truth primitives are paired by
/// Hungarian matching on IOU of the hard labels.
inline EvalSummary eval_run(const Segmentation& pred, const Segmentation& gt, const Stopwatch& timer) {
    detail::require<ContractError>(pred.labels.size() == gt.labels.size(), "prediction and ground truth differ in size");
    std::vector<int> pred_ids, gt_ids;
    const auto pl = detail::dense_ids(pred.labels, pred_ids);
    const auto gl = detail::dense_ids(gt.labels, gt_ids);
    const auto k = static_cast<int>(pred_ids.size());
    const auto k_hat = static_cast<int>(gt_ids.size());
    const MatchResult match = match_primitives(one_hot(pl, k), one_hot(gl, k_hat));

    EvalSummary s;
    s.acc = type_accuracy(detail::remap_types(pred, pred_ids), detail::remap_types(gt, gt_ids), match.pairs);
    s.rand_index = rand_index(pred.labels, gt.labels);
    s.normal_err = normal_error(gt.normals, pred.normals);
    s.num_primitives = k;
    s.wall_time = timer.seconds();
    return s;
}

}  // namespace bezierseg
