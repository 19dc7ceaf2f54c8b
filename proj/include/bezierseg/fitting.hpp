#pragma once

// Classical segmentation and refitting: region growing over a k-NN graph,
// planar (PCA) parameterization, and linear least-squares fitting of
// polynomial Bezier patches with minimal-degree selection.

#include <Eigen/Dense>
#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numbers>
#include <numeric>
#include <optional>
#include <queue>
#include <string>
#include <utility>
#include <vector>

#include "bezierseg/bezier.hpp"
#include "bezierseg/errors.hpp"

namespace bezierseg {

// ---------------------------------------------------------------------------
// Neighborhoods

struct NeighborGraph {
    std::vector<std::vector<int>> index;   // k nearest, ascending distance, self excluded
    std::vector<std::vector<double>> dist;
};

/// Exact k nearest neighbors by brute force over all pairs.
inline NeighborGraph knn(const Matrix& points, int k) {
    const auto n = static_cast<int>(points.rows());
    detail::require<ContractError>(points.cols() == 3, "points must be N x 3");
    detail::require<ContractError>(k >= 1, "k must be positive");
    const int kk = std::min(k, n - 1);
    NeighborGraph g;
    g.index.resize(static_cast<std::size_t>(n));
    g.dist.resize(static_cast<std::size_t>(n));
    if (kk <= 0) return g;
    std::vector<std::pair<double, int>> cand(static_cast<std::size_t>(n - 1));
    for (int i = 0; i < n; ++i) {
        std::size_t c = 0;
        for (int j = 0; j < n; ++j)
            if (j != i) cand[c++] = {(points.row(i) - points.row(j)).squaredNorm(), j};
        std::partial_sort(cand.begin(), cand.begin() + kk, cand.end());
        auto& idx = g.index[static_cast<std::size_t>(i)];
        auto& dst = g.dist[static_cast<std::size_t>(i)];
        for (int j = 0; j < kk; ++j) {
            idx.push_back(cand[static_cast<std::size_t>(j)].second);
            dst.push_back(std::sqrt(cand[static_cast<std::size_t>(j)].first));
        }
    }
    return g;
}

/// Unoriented normals from the smallest principal axis of each neighborhood.
inline Matrix estimate_normals(const Matrix& points, const NeighborGraph& graph) {
    const auto n = points.rows();
    Matrix normals(n, 3);
    for (Eigen::Index i = 0; i < n; ++i) {
        const auto& nb = graph.index[static_cast<std::size_t>(i)];
        Vec3 mean = points.row(i).transpose();
        for (int j : nb) mean += points.row(j).transpose();
        mean /= static_cast<double>(nb.size() + 1);
        Eigen::Matrix3d cov = (points.row(i).transpose() - mean) * (points.row(i).transpose() - mean).transpose();
        for (int j : nb) {
            const Vec3 d = points.row(j).transpose() - mean;
            cov += d * d.transpose();
        }
        Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> eig(cov);
        normals.row(i) = eig.eigenvectors().col(0).transpose();
    }
    return normals;
}

// ---------------------------------------------------------------------------
// Parameterization

/// Projects points onto their best-fit (PCA) plane and maps the projection
/// into [0,1]^2 by a similarity (common scale on both axes). When normals are
/// given, the uv frame is oriented so du x dv agrees with their mean.
inline Matrix parameterize(const Matrix& points, const std::optional<Matrix>& normals = std::nullopt) {
    detail::require<ContractError>(points.cols() == 3, "points must be M x 3");
    if (points.rows() < 3) throw DegenerateInputError("parameterization needs at least 3 points");
    const Vec3 centroid = points.colwise().mean().transpose();
    const Matrix centered = points.rowwise() - centroid.transpose();
    const Eigen::Matrix3d cov = centered.transpose() * centered;
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> eig(cov);
    const Vec3 ev = eig.eigenvalues();
    if (!(ev[2] > 0.0) || ev[1] <= 1e-12 * ev[2]) throw DegenerateInputError("points are collinear or coincident");

    Vec3 e_major = eig.eigenvectors().col(2);
    Vec3 e_minor = eig.eigenvectors().col(1);
    if (normals) {
        detail::require<ContractError>(normals->rows() == points.rows() && normals->cols() == 3,
                                       "normals must match points");
        const Vec3 mean_normal = normals->colwise().sum().transpose();
        if (e_major.cross(e_minor).dot(mean_normal) < 0.0) e_minor = -e_minor;
    }
    const Vector a = centered * e_major;
    const Vector b = centered * e_minor;
    const double a0 = a.minCoeff(), b0 = b.minCoeff();
    const double scale = std::max(a.maxCoeff() - a0, b.maxCoeff() - b0);
    Matrix uv(points.rows(), 2);
    uv.col(0) = ((a.array() - a0) / scale).min(1.0).max(0.0).matrix();
    uv.col(1) = ((b.array() - b0) / scale).min(1.0).max(0.0).matrix();
    return uv;
}

// ---------------------------------------------------------------------------
// Least-squares fitting

/// Relative singular value below which the collocation matrix counts as rank deficient.
inline constexpr double kRankTolerance = 1e-12;

struct FitReport {
    BezierPatch patch;
    double rms = 0.0;      // root mean squared point distance
    double max_err = 0.0;  // largest point distance
    int n_points = 0;
    double condition_hint = 1.0;  // sigma_max / sigma_min of the collocation matrix
    bool rank_deficient = false;
};

/// Collocation matrix of the unit-weight Bezier basis, rows = points,
/// columns = control points (r, s) in row-major order.
inline Matrix collocation_matrix(const Matrix& uv, DegreePair degree) {
    Matrix a(uv.rows(), degree.num_ctrl());
    for (Eigen::Index i = 0; i < uv.rows(); ++i)
        for (int r = 0; r <= degree.m; ++r) {
            const double bu = detail::bernstein(r, degree.m, uv(i, 0));
            for (int s = 0; s <= degree.n; ++s)
                a(i, r * (degree.n + 1) + s) = bu * detail::bernstein(s, degree.n, uv(i, 1));
        }
    return a;
}

namespace detail {

inline void residual_stats(const Matrix& points, const Matrix& fitted, FitReport& rep) {
    const Vector d = (points - fitted).rowwise().norm();
    rep.rms = std::sqrt(d.squaredNorm() / static_cast<double>(d.size()));
    rep.max_err = d.maxCoeff();
    // sqrt(mean d^2) <= max d holds mathematically; rounding can break it by an ulp
    rep.rms = std::min(rep.rms, rep.max_err);
}

}  // namespace detail

/// Fits a polynomial (unit-weight) Bezier patch of the given degree to points
/// at fixed uv by linear least squares, solved through an SVD of the
/// collocation matrix. Rank-deficient systems return the minimum-norm
/// solution with rank_deficient set.
inline FitReport fit_control_points(const Matrix& points, const Matrix& uv, DegreePair degree,
                                    DegreeLayout layout = {}) {
    detail::require<DomainError>(layout.contains(degree), "fit degree outside layout");
    detail::require<ContractError>(points.cols() == 3 && uv.cols() == 2 && points.rows() == uv.rows(),
                                   "points must be M x 3 and uv M x 2");
    detail::require<ContractError>(points.rows() >= degree.num_ctrl(),
                                   "not enough points for degree (" + std::to_string(degree.m) + "," +
                                       std::to_string(degree.n) + ")");
    for (Eigen::Index i = 0; i < uv.rows(); ++i) detail::check_uv({uv(i, 0), uv(i, 1)});

    const Matrix a = collocation_matrix(uv, degree);
    Eigen::BDCSVD<Matrix> svd(a, Eigen::ComputeThinU | Eigen::ComputeThinV);
    const Vector& sv = svd.singularValues();
    const double smax = sv(0);
    const double smin = sv(sv.size() - 1);

    FitReport rep;
    rep.n_points = static_cast<int>(points.rows());
    rep.rank_deficient = !(smin > kRankTolerance * smax);
    rep.condition_hint = smin > 0.0 ? smax / smin : std::numeric_limits<double>::infinity();
    svd.setThreshold(kRankTolerance);
    const Matrix ctrl = svd.solve(points);

    rep.patch = BezierPatch{degree, ControlGrid(layout)};
    for (int r = 0; r <= degree.m; ++r)
        for (int s = 0; s <= degree.n; ++s) rep.patch.ctrl.set(r, s, ctrl.row(r * (degree.n + 1) + s).transpose(), 1.0);
    detail::residual_stats(points, a * ctrl, rep);
    return rep;
}

struct DegreeSelection {
    DegreePair degree;
    bool met_tolerance = false;
    FitReport fit;
};

/// Candidate degrees in selection order: ascending m + n, then ascending m.
inline std::vector<DegreePair> degree_candidates(DegreeLayout layout) {
    std::vector<DegreePair> c;
    for (int m = 1; m <= layout.max_u; ++m)
        for (int n = 1; n <= layout.max_v; ++n) c.push_back({m, n});
    std::stable_sort(c.begin(), c.end(), [](DegreePair a, DegreePair b) {
        return a.m + a.n != b.m + b.n ? a.m + a.n < b.m + b.n : a.m < b.m;
    });
    return c;
}

/// Smallest candidate degree whose refit rms is within tol; falls back to the
/// maximum degree with met_tolerance = false.
inline DegreeSelection select_degree(const Matrix& points, const Matrix& uv, double tol, DegreeLayout layout = {}) {
    const DegreePair top{layout.max_u, layout.max_v};
    detail::require<ContractError>(points.rows() >= top.num_ctrl(),
                                   "not enough points for the largest candidate degree");
    for (DegreePair d : degree_candidates(layout)) {
        FitReport fit = fit_control_points(points, uv, d, layout);
        if (fit.rms <= tol) return {d, true, std::move(fit)};
    }
    return {top, false, fit_control_points(points, uv, top, layout)};
}

/// Gauss-Newton foot-point projection of each point onto the patch, starting
/// from the current uv and clamped to the unit square.
inline Matrix reproject_uv(const BezierPatch& patch, const Matrix& points, const Matrix& uv, int steps = 5) {
    Matrix out = uv;
    for (Eigen::Index i = 0; i < points.rows(); ++i) {
        UV at{out(i, 0), out(i, 1)};
        for (int it = 0; it < steps; ++it) {
            const Vec3 r = eval_patch(patch, at) - points.row(i).transpose();
            const Partials d = patch_partials(patch, at);
            Eigen::Matrix2d jtj;
            jtj << d.du.dot(d.du), d.du.dot(d.dv), d.du.dot(d.dv), d.dv.dot(d.dv);
            const Vec2 jtr(d.du.dot(r), d.dv.dot(r));
            if (std::abs(jtj.determinant()) < 1e-18) break;
            const Vec2 step = jtj.ldlt().solve(jtr);
            at.u = std::clamp(at.u - step[0], 0.0, 1.0);
            at.v = std::clamp(at.v - step[1], 0.0, 1.0);
        }
        out(i, 0) = at.u;
        out(i, 1) = at.v;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Region growing

struct RegionGrowParams {
    int neighbors = 16;
    double max_angle_deg = 20.0;
    double distance_factor = 3.0;  // edge admitted if length <= factor * median mean-kNN distance
    int min_cluster = 16;
    bool use_given_normals = false;
};

namespace detail {

inline std::vector<int> compact_labels(const std::vector<int>& labels) {
    std::map<int, int> remap;
    std::vector<int> out(labels.size());
    for (std::size_t i = 0; i < labels.size(); ++i) {
        auto [it, inserted] = remap.try_emplace(labels[i], static_cast<int>(remap.size()));
        out[i] = it->second;
    }
    return out;
}

// Folds clusters smaller than min_size into the neighboring cluster sharing the
// most k-NN edges (nearest outside point when isolated), smallest first.
inline void merge_small_clusters(std::vector<int>& labels, const Matrix& points, const NeighborGraph& graph,
                                 int min_size) {
    for (;;) {
        std::map<int, std::vector<int>> members;
        for (std::size_t i = 0; i < labels.size(); ++i) members[labels[i]].push_back(static_cast<int>(i));
        if (members.size() <= 1) return;
        int small = -1;
        std::size_t small_size = std::numeric_limits<std::size_t>::max();
        for (const auto& [lbl, pts] : members)
            if (static_cast<int>(pts.size()) < min_size && pts.size() < small_size) {
                small = lbl;
                small_size = pts.size();
            }
        if (small < 0) return;

        std::map<int, int> votes;
        for (int i : members[small])
            for (int j : graph.index[static_cast<std::size_t>(i)])
                if (labels[static_cast<std::size_t>(j)] != small) ++votes[labels[static_cast<std::size_t>(j)]];
        int target = -1;
        int best = 0;
        for (const auto& [lbl, v] : votes)
            if (v > best) {
                best = v;
                target = lbl;
            }
        if (target < 0) {
            double nearest = std::numeric_limits<double>::infinity();
            for (int i : members[small])
                for (Eigen::Index j = 0; j < points.rows(); ++j) {
                    if (labels[static_cast<std::size_t>(j)] == small) continue;
                    const double d = (points.row(i) - points.row(j)).squaredNorm();
                    if (d < nearest) {
                        nearest = d;
                        target = labels[static_cast<std::size_t>(j)];
                    }
                }
        }
        for (int i : members[small]) labels[static_cast<std::size_t>(i)] = target;
    }
}

}  // namespace detail

/// Segments a point cloud into smooth regions. Seeds are visited in ascending
/// local normal variance; a region absorbs a k-NN neighbor when the edge is
/// short and the unsigned normal angle is within max_angle_deg. Regions below
/// min_cluster points are merged into an adjacent region. Labels are 0..L-1
/// in order of first appearance.
inline std::vector<int> region_grow(const Matrix& points, const std::optional<Matrix>& normals = std::nullopt,
                                    const RegionGrowParams& params = {}) {
    detail::require<ContractError>(points.cols() == 3 && points.rows() >= 1, "points must be N x 3");
    const auto n = static_cast<int>(points.rows());
    const NeighborGraph graph = knn(points, params.neighbors);
    Matrix nrm;
    detail::require<ContractError>(params.max_angle_deg >= 0.0 && params.max_angle_deg <= 90.0 &&
                                       params.distance_factor > 0.0 && params.min_cluster >= 1,
                                   "invalid region growing parameters");
    detail::require<ContractError>(!params.use_given_normals || normals, "use_given_normals set but no normals given");
    if (params.use_given_normals) {
        detail::require<ContractError>(normals->rows() == n && normals->cols() == 3, "normals must match points");
        nrm = *normals;
    } else {
        nrm = estimate_normals(points, graph);
    }

    std::vector<double> spread(static_cast<std::size_t>(n), 0.0);
    std::vector<double> mean_dist(static_cast<std::size_t>(n), 0.0);
    for (int i = 0; i < n; ++i) {
        const auto& nb = graph.index[static_cast<std::size_t>(i)];
        for (std::size_t j = 0; j < nb.size(); ++j) {
            spread[static_cast<std::size_t>(i)] += 1.0 - std::abs(nrm.row(i).dot(nrm.row(nb[j])));
            mean_dist[static_cast<std::size_t>(i)] += graph.dist[static_cast<std::size_t>(i)][j];
        }
        if (!nb.empty()) {
            spread[static_cast<std::size_t>(i)] /= static_cast<double>(nb.size());
            mean_dist[static_cast<std::size_t>(i)] /= static_cast<double>(nb.size());
        }
    }
    std::vector<double> sorted = mean_dist;
    std::nth_element(sorted.begin(), sorted.begin() + n / 2, sorted.end());
    const double max_edge = params.distance_factor * sorted[static_cast<std::size_t>(n / 2)];
    const double min_dot = std::cos(params.max_angle_deg * std::numbers::pi / 180.0);

    std::vector<int> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        return spread[static_cast<std::size_t>(a)] < spread[static_cast<std::size_t>(b)];
    });

    std::vector<int> labels(static_cast<std::size_t>(n), -1);
    int next = 0;
    std::queue<int> frontier;
    for (int seed : order) {
        if (labels[static_cast<std::size_t>(seed)] >= 0) continue;
        labels[static_cast<std::size_t>(seed)] = next;
        frontier.push(seed);
        while (!frontier.empty()) {
            const int i = frontier.front();
            frontier.pop();
            const auto& nb = graph.index[static_cast<std::size_t>(i)];
            for (std::size_t jj = 0; jj < nb.size(); ++jj) {
                const int j = nb[jj];
                if (labels[static_cast<std::size_t>(j)] >= 0) continue;
                if (graph.dist[static_cast<std::size_t>(i)][jj] > max_edge) continue;
                if (std::abs(nrm.row(i).dot(nrm.row(j))) < min_dot) continue;
                labels[static_cast<std::size_t>(j)] = next;
                frontier.push(j);
            }
        }
        ++next;
    }
    detail::merge_small_clusters(labels, points, graph, params.min_cluster);
    return detail::compact_labels(labels);
}

// ---------------------------------------------------------------------------
// Refitting a segmented model

struct RefitOptions {
    DegreeLayout layout{};
    double tol = 1e-6;                 // degree-selection rms tolerance
    std::optional<Matrix> uv;          // per-point uv to use instead of parameterize
    std::optional<Matrix> normals;     // orientation hint for parameterize
    int reparam_iterations = 0;        // foot-point reparameterization passes (<= 5)
};

struct PatchRefit {
    int label = 0;
    std::vector<int> indices;            // points carrying this label
    Matrix uv;                           // uv of those points used by the final fit
    std::optional<FitReport> fit;        // empty when skipped or failed
    bool met_tolerance = false;
    std::string status = "ok";           // "ok", "empty" or an error message
};

/// Per label: parameterize, select the degree, fit. A failing label records
/// its error and leaves the others unaffected. Label ids 0..max with no points
/// yield an "empty" entry.
inline std::vector<PatchRefit> refit_model(const Matrix& points, const std::vector<int>& labels,
                                           const RefitOptions& opt = {}) {
    detail::require<ContractError>(points.cols() == 3 && static_cast<Eigen::Index>(labels.size()) == points.rows(),
                                   "labels must cover all points");
    detail::require<ContractError>(!opt.uv || (opt.uv->rows() == points.rows() && opt.uv->cols() == 2),
                                   "given uv must be N x 2");
    detail::require<ContractError>(opt.reparam_iterations >= 0 && opt.reparam_iterations <= 5,
                                   "at most 5 reparameterization passes");
    int max_label = -1;
    for (int l : labels) {
        detail::require<ContractError>(l >= 0, "labels must be non-negative");
        max_label = std::max(max_label, l);
    }
    std::vector<PatchRefit> out(static_cast<std::size_t>(max_label + 1));
    for (std::size_t i = 0; i < labels.size(); ++i) out[static_cast<std::size_t>(labels[i])].indices.push_back(static_cast<int>(i));

    for (int l = 0; l <= max_label; ++l) {
        PatchRefit& pr = out[static_cast<std::size_t>(l)];
        pr.label = l;
        if (pr.indices.empty()) {
            pr.status = "empty";
            continue;
        }
        const auto m = static_cast<Eigen::Index>(pr.indices.size());
        Matrix pts(m, 3);
        for (Eigen::Index i = 0; i < m; ++i) pts.row(i) = points.row(pr.indices[static_cast<std::size_t>(i)]);
        try {
            if (opt.uv) {
                pr.uv.resize(m, 2);
                for (Eigen::Index i = 0; i < m; ++i) pr.uv.row(i) = opt.uv->row(pr.indices[static_cast<std::size_t>(i)]);
            } else {
                std::optional<Matrix> nrm;
                if (opt.normals) {
                    nrm = Matrix(m, 3);
                    for (Eigen::Index i = 0; i < m; ++i)
                        nrm->row(i) = opt.normals->row(pr.indices[static_cast<std::size_t>(i)]);
                }
                pr.uv = parameterize(pts, nrm);
            }
            DegreeSelection sel = select_degree(pts, pr.uv, opt.tol, opt.layout);
            for (int pass = 0; pass < opt.reparam_iterations; ++pass) {
                const Matrix uv2 = reproject_uv(sel.fit.patch, pts, pr.uv);
                FitReport again = fit_control_points(pts, uv2, sel.degree, opt.layout);
                if (!(again.rms < sel.fit.rms)) break;
                sel.fit = std::move(again);
                pr.uv = uv2;
            }
            pr.met_tolerance = sel.fit.rms <= opt.tol;
            pr.fit = std::move(sel.fit);
        } catch (const Error& e) {
            pr.status = e.what();
        }
    }
    return out;
}

}  // namespace bezierseg
