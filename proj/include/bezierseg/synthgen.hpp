#pragma once

// Synthetic annotated point clouds: random rational Bezier patches sampled
// with a non-uniform uv density, with every label the losses consume
// (coordinates, normals, uv, patch ids, per-patch degrees and control grids).

#include <Eigen/Dense>
#include <Eigen/Geometry>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "bezierseg/bezier.hpp"
#include "bezierseg/errors.hpp"
#include "bezierseg/rng.hpp"

namespace bezierseg {

inline constexpr int kMinPointsPerPatch = 16;

struct AnnotatedCloud {
    DegreeLayout layout;
    Matrix coords;   // N x 3
    Matrix normals;  // N x 3, unit
    Matrix uv;       // N x 2 in [0,1]^2
    std::vector<int> patch_id;
    std::vector<BezierPatch> patches;

    [[nodiscard]] int num_points() const { return static_cast<int>(coords.rows()); }
    [[nodiscard]] int num_patches() const { return static_cast<int>(patches.size()); }

    /// Shape and range consistency; not the geometric closed-loop property.
    void validate() const {
        const auto n = coords.rows();
        detail::require<ContractError>(coords.cols() == 3 && normals.rows() == n && normals.cols() == 3 &&
                                           uv.rows() == n && uv.cols() == 2 &&
                                           static_cast<Eigen::Index>(patch_id.size()) == n,
                                       "annotated cloud arrays have inconsistent shapes");
        for (int id : patch_id)
            detail::require<ContractError>(id >= 0 && id < num_patches(), "patch id out of range");
        for (const auto& p : patches) {
            detail::require<ContractError>(p.layout() == layout, "patch layout differs from cloud layout");
            p.validate();
        }
    }

    /// Bit-exact equality of every array (sizes compared first).
    friend bool operator==(const AnnotatedCloud& a, const AnnotatedCloud& b) {
        auto same = [](const Matrix& x, const Matrix& y) {
            return x.rows() == y.rows() && x.cols() == y.cols() && x == y;
        };
        return a.layout == b.layout && same(a.coords, b.coords) && same(a.normals, b.normals) &&
               same(a.uv, b.uv) && a.patch_id == b.patch_id && a.patches == b.patches;
    }
};

/// Sampling distribution over degree classes (indexed by DegreeLayout::class_index).
struct DegreeDistribution {
    DegreeLayout layout;
    std::vector<double> probs;

    [[nodiscard]] double prob(DegreePair d) const { return probs.at(static_cast<std::size_t>(layout.class_index(d))); }

    DegreePair sample(Rng& rng) const {
        const double x = rng.uniform();
        double acc = 0.0;
        for (std::size_t c = 0; c < probs.size(); ++c) {
            acc += probs[c];
            if (x < acc) return layout.degree_of(static_cast<int>(c));
        }
        // x landed in the rounding slack above the last partial sum
        for (std::size_t c = probs.size(); c-- > 0;)
            if (probs[c] > 0.0) return layout.degree_of(static_cast<int>(c));
        throw ContractError("degree distribution has no mass");
    }
};

enum class DegreeDistKind { Imbalanced, Uniform, Custom };

/// Degree-class distribution. Imbalanced (default) puts 0.55 on (1, 1) and
/// splits the rest proportionally to 2^-(m+n); Custom normalizes `table`.
inline DegreeDistribution degree_imbalance(DegreeLayout layout = {}, DegreeDistKind kind = DegreeDistKind::Imbalanced,
                                           const std::vector<double>& table = {}) {
    layout.validate();
    const int c = layout.num_classes();
    DegreeDistribution dist{layout, std::vector<double>(static_cast<std::size_t>(c), 0.0)};
    switch (kind) {
        case DegreeDistKind::Uniform:
            std::fill(dist.probs.begin(), dist.probs.end(), 1.0 / c);
            break;
        case DegreeDistKind::Custom: {
            detail::require<ContractError>(static_cast<int>(table.size()) == c,
                                           "custom degree table must have one entry per class");
            double total = 0.0;
            for (double p : table) {
                detail::require<ContractError>(std::isfinite(p) && p >= 0.0, "degree table entries must be >= 0");
                total += p;
            }
            detail::require<ContractError>(total > 0.0, "degree table has no mass");
            for (int i = 0; i < c; ++i) dist.probs[static_cast<std::size_t>(i)] = table[static_cast<std::size_t>(i)] / total;
            break;
        }
        case DegreeDistKind::Imbalanced: {
            if (c == 1) {
                dist.probs[0] = 1.0;
                break;
            }
            double rest = 0.0;
            for (int i = 1; i < c; ++i) {
                const DegreePair d = layout.degree_of(i);
                rest += std::ldexp(1.0, -(d.m + d.n));
            }
            dist.probs[0] = 0.55;
            for (int i = 1; i < c; ++i) {
                const DegreePair d = layout.degree_of(i);
                dist.probs[static_cast<std::size_t>(i)] = 0.45 * std::ldexp(1.0, -(d.m + d.n)) / rest;
            }
            break;
        }
    }
    return dist;
}

struct ModelSpec {
    int patches = 8;     // K_hat
    int points = 8192;   // N
    std::uint64_t seed = 0;
    DegreeDistribution degree_dist = degree_imbalance();
    std::optional<DegreePair> fixed_degree;  // overrides degree_dist when set
    bool rational = true;                    // false: unit weights (polynomial patches)
    double min_normal_angle_deg = 30.0;      // between mean normals of any two patches
    double curvature = 0.25;                 // height amplitude of non-planar patches
    double spacing = 2.0;                    // lattice spacing of patch centers (pre-normalization)
    int min_points_per_patch = kMinPointsPerPatch;
};

namespace detail {

inline constexpr int kPatchRetries = 50;
inline constexpr double kMinCrossNorm = 1e-4;

inline double min_cross_norm(const BezierPatch& patch) {
    double worst = std::numeric_limits<double>::infinity();
    for (int a = 0; a < 5; ++a)
        for (int b = 0; b < 5; ++b) {
            const Partials d = patch_partials(patch, {a / 4.0, b / 4.0});
            worst = std::min(worst, d.du.cross(d.dv).norm());
        }
    return worst;
}

// Patch in a local frame centred at the origin, roughly in the xy plane.
inline BezierPatch random_local_patch(Rng& rng, DegreePair d, DegreeLayout layout, const ModelSpec& spec) {
    BezierPatch patch{d, ControlGrid(layout)};
    const double su = rng.uniform(0.6, 1.0);
    const double sv = rng.uniform(0.6, 1.0);
    const bool planar = d.m == 1 && d.n == 1;
    const double a = rng.uniform(-1.0, 1.0), b = rng.uniform(-1.0, 1.0), c = rng.uniform(-1.0, 1.0);
    for (int r = 0; r <= d.m; ++r)
        for (int s = 0; s <= d.n; ++s) {
            const double x = su * (static_cast<double>(r) / d.m - 0.5) + 0.05 * su / d.m * rng.uniform(-1.0, 1.0);
            const double y = sv * (static_cast<double>(s) / d.n - 0.5) + 0.05 * sv / d.n * rng.uniform(-1.0, 1.0);
            const double z = planar ? 0.0
                                    : spec.curvature * (a * x * x + b * y * y + c * x * y) +
                                          0.05 * spec.curvature * rng.normal();
            const double w = spec.rational ? rng.log_uniform(0.5, 2.0) : 1.0;
            patch.ctrl.set(r, s, Vec3(x, y, z), w);
        }
    return patch;
}

inline void transform_patch(BezierPatch& patch, const Eigen::Matrix3d& rot, const Vec3& shift, double scale) {
    for (int r = 0; r <= patch.degree.m; ++r)
        for (int s = 0; s <= patch.degree.n; ++s) {
            Vec4& c = patch.ctrl(r, s);
            c.head<3>() = scale * (rot * c.head<3>() + shift);
        }
}

inline Eigen::Matrix3d random_rotation(Rng& rng) {
    Eigen::Quaterniond q(rng.normal(), rng.normal(), rng.normal(), rng.normal());
    q.normalize();
    return q.toRotationMatrix();
}

inline double sample_axis(Rng& rng, bool flip) {
    const double t = rng.uniform() < 0.5 ? rng.uniform() : rng.beta_2_5();
    return flip ? 1.0 - t : t;
}

}  // namespace detail

/// Generates one annotated model. Patches are independent (not stitched),
/// centred on distinct cells of a cubic lattice, oriented so that their mean
/// normals differ pairwise by at least min_normal_angle_deg, and the whole
/// model is scaled into the unit sphere. Coordinates are exact evaluations of
/// the stored (normalized) patches at the stored uv.
inline AnnotatedCloud gen_model(const ModelSpec& spec) {
    detail::require<ContractError>(spec.patches >= 1, "need at least one patch");
    detail::require<ContractError>(spec.min_points_per_patch >= 1, "min points per patch must be positive");
    detail::require<ContractError>(spec.points >= spec.patches * spec.min_points_per_patch,
                                   "too few points for the requested number of patches");
    const DegreeLayout layout = spec.degree_dist.layout;
    layout.validate();
    Rng rng(spec.seed);

    AnnotatedCloud cloud;
    cloud.layout = layout;

    // lattice cells in random order
    int side = 1;
    while (side * side * side < spec.patches) ++side;
    std::vector<int> cells(static_cast<std::size_t>(side * side * side));
    std::iota(cells.begin(), cells.end(), 0);
    for (std::size_t i = cells.size() - 1; i > 0; --i) std::swap(cells[i], cells[rng.uniform_index(i + 1)]);

    const double min_cos = std::cos(spec.min_normal_angle_deg * std::numbers::pi / 180.0);
    std::vector<Vec3> mean_normals;
    std::vector<double> areas;
    for (int k = 0; k < spec.patches; ++k) {
        const DegreePair d = spec.fixed_degree ? *spec.fixed_degree : spec.degree_dist.sample(rng);
        detail::require<ContractError>(layout.contains(d), "requested degree outside layout");
        std::optional<BezierPatch> local;
        for (int attempt = 0; attempt < detail::kPatchRetries && !local; ++attempt) {
            BezierPatch p = detail::random_local_patch(rng, d, layout, spec);
            if (detail::min_cross_norm(p) > detail::kMinCrossNorm) local = std::move(p);
        }
        if (!local) throw GenerationError("could not generate a non-degenerate patch");

        const Vec3 local_normal = patch_normal(*local, {0.5, 0.5});
        Eigen::Matrix3d rot;
        bool oriented = false;
        for (int attempt = 0; attempt < 1000 && !oriented; ++attempt) {
            rot = detail::random_rotation(rng);
            const Vec3 n = rot * local_normal;
            oriented = std::all_of(mean_normals.begin(), mean_normals.end(),
                                   [&](const Vec3& m) { return std::abs(m.dot(n)) <= min_cos; });
        }
        if (!oriented) throw GenerationError("could not orient patches with the requested normal separation");
        mean_normals.push_back(rot * local_normal);

        const int cell = cells[static_cast<std::size_t>(k)];
        const Vec3 center(spec.spacing * (cell % side + rng.uniform(-0.05, 0.05)),
                          spec.spacing * ((cell / side) % side + rng.uniform(-0.05, 0.05)),
                          spec.spacing * (cell / (side * side) + rng.uniform(-0.05, 0.05)));
        detail::transform_patch(*local, rot, center, 1.0);
        const double du = (local->ctrl.point(local->degree.m, 0) - local->ctrl.point(0, 0)).norm();
        const double dv = (local->ctrl.point(0, local->degree.n) - local->ctrl.point(0, 0)).norm();
        areas.push_back(du * dv);
        cloud.patches.push_back(std::move(*local));
    }

    // point counts: the minimum for every patch, the rest proportional to area
    std::vector<int> counts(static_cast<std::size_t>(spec.patches), spec.min_points_per_patch);
    const double area_total = std::accumulate(areas.begin(), areas.end(), 0.0);
    for (int extra = spec.points - spec.patches * spec.min_points_per_patch; extra > 0; --extra) {
        double x = rng.uniform() * area_total;
        std::size_t k = 0;
        while (k + 1 < areas.size() && x >= areas[k]) x -= areas[k++];
        ++counts[k];
    }

    const int n = spec.points;
    cloud.uv.resize(n, 2);
    cloud.patch_id.resize(static_cast<std::size_t>(n));
    int row = 0;
    for (int k = 0; k < spec.patches; ++k) {
        const bool flip_u = rng.uniform() < 0.5, flip_v = rng.uniform() < 0.5;
        for (int j = 0; j < counts[static_cast<std::size_t>(k)]; ++j, ++row) {
            cloud.uv(row, 0) = detail::sample_axis(rng, flip_u);
            cloud.uv(row, 1) = detail::sample_axis(rng, flip_v);
            cloud.patch_id[static_cast<std::size_t>(row)] = k;
        }
    }
    // shuffle point order
    for (int i = n - 1; i > 0; --i) {
        const auto j = static_cast<Eigen::Index>(rng.uniform_index(static_cast<std::uint64_t>(i) + 1));
        cloud.uv.row(i).swap(cloud.uv.row(j));
        std::swap(cloud.patch_id[static_cast<std::size_t>(i)], cloud.patch_id[static_cast<std::size_t>(j)]);
    }

    // normalize into the unit sphere by transforming the patches, then evaluate
    Matrix raw(n, 3);
    for (int i = 0; i < n; ++i)
        raw.row(i) = eval_patch(cloud.patches[static_cast<std::size_t>(cloud.patch_id[static_cast<std::size_t>(i)])],
                                {cloud.uv(i, 0), cloud.uv(i, 1)})
                         .transpose();
    const Vec3 centroid = raw.colwise().mean().transpose();
    const double radius = (raw.rowwise() - centroid.transpose()).rowwise().norm().maxCoeff();
    const double scale = radius > 0.0 ? 1.0 / (radius * (1.0 + 1e-9)) : 1.0;
    for (auto& p : cloud.patches) detail::transform_patch(p, Eigen::Matrix3d::Identity(), -centroid, scale);

    cloud.coords.resize(n, 3);
    cloud.normals.resize(n, 3);
    for (int i = 0; i < n; ++i) {
        const BezierPatch& p = cloud.patches[static_cast<std::size_t>(cloud.patch_id[static_cast<std::size_t>(i)])];
        const UV at{cloud.uv(i, 0), cloud.uv(i, 1)};
        cloud.coords.row(i) = eval_patch(p, at).transpose();
        cloud.normals.row(i) = patch_normal(p, at).transpose();
    }
    return cloud;
}

/// Adds i.i.d. N(0, sigma^2) offsets to coordinates only; every label
/// (normals, uv, ids, patches) keeps its clean value.
inline AnnotatedCloud add_noise(const AnnotatedCloud& cloud, double sigma, std::uint64_t seed) {
    detail::require<ContractError>(std::isfinite(sigma) && sigma >= 0.0, "noise sigma must be >= 0");
    AnnotatedCloud out = cloud;
    if (sigma == 0.0) return out;
    Rng rng(seed);
    for (Eigen::Index j = 0; j < out.coords.size(); ++j) out.coords(j) += sigma * rng.normal();
    return out;
}

}  // namespace bezierseg
