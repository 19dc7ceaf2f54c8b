#pragma once

// Rational Bezier patches on a fixed maximum-degree control layout.
//
// A patch of degree (m, n) stores a full (max_u+1) x (max_v+1) grid of
// homogeneous control points (x, y, z, w). Evaluation uses the truncated
// Bernstein basis, which is identically zero for indices above the patch
// degree, so patches of mixed degree share one tensor layout.

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <compare>
#include <cstddef>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "bezierseg/errors.hpp"

namespace bezierseg {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Vec4 = Eigen::Vector4d;
using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Largest degree supported by the binomial table.
inline constexpr int kMaxSupportedDegree = 16;

/// Threshold on |du x dv| below which the normal is undefined.
inline constexpr double kDegenerateNormalEps = 1e-10;

struct DegreePair {
    int m = 1;  // degree in U
    int n = 1;  // degree in V

    friend constexpr bool operator==(DegreePair, DegreePair) = default;
    friend constexpr auto operator<=>(DegreePair, DegreePair) = default;

    [[nodiscard]] constexpr int num_ctrl() const { return (m + 1) * (n + 1); }
};

/// Maximum degrees (M_d, N_d) and the degree-class enumeration over them.
struct DegreeLayout {
    int max_u = 3;
    int max_v = 3;

    friend constexpr bool operator==(DegreeLayout, DegreeLayout) = default;

    [[nodiscard]] constexpr int num_classes() const { return max_u * max_v; }
    [[nodiscard]] constexpr int grid_rows() const { return max_u + 1; }
    [[nodiscard]] constexpr int grid_cols() const { return max_v + 1; }
    [[nodiscard]] constexpr int grid_size() const { return grid_rows() * grid_cols(); }

    [[nodiscard]] constexpr bool contains(DegreePair d) const {
        return d.m >= 1 && d.m <= max_u && d.n >= 1 && d.n <= max_v;
    }

    /// Class index in row-major (m, n) order, starting at degree 1 per direction.
    [[nodiscard]] int class_index(DegreePair d) const {
        detail::require<DomainError>(contains(d), "degree (" + std::to_string(d.m) + "," +
                                                      std::to_string(d.n) + ") outside layout");
        return max_v * (d.m - 1) + (d.n - 1);
    }

    [[nodiscard]] DegreePair degree_of(int c) const {
        detail::require<DomainError>(c >= 0 && c < num_classes(),
                                     "degree class " + std::to_string(c) + " outside layout");
        return {c / max_v + 1, c % max_v + 1};
    }

    void validate() const {
        detail::require<DomainError>(max_u >= 1 && max_u <= kMaxSupportedDegree && max_v >= 1 &&
                                         max_v <= kMaxSupportedDegree,
                                     "maximum degrees must lie in [1, 16]");
    }
};

struct UV {
    double u = 0.0;
    double v = 0.0;
};

namespace detail {

struct BinomialTable {
    std::array<std::array<double, kMaxSupportedDegree + 1>, kMaxSupportedDegree + 1> c{};
    constexpr BinomialTable() {
        for (int n = 0; n <= kMaxSupportedDegree; ++n) {
            c[n][0] = 1.0;
            for (int k = 1; k <= n; ++k) c[n][k] = c[n - 1][k - 1] + (k <= n - 1 ? c[n - 1][k] : 0.0);
        }
    }
};

inline constexpr BinomialTable kBinomial{};

inline double ipow(double x, int e) {
    double r = 1.0;
    for (int i = 0; i < e; ++i) r *= x;
    return r;
}

// Unchecked Bernstein polynomial; zero outside 0 <= l <= d. Allows d = 0.
inline double bernstein(int l, int d, double t) {
    if (l < 0 || l > d) return 0.0;
    return kBinomial.c[d][l] * ipow(t, l) * ipow(1.0 - t, d - l);
}

inline double bernstein_derivative(int l, int d, double t) {
    if (l < 0 || l > d || d == 0) return 0.0;
    return d * (bernstein(l - 1, d - 1, t) - bernstein(l, d - 1, t));
}

inline void check_basis_args(int l, int d, int max_degree, double t) {
    require<DomainError>(max_degree >= 1 && max_degree <= kMaxSupportedDegree,
                         "maximum degree must lie in [1, 16]");
    require<DomainError>(l >= 0 && l <= max_degree, "basis index out of range");
    require<DomainError>(d >= 1 && d <= max_degree, "degree out of range");
    require<DomainError>(t >= 0.0 && t <= 1.0, "parameter outside [0, 1]");
}

inline void check_uv(UV uv) {
    require<DomainError>(uv.u >= 0.0 && uv.u <= 1.0 && uv.v >= 0.0 && uv.v <= 1.0,
                         "uv parameter outside [0, 1]^2");
}

}  // namespace detail

/// Truncated Bernstein basis: C(d,l) t^l (1-t)^(d-l) for l <= d, exactly 0 for l > d.
inline double bernstein_trunc(int l, int d, int max_degree, double t) {
    detail::check_basis_args(l, d, max_degree, t);
    return detail::bernstein(l, d, t);
}

/// d/dt of bernstein_trunc, d (B_{d-1}^{l-1} - B_{d-1}^{l}) with out-of-range terms zero.
inline double bernstein_deriv(int l, int d, int max_degree, double t) {
    detail::check_basis_args(l, d, max_degree, t);
    return detail::bernstein_derivative(l, d, t);
}

/// Homogeneous control grid sized for a DegreeLayout. Entries are (x, y, z, w)
/// with (x, y, z) the affine control point and w its weight.
class ControlGrid {
public:
    ControlGrid() : ControlGrid(DegreeLayout{}) {}
    explicit ControlGrid(DegreeLayout layout)
        : layout_(layout), cp_(static_cast<std::size_t>(layout.grid_size()), Vec4(0, 0, 0, 1)) {
        layout_.validate();
    }

    [[nodiscard]] const DegreeLayout& layout() const { return layout_; }
    [[nodiscard]] int rows() const { return layout_.grid_rows(); }
    [[nodiscard]] int cols() const { return layout_.grid_cols(); }
    [[nodiscard]] int size() const { return layout_.grid_size(); }

    Vec4& operator()(int r, int s) { return cp_[index(r, s)]; }
    const Vec4& operator()(int r, int s) const { return cp_[index(r, s)]; }

    [[nodiscard]] Vec3 point(int r, int s) const { return cp_[index(r, s)].head<3>(); }
    [[nodiscard]] double weight(int r, int s) const { return cp_[index(r, s)][3]; }

    void set(int r, int s, const Vec3& p, double w = 1.0) { cp_[index(r, s)] << p, w; }

    [[nodiscard]] std::span<const Vec4> entries() const { return cp_; }
    [[nodiscard]] std::span<Vec4> entries() { return cp_; }

    friend bool operator==(const ControlGrid& a, const ControlGrid& b) {
        return a.layout_ == b.layout_ && a.cp_ == b.cp_;
    }

private:
    [[nodiscard]] std::size_t index(int r, int s) const {
        return static_cast<std::size_t>(r * cols() + s);
    }

    DegreeLayout layout_;
    std::vector<Vec4> cp_;
};

/// Control tensor: one grid per primitive, all on the same layout.
using ControlTensor = std::vector<ControlGrid>;

struct BezierPatch {
    DegreePair degree;
    ControlGrid ctrl;

    [[nodiscard]] const DegreeLayout& layout() const { return ctrl.layout(); }

    /// Degree within layout and positive weights on the active sub-grid.
    void validate() const {
        detail::require<DomainError>(layout().contains(degree), "patch degree outside layout");
        for (int r = 0; r <= degree.m; ++r)
            for (int s = 0; s <= degree.n; ++s) {
                const Vec4& c = ctrl(r, s);
                detail::require<ContractError>(c.allFinite(), "non-finite control point");
                detail::require<DegenerateWeightsError>(c[3] > 0.0,
                                                        "active control weight must be positive");
            }
    }

    friend bool operator==(const BezierPatch&, const BezierPatch&) = default;
};

namespace detail {

// Numerator/denominator sums of the rational form and their parameter derivatives.
struct RationalSums {
    Vec3 num = Vec3::Zero();
    double den = 0.0;
    Vec3 num_u = Vec3::Zero();
    Vec3 num_v = Vec3::Zero();
    double den_u = 0.0;
    double den_v = 0.0;
};

template <bool WithDerivatives>
RationalSums rational_sums(const ControlGrid& ctrl, DegreePair degree, UV uv) {
    std::array<double, kMaxSupportedDegree + 1> bu{}, bv{}, dbu{}, dbv{};
    for (int r = 0; r <= degree.m; ++r) {
        bu[r] = bernstein(r, degree.m, uv.u);
        if constexpr (WithDerivatives) dbu[r] = bernstein_derivative(r, degree.m, uv.u);
    }
    for (int s = 0; s <= degree.n; ++s) {
        bv[s] = bernstein(s, degree.n, uv.v);
        if constexpr (WithDerivatives) dbv[s] = bernstein_derivative(s, degree.n, uv.v);
    }
    RationalSums sums;
    for (int r = 0; r <= degree.m; ++r) {
        for (int s = 0; s <= degree.n; ++s) {
            const Vec4& c = ctrl(r, s);
            const double w = c[3];
            const Vec3 wp = w * c.head<3>();
            const double b = bu[r] * bv[s];
            sums.num += b * wp;
            sums.den += b * w;
            if constexpr (WithDerivatives) {
                const double b_u = dbu[r] * bv[s];
                const double b_v = bu[r] * dbv[s];
                sums.num_u += b_u * wp;
                sums.num_v += b_v * wp;
                sums.den_u += b_u * w;
                sums.den_v += b_v * w;
            }
        }
    }
    require<DegenerateWeightsError>(sums.den > 0.0, "rational denominator is not positive");
    return sums;
}

// Evaluation that trusts its inputs; the batch paths validate once up-front.
inline Vec3 eval_unchecked(const ControlGrid& ctrl, DegreePair degree, UV uv) {
    const RationalSums s = rational_sums<false>(ctrl, degree, uv);
    return s.num / s.den;
}

}  // namespace detail

/// Point on the rational patch at (u, v).
inline Vec3 eval_patch(const BezierPatch& patch, UV uv) {
    detail::check_uv(uv);
    patch.validate();
    return detail::eval_unchecked(patch.ctrl, patch.degree, uv);
}

struct Partials {
    Vec3 du;
    Vec3 dv;
};

/// (dp/du, dp/dv) by the quotient rule over the rational sums.
inline Partials patch_partials(const BezierPatch& patch, UV uv) {
    detail::check_uv(uv);
    patch.validate();
    const detail::RationalSums s = detail::rational_sums<true>(patch.ctrl, patch.degree, uv);
    const Vec3 p = s.num / s.den;
    return {(s.num_u - p * s.den_u) / s.den, (s.num_v - p * s.den_v) / s.den};
}

/// Unit normal du x dv / |du x dv|. Throws DegenerateNormalError when the
/// cross product norm is at most kDegenerateNormalEps.
inline Vec3 patch_normal(const BezierPatch& patch, UV uv) {
    const Partials d = patch_partials(patch, uv);
    const Vec3 n = d.du.cross(d.dv);
    const double len = n.norm();
    if (!(len > kDegenerateNormalEps)) throw DegenerateNormalError("partials are parallel");
    return n / len;
}

/// Argmax degree class of each row of a K x C score matrix (ties to the lowest class).
inline std::vector<DegreePair> argmax_degrees(const Matrix& scores, DegreeLayout layout) {
    detail::require<ContractError>(scores.cols() == layout.num_classes(),
                                   "degree score columns must equal the number of degree classes");
    std::vector<DegreePair> out;
    out.reserve(static_cast<std::size_t>(scores.rows()));
    for (Eigen::Index k = 0; k < scores.rows(); ++k) {
        Eigen::Index best = 0;
        for (Eigen::Index c = 1; c < scores.cols(); ++c)
            if (scores(k, c) > scores(k, best)) best = c;
        out.push_back(layout.degree_of(static_cast<int>(best)));
    }
    return out;
}

namespace detail {

inline DegreeLayout check_batch_shapes(const Matrix& membership, const Matrix& degree_scores,
                                       const ControlTensor& ctrl, const Matrix& uv) {
    require<ContractError>(!ctrl.empty(), "control tensor is empty");
    const DegreeLayout layout = ctrl.front().layout();
    for (const auto& g : ctrl)
        require<ContractError>(g.layout() == layout, "control grids use different layouts");
    const auto k = static_cast<Eigen::Index>(ctrl.size());
    require<ContractError>(membership.cols() == k, "membership columns must equal number of patches");
    require<ContractError>(degree_scores.rows() == k && degree_scores.cols() == layout.num_classes(),
                           "degree scores must be K x C");
    require<ContractError>(uv.cols() == 2 && uv.rows() == membership.rows(), "uv must be N x 2");
    require<ContractError>(membership.allFinite() && degree_scores.allFinite() && uv.allFinite(),
                           "non-finite input");
    require<ContractError>((membership.array() >= 0.0).all(), "membership must be non-negative");
    for (Eigen::Index i = 0; i < uv.rows(); ++i) check_uv({uv(i, 0), uv(i, 1)});
    return layout;
}

inline void check_active_weights(const ControlGrid& g, DegreePair d) {
    BezierPatch{d, g}.validate();
}

}  // namespace detail

/// Batched reconstruction. Each patch k is evaluated at (u_i, v_i) under the
/// argmax degree of its score row, and the per-point result is the mixture
/// sum_k w_ik R_k(u_i, v_i) / sum_k w_ik. Zero-membership patches are skipped.
inline Matrix reconstruct_batch(const Matrix& membership, const Matrix& degree_scores,
                                const ControlTensor& ctrl, const Matrix& uv) {
    const DegreeLayout layout = detail::check_batch_shapes(membership, degree_scores, ctrl, uv);
    const std::vector<DegreePair> degrees = argmax_degrees(degree_scores, layout);
    for (std::size_t k = 0; k < ctrl.size(); ++k) detail::check_active_weights(ctrl[k], degrees[k]);

    const Eigen::Index n = membership.rows();
    Matrix out(n, 3);
    for (Eigen::Index i = 0; i < n; ++i) {
        const double total = membership.row(i).sum();
        detail::require<ContractError>(total > 0.0, "membership row " + std::to_string(i) + " is zero");
        Vec3 p = Vec3::Zero();
        for (std::size_t k = 0; k < ctrl.size(); ++k) {
            const double w = membership(i, static_cast<Eigen::Index>(k));
            if (w == 0.0) continue;
            p += w * detail::eval_unchecked(ctrl[k], degrees[k], {uv(i, 0), uv(i, 1)});
        }
        out.row(i) = (p / total).transpose();
    }
    return out;
}

/// How einsum_oracle turns degree scores into per-class synthesizing scores.
enum class DegreeScoring {
    Argmax,   // one-hot on the argmax class of each row (matches reconstruct_batch)
    Mixture,  // raw non-negative scores
};

namespace detail {

// Rational de Casteljau on homogeneous points, used only by the oracle.
inline Vec3 eval_de_casteljau(const ControlGrid& g, DegreePair d, UV uv) {
    std::vector<Vec4> col(static_cast<std::size_t>(d.n + 1));
    std::vector<Vec4> row(static_cast<std::size_t>(d.m + 1));
    for (int s = 0; s <= d.n; ++s) {
        for (int r = 0; r <= d.m; ++r) {
            const Vec4& c = g(r, s);
            row[r] << c[3] * c.head<3>(), c[3];
        }
        for (int level = d.m; level > 0; --level)
            for (int r = 0; r < level; ++r) row[r] = (1.0 - uv.u) * row[r] + uv.u * row[r + 1];
        col[s] = row[0];
    }
    for (int level = d.n; level > 0; --level)
        for (int s = 0; s < level; ++s) col[s] = (1.0 - uv.v) * col[s] + uv.v * col[s + 1];
    require<DegenerateWeightsError>(col[0][3] > 0.0, "rational denominator is not positive");
    return col[0].head<3>() / col[0][3];
}

}  // namespace detail

inline constexpr Eigen::Index kEinsumMaxPoints = 64;
inline constexpr Eigen::Index kEinsumMaxPatches = 4;

/// Brute-force reconstruction over every (patch, degree class, point) triple.
/// Builds the synthesizing tensor s_kci = w_ik * s_kc, normalizes it to unit
/// total mass, and returns per point the s-weighted sum of the class-c
/// evaluations of patch k divided by that point's marginal mass. Each class
/// is evaluated by homogeneous de Casteljau on its own sub-grid. Memory is
/// O(K * C * N), so only small instances are accepted.
inline Matrix einsum_oracle(const Matrix& membership, const Matrix& degree_scores,
                            const ControlTensor& ctrl, const Matrix& uv,
                            DegreeScoring scoring = DegreeScoring::Argmax) {
    const DegreeLayout layout = detail::check_batch_shapes(membership, degree_scores, ctrl, uv);
    const Eigen::Index n = membership.rows();
    const Eigen::Index k = membership.cols();
    const int classes = layout.num_classes();
    if (n > kEinsumMaxPoints || k > kEinsumMaxPatches)
        throw SizeError("einsum oracle accepts at most 64 points and 4 patches");
    detail::require<ContractError>((degree_scores.array() >= 0.0).all(),
                                   "degree scores must be non-negative");

    Matrix class_scores = Matrix::Zero(k, classes);
    for (Eigen::Index kk = 0; kk < k; ++kk) {
        if (!(degree_scores.row(kk).sum() > 0.0))
            throw NormalizationError("degree scores of patch " + std::to_string(kk) + " are all zero");
        if (scoring == DegreeScoring::Argmax) {
            Eigen::Index best = 0;
            degree_scores.row(kk).maxCoeff(&best);
            class_scores(kk, best) = 1.0;
        } else {
            class_scores.row(kk) = degree_scores.row(kk);
        }
    }

    // s_w[(kk * classes + c) * n + i]
    std::vector<double> sw(static_cast<std::size_t>(k * classes * n));
    double total = 0.0;
    for (Eigen::Index kk = 0; kk < k; ++kk)
        for (int c = 0; c < classes; ++c)
            for (Eigen::Index i = 0; i < n; ++i) {
                const double v = membership(i, kk) * class_scores(kk, c);
                sw[static_cast<std::size_t>((kk * classes + c) * n + i)] = v;
                total += v;
            }
    if (!(total > 0.0)) throw NormalizationError("synthesizing scores sum to zero");
    for (double& v : sw) v /= total;

    Matrix out(n, 3);
    for (Eigen::Index i = 0; i < n; ++i) {
        Vec3 p = Vec3::Zero();
        double mass = 0.0;
        for (Eigen::Index kk = 0; kk < k; ++kk)
            for (int c = 0; c < classes; ++c) {
                const double s = sw[static_cast<std::size_t>((kk * classes + c) * n + i)];
                if (s == 0.0) continue;
                const DegreePair d = layout.degree_of(c);
                detail::check_active_weights(ctrl[static_cast<std::size_t>(kk)], d);
                p += s * detail::eval_de_casteljau(ctrl[static_cast<std::size_t>(kk)], d,
                                                   {uv(i, 0), uv(i, 1)});
                mass += s;
            }
        if (!(mass > 0.0)) throw NormalizationError("point " + std::to_string(i) + " has zero mass");
        out.row(i) = (p / mass).transpose();
    }
    return out;
}

}  // namespace bezierseg
