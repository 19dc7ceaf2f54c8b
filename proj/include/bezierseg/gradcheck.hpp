#pragma once

// Central finite-difference oracle for every analytic gradient in losses.hpp
// and for the patch partials in bezier.hpp.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "bezierseg/bezier.hpp"
#include "bezierseg/errors.hpp"
#include "bezierseg/losses.hpp"
#include "bezierseg/matching.hpp"
#include "bezierseg/rng.hpp"

namespace bezierseg {

struct FdStep {
    double base = 1e-5;
    bool relative = true;  // step = base * max(1, |x_j|)

    [[nodiscard]] double at(double x) const { return relative ? base * std::max(1.0, std::abs(x)) : base; }
};

using ScalarFn = std::function<double(const Matrix&)>;

/// Central differences (f(x + h e_j) - f(x - h e_j)) / 2h for every entry of x.
inline Matrix fd_gradient(const ScalarFn& f, const Matrix& x, FdStep step = {}) {
    Matrix g(x.rows(), x.cols());
    Matrix probe = x;
    for (Eigen::Index j = 0; j < x.size(); ++j) {
        const double h = step.at(x(j));
        detail::require<ContractError>(h > 0.0, "finite-difference step must be positive");
        probe(j) = x(j) + h;
        const double fp = f(probe);
        probe(j) = x(j) - h;
        const double fm = f(probe);
        probe(j) = x(j);
        if (!std::isfinite(fp) || !std::isfinite(fm))
            throw OracleError("non-finite function value during finite differencing");
        g(j) = (fp - fm) / (2.0 * h);
    }
    return g;
}

inline Matrix fd_gradient(const ScalarFn& f, const Matrix& x, double h) {
    return fd_gradient(f, x, FdStep{h, false});
}

struct GradTolerance {
    double rel = 1e-4;
    double abs = 1e-7;
};

struct GradReport {
    std::string input_name;
    double max_rel_err = 0.0;  // max |a - f| / max(|a|_inf, |f|_inf)
    double max_abs_err = 0.0;
    Eigen::Index worst_row = 0;
    Eigen::Index worst_col = 0;
    bool pass = false;
};

inline GradReport compare_gradients(std::string name, const Matrix& analytic, const Matrix& numeric,
                                    GradTolerance tol = {}) {
    detail::require<ContractError>(analytic.rows() == numeric.rows() && analytic.cols() == numeric.cols(),
                                   "gradient shapes differ for " + name);
    GradReport r;
    r.input_name = std::move(name);
    const Matrix diff = (analytic - numeric).cwiseAbs();
    if (diff.size() > 0) r.max_abs_err = diff.maxCoeff(&r.worst_row, &r.worst_col);
    const double scale = std::max(analytic.size() ? analytic.cwiseAbs().maxCoeff() : 0.0,
                                  numeric.size() ? numeric.cwiseAbs().maxCoeff() : 0.0);
    r.max_rel_err = scale > 0.0 ? r.max_abs_err / scale : 0.0;
    r.pass = std::isfinite(r.max_abs_err) && (r.max_rel_err <= tol.rel || r.max_abs_err <= tol.abs);
    return r;
}

struct GradCheckSizes {
    int points = 64;
    int patches = 4;     // K
    int gt_patches = 3;  // K_hat
    DegreeLayout layout{3, 3};
    int features = 8;
};

struct GradCheckOptions {
    FdStep step{};
    GradTolerance tol{};
    double tamper = 0.0;  // relative perturbation applied to analytic gradients (sensitivity test)
};

namespace detail {

inline Matrix gaussian(Rng& rng, Eigen::Index rows, Eigen::Index cols, double sd = 1.0) {
    Matrix m(rows, cols);
    for (Eigen::Index j = 0; j < m.size(); ++j) m(j) = sd * rng.normal();
    return m;
}

inline Matrix row_softmax(const Matrix& logits) {
    Matrix p(logits.rows(), logits.cols());
    for (Eigen::Index i = 0; i < logits.rows(); ++i) {
        const double mx = logits.row(i).maxCoeff();
        const Eigen::RowVectorXd e = (logits.row(i).array() - mx).exp().matrix();
        p.row(i) = e / e.sum();
    }
    return p;
}

// Pulls a gradient w.r.t. softmax outputs back to the logits.
inline Matrix softmax_backward(const Matrix& probs, const Matrix& g) {
    Matrix out(probs.rows(), probs.cols());
    for (Eigen::Index i = 0; i < probs.rows(); ++i) {
        const double inner = probs.row(i).dot(g.row(i));
        out.row(i) = probs.row(i).cwiseProduct((g.row(i).array() - inner).matrix());
    }
    return out;
}

inline Matrix sigmoid(const Matrix& z) { return (1.0 / (1.0 + (-z.array()).exp())).matrix(); }

inline Matrix random_unit_rows(Rng& rng, Eigen::Index n) {
    Matrix m = gaussian(rng, n, 3);
    m.rowwise().normalize();
    return m;
}

inline ControlTensor random_controls(Rng& rng, int count, DegreeLayout layout) {
    ControlTensor t(static_cast<std::size_t>(count), ControlGrid(layout));
    for (auto& g : t)
        for (auto& e : g.entries()) e << 0.5 * rng.normal(), 0.5 * rng.normal(), 0.5 * rng.normal(),
                                     rng.log_uniform(0.5, 2.0);
    return t;
}

// Labels 0..k-1 each used at least once, in random order.
inline std::vector<int> covering_labels(Rng& rng, int n, int k) {
    std::vector<int> labels(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) labels[static_cast<std::size_t>(i)] = i % k;
    for (int i = n - 1; i > 0; --i)
        std::swap(labels[static_cast<std::size_t>(i)],
                  labels[rng.uniform_index(static_cast<std::uint64_t>(i) + 1)]);
    return labels;
}

inline double min_push_margin(const Matrix& w, const Matrix& x, double delta_push) {
    const Matrix ins = instance_features(w, x);
    double margin = std::numeric_limits<double>::infinity();
    for (Eigen::Index a = 0; a < ins.rows(); ++a)
        for (Eigen::Index b = a + 1; b < ins.rows(); ++b)
            margin = std::min(margin, std::abs(delta_push - (ins.row(a) - ins.row(b)).squaredNorm()));
    return margin;
}

// Randomized problem instance for gradient checking.
struct GradInstance {
    LossInputs in;
    Matrix w_logits, d_logits, t_logits;
    Matrix score_logits;  // K x C degree scores for the reconstruction path
    std::vector<int> gt_labels;
    std::vector<int> gt_classes;
};

inline GradInstance make_instance(Rng& rng, const GradCheckSizes& sz, bool clustered_features) {
    const int n = sz.points;
    const int k = sz.patches;
    const int kh = sz.gt_patches;
    const int c = sz.layout.num_classes();
    GradInstance g;
    LossInputs& in = g.in;

    g.gt_labels = covering_labels(rng, n, kh);
    in.gt_onehot = one_hot(g.gt_labels, kh);
    for (int j = 0; j < kh; ++j)
        in.gt_degrees.push_back({1 + static_cast<int>(rng.uniform_index(sz.layout.max_u)),
                                 1 + static_cast<int>(rng.uniform_index(sz.layout.max_v))});
    for (const auto& d : in.gt_degrees) g.gt_classes.push_back(sz.layout.class_index(d));
    for (int lbl : g.gt_labels) in.point_classes.push_back(g.gt_classes[static_cast<std::size_t>(lbl)]);

    g.w_logits = gaussian(rng, n, k);
    if (clustered_features)
        for (int i = 0; i < n; ++i) g.w_logits(i, g.gt_labels[static_cast<std::size_t>(i)] % k) += 6.0;
    in.membership = row_softmax(g.w_logits);
    g.d_logits = gaussian(rng, n, c);
    in.degree_probs = row_softmax(g.d_logits);
    g.t_logits = gaussian(rng, n, 2).cwiseMax(-3.0).cwiseMin(3.0);
    in.uv = sigmoid(g.t_logits);
    in.gt_uv = sigmoid(gaussian(rng, n, 2).cwiseMax(-3.0).cwiseMin(3.0));
    in.ctrl = random_controls(rng, k, sz.layout);
    in.gt_ctrl = random_controls(rng, kh, sz.layout);
    g.score_logits = gaussian(rng, k, c);

    // Features: either small (push hinge active) or clustered (push inactive).
    // Resampled until every push hinge argument is away from its kink.
    do {
        if (clustered_features) {
            const Matrix centers = gaussian(rng, kh, sz.features, 4.0);
            in.features = gaussian(rng, n, sz.features, 0.3);
            for (int i = 0; i < n; ++i) in.features.row(i) += centers.row(g.gt_labels[static_cast<std::size_t>(i)]);
        } else {
            in.features = gaussian(rng, n, sz.features, 0.3);
        }
    } while (k >= 2 && min_push_margin(in.membership, in.features, in.config.delta_push) < 1e-3);

    in.points = gaussian(rng, n, 3, 0.5);
    in.points_star = in.points + gaussian(rng, n, 3, 0.05);
    in.normals = random_unit_rows(rng, n);
    Matrix ns = random_unit_rows(rng, n);
    for (int i = 0; i < n; ++i)
        while (std::abs(ns.row(i).dot(in.normals->row(i))) < 1e-3) ns.row(i) = random_unit_rows(rng, 1).row(0);
    in.normals_star = ns;
    return g;
}

}  // namespace detail

/// Runs the finite-difference oracle against every analytic gradient at a
/// randomized valid instance. W and D are row-softmax images of Gaussian
/// logits and T a sigmoid image; gradients are checked both w.r.t. those
/// constrained values (ambient perturbation) and w.r.t. the logits, where the
/// oracle re-applies the softmax/sigmoid on each perturbed input.
inline std::vector<GradReport> check_all(std::uint64_t seed, const GradCheckSizes& sizes = {},
                                         const GradCheckOptions& opt = {}) {
    sizes.layout.validate();
    detail::require<ContractError>(sizes.points >= sizes.gt_patches && sizes.patches >= 1 &&
                                       sizes.gt_patches >= 1 && sizes.features >= 1,
                                   "invalid gradcheck sizes");
    Rng rng(seed);
    std::vector<GradReport> reports;
    const double gamma = EmbeddingConfig{}.gamma;

    auto check = [&](const std::string& name, const Matrix& analytic, const ScalarFn& f, const Matrix& x) {
        const Matrix a = analytic * (1.0 + opt.tamper);
        reports.push_back(compare_gradients(name, a, fd_gradient(f, x, opt.step), opt.tol));
    };

    detail::GradInstance inst = detail::make_instance(rng, sizes, false);
    const LossInputs& in = inst.in;
    const MatchResult match = match_primitives(in.membership, in.gt_onehot);

    // focal loss on one degree row
    {
        const Vector probs = in.degree_probs.row(0).transpose();
        const int t = in.point_classes[0];
        check("focal_loss/probs", focal_loss(probs, t, gamma).gradient("probs"),
              [&](const Matrix& p) { return focal_loss(p, t, gamma).value; }, probs);
    }
    // degree loss
    check("degree_loss/D", degree_loss(in.degree_probs, in.point_classes, gamma).gradient("D"),
          [&](const Matrix& d) { return degree_loss(d, in.point_classes, gamma).value; }, in.degree_probs);
    {
        const Matrix g_p = degree_loss(in.degree_probs, in.point_classes, gamma).gradient("D");
        check("degree_loss/D_logits", detail::softmax_backward(in.degree_probs, g_p),
              [&](const Matrix& z) { return degree_loss(detail::row_softmax(z), in.point_classes, gamma).value; },
              inst.d_logits);
    }
    // relaxed IOU
    {
        const LossBundle b = relaxed_iou_loss(in.membership, in.gt_onehot, match);
        check("relaxed_iou_loss/W", b.gradient("W"),
              [&](const Matrix& w) { return relaxed_iou_loss(w, in.gt_onehot, match).value; }, in.membership);
        check("relaxed_iou_loss/W_logits", detail::softmax_backward(in.membership, b.gradient("W")),
              [&](const Matrix& z) { return relaxed_iou_loss(detail::row_softmax(z), in.gt_onehot, match).value; },
              inst.w_logits);
    }
    // soft voting
    {
        const LossBundle b = voting_loss(in.membership, in.degree_probs, inst.gt_classes, match, gamma);
        check("voting_loss/W", b.gradient("W"),
              [&](const Matrix& w) { return voting_loss(w, in.degree_probs, inst.gt_classes, match, gamma).value; },
              in.membership);
        check("voting_loss/D", b.gradient("D"),
              [&](const Matrix& d) { return voting_loss(in.membership, d, inst.gt_classes, match, gamma).value; },
              in.degree_probs);
        check("voting_loss/D_logits", detail::softmax_backward(in.degree_probs, b.gradient("D")),
              [&](const Matrix& z) {
                  return voting_loss(in.membership, detail::row_softmax(z), inst.gt_classes, match, gamma).value;
              },
              inst.d_logits);
    }
    // uv regression
    {
        const LossBundle b = param_loss(in.uv, in.gt_uv);
        check("param_loss/T", b.gradient("T"), [&](const Matrix& t) { return param_loss(t, in.gt_uv).value; },
              in.uv);
        const Matrix g_z = b.gradient("T").cwiseProduct(in.uv.cwiseProduct((1.0 - in.uv.array()).matrix()));
        check("param_loss/T_logits", g_z,
              [&](const Matrix& z) { return param_loss(detail::sigmoid(z), in.gt_uv).value; }, inst.t_logits);
    }
    // control points
    {
        const std::vector<DegreePair> pred_deg =
            argmax_degrees(soft_vote_scores(in.membership, in.degree_probs).normalized, sizes.layout);
        const Matrix cm = control_matrix(in.ctrl);
        check("ctrl_loss/C", ctrl_loss(in.ctrl, in.gt_ctrl, pred_deg, in.gt_degrees, match).gradient("C"),
              [&](const Matrix& m) {
                  return ctrl_loss(control_tensor(m, sizes.layout), in.gt_ctrl, pred_deg, in.gt_degrees, match)
                      .value;
              },
              cm);
    }
    // embedding, both hinge regimes
    for (bool clustered : {false, true}) {
        Rng sub = Rng::stream(seed, clustered ? 2 : 1);
        const detail::GradInstance e = detail::make_instance(sub, sizes, clustered);
        const std::string tag = clustered ? "pull_push_loss[push-inactive]" : "pull_push_loss[push-active]";
        const LossBundle b = pull_push_loss(e.in.membership, e.in.features, e.in.config);
        check(tag + "/X", b.gradient("X"),
              [&](const Matrix& x) { return pull_push_loss(e.in.membership, x, e.in.config).value; },
              e.in.features);
        check(tag + "/W", b.gradient("W"),
              [&](const Matrix& w) { return pull_push_loss(w, e.in.features, e.in.config).value; },
              e.in.membership);
    }
    // reconstruction losses
    {
        const LossBundle b = recon_losses(in.points, in.points_star, in.normals, in.normals_star);
        check("recon_losses/P_star", b.gradient("P_star"),
              [&](const Matrix& p) { return recon_losses(in.points, p, in.normals, in.normals_star).value; },
              in.points_star);
        check("recon_losses/N_star", b.gradient("N_star"),
              [&](const Matrix& ns) { return recon_losses(in.points, in.points_star, in.normals, ns).value; },
              *in.normals_star);
    }
    // coordinate loss through the rational reconstruction
    {
        const Matrix target = reconstruct_batch(in.membership, inst.score_logits, in.ctrl, in.uv) +
                              detail::gaussian(rng, sizes.points, 3, 0.05);
        const LossBundle b =
            coord_loss_through_reconstruction(target, in.membership, inst.score_logits, in.ctrl, in.uv);
        check("coord_through_reconstruction/W", b.gradient("W"),
              [&](const Matrix& w) {
                  return coord_loss_through_reconstruction(target, w, inst.score_logits, in.ctrl, in.uv).value;
              },
              in.membership);
        check("coord_through_reconstruction/T", b.gradient("T"),
              [&](const Matrix& t) {
                  return coord_loss_through_reconstruction(target, in.membership, inst.score_logits, in.ctrl, t)
                      .value;
              },
              in.uv);
        check("coord_through_reconstruction/C", b.gradient("C"),
              [&](const Matrix& m) {
                  return coord_loss_through_reconstruction(target, in.membership, inst.score_logits,
                                                           control_tensor(m, sizes.layout), in.uv)
                      .value;
              },
              control_matrix(in.ctrl));
    }
    // total loss, every input
    {
        const LossBundle b = total_loss(in);
        auto with = [&](auto setter) {
            return [&in, setter](const Matrix& x) {
                LossInputs copy = in;
                setter(copy, x);
                return total_loss(copy).value;
            };
        };
        check("total_loss/D", b.gradient("D"), with([](LossInputs& c, const Matrix& x) { c.degree_probs = x; }),
              in.degree_probs);
        check("total_loss/W", b.gradient("W"), with([](LossInputs& c, const Matrix& x) { c.membership = x; }),
              in.membership);
        check("total_loss/T", b.gradient("T"), with([](LossInputs& c, const Matrix& x) { c.uv = x; }), in.uv);
        const DegreeLayout layout = sizes.layout;
        check("total_loss/C", b.gradient("C"),
              with([layout](LossInputs& c, const Matrix& x) { c.ctrl = control_tensor(x, layout); }),
              control_matrix(in.ctrl));
        check("total_loss/X", b.gradient("X"), with([](LossInputs& c, const Matrix& x) { c.features = x; }),
              in.features);
        check("total_loss/P_star", b.gradient("P_star"),
              with([](LossInputs& c, const Matrix& x) { c.points_star = x; }), in.points_star);
        check("total_loss/N_star", b.gradient("N_star"),
              with([](LossInputs& c, const Matrix& x) { c.normals_star = x; }), *in.normals_star);
    }
    // patch partials against finite differences of eval_patch
    {
        BezierPatch patch{{2, 2}, in.ctrl.front()};
        const UV at{0.3, 0.7};
        const Partials d = patch_partials(patch, at);
        Matrix analytic(3, 2);
        analytic << d.du, d.dv;
        Matrix fd(3, 2);
        for (int comp = 0; comp < 3; ++comp) {
            const Matrix g = fd_gradient(
                [&](const Matrix& x) { return eval_patch(patch, {x(0), x(1)})[comp]; },
                (Matrix(1, 2) << at.u, at.v).finished(), opt.step);
            fd.row(comp) = g.row(0);
        }
        reports.push_back(compare_gradients("patch_partials/uv", analytic * (1.0 + opt.tamper), fd, opt.tol));
    }
    return reports;
}

inline bool all_pass(const std::vector<GradReport>& reports) {
    return std::all_of(reports.begin(), reports.end(), [](const GradReport& r) { return r.pass; });
}

}  // namespace bezierseg
