#pragma once

// Loss functions of the joint decomposition / fitting / embedding /
// reconstruction objective, each returning its value together with analytic
// gradients.
//
// Gradients are taken with respect to the ambient matrix entries: W, D and T
// are treated as unconstrained arrays at the evaluation point (the L1 norm of
// a membership column is its plain sum, which is exact for non-negative
// entries). Chaining through a softmax or sigmoid parameterization is left to
// the caller; gradcheck exercises both.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "bezierseg/bezier.hpp"
#include "bezierseg/errors.hpp"
#include "bezierseg/matching.hpp"

namespace bezierseg {

/// Lower clamp applied to p_t inside the focal log.
inline constexpr double kProbClamp = 1e-12;

struct LossBundle {
    double value = 0.0;
    std::map<std::string, Matrix> grad;
    std::map<std::string, double> terms;  // named components, when composite

    [[nodiscard]] const Matrix& gradient(const std::string& name) const {
        auto it = grad.find(name);
        if (it == grad.end()) throw ContractError("loss has no gradient for '" + name + "'");
        return it->second;
    }

    /// Adds value and gradients; gradients for the same input are summed.
    LossBundle& accumulate(const LossBundle& other) {
        value += other.value;
        for (const auto& [name, g] : other.grad) {
            auto it = grad.find(name);
            if (it == grad.end())
                grad.emplace(name, g);
            else
                it->second += g;
        }
        return *this;
    }
};

struct EmbeddingConfig {
    double delta_pull = 0.0;
    double delta_push = 2.0;
    double gamma = 3.0;  // focal focusing parameter

    void validate() const {
        detail::require<ContractError>(delta_pull >= 0.0 && delta_push > delta_pull,
                                       "need delta_push > delta_pull >= 0");
        detail::require<ContractError>(gamma >= 0.0, "focal gamma must be non-negative");
    }
};

// ---------------------------------------------------------------------------
// Control tensor <-> matrix. Row k holds grid k row-major, 4 values per entry.

inline Matrix control_matrix(const ControlTensor& ctrl) {
    if (ctrl.empty()) return Matrix(0, 0);
    const int g = ctrl.front().size();
    Matrix m(static_cast<Eigen::Index>(ctrl.size()), 4 * g);
    for (std::size_t k = 0; k < ctrl.size(); ++k) {
        const auto e = ctrl[k].entries();
        for (int j = 0; j < g; ++j) m.row(static_cast<Eigen::Index>(k)).segment<4>(4 * j) = e[j].transpose();
    }
    return m;
}

inline ControlTensor control_tensor(const Matrix& m, DegreeLayout layout) {
    detail::require<ContractError>(m.cols() == 4 * layout.grid_size(), "control matrix width mismatch");
    ControlTensor out(static_cast<std::size_t>(m.rows()), ControlGrid(layout));
    for (Eigen::Index k = 0; k < m.rows(); ++k) {
        auto e = out[static_cast<std::size_t>(k)].entries();
        for (int j = 0; j < layout.grid_size(); ++j) e[j] = m.row(k).segment<4>(4 * j).transpose();
    }
    return out;
}

// ---------------------------------------------------------------------------
// Decomposition

struct FocalTerm {
    double value = 0.0;
    double dvalue_dp = 0.0;
};

/// (1 - p)^gamma * (-log p) with p clamped to [kProbClamp, 1]; derivative is
/// zero where the clamp is active.
inline FocalTerm focal_term(double p, double gamma) {
    const double pc = std::clamp(p, kProbClamp, 1.0);
    const double q = 1.0 - pc;
    const double log_p = std::log(pc);
    FocalTerm t;
    t.value = std::pow(q, gamma) * -log_p;
    if (p >= kProbClamp && p <= 1.0) {
        const double first = (gamma == 0.0 || log_p == 0.0) ? 0.0 : gamma * std::pow(q, gamma - 1.0) * log_p;
        t.dvalue_dp = first - std::pow(q, gamma) / pc;
    }
    return t;
}

/// Focal loss of one distribution against a target class. Gradient "probs" is C x 1.
inline LossBundle focal_loss(const Vector& probs, int target, double gamma) {
    detail::require<ContractError>(target >= 0 && target < probs.size(), "focal target out of range");
    detail::require<ContractError>(probs.allFinite(), "non-finite probabilities");
    const FocalTerm t = focal_term(probs[target], gamma);
    LossBundle out;
    out.value = t.value;
    Matrix g = Matrix::Zero(probs.size(), 1);
    g(target, 0) = t.dvalue_dp;
    out.grad.emplace("probs", std::move(g));
    return out;
}

/// Mean point-wise focal loss of the degree probabilities. Gradient "D".
inline LossBundle degree_loss(const Matrix& degree_probs, const std::vector<int>& targets, double gamma) {
    const Eigen::Index n = degree_probs.rows();
    detail::require<ContractError>(n > 0 && static_cast<Eigen::Index>(targets.size()) == n,
                                   "degree targets must match the number of points");
    detail::require<ContractError>(degree_probs.allFinite(), "non-finite degree probabilities");
    LossBundle out;
    Matrix g = Matrix::Zero(n, degree_probs.cols());
    for (Eigen::Index i = 0; i < n; ++i) {
        const int t = targets[static_cast<std::size_t>(i)];
        detail::require<ContractError>(t >= 0 && t < degree_probs.cols(), "degree target out of range");
        const FocalTerm ft = focal_term(degree_probs(i, t), gamma);
        out.value += ft.value;
        g(i, t) = ft.dvalue_dp / static_cast<double>(n);
    }
    out.value /= static_cast<double>(n);
    out.grad.emplace("D", std::move(g));
    return out;
}

/// (1/K_hat) * sum over matched pairs of (1 - relaxed IOU). Gradient "W".
inline LossBundle relaxed_iou_loss(const Matrix& membership, const Matrix& gt_onehot,
                                   const MatchResult& match) {
    detail::require<ContractError>(membership.rows() == gt_onehot.rows(), "point count mismatch");
    match.validate(static_cast<int>(membership.cols()), static_cast<int>(gt_onehot.cols()));
    const double k_hat = static_cast<double>(gt_onehot.cols());
    LossBundle out;
    Matrix g = Matrix::Zero(membership.rows(), membership.cols());
    for (const auto& [k, kh] : match.pairs) {
        const auto w = membership.col(k);
        const auto h = gt_onehot.col(kh);
        const double inter = w.dot(h);
        const double uni = w.sum() + h.sum() - inter;
        detail::require<ContractError>(uni > 0.0, "relaxed IOU denominator is not positive");
        out.value += 1.0 - inter / uni;
        // d(I/U)/dw_i = (h_i U - I (1 - h_i)) / U^2
        g.col(k) = -((h.array() * uni - inter * (1.0 - h.array())) / (uni * uni * k_hat)).matrix();
    }
    out.value /= k_hat;
    out.grad.emplace("W", std::move(g));
    return out;
}

struct SoftVote {
    Matrix scores;      // S = W^T D, K x C
    Matrix normalized;  // S with each row L1-normalized over degree classes
};

inline SoftVote soft_vote_scores(const Matrix& membership, const Matrix& degree_probs) {
    detail::require<ContractError>(membership.rows() == degree_probs.rows(), "point count mismatch");
    detail::require<ContractError>(membership.allFinite() && degree_probs.allFinite(), "non-finite input");
    SoftVote sv;
    sv.scores = membership.transpose() * degree_probs;
    sv.normalized = sv.scores;
    for (Eigen::Index k = 0; k < sv.scores.rows(); ++k) {
        const double total = sv.scores.row(k).sum();
        if (!(total > 0.0))
            throw EmptyPrimitiveError("primitive " + std::to_string(k) + " has zero degree score");
        sv.normalized.row(k) /= total;
    }
    return sv;
}

/// (1/K_hat) * sum over matched pairs of FL(S_hat[k, :]) against the degree
/// class of the matched ground-truth primitive. Gradients "W" and "D".
inline LossBundle voting_loss(const Matrix& membership, const Matrix& degree_probs,
                              const std::vector<int>& gt_classes, const MatchResult& match, double gamma) {
    const SoftVote sv = soft_vote_scores(membership, degree_probs);
    const int k_hat = static_cast<int>(gt_classes.size());
    match.validate(static_cast<int>(membership.cols()), k_hat);
    LossBundle out;
    Matrix g_scores = Matrix::Zero(sv.scores.rows(), sv.scores.cols());
    for (const auto& [k, kh] : match.pairs) {
        const int t = gt_classes[static_cast<std::size_t>(kh)];
        detail::require<ContractError>(t >= 0 && t < sv.scores.cols(), "voting target out of range");
        const FocalTerm ft = focal_term(sv.normalized(k, t), gamma);
        out.value += ft.value;
        // S_hat_kt = S_kt / R_k: dS_hat_kt/dS_kc = (delta_ct - S_hat_kt) / R_k
        const double total = sv.scores.row(k).sum();
        const double coeff = ft.dvalue_dp / (k_hat * total);
        g_scores.row(k).setConstant(-coeff * sv.normalized(k, t));
        g_scores(k, t) += coeff;
    }
    out.value /= k_hat;
    out.grad.emplace("W", degree_probs * g_scores.transpose());
    out.grad.emplace("D", membership * g_scores);
    return out;
}

// ---------------------------------------------------------------------------
// Fitting

/// (1/N) sum |T_i - T_hat_i|^2. Gradient "T".
inline LossBundle param_loss(const Matrix& uv, const Matrix& uv_gt) {
    detail::require<ContractError>(uv.rows() == uv_gt.rows() && uv.cols() == 2 && uv_gt.cols() == 2 &&
                                       uv.rows() > 0,
                                   "uv matrices must be N x 2");
    const double n = static_cast<double>(uv.rows());
    const Matrix diff = uv - uv_gt;
    LossBundle out;
    out.value = diff.squaredNorm() / n;
    out.grad.emplace("T", 2.0 * diff / n);
    return out;
}

/// Control-point loss over matched pairs. Each pair is compared on the grid of
/// the aligned degree (max of predicted and true per direction); ground-truth
/// entries beyond its own degree are zero. Mean squared (x, y, z, w) distance
/// over all compared entries. Gradient "C" in control_matrix layout.
inline LossBundle ctrl_loss(const ControlTensor& pred, const ControlTensor& gt,
                            const std::vector<DegreePair>& pred_degrees,
                            const std::vector<DegreePair>& gt_degrees, const MatchResult& match) {
    detail::require<ContractError>(!pred.empty() && !gt.empty(), "empty control tensor");
    detail::require<ContractError>(pred.size() == pred_degrees.size() && gt.size() == gt_degrees.size(),
                                   "degree lists must match control tensors");
    const DegreeLayout layout = pred.front().layout();
    for (const auto& g : pred) detail::require<ContractError>(g.layout() == layout, "layout mismatch");
    for (const auto& g : gt) detail::require<ContractError>(g.layout() == layout, "layout mismatch");
    match.validate(static_cast<int>(pred.size()), static_cast<int>(gt.size()));

    Matrix g = Matrix::Zero(static_cast<Eigen::Index>(pred.size()), 4 * layout.grid_size());
    double sum = 0.0;
    long count = 0;
    for (const auto& [k, kh] : match.pairs) {
        const DegreePair dp = pred_degrees[static_cast<std::size_t>(k)];
        const DegreePair dg = gt_degrees[static_cast<std::size_t>(kh)];
        detail::require<DomainError>(layout.contains(dp) && layout.contains(dg), "degree outside layout");
        const int mu = std::max(dp.m, dg.m);
        const int mv = std::max(dp.n, dg.n);
        for (int r = 0; r <= mu; ++r)
            for (int s = 0; s <= mv; ++s) {
                const Vec4 target = (r <= dg.m && s <= dg.n) ? gt[static_cast<std::size_t>(kh)](r, s)
                                                             : Vec4::Zero().eval();
                const Vec4 diff = pred[static_cast<std::size_t>(k)](r, s) - target;
                sum += diff.squaredNorm();
                g.row(k).segment<4>(4 * (r * layout.grid_cols() + s)) = 2.0 * diff.transpose();
                ++count;
            }
    }
    LossBundle out;
    if (count > 0) {
        out.value = sum / static_cast<double>(count);
        g /= static_cast<double>(count);
    }
    out.grad.emplace("C", std::move(g));
    return out;
}

// ---------------------------------------------------------------------------
// Embedding

/// Membership-weighted mean feature per primitive, K x F.
inline Matrix instance_features(const Matrix& membership, const Matrix& features) {
    detail::require<ContractError>(membership.rows() == features.rows(), "point count mismatch");
    Matrix ins = membership.transpose() * features;
    for (Eigen::Index k = 0; k < membership.cols(); ++k) {
        const double mass = membership.col(k).sum();
        if (!(mass > 0.0)) throw EmptyPrimitiveError("primitive " + std::to_string(k) + " has no mass");
        ins.row(k) /= mass;
    }
    return ins;
}

/// L_pull + L_push on the membership-weighted embedding. Gradients "X" and "W";
/// terms "pull" and "push". The hinge subgradient at the kink is 0.
inline LossBundle pull_push_loss(const Matrix& membership, const Matrix& features,
                                 const EmbeddingConfig& cfg) {
    cfg.validate();
    detail::require<ContractError>(membership.allFinite() && features.allFinite(), "non-finite input");
    const Eigen::Index n = features.rows();
    const Eigen::Index k = membership.cols();
    detail::require<ContractError>(n > 0 && k > 0, "empty embedding input");

    Vector mass = membership.colwise().sum().transpose();
    const Matrix ins = instance_features(membership, features);
    const Matrix center = membership * ins;
    const Matrix resid = features - center;

    Matrix g_x = Matrix::Zero(n, features.cols());
    Matrix g_center = Matrix::Zero(n, features.cols());
    Matrix g_ins = Matrix::Zero(k, features.cols());

    double pull = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
        const double arg = resid.row(i).squaredNorm() - cfg.delta_pull;
        if (arg > 0.0) {
            pull += arg;
            g_x.row(i) += 2.0 * resid.row(i) / static_cast<double>(n);
            g_center.row(i) -= 2.0 * resid.row(i) / static_cast<double>(n);
        }
    }
    pull /= static_cast<double>(n);

    double push = 0.0;
    if (k >= 2) {
        const double coef = 1.0 / (2.0 * static_cast<double>(k) * static_cast<double>(k - 1));
        for (Eigen::Index a = 0; a < k; ++a)
            for (Eigen::Index b = a + 1; b < k; ++b) {
                const Eigen::RowVectorXd d = ins.row(a) - ins.row(b);
                const double arg = cfg.delta_push - d.squaredNorm();
                if (arg > 0.0) {
                    push += coef * arg;
                    g_ins.row(a) -= 2.0 * coef * d;
                    g_ins.row(b) += 2.0 * coef * d;
                }
            }
    }

    // center = W ins
    Matrix g_w = g_center * ins.transpose();
    g_ins += membership.transpose() * g_center;
    // ins_k = (sum_i w_ik x_i) / m_k
    const Matrix g_ins_scaled = mass.cwiseInverse().asDiagonal() * g_ins;
    g_x += membership * g_ins_scaled;
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index kk = 0; kk < k; ++kk)
            g_w(i, kk) += g_ins_scaled.row(kk).dot(features.row(i) - ins.row(kk));

    LossBundle out;
    out.value = pull + push;
    out.terms["pull"] = pull;
    out.terms["push"] = push;
    out.grad.emplace("X", std::move(g_x));
    out.grad.emplace("W", std::move(g_w));
    return out;
}

// ---------------------------------------------------------------------------
// Reconstruction

inline constexpr double kUnitNormalTol = 1e-6;

namespace detail {

inline void check_unit_rows(const Matrix& normals, const char* what) {
    require<ContractError>(normals.cols() == 3, std::string(what) + " must be N x 3");
    for (Eigen::Index i = 0; i < normals.rows(); ++i)
        require<ContractError>(std::abs(normals.row(i).norm() - 1.0) <= kUnitNormalTol,
                               std::string(what) + " row " + std::to_string(i) + " is not unit length");
}

}  // namespace detail

/// L_coord, plus L_norm when both normal sets are given. Gradients "P_star"
/// and (with normals) "N_star"; terms "coord" and "norm".
inline LossBundle recon_losses(const Matrix& points, const Matrix& points_star,
                               const std::optional<Matrix>& normals = std::nullopt,
                               const std::optional<Matrix>& normals_star = std::nullopt) {
    detail::require<ContractError>(points.cols() == 3 && points_star.cols() == 3 &&
                                       points.rows() == points_star.rows() && points.rows() > 0,
                                   "point matrices must be N x 3");
    detail::require<ContractError>(normals.has_value() == normals_star.has_value(),
                                   "normal losses need both input and reconstructed normals");
    const double n = static_cast<double>(points.rows());
    LossBundle out;
    const Matrix diff = points - points_star;
    const double coord = diff.squaredNorm() / n;
    out.grad.emplace("P_star", -2.0 * diff / n);
    out.terms["coord"] = coord;
    out.value = coord;
    if (normals) {
        detail::check_unit_rows(*normals, "input normals");
        detail::require<ContractError>(normals_star->rows() == normals->rows() && normals_star->cols() == 3,
                                       "reconstructed normals must be N x 3");
        double norm = 0.0;
        Matrix g = Matrix::Zero(normals->rows(), 3);
        for (Eigen::Index i = 0; i < normals->rows(); ++i) {
            const double dot = normals->row(i).dot(normals_star->row(i));
            norm += 1.0 - std::abs(dot);
            const double sign = dot > 0.0 ? 1.0 : (dot < 0.0 ? -1.0 : 0.0);
            g.row(i) = -sign * normals->row(i) / n;
        }
        norm /= n;
        out.terms["norm"] = norm;
        out.value += norm;
        out.grad.emplace("N_star", std::move(g));
    }
    return out;
}

/// L_coord of the batched reconstruction itself, differentiated through the
/// rational patches: gradients "W", "T" and "C" (control_matrix layout).
/// Degrees come from the argmax of the score rows and carry no gradient.
inline LossBundle coord_loss_through_reconstruction(const Matrix& points, const Matrix& membership,
                                                    const Matrix& degree_scores, const ControlTensor& ctrl,
                                                    const Matrix& uv) {
    const DegreeLayout layout = detail::check_batch_shapes(membership, degree_scores, ctrl, uv);
    detail::require<ContractError>(points.rows() == membership.rows() && points.cols() == 3,
                                   "points must be N x 3");
    const std::vector<DegreePair> degrees = argmax_degrees(degree_scores, layout);
    for (std::size_t k = 0; k < ctrl.size(); ++k) detail::check_active_weights(ctrl[k], degrees[k]);

    const Eigen::Index n = membership.rows();
    const Eigen::Index kcount = membership.cols();
    const double inv_n = 1.0 / static_cast<double>(n);
    Matrix g_w = Matrix::Zero(n, kcount);
    Matrix g_t = Matrix::Zero(n, 2);
    Matrix g_c = Matrix::Zero(kcount, 4 * layout.grid_size());
    LossBundle out;

    std::vector<Vec3> r(static_cast<std::size_t>(kcount));
    std::vector<Partials> dr(static_cast<std::size_t>(kcount));
    for (Eigen::Index i = 0; i < n; ++i) {
        const UV at{uv(i, 0), uv(i, 1)};
        const double total = membership.row(i).sum();
        detail::require<ContractError>(total > 0.0, "membership row " + std::to_string(i) + " is zero");
        Vec3 p = Vec3::Zero();
        for (Eigen::Index k = 0; k < kcount; ++k) {
            const auto ku = static_cast<std::size_t>(k);
            const BezierPatch patch{degrees[ku], ctrl[ku]};
            r[ku] = detail::eval_unchecked(patch.ctrl, patch.degree, at);
            dr[ku] = patch_partials(patch, at);
            p += membership(i, k) * r[ku];
        }
        p /= total;
        const Vec3 diff = points.row(i).transpose() - p;
        out.value += diff.squaredNorm() * inv_n;
        const Vec3 g_p = -2.0 * diff * inv_n;

        for (Eigen::Index k = 0; k < kcount; ++k) {
            const auto ku = static_cast<std::size_t>(k);
            const double wt = membership(i, k) / total;
            g_w(i, k) = g_p.dot(r[ku] - p) / total;
            g_t(i, 0) += wt * g_p.dot(dr[ku].du);
            g_t(i, 1) += wt * g_p.dot(dr[ku].dv);
            if (wt == 0.0) continue;
            const DegreePair d = degrees[ku];
            const detail::RationalSums sums = detail::rational_sums<false>(ctrl[ku], d, at);
            for (int rr = 0; rr <= d.m; ++rr)
                for (int ss = 0; ss <= d.n; ++ss) {
                    const Vec4& c = ctrl[ku](rr, ss);
                    const double b = detail::bernstein(rr, d.m, at.u) * detail::bernstein(ss, d.n, at.v);
                    const int col = 4 * (rr * layout.grid_cols() + ss);
                    g_c.row(k).segment<3>(col) += (wt * b * c[3] / sums.den) * g_p.transpose();
                    g_c(k, col + 3) += wt * b / sums.den * g_p.dot(c.head<3>() - r[ku]);
                }
        }
    }
    out.grad.emplace("W", std::move(g_w));
    out.grad.emplace("T", std::move(g_t));
    out.grad.emplace("C", std::move(g_c));
    return out;
}

// ---------------------------------------------------------------------------
// Total

/// Network outputs plus the supervision they are scored against.
struct LossInputs {
    // predictions
    Matrix degree_probs;  // D, N x C
    Matrix membership;    // W, N x K
    Matrix uv;            // T, N x 2
    ControlTensor ctrl;   // C, K grids
    Matrix features;      // X, N x F
    Matrix points_star;   // reconstructed coordinates, N x 3
    std::optional<Matrix> normals_star;

    // ground truth
    Matrix points;                       // P, N x 3
    std::optional<Matrix> normals;       // input normals
    std::vector<int> point_classes;      // degree class per point
    Matrix gt_onehot;                    // W-hat, N x K_hat
    Matrix gt_uv;                        // T-hat, N x 2
    ControlTensor gt_ctrl;               // K_hat grids
    std::vector<DegreePair> gt_degrees;  // K_hat

    EmbeddingConfig config;
};

/// L_dec + L_fit + L_emb + L_recon. The Hungarian pairs are recomputed from
/// W and held fixed for differentiation. Predicted patch degrees are the
/// argmax of the soft-voted degree distributions. Gradients per input are
/// the sums of the component gradients; every component is listed in terms.
inline LossBundle total_loss(const LossInputs& in, MatchResult* match_out = nullptr) {
    const MatchResult match = match_primitives(in.membership, in.gt_onehot);
    if (match_out) *match_out = match;
    const DegreeLayout layout = in.ctrl.empty() ? DegreeLayout{} : in.ctrl.front().layout();
    std::vector<int> gt_classes;
    gt_classes.reserve(in.gt_degrees.size());
    for (const auto& d : in.gt_degrees) gt_classes.push_back(layout.class_index(d));

    const LossBundle deg = degree_loss(in.degree_probs, in.point_classes, in.config.gamma);
    const LossBundle seg = relaxed_iou_loss(in.membership, in.gt_onehot, match);
    const LossBundle vote = voting_loss(in.membership, in.degree_probs, gt_classes, match, in.config.gamma);
    const LossBundle para = param_loss(in.uv, in.gt_uv);
    const std::vector<DegreePair> pred_degrees =
        argmax_degrees(soft_vote_scores(in.membership, in.degree_probs).normalized, layout);
    const LossBundle ctrl = ctrl_loss(in.ctrl, in.gt_ctrl, pred_degrees, in.gt_degrees, match);
    const LossBundle emb = pull_push_loss(in.membership, in.features, in.config);
    const LossBundle recon = recon_losses(in.points, in.points_star, in.normals, in.normals_star);

    LossBundle total;
    for (const LossBundle* part : {&deg, &seg, &vote, &para, &ctrl, &emb, &recon}) total.accumulate(*part);
    total.terms = {{"deg", deg.value},   {"seg", seg.value},   {"voting", vote.value},
                   {"para", para.value}, {"ctrl", ctrl.value}, {"pull", emb.terms.at("pull")},
                   {"push", emb.terms.at("push")}, {"coord", recon.terms.at("coord")}};
    if (recon.terms.contains("norm")) total.terms["norm"] = recon.terms.at("norm");
    return total;
}

}  // namespace bezierseg
