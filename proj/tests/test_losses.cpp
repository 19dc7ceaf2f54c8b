#include <catch_amalgamated.hpp>

#include <cmath>

#include "bezierseg/gradcheck.hpp"
#include "bezierseg/losses.hpp"
#include "bezierseg/matching.hpp"
#include "oracles.hpp"

using namespace bezierseg;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace {

// Closed forms evaluated independently (Python, double precision).
constexpr double kLn2 = 0.6931471805599453;
constexpr double kFocalUniform9 = 1.5431810474569878;   // (8/9)^3 ln 9
constexpr double kFocalP09 = 1.053605156578263e-4;      // 0.1^3 * -ln 0.9
constexpr double kVotingHalf = 0.08664339756999316;     // 0.5^3 ln 2

Matrix random_stochastic(Rng& rng, int rows, int cols) {
    Matrix m(rows, cols);
    for (int i = 0; i < rows; ++i) {
        for (int j = 0; j < cols; ++j) m(i, j) = rng.uniform(0.01, 1.0);
        m.row(i) /= m.row(i).sum();
    }
    return m;
}

MatchResult identity_match(int k) {
    MatchResult m;
    for (int i = 0; i < k; ++i) m.pairs.push_back({i, i});
    return m;
}

// Every prediction equals its ground truth; embedding clusters are far apart.
LossInputs perfect_inputs(Rng& rng, bool with_normals) {
    const DegreeLayout layout;
    const int n = 30, k = 3;
    LossInputs in;
    std::vector<int> labels;
    for (int i = 0; i < n; ++i) labels.push_back(i % k);
    in.gt_onehot = one_hot(labels, k);
    in.membership = in.gt_onehot;
    for (int j = 0; j < k; ++j) {
        const DegreePair d = oracle::random_degree(rng);
        in.gt_degrees.push_back(d);
        in.gt_ctrl.push_back(oracle::random_patch(rng, {3, 3}, false).ctrl);
    }
    in.ctrl = in.gt_ctrl;
    in.degree_probs = Matrix::Zero(n, layout.num_classes());
    in.features = Matrix::Zero(n, 4);
    in.gt_uv.resize(n, 2);
    in.points.resize(n, 3);
    for (int i = 0; i < n; ++i) {
        const int cls = layout.class_index(in.gt_degrees[static_cast<std::size_t>(labels[i])]);
        in.point_classes.push_back(cls);
        in.degree_probs(i, cls) = 1.0;
        in.features(i, labels[i]) = 5.0;
        in.gt_uv.row(i) << rng.uniform(), rng.uniform();
        in.points.row(i) << rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1);
    }
    in.uv = in.gt_uv;
    in.points_star = in.points;
    if (with_normals) {
        // axis-aligned so n.n is exactly 1 in floating point
        in.normals = Matrix::Zero(n, 3);
        for (int i = 0; i < n; ++i) (*in.normals)(i, i % 3) = i % 2 ? 1.0 : -1.0;
        in.normals_star = in.normals;
    }
    return in;
}

}  // namespace

TEST_CASE("focal loss examples") {
    Vector p(3);
    p << 0.0, 1.0, 0.0;
    REQUIRE(focal_loss(p, 1, 3.0).value == 0.0);

    p << 0.5, 0.5, 0.0;
    REQUIRE_THAT(focal_loss(p, 0, 0.0).value, WithinAbs(kLn2, 1e-12));
    REQUIRE_THAT(focal_loss(p, 0, 0.0).value, WithinAbs(0.693147, 1e-6));

    p << 0.9, 0.05, 0.05;
    REQUIRE_THAT(focal_loss(p, 0, 3.0).value, WithinRel(kFocalP09, 1e-12));

    REQUIRE_THROWS_AS(focal_loss(p, 3, 3.0), ContractError);
    REQUIRE_THROWS_AS(focal_loss(p, -1, 3.0), ContractError);
}

TEST_CASE("focal loss with gamma zero is cross-entropy") {
    Rng rng(41);
    for (int trial = 0; trial < 200; ++trial) {
        const double pt = rng.uniform(1e-6, 1.0);
        Vector p(2);
        p << pt, 1.0 - pt;
        REQUIRE_THAT(focal_loss(p, 0, 0.0).value, WithinAbs(-std::log(pt), 1e-12));
    }
}

TEST_CASE("focal loss stays finite at zero probability") {
    Vector p(2);
    p << 0.0, 1.0;
    const LossBundle b = focal_loss(p, 0, 3.0);
    REQUIRE(std::isfinite(b.value));
    REQUIRE_THAT(b.value, WithinRel(-std::log(kProbClamp), 1e-9));
}

TEST_CASE("degree loss examples") {
    std::vector<int> targets = {0, 4, 8, 2};
    Matrix hard = Matrix::Zero(4, 9);
    for (int i = 0; i < 4; ++i) hard(i, targets[static_cast<std::size_t>(i)]) = 1.0;
    REQUIRE(degree_loss(hard, targets, 3.0).value == 0.0);

    const Matrix uniform = Matrix::Constant(4, 9, 1.0 / 9.0);
    REQUIRE_THAT(degree_loss(uniform, targets, 3.0).value, WithinRel(kFocalUniform9, 1e-12));

    Rng rng(42);
    const Matrix one = random_stochastic(rng, 1, 9);
    REQUIRE(degree_loss(one, {5}, 3.0).value == focal_loss(one.row(0).transpose(), 5, 3.0).value);

    REQUIRE_THROWS_AS(degree_loss(uniform, {0, 1}, 3.0), ContractError);
    REQUIRE_THROWS_AS(degree_loss(uniform, {0, 1, 2, 9}, 3.0), ContractError);
}

TEST_CASE("relaxed IOU loss examples") {
    const Matrix gt = one_hot({0, 1}, 2);
    REQUIRE(relaxed_iou_loss(gt, gt, identity_match(2)).value == 0.0);
    const Matrix half = Matrix::Constant(2, 2, 0.5);
    REQUIRE_THAT(relaxed_iou_loss(half, gt, identity_match(2)).value, WithinAbs(2.0 / 3.0, 1e-15));
}

TEST_CASE("relaxed IOU loss range and permutation invariance") {
    Rng rng(43);
    std::vector<int> labels;
    for (int i = 0; i < 24; ++i) labels.push_back(static_cast<int>(i % 3));
    const Matrix gt = one_hot(labels, 3);
    for (int trial = 0; trial < 50; ++trial) {
        const Matrix w = random_stochastic(rng, 24, 4);
        const MatchResult m = match_primitives(w, gt);
        const double loss = relaxed_iou_loss(w, gt, m).value;
        REQUIRE(loss >= 0.0);
        REQUIRE(loss <= 1.0);
        for (int k = 0; k < 4; ++k)
            for (int g = 0; g < 3; ++g) {
                const double iou = relaxed_iou(w.col(k), gt.col(g));
                REQUIRE(iou >= 0.0);
                REQUIRE(iou <= 1.0);
            }

        // permute predicted columns by pw and ground-truth columns by pg
        const int pw[4] = {2, 0, 3, 1}, pg[3] = {1, 2, 0};
        Matrix w2(24, 4), gt2(24, 3);
        for (int k = 0; k < 4; ++k) w2.col(pw[k]) = w.col(k);
        for (int g = 0; g < 3; ++g) gt2.col(pg[g]) = gt.col(g);
        MatchResult m2;
        for (const auto& p : m.pairs) m2.pairs.push_back({pw[p.pred], pg[p.gt]});
        std::sort(m2.pairs.begin(), m2.pairs.end(), [](auto a, auto b) { return a.pred < b.pred; });
        REQUIRE_THAT(relaxed_iou_loss(w2, gt2, m2).value, WithinAbs(loss, 1e-15));
    }
}

TEST_CASE("soft vote scores") {
    Matrix d(2, 2), w(2, 1);
    d << 1, 0, 0, 1;
    w << 0.5, 0.5;
    const SoftVote sv = soft_vote_scores(w, d);
    REQUIRE_THAT(sv.normalized(0, 0), WithinAbs(0.5, 1e-15));
    REQUIRE_THAT(sv.normalized(0, 1), WithinAbs(0.5, 1e-15));

    const Matrix hard_w = one_hot({0, 1, 1}, 2);
    const Matrix hard_d = one_hot({4, 7, 7}, 9);
    const SoftVote delta = soft_vote_scores(hard_w, hard_d);
    REQUIRE(delta.normalized(0, 4) == 1.0);
    REQUIRE(delta.normalized(1, 7) == 1.0);
    REQUIRE(delta.normalized.sum() == 2.0);

    Rng rng(44);
    for (int trial = 0; trial < 50; ++trial) {
        const Matrix wr = random_stochastic(rng, 20, 4), dr = random_stochastic(rng, 20, 9);
        const SoftVote s = soft_vote_scores(wr, dr);
        REQUIRE((s.scores.array() >= 0.0).all());
        for (int k = 0; k < 4; ++k) {
            REQUIRE_THAT(s.normalized.row(k).sum(), WithinAbs(1.0, 1e-12));
            REQUIRE_THAT(s.scores.row(k).sum(), WithinAbs(wr.col(k).sum(), 1e-12));
        }
    }

    Matrix empty = one_hot({0, 0}, 2);
    REQUIRE_THROWS_AS(soft_vote_scores(empty, d), EmptyPrimitiveError);
}

TEST_CASE("voting loss examples") {
    Matrix d(2, 2), w(2, 1);
    d << 1, 0, 0, 1;
    w << 0.5, 0.5;
    REQUIRE_THAT(voting_loss(w, d, {0}, identity_match(1), 3.0).value, WithinRel(kVotingHalf, 1e-12));

    const Matrix hard_w = one_hot({0, 1, 1}, 2);
    const Matrix hard_d = one_hot({4, 7, 7}, 9);
    REQUIRE(voting_loss(hard_w, hard_d, {4, 7}, identity_match(2), 3.0).value == 0.0);
}

TEST_CASE("param loss examples") {
    Matrix t(1, 2), th(1, 2);
    t << 0, 0;
    th << 1, 1;
    REQUIRE(param_loss(t, th).value == 2.0);
    REQUIRE(param_loss(th, th).value == 0.0);

    Matrix a(2, 2), b(2, 2);
    a << 0.5, 0.0, 0.0, 0.5;
    b.setZero();
    REQUIRE_THAT(param_loss(a, b).value, WithinAbs(0.25, 1e-15));
    REQUIRE((param_loss(a, b).gradient("T") - (a - b)).norm() < 1e-15);  // 2(T - T_hat)/N with N = 2
}

TEST_CASE("ctrl loss examples") {
    Rng rng(45);
    const ControlGrid g = oracle::random_patch(rng, {3, 3}, false).ctrl;
    REQUIRE(ctrl_loss({g}, {g}, {{2, 3}}, {{2, 3}}, identity_match(1)).value == 0.0);

    // one of four compared points moved by 0.3 in x
    ControlGrid moved = g;
    moved(1, 0)[0] += 0.3;
    REQUIRE_THAT(ctrl_loss({moved}, {g}, {{1, 1}}, {{1, 1}}, identity_match(1)).value, WithinAbs(0.0225, 1e-15));

    // predicted (2,2) against true (1,1): five extra entries are compared with zero
    double extra = 0.0;
    for (int r = 0; r <= 2; ++r)
        for (int s = 0; s <= 2; ++s)
            if (r > 1 || s > 1) extra += g(r, s).squaredNorm();
    REQUIRE_THAT(ctrl_loss({g}, {g}, {{2, 2}}, {{1, 1}}, identity_match(1)).value, WithinRel(extra / 9.0, 1e-14));
    // a lower predicted degree still compares the predicted grid's own entries up to the aligned degree
    ControlGrid other = g;
    other(2, 2)[1] += 0.6;
    REQUIRE_THAT(ctrl_loss({other}, {g}, {{1, 1}}, {{2, 2}}, identity_match(1)).value, WithinAbs(0.04, 1e-15));
}

TEST_CASE("instance features") {
    Matrix w(2, 1), x(2, 3);
    w << 0.25, 0.75;
    x << 0, 0, 0, 1, 2, 3;
    const Matrix ins = instance_features(w, x);
    REQUIRE((ins.row(0) - (0.75 * x.row(1) + 0.25 * x.row(0))).norm() < 1e-15);

    Rng rng(46);
    const Matrix xr = detail::gaussian(rng, 12, 5);
    const Matrix hard = one_hot({0, 1, 2, 0, 1, 2, 0, 1, 2, 0, 1, 2}, 3);
    const Matrix means = instance_features(hard, xr);
    for (int k = 0; k < 3; ++k) {
        Eigen::RowVectorXd m = Eigen::RowVectorXd::Zero(5);
        for (int i = k; i < 12; i += 3) m += xr.row(i) / 4.0;
        REQUIRE((means.row(k) - m).norm() < 1e-14);
    }
    const Matrix uni = instance_features(Matrix::Constant(12, 3, 1.0 / 3.0), xr);
    for (int k = 0; k < 3; ++k) REQUIRE((uni.row(k) - xr.colwise().mean()).norm() < 1e-14);

    REQUIRE_THROWS_AS(instance_features(one_hot({0, 0}, 2), x), EmptyPrimitiveError);
}

TEST_CASE("pull push examples") {
    const EmbeddingConfig cfg;
    const Matrix same = Matrix::Constant(6, 4, 0.3);
    const LossBundle b = pull_push_loss(Matrix::Constant(6, 2, 0.5), same, cfg);
    REQUIRE(b.terms.at("pull") == 0.0);
    REQUIRE_THAT(b.terms.at("push"), WithinAbs(0.5, 1e-15));

    Matrix x = Matrix::Zero(6, 2);
    for (int i = 3; i < 6; ++i) x(i, 0) = 3.0;
    const LossBundle far = pull_push_loss(one_hot({0, 0, 0, 1, 1, 1}, 2), x, cfg);
    REQUIRE(far.value == 0.0);

    const LossBundle single = pull_push_loss(Matrix::Ones(6, 1), x, cfg);
    REQUIRE(single.terms.at("push") == 0.0);
}

TEST_CASE("reconstruction losses") {
    Rng rng(47);
    const Matrix p = detail::gaussian(rng, 10, 3);
    REQUIRE(recon_losses(p, p).value == 0.0);

    const Matrix n = detail::random_unit_rows(rng, 10);
    const LossBundle anti = recon_losses(p, p, n, Matrix(-n));
    REQUIRE_THAT(anti.terms.at("norm"), WithinAbs(0.0, 1e-15));

    Matrix a(1, 3), b(1, 3), q = Matrix::Zero(1, 3);
    a << 1, 0, 0;
    b << 0, 1, 0;
    REQUIRE_THAT(recon_losses(q, q, a, b).terms.at("norm"), WithinAbs(1.0, 1e-15));

    REQUIRE_THROWS_AS(recon_losses(p, p, Matrix(2 * n), n), ContractError);
    REQUIRE_THROWS_AS(recon_losses(p, p, n, std::nullopt), ContractError);
}

TEST_CASE("total loss is zero on perfect inputs") {
    Rng rng(48);
    for (bool normals : {false, true}) {
        const LossInputs in = perfect_inputs(rng, normals);
        const LossBundle b = total_loss(in);
        REQUIRE(b.value == 0.0);
        for (const auto& [name, v] : b.terms) REQUIRE(v == 0.0);
    }
}

TEST_CASE("normal loss of identical random unit normals is zero up to rounding") {
    Rng rng(52);
    const Matrix p = detail::gaussian(rng, 50, 3);
    const Matrix n = detail::random_unit_rows(rng, 50);
    const double v = recon_losses(p, p, n, n).terms.at("norm");
    REQUIRE(v >= 0.0);
    REQUIRE(v < 1e-15);
}

TEST_CASE("total loss is the sum of its components") {
    Rng rng(49);
    const GradCheckSizes sizes;
    for (int trial = 0; trial < 5; ++trial) {
        const detail::GradInstance gi = detail::make_instance(rng, sizes, trial % 2 == 0);
        const LossInputs& in = gi.in;
        MatchResult m;
        const LossBundle total = total_loss(in, &m);
        const DegreeLayout layout = in.ctrl.front().layout();
        std::vector<int> gt_classes;
        for (const auto& d : in.gt_degrees) gt_classes.push_back(layout.class_index(d));

        const LossBundle deg = degree_loss(in.degree_probs, in.point_classes, in.config.gamma);
        const LossBundle seg = relaxed_iou_loss(in.membership, in.gt_onehot, m);
        const LossBundle vote = voting_loss(in.membership, in.degree_probs, gt_classes, m, in.config.gamma);
        const LossBundle para = param_loss(in.uv, in.gt_uv);
        const auto pred_deg = argmax_degrees(soft_vote_scores(in.membership, in.degree_probs).normalized, layout);
        const LossBundle ctrl = ctrl_loss(in.ctrl, in.gt_ctrl, pred_deg, in.gt_degrees, m);
        const LossBundle emb = pull_push_loss(in.membership, in.features, in.config);
        const LossBundle rec = recon_losses(in.points, in.points_star, in.normals, in.normals_star);

        const double sum = deg.value + seg.value + vote.value + para.value + ctrl.value + emb.value + rec.value;
        REQUIRE_THAT(total.value, WithinAbs(sum, 1e-12));
        REQUIRE((total.gradient("D") - deg.gradient("D") - vote.gradient("D")).cwiseAbs().maxCoeff() < 1e-12);
        REQUIRE((total.gradient("W") - seg.gradient("W") - vote.gradient("W") - emb.gradient("W")).cwiseAbs().maxCoeff() <
                1e-12);
        REQUIRE((total.gradient("T") - para.gradient("T")).cwiseAbs().maxCoeff() == 0.0);
        REQUIRE((total.gradient("C") - ctrl.gradient("C")).cwiseAbs().maxCoeff() == 0.0);
        REQUIRE((total.gradient("X") - emb.gradient("X")).cwiseAbs().maxCoeff() == 0.0);
        REQUIRE((total.gradient("P_star") - rec.gradient("P_star")).cwiseAbs().maxCoeff() == 0.0);
    }
}

TEST_CASE("losses are non-negative on random inputs") {
    Rng rng(50);
    const GradCheckSizes sizes;
    for (int trial = 0; trial < 10; ++trial) {
        const detail::GradInstance gi = detail::make_instance(rng, sizes, false);
        const LossBundle b = total_loss(gi.in);
        REQUIRE(b.value >= 0.0);
        for (const auto& [name, v] : b.terms) REQUIRE(v >= 0.0);
    }
}

TEST_CASE("control matrix round trip") {
    Rng rng(51);
    ControlTensor t;
    for (int k = 0; k < 3; ++k) t.push_back(oracle::random_patch(rng, {3, 3}, false).ctrl);
    const Matrix m = control_matrix(t);
    REQUIRE(m.rows() == 3);
    REQUIRE(m.cols() == 64);
    const ControlTensor back = control_tensor(m, DegreeLayout{});
    for (int k = 0; k < 3; ++k) REQUIRE(back[static_cast<std::size_t>(k)] == t[static_cast<std::size_t>(k)]);
}
