#include <catch_amalgamated.hpp>

#include <cmath>
#include <map>

#include "bezierseg/synthgen.hpp"

using namespace bezierseg;

namespace {

ModelSpec small_spec(std::uint64_t seed) {
    ModelSpec s;
    s.patches = 6;
    s.points = 1200;
    s.seed = seed;
    return s;
}

}  // namespace

TEST_CASE("generated models satisfy their invariants") {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const ModelSpec spec = small_spec(seed);
        const AnnotatedCloud c = gen_model(spec);
        c.validate();
        REQUIRE(c.num_points() == spec.points);
        REQUIRE(c.num_patches() == spec.patches);

        std::map<int, int> counts;
        for (int id : c.patch_id) ++counts[id];
        REQUIRE(static_cast<int>(counts.size()) == spec.patches);
        for (const auto& [id, n] : counts) REQUIRE(n >= kMinPointsPerPatch);

        for (int i = 0; i < c.num_points(); ++i) {
            REQUIRE(c.coords.row(i).norm() <= 1.0);
            REQUIRE(std::abs(c.normals.row(i).norm() - 1.0) < 1e-12);
            REQUIRE(c.uv(i, 0) >= 0.0);
            REQUIRE(c.uv(i, 0) <= 1.0);
            REQUIRE(c.uv(i, 1) >= 0.0);
            REQUIRE(c.uv(i, 1) <= 1.0);
            const BezierPatch& p = c.patches[static_cast<std::size_t>(c.patch_id[static_cast<std::size_t>(i)])];
            const UV at{c.uv(i, 0), c.uv(i, 1)};
            REQUIRE((eval_patch(p, at).transpose() - c.coords.row(i)).norm() < 1e-12);
            REQUIRE(std::abs(patch_normal(p, at).dot(c.normals.row(i).transpose())) > 1.0 - 1e-9);
        }
    }
}

TEST_CASE("patch mean normals are separated by the requested angle") {
    const ModelSpec spec = small_spec(3);
    const AnnotatedCloud c = gen_model(spec);
    const double min_cos = std::cos(spec.min_normal_angle_deg * std::numbers::pi / 180.0);
    for (int a = 0; a < c.num_patches(); ++a)
        for (int b = a + 1; b < c.num_patches(); ++b) {
            const Vec3 na = patch_normal(c.patches[static_cast<std::size_t>(a)], {0.5, 0.5});
            const Vec3 nb = patch_normal(c.patches[static_cast<std::size_t>(b)], {0.5, 0.5});
            REQUIRE(std::abs(na.dot(nb)) <= min_cos + 1e-9);
        }
}

TEST_CASE("a bilinear-degree patch is planar") {
    ModelSpec spec = small_spec(4);
    spec.patches = 1;
    spec.points = 200;
    spec.fixed_degree = DegreePair{1, 1};
    const AnnotatedCloud c = gen_model(spec);
    for (int i = 1; i < c.num_points(); ++i)
        REQUIRE(std::abs(std::abs(c.normals.row(i).dot(c.normals.row(0))) - 1.0) < 1e-9);
}

TEST_CASE("polynomial mode uses unit weights") {
    ModelSpec spec = small_spec(5);
    spec.rational = false;
    const AnnotatedCloud c = gen_model(spec);
    for (const auto& p : c.patches)
        for (int r = 0; r <= p.degree.m; ++r)
            for (int s = 0; s <= p.degree.n; ++s) REQUIRE(p.ctrl.weight(r, s) == 1.0);
}

TEST_CASE("generation is deterministic") {
    const AnnotatedCloud a = gen_model(small_spec(11));
    const AnnotatedCloud b = gen_model(small_spec(11));
    REQUIRE(a == b);
    REQUIRE_FALSE(a == gen_model(small_spec(12)));
}

TEST_CASE("generation rejects impossible specs") {
    ModelSpec s = small_spec(0);
    s.points = s.patches * kMinPointsPerPatch - 1;
    REQUIRE_THROWS_AS(gen_model(s), ContractError);
    s = small_spec(0);
    s.patches = 0;
    REQUIRE_THROWS_AS(gen_model(s), ContractError);
    s = small_spec(0);
    s.fixed_degree = DegreePair{4, 1};
    REQUIRE_THROWS_AS(gen_model(s), ContractError);
    s = small_spec(0);
    s.patches = 20;
    s.min_normal_angle_deg = 89.0;  // at most three mutually near-orthogonal directions
    REQUIRE_THROWS_AS(gen_model(s), GenerationError);
}

TEST_CASE("noise touches coordinates only") {
    const AnnotatedCloud c = gen_model(small_spec(6));
    REQUIRE(add_noise(c, 0.0, 1) == c);
    REQUIRE_THROWS_AS(add_noise(c, -0.01, 1), ContractError);

    ModelSpec big = small_spec(6);
    big.points = 8000;
    const AnnotatedCloud base = gen_model(big);
    const AnnotatedCloud noisy = add_noise(base, 0.05, 9);
    REQUIRE(noisy.normals == base.normals);
    REQUIRE(noisy.uv == base.uv);
    REQUIRE(noisy.patch_id == base.patch_id);
    const Matrix d = noisy.coords - base.coords;
    const double sd = std::sqrt(d.squaredNorm() / static_cast<double>(d.size()));
    REQUIRE(std::abs(sd - 0.05) < 0.05 * 0.05);
    REQUIRE(std::abs(d.mean()) < 0.005);
    REQUIRE(add_noise(base, 0.05, 9) == noisy);
}

TEST_CASE("degree class distributions") {
    const DegreeDistribution def = degree_imbalance();
    REQUIRE(def.probs.size() == 9);
    REQUIRE(def.prob({1, 1}) >= 0.5);
    double total = 0.0;
    for (double p : def.probs) total += p;
    REQUIRE(std::abs(total - 1.0) < 1e-12);
    // remaining mass decays with total degree
    REQUIRE(def.prob({1, 2}) > def.prob({2, 2}));
    REQUIRE(def.prob({2, 2}) > def.prob({3, 3}));
    REQUIRE(def.prob({1, 2}) == def.prob({2, 1}));

    const DegreeDistribution uni = degree_imbalance({}, DegreeDistKind::Uniform);
    for (double p : uni.probs) REQUIRE(p == Catch::Approx(1.0 / 9));

    std::vector<double> table(9, 0.0);
    table[4] = 2.0;
    const DegreeDistribution custom = degree_imbalance({}, DegreeDistKind::Custom, table);
    REQUIRE(custom.prob({2, 2}) == 1.0);
    Rng rng(1);
    for (int i = 0; i < 20; ++i) REQUIRE(custom.sample(rng) == DegreePair{2, 2});
    REQUIRE_THROWS_AS(degree_imbalance({}, DegreeDistKind::Custom, {1.0}), ContractError);
    REQUIRE_THROWS_AS(degree_imbalance({}, DegreeDistKind::Custom, std::vector<double>(9, 0.0)), ContractError);
    table[0] = -1.0;
    REQUIRE_THROWS_AS(degree_imbalance({}, DegreeDistKind::Custom, table), ContractError);
}

TEST_CASE("sampled degree frequencies follow the distribution") {
    const DegreeDistribution def = degree_imbalance();
    Rng rng(2);
    std::vector<int> hist(9, 0);
    const int draws = 20000;
    for (int i = 0; i < draws; ++i) ++hist[static_cast<std::size_t>(def.layout.class_index(def.sample(rng)))];
    for (std::size_t c = 0; c < 9; ++c) {
        const double p = def.probs[c];
        const double sd = std::sqrt(p * (1 - p) / draws);
        REQUIRE(std::abs(hist[c] / double(draws) - p) < 5 * sd + 1e-9);
    }
}
