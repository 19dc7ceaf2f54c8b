#include <catch_amalgamated.hpp>

#include <cmath>

#include "bezierseg/gradcheck.hpp"

using namespace bezierseg;

TEST_CASE("fd_gradient of a cubic") {
    Matrix x(2, 3);
    x << 0.5, -1.0, 2.0, 3.0, 0.0, -0.25;
    const Matrix g = fd_gradient([](const Matrix& m) { return m.array().cube().sum(); }, x);
    const Matrix expect = 3.0 * x.array().square().matrix();
    REQUIRE((g - expect).cwiseAbs().maxCoeff() < 1e-8);
}

TEST_CASE("fd_gradient with an absolute step is exact on quadratics") {
    Matrix x(1, 2);
    x << 1.5, -2.0;
    const Matrix g = fd_gradient([](const Matrix& m) { return m(0) * m(0) + 3.0 * m(1); }, x, 1e-3);
    REQUIRE(std::abs(g(0) - 3.0) < 1e-10);
    REQUIRE(std::abs(g(1) - 3.0) < 1e-10);
    REQUIRE_THROWS_AS(fd_gradient([](const Matrix&) { return 0.0; }, x, 0.0), ContractError);
    REQUIRE_THROWS_AS(fd_gradient([](const Matrix& m) { return std::log(m(1)); }, x, 1e-3), OracleError);
}

TEST_CASE("compare_gradients is normwise relative") {
    Matrix a(1, 3), f(1, 3);
    a << 10.0, 0.001, 0.0;
    f << 10.0, 0.002, 0.0;
    const GradReport r = compare_gradients("x", a, f);
    REQUIRE(r.max_abs_err == Catch::Approx(0.001));
    REQUIRE(r.max_rel_err == Catch::Approx(1e-4));
    REQUIRE(r.worst_col == 1);
    REQUIRE(r.pass);

    f(0) = 10.01;
    REQUIRE_FALSE(compare_gradients("x", a, f).pass);

    // tiny gradients pass on the absolute floor
    const GradReport tiny = compare_gradients("y", Matrix::Constant(2, 2, 1e-9), Matrix::Constant(2, 2, -1e-9));
    REQUIRE(tiny.max_rel_err == Catch::Approx(2.0));
    REQUIRE(tiny.pass);

    REQUIRE(compare_gradients("z", Matrix::Zero(2, 2), Matrix::Zero(2, 2)).pass);
    REQUIRE_THROWS_AS(compare_gradients("w", Matrix::Zero(2, 2), Matrix::Zero(2, 3)), ContractError);
}

TEST_CASE("every analytic gradient matches finite differences") {
    for (std::uint64_t seed : {0u, 1u, 2u}) {
        const auto reports = check_all(seed);
        REQUIRE(reports.size() >= 20);
        for (const auto& r : reports) {
            INFO(r.input_name << " seed " << seed << " rel " << r.max_rel_err << " abs " << r.max_abs_err);
            CHECK(r.pass);
            CHECK(r.max_rel_err <= 1e-4);
        }
    }
}

TEST_CASE("a tampered gradient is detected") {
    GradCheckOptions opt;
    opt.tamper = 1e-2;
    const auto reports = check_all(0, {}, opt);
    REQUIRE_FALSE(all_pass(reports));
    int failing = 0;
    for (const auto& r : reports) failing += !r.pass;
    // every input with a gradient above the absolute floor must be caught
    REQUIRE(failing >= static_cast<int>(reports.size()) - 2);
}

TEST_CASE("gradcheck on a smaller layout") {
    GradCheckSizes sz;
    sz.points = 20;
    sz.patches = 2;
    sz.gt_patches = 2;
    sz.layout = {2, 3};
    sz.features = 4;
    REQUIRE(all_pass(check_all(7, sz)));
    sz.gt_patches = 30;
    REQUIRE_THROWS_AS(check_all(7, sz), ContractError);
}
