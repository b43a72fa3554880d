#include "parprobe/analysis.hpp"

#include <doctest.h>

#include <cmath>

using namespace parprobe;

TEST_CASE("convolution constant against the beta function") {
    // Frozen from tests/oracles/freeze.py: 4 pi B(2 - alpha, 2 - beta).
    CHECK(convolution_constant(ConvolutionParams{0, 0, 1, 2}) == doctest::Approx(2.0943951023931955).epsilon(1e-14));
    CHECK(convolution_constant(ConvolutionParams{0.5, 0.5, 1, 2}) == doctest::Approx(4.9348022005446793).epsilon(1e-14));
    CHECK(convolution_constant(ConvolutionParams{1, 0.25, 1, 2}) == doctest::Approx(7.1807832082052417).epsilon(1e-14));
}

TEST_CASE("brute-force convolution equals the closed form") {
    const auto pairs = random_convolution_pairs(2, 4, 21);
    for (const ConvolutionParams p : {ConvolutionParams{0, 0, 1, 2}, ConvolutionParams{0.5, 0.5, 1, 2}, ConvolutionParams{1, 0.25, 1, 2}, ConvolutionParams{0.5, 0, 2, 2}}) {
        const InequalityReport r = check_convolution(p, pairs);
        CHECK(r.pass);
        CHECK(r.statistic < 1e-6);
        CHECK(r.fitted_constant == doctest::Approx(convolution_constant(p)).epsilon(1e-7));
    }
    const auto line = random_convolution_pairs(1, 3, 5);
    const ConvolutionParams p1{0.25, 0.5, 1, 1};
    CHECK(check_convolution(p1, line).fitted_constant == doctest::Approx(convolution_constant(p1)).epsilon(1e-7));
}

TEST_CASE("convolution exponents must stay integrable") {
    CHECK_THROWS_AS(convolution_constant(ConvolutionParams{2, 0, 1, 2}), PreconditionError);
    CHECK_THROWS_AS(check_convolution(ConvolutionParams{0, 2.5, 1, 2}, random_convolution_pairs(2, 1, 1)), PreconditionError);
}

TEST_CASE("random pairs are reproducible") {
    const auto a = random_convolution_pairs(2, 5, 3), b = random_convolution_pairs(2, 5, 3);
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].x == b[i].x);
        CHECK(a[i].t == b[i].t);
        CHECK(a[i].t - a[i].s >= 0.1);
    }
}

TEST_CASE("caloric suite members solve the heat equation") {
    const auto suite = caloric_suite(2, 7);
    CHECK(suite.size() == 20u);
    const double h = 1e-3;
    for (const auto& f : suite) {
        const Point x = make_point(0.13, -0.21);
        const double t = 0.5;
        const double ut = (f.u(x, t + h) - f.u(x, t - h)) / (2 * h);
        double lap = 0.0;
        for (int a = 0; a < 2; ++a) {
            Point xp = x, xm = x;
            xp(a) += h;
            xm(a) -= h;
            lap += (f.u(xp, t) - 2 * f.u(x, t) + f.u(xm, t)) / (h * h);
        }
        CHECK(ut == doctest::Approx(lap).epsilon(1e-4).scale(1e-3 * std::abs(f.u(x, t)) + 1e-6));
    }
}

TEST_CASE("two-sphere one-cylinder inequality with one constant") {
    const auto suite = caloric_suite(2, 7);
    const InequalityReport r = check_two_sphere_one_cylinder(suite, 0.1, 0.25, 1.0, 2);
    CHECK(r.pass);
    CHECK(r.entries.size() == suite.size());
    CHECK(std::isfinite(r.fitted_constant));
    CHECK(r.fitted_constant >= 1.0 / std::log(10.0));
    for (const auto& e : r.entries) CHECK(e.slack >= 0.0);
    CHECK(r.statistic > 0.0);
    CHECK(r.statistic <= 1.0);
}

TEST_CASE("two-sphere norms of a constant") {
    CaloricFn one{"one", [](const Point&, double) { return 1.0; }};
    const TwoSphereNorms nm = two_sphere_norms(one, 0.1, 0.25, 1.0, 2);
    CHECK(nm.small == doctest::Approx(std::sqrt(kPi * 0.01)).epsilon(1e-10));
    CHECK(nm.medium == doctest::Approx(std::sqrt(kPi * 0.0625)).epsilon(1e-10));
    CHECK(nm.cylinder == doctest::Approx(std::sqrt(kPi)).epsilon(1e-10));
}

TEST_CASE("interpolation inequality") {
    const InequalityReport r = check_interpolation(interpolation_suite(2, 4), 1.0, 2);
    CHECK(r.pass);
    for (const auto& e : r.entries) CHECK(e.slack >= 0.0);
    CHECK(r.fitted_constant > 0.0);
}

TEST_CASE("cylinder bound for the discrete two-phase kernel") {
    const Box box{make_point(0.0, 0.0), make_point(1.0, 1.0)};
    const Grid g = Grid::make(box, 1.0 / 16, 0.1, 16, 0.25);
    const InclusionFamily q(2, box, {Shape::parse("disk cx=0.5 cy=0.5 r=0.2", 2)});
    std::vector<CylinderInstance> inst;
    for (double d : {0.1, 0.3}) inst.push_back({make_point(0.2, 0.5), 0.0, make_point(0.2 + d, 0.5), g.time(8)});
    const InequalityReport r = check_cylinder_bound(q, Material(4.0), g, inst);
    CHECK(r.pass);
    for (const auto& e : r.entries) {
        CHECK(e.lhs > 0.0);
        CHECK(e.slack >= 0.0);
    }
}

TEST_CASE("asymptotic estimate rejects samples outside the cone") {
    const ChartFn flat = [](const Point&, double) { return 0.0; };
    const std::vector<AsymptoticSample> bad = {{make_point(3.0, 0.5), 0.01, -0.01}};
    CHECK_THROWS_AS(check_asymptotic_estimate(flat, Material(4.0), bad), PreconditionError);
}
