#include "parprobe/probe.hpp"

#include <doctest.h>

#include <cmath>

using namespace parprobe;

namespace {

Box unit_square() { return Box{make_point(0.0, 0.0), make_point(1.0, 1.0)}; }

InclusionFamily disk(double cx, double r) {
    return InclusionFamily(2, unit_square(),
                           {Shape::parse("disk cx=" + std::to_string(cx) + " cy=0.5 r=" + std::to_string(r), 2)});
}

} // namespace

TEST_CASE("half-space integral scales like h^-n off powers of two") {
    const Lambdas lam{0.9, 0.9, 0.9};
    for (double k : {4.0, 0.25}) {
        const IhResult one = ih_integral(1.0, lam, Material(k), 2);
        for (double h : {0.3, 3.0, 0.7}) {
            const IhResult ih = ih_integral(h, lam, Material(k), 2);
            CHECK(ih.value * h * h / one.value == doctest::Approx(1.0).epsilon(1e-8));
        }
        const IhResult one1 = ih_integral(1.0, lam, Material(k), 1);
        CHECK(ih_integral(3.0, lam, Material(k), 1).value * 3.0 / one1.value == doctest::Approx(1.0).epsilon(1e-8));
    }
}

TEST_CASE("half-space integral input checks") {
    CHECK_THROWS_AS(ih_integral(0.0, Lambdas{}, Material(4.0)), PreconditionError);
    CHECK_THROWS_AS(ih_integral(1.0, Lambdas{1.5, 0.5, 0.5}, Material(4.0)), PreconditionError);
    CHECK_THROWS_AS(ih_integral(1.0, Lambdas{}, Material(4.0), 3), PreconditionError);
}

TEST_CASE("calibration is reproducible and resolved") {
    const Calibration a = calibrate_lambdas(Material(4.0), 2), b = calibrate_lambdas(Material(4.0), 2);
    CHECK(a.lambdas.l1 == b.lambdas.l1);
    CHECK(a.lambdas.l2 == b.lambdas.l2);
    CHECK(a.lambdas.l3 == b.lambdas.l3);
    CHECK(a.i1 == b.i1);
    CHECK(a.i1 >= 10.0 * a.error);
    CHECK(a.refined_change < 1e-6);
    CHECK(a.i1 == doctest::Approx(ih_integral(1.0, a.lambdas, Material(4.0)).value));
}

TEST_CASE("line fit") {
    const LineFit f = fit_line({0, 1, 2, 3}, {1, -1, -3, -5});
    CHECK(f.slope == doctest::Approx(-2.0));
    CHECK(f.intercept == doctest::Approx(1.0));
    CHECK(f.r_squared == doctest::Approx(1.0));
    CHECK_THROWS_AS(fit_line({1}, {1}), PreconditionError);
}

TEST_CASE("gap functional vanishes for equal maps") {
    const Grid g = Grid::make(unit_square(), 1.0 / 16, 0.1, 16, 0.25);
    const auto l = DiscreteDtN::matrix_free(disk(0.5, 0.2), Material(4.0), g);
    const Poles p{make_point(1.05, 0.5), 0.0, make_point(1.05, 0.55), g.T()};
    CHECK(gap_functional_dtn(p, l, l).value == 0.0);
    const Poles inside{make_point(0.5, 0.5), 0.0, make_point(1.05, 0.55), g.T()};
    CHECK_THROWS_AS(gap_functional_dtn(inside, l, l), PreconditionError);
}

TEST_CASE("boundary pairing matches the volume form of the gap functional") {
    const Grid g = Grid::make(unit_square(), 1.0 / 32, 0.1, 64, 0.25);
    const InclusionFamily d1 = disk(0.70, 0.15), d2 = disk(0.68, 0.15);
    const Material mat(4.0);
    const Poles p{make_point(1.05, 0.5), 0.0, make_point(1.05, 0.55), g.T()};
    const VolumeResult vol = volume_functionals(p, d1, d2, mat, g);
    for (auto flux : {TransmissionSolver::FluxKind::conservative, TransmissionSolver::FluxKind::second_order}) {
        const GapFunctional gd = gap_functional_dtn(p, DiscreteDtN::matrix_free(d1, mat, g, flux),
                                                    DiscreteDtN::matrix_free(d2, mat, g, flux));
        const double allowed = std::max(0.05 * std::abs(vol.u()), gd.estimated_error + vol.error());
        CHECK(std::abs(gd.value - vol.u()) <= allowed);
    }
}

TEST_CASE("volume functional rejects probe points inside an inclusion") {
    const Grid g = Grid::make(unit_square(), 1.0 / 16, 0.1, 16, 0.25);
    const Poles p{make_point(0.5, 0.5), 0.0, make_point(1.05, 0.55), g.T()};
    CHECK_THROWS_AS(volume_functionals(p, disk(0.5, 0.2), disk(0.5, 0.2), Material(4.0), g), PreconditionError);
}

TEST_CASE("blow-up sweep input checks") {
    GeometryConfig cfg;
    CHECK_THROWS_AS(blowup_sweep(disk(0.5, 0.2), disk(0.45, 0.2), 0.05, Lambdas{0.9, 0.9, 0.9}, Material(4.0), cfg,
                                 {0.001}, 0.1),
                    PreconditionError);
    CHECK_THROWS_AS(blowup_sweep(disk(0.5, 0.2), disk(0.45, 0.2), 0.05, Lambdas{0.9, 0.9, 0.9}, Material(4.0), cfg,
                                 {0.001, 0.002}, 0.1),
                    PreconditionError);
}

TEST_CASE("detection separates distinct inclusions and not equal ones") {
    const Grid g = Grid::make(unit_square(), 1.0 / 16, 0.1, 16, 0.25);
    const Material mat(4.0);
    const auto conservative = TransmissionSolver::FluxKind::conservative;
    const auto l1 = DiscreteDtN::matrix_free(disk(0.55, 0.2), mat, g, conservative);
    const auto l2 = DiscreteDtN::matrix_free(disk(0.5, 0.2), mat, g, conservative);
    const std::vector<Point> dirs = {make_point(1, 0), make_point(-1, 0)};
    const DetectResult same = detect_boundary(l2, l2, 0.1, dirs);
    CHECK_FALSE(same.distinguishable);
    CHECK(same.true_d_mu == doctest::Approx(0.0).epsilon(1e-12));
    const DetectResult diff = detect_boundary(l1, l2, 0.1, dirs);
    CHECK(diff.distinguishable);
    CHECK(diff.estimate > 0.0);
    CHECK(diff.true_d_mu == doctest::Approx(0.05).epsilon(0.05));
    CHECK_THROWS_AS(detect_boundary(l1, l2, 0.1, {}), PreconditionError);
}
