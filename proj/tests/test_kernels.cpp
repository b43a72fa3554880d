#include "parprobe/kernels.hpp"

#include <doctest.h>

#include <cmath>
#include <random>

using namespace parprobe;

namespace {

double free_2d(double dx, double dy, double t) { return std::exp(-(dx * dx + dy * dy) / (4 * t)) / (4 * kPi * t); }

// Image-source solution of the 1-D flat transmission problem, k phase on x > 0.
double image_1d(double x, double t, double y, double k) {
    auto g = [t](double z) { return std::exp(-z * z / (4 * t)) / std::sqrt(4 * kPi * t); };
    const double sk = std::sqrt(k), refl = (1 - sk) / (1 + sk), trans = 2 / (1 + sk);
    return x < 0 ? g(x - y) + refl * g(x + y) : trans * g(x / sk - y);
}

} // namespace

TEST_CASE("material rejects degenerate contrasts") {
    CHECK_THROWS_AS(Material(0.0), DomainError);
    CHECK_THROWS_AS(Material(-2.0), DomainError);
    CHECK_THROWS_AS(Material(1.0), DomainError);
    CHECK(Material(4.0).k == 4.0);
}

TEST_CASE("free kernel value and gradient") {
    const Point x = make_point(0.3, -0.1), y = make_point(0.1, 0.2);
    const KernelEval e = gamma0(x, 0.15, y, 0.05);
    CHECK(e.value == doctest::Approx(free_2d(0.2, -0.3, 0.1)).epsilon(1e-14));
    const double h = 1e-6;
    for (int a = 0; a < 2; ++a) {
        Point xp = x, xm = x;
        xp(a) += h;
        xm(a) -= h;
        const double fd = (gamma0(xp, 0.15, y, 0.05).value - gamma0(xm, 0.15, y, 0.05).value) / (2 * h);
        CHECK(e.gradient(a) == doctest::Approx(fd).epsilon(1e-7));
    }
    CHECK(gamma0(x, 0.05, y, 0.05).value == 0.0);
    CHECK(gamma0(x, 0.01, y, 0.05).value == 0.0);
}

TEST_CASE("flat kernel in one dimension matches image sources") {
    for (double k : {4.0, 0.25, 9.0})
        for (double x : {-0.4, -0.05, 0.02, 0.3})
            for (double t : {0.03, 0.2}) {
                const double v = gamma_plus(make_point(x), t, make_point(-0.2), 0.0, Material(k)).value;
                CHECK(v == doctest::Approx(image_1d(x, t, -0.2, k)).epsilon(1e-10));
            }
}

TEST_CASE("flat kernel in the plane matches the Fourier-Laplace reference") {
    // Frozen from tests/oracles/freeze.py (mpmath, 25 digits).
    struct Ref {
        double k, x1, xn, t, value;
    };
    const Ref refs[] = {
        {4, 0.1, -0.1, 0.05, 0.99822900291727143},  {4, 0.1, 0.15, 0.1, 0.29322402692044549},
        {4, -0.2, 0.3, 0.2, 0.1421349379960541},    {0.25, 0.1, -0.1, 0.05, 1.8252407157488504},
        {0.25, 0.1, 0.15, 0.1, 0.7161764902418431}, {0.25, -0.2, 0.3, 0.2, 0.30626803177051207},
    };
    for (const auto& r : refs) {
        const KernelEval e = gamma_plus(make_point(r.x1, r.xn), r.t, make_point(0.0, -0.2), 0.0, Material(r.k));
        CHECK(e.value == doctest::Approx(r.value).epsilon(1e-9));
    }
}

TEST_CASE("flat kernel satisfies the transmission conditions") {
    std::mt19937_64 rng(17);
    std::uniform_real_distribution<double> ux(-0.4, 0.4), ut(0.01, 0.3), uy(-0.5, -0.05);
    for (double k : {4.0, 0.25})
        for (int i = 0; i < 8; ++i) {
            const Material mat(k);
            const Point x = make_point(ux(rng), 0.0), y = make_point(0.0, uy(rng));
            const double t = ut(rng);
            const KernelEval up = gamma_plus_side(x, t, y, 0.0, mat, +1), dn = gamma_plus_side(x, t, y, 0.0, mat, -1);
            CHECK(up.value == doctest::Approx(dn.value).epsilon(1e-9));
            CHECK(k * up.gradient(1) == doctest::Approx(dn.gradient(1)).epsilon(1e-7));
            CHECK(up.gradient(0) == doctest::Approx(dn.gradient(0)).epsilon(1e-7));
        }
}

TEST_CASE("flat kernel is symmetric in its space arguments") {
    // The operator is self-adjoint, so Gamma(x,t;y,s) = Gamma(y,t;x,s) even across the interface.
    const Material mat(4.0);
    const Point a = make_point(0.1, 0.12), b = make_point(-0.05, -0.2);
    const double ab = gamma_plus(a, 0.1, b, 0.0, mat).value, ba = gamma_plus(b, 0.1, a, 0.0, mat).value;
    CHECK(ab == doctest::Approx(ba).epsilon(1e-9));
}

TEST_CASE("flat kernel reduces to the free kernel for a vanishing contrast") {
    const Point x = make_point(0.1, 0.2), y = make_point(0.0, -0.1);
    const double near = gamma_plus(x, 0.1, y, 0.0, Material(1.0 + 1e-9)).value;
    CHECK(near == doctest::Approx(gamma0(x, 0.1, y, 0.0).value).epsilon(1e-7));
}

TEST_CASE("adjoint kernel swaps the time arguments") {
    const Material mat(0.25);
    const Point x = make_point(0.1, 0.1), y = make_point(0.0, -0.15);
    const double adj = gamma_plus_adjoint(x, 0.02, y, 0.12, mat).value;
    CHECK(adj == doctest::Approx(gamma_plus(x, 0.12, y, 0.02, mat).value).epsilon(1e-12));
    CHECK(gamma_plus_adjoint(x, 0.2, y, 0.12, mat).value == 0.0);
}

TEST_CASE("gaussian envelope with unit constant is the free kernel") {
    const Point x = make_point(0.2, 0.1), y = make_point(-0.1, 0.0);
    CHECK(gaussian_envelope(x, 0.3, y, 0.1, 1.0, EnvelopeKind::value) ==
          doctest::Approx(gamma0(x, 0.3, y, 0.1).value).epsilon(1e-14));
}

TEST_CASE("cutoff profile") {
    CHECK(cutoff_theta(0.0) == 1.0);
    CHECK(cutoff_theta(1.0) == 1.0);
    CHECK(cutoff_theta(-1.0) == 1.0);
    CHECK(cutoff_theta(2.0) == 0.0);
    CHECK(cutoff_theta(-2.5) == 0.0);
    double worst = 0.0, prev = 1.0;
    for (int i = 0; i <= 1000; ++i) {
        const double z = 1.0 + i / 1000.0;
        worst = std::max(worst, std::abs(cutoff_theta_prime(z)));
        CHECK(cutoff_theta(z) <= prev + 1e-15);
        prev = cutoff_theta(z);
    }
    CHECK(worst <= 15.0 / 8.0 + 1e-12);
}
