#include "parprobe/solver.hpp"

#include <doctest.h>

#include <cmath>
#include <random>

using namespace parprobe;

namespace {

Box unit_square() { return Box{make_point(0.0, 0.0), make_point(1.0, 1.0)}; }

InclusionFamily disk_family(double cx, double r) {
    return InclusionFamily(2, unit_square(),
                           {Shape::parse("disk cx=" + std::to_string(cx) + " cy=0.5 r=" + std::to_string(r), 2)});
}

// Max-norm error at T of the scheme on the free kernel with its pole outside the box.
double oracle_error(int cells, double theta) {
    const Grid g = Grid::make(unit_square(), 1.0 / cells, 0.1, cells);
    SolverOptions o;
    o.theta = theta;
    const TransmissionSolver s(g, InclusionFamily::empty(2, unit_square()), Material(4.0), o);
    const Point pole = make_point(-0.25, 0.5);
    const auto faces = boundary_faces(g);
    BoundaryData bd = BoundaryData::zeros(g);
    for (int m = 1; m <= g.steps; ++m)
        for (std::size_t f = 0; f < faces.size(); ++f)
            bd.values(m, static_cast<Eigen::Index>(f)) = gamma0(faces[f].centre, g.time(m), pole, 0.0).value;
    const FieldHistory u = s.solve(bd);
    double e = 0.0;
    for (std::size_t c = 0; c < g.size(); ++c)
        e = std::max(e, std::abs(u.levels[g.steps](static_cast<Eigen::Index>(c)) -
                                 gamma0(g.centre(c), g.T(), pole, 0.0).value));
    return e;
}

double energy(const Eigen::VectorXd& u) { return u.squaredNorm(); }

} // namespace

TEST_CASE("grid construction") {
    const Grid g = Grid::make(unit_square(), 0.125, 0.5, 10, 0.25);
    CHECK(g.cells[0] == 8);
    CHECK(g.cells[1] == 8);
    CHECK(g.dt == doctest::Approx(0.05));
    CHECK(g.T() == doctest::Approx(0.5));
    CHECK(g.collar_cells() == 2);
    const Grid e = g.extended();
    CHECK(e.cells[0] == 12);
    CHECK(e.spacing == g.spacing);
    CHECK(g.level_of(0.25) == 5);
    CHECK_THROWS_AS(g.level_of(0.26), PreconditionError);
    CHECK_THROWS_AS(Grid::make(unit_square(), 0.3, 0.5, 10), ConfigError);
    CHECK_THROWS_AS(Grid::make(unit_square(), 0.125, 0.5, 0), ConfigError);
    CHECK(boundary_faces(g).size() == 32u);
}

TEST_CASE("second-order spatial convergence on the free kernel") {
    const double e16 = oracle_error(16, 0.5), e32 = oracle_error(32, 0.5), e64 = oracle_error(64, 0.5);
    CHECK(std::log2(e16 / e32) >= 1.8);
    CHECK(std::log2(e32 / e64) >= 1.8);
}

TEST_CASE("one-dimensional two-phase steady state is exact") {
    const Box line{make_point(0.0), make_point(1.0)};
    const Grid g = Grid::make(line, 1.0 / 32, 10.0, 320);
    const InclusionFamily strip(1, line, {Shape::parse("interval lo=0.25 hi=0.5", 1)});
    for (double k : {4.0, 0.25}) {
        const TransmissionSolver s(g, strip, Material(k));
        BoundaryData bd = BoundaryData::zeros(g);
        const auto faces = boundary_faces(g);
        for (int m = 0; m <= g.steps; ++m)
            for (std::size_t f = 0; f < faces.size(); ++f)
                bd.values(m, static_cast<Eigen::Index>(f)) = faces[f].outward > 0 ? 1.0 : 0.0;
        const FieldHistory u = s.solve(bd);
        // Series resistances: the flux is constant and the profile piecewise linear.
        const double q = 1.0 / (0.25 + 0.25 / k + 0.5);
        for (std::size_t c = 0; c < g.size(); ++c) {
            const double x = g.centre(c)(0);
            const double exact = x < 0.25 ? q * x : x < 0.5 ? q * (0.25 + (x - 0.25) / k) : q * (0.25 + 0.25 / k + x - 0.5);
            CHECK(u.levels[g.steps](static_cast<Eigen::Index>(c)) == doctest::Approx(exact).epsilon(1e-12));
        }
    }
}

TEST_CASE("cell fractions") {
    const Grid g = Grid::make(unit_square(), 1.0 / 64, 0.01, 4);
    const double area = cell_fractions(disk_family(0.5, 0.2), g, 0.0, 8).sum() * g.spacing * g.spacing;
    CHECK(area == doctest::Approx(kPi * 0.04).epsilon(1e-4));
    // Roots are found along the last axis, so a line crossing every column is exact.
    const InclusionFamily flat = InclusionFamily::from_level(
        2, unit_square(), [](const Point& x, double) { return 0.3137 - x(1); }, false, "flat");
    CHECK(cell_fractions(flat, g, 0.0, 4).sum() * g.spacing * g.spacing == doctest::Approx(1.0 - 0.3137).epsilon(1e-12));
    const InclusionFamily tilted = InclusionFamily::from_level(
        2, unit_square(), [](const Point& x, double) { return 0.3 + 0.2 * x(1) - x(0); }, false, "tilted");
    CHECK(cell_fractions(tilted, g, 0.0, 4).sum() * g.spacing * g.spacing == doctest::Approx(1.0 - 0.4).epsilon(1e-5));
    const Eigen::VectorXd fr = cell_fractions(disk_family(0.5, 0.2), g, 0.0, 4);
    CHECK(fr.minCoeff() >= 0.0);
    CHECK(fr.maxCoeff() <= 1.0);
}

TEST_CASE("discrete maximum principle") {
    const Grid g = Grid::make(unit_square(), 1.0 / 24, 0.2, 24);
    const TransmissionSolver s(g, disk_family(0.5, 0.2), Material(4.0));
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    BoundaryData bd = BoundaryData::zeros(g);
    for (int m = 1; m <= g.steps; ++m)
        for (int f = 0; f < bd.faces(); ++f) bd.values(m, f) = u(rng);
    const FieldHistory sol = s.solve(bd);
    for (int m = 0; m <= g.steps; ++m) {
        CHECK(sol.levels[m].minCoeff() >= -1e-12);
        CHECK(sol.levels[m].maxCoeff() <= 1.0 + 1e-12);
    }
}

TEST_CASE("energy decays with zero boundary data") {
    const Grid g = Grid::make(unit_square(), 1.0 / 32, 0.1, 40, 0.25);
    const TransmissionSolver s(g.extended(), disk_family(0.5, 0.2), Material(0.25));
    const FieldHistory u = s.propagate_source(make_point(0.3, 0.4), 0);
    for (int m = 1; m <= g.steps; ++m) CHECK(energy(u.levels[m]) <= energy(u.levels[m - 1]) * (1 + 1e-12));
}

TEST_CASE("source injection has unit mass and mass is conserved away from the edge") {
    const Grid g = Grid::make(unit_square(), 1.0 / 32, 0.002, 4, 0.5);
    const TransmissionSolver s(g.extended(), disk_family(0.5, 0.2), Material(4.0));
    const FieldHistory u = s.propagate_source(make_point(0.33, 0.41), 0);
    const double cell = g.spacing * g.spacing;
    CHECK(u.levels[0].sum() * cell == doctest::Approx(1.0).epsilon(1e-14));
    for (int m = 1; m <= g.steps; ++m) CHECK(u.levels[m].sum() * cell == doctest::Approx(1.0).epsilon(1e-6));
    CHECK_THROWS_AS(s.propagate_source(make_point(-0.49, 0.5), 0), PreconditionError);
}

TEST_CASE("forward and adjoint propagation are transposes") {
    const Grid g = Grid::make(unit_square(), 1.0 / 24, 0.1, 24, 0.25);
    const Point x = make_point(0.8, 0.3), y = make_point(0.2, 0.6);
    const int start = 3, stop = 20;
    // Moving inclusions go through the iterative solver, so agreement is set by its tolerance.
    for (const char* shape : {"disk cx=0.45 cy=0.5 r=0.2", "disk cx=0.45,0.5 cy=0.5 r=0.2"})
        for (double theta : {1.0, 0.5}) {
            SolverOptions o;
            o.theta = theta;
            o.cg_tol = 1e-14;
            const TransmissionSolver s(g.extended(), InclusionFamily(2, unit_square(), {Shape::parse(shape, 2)}),
                                       Material(4.0), o);
            const double a = s.discrete_delta(x).dot(s.propagate_source(y, start).levels[stop]);
            const double b = s.discrete_delta(y).dot(s.propagate_adjoint(x, stop).levels[start]);
            CHECK(a == doctest::Approx(b).epsilon(1e-12));
            CHECK(a > 0.0);
        }
}

TEST_CASE("dense and matrix-free DtN maps agree") {
    const Grid g = Grid::make(unit_square(), 0.125, 0.1, 6, 0.25);
    const InclusionFamily q = disk_family(0.5, 0.2);
    for (auto flux : {TransmissionSolver::FluxKind::conservative, TransmissionSolver::FluxKind::second_order}) {
        const DiscreteDtN dense = DiscreteDtN::assemble(q, Material(4.0), g, flux);
        const DiscreteDtN lazy = DiscreteDtN::matrix_free(q, Material(4.0), g, flux);
        CHECK(dense.dimension() == 6 * 32);
        std::mt19937_64 rng(3);
        std::normal_distribution<double> nd;
        BoundaryData bd = BoundaryData::zeros(g);
        for (int m = 1; m <= g.steps; ++m)
            for (int f = 0; f < bd.faces(); ++f) bd.values(m, f) = nd(rng);
        const Eigen::MatrixXd diff = dense.apply(bd).values - lazy.apply(bd).values;
        CHECK(diff.cwiseAbs().maxCoeff() <= 1e-9 * dense.apply(bd).values.cwiseAbs().maxCoeff());
        CHECK_THROWS_AS(lazy.matrix(), PreconditionError);
    }
}

TEST_CASE("DtN distance is zero for equal inclusions and grows with the noise level") {
    const Grid g = Grid::make(unit_square(), 0.125, 0.1, 4, 0.25);
    const DiscreteDtN a = DiscreteDtN::assemble(disk_family(0.5, 0.2), Material(4.0), g);
    const DiscreteDtN b = DiscreteDtN::assemble(disk_family(0.5, 0.2), Material(4.0), g);
    CHECK(DiscreteDtN::operator_distance(a, b) == 0.0);
    const double d1 = DiscreteDtN::operator_distance(a, a.with_noise(1e-3, 7));
    CHECK(d1 == doctest::Approx(1e-3).epsilon(0.5));
    CHECK(DiscreteDtN::operator_distance(a, a.with_noise(1e-3, 7)) == d1);
    const DiscreteDtN c = DiscreteDtN::assemble(disk_family(0.45, 0.2), Material(4.0), g);
    CHECK(DiscreteDtN::operator_distance(a, c) > 0.0);
}

TEST_CASE("hashed normals are reproducible and standard") {
    double mean = 0.0, var = 0.0;
    const int N = 20000;
    for (int i = 0; i < N; ++i) {
        const double z = hashed_normal(11, static_cast<std::uint64_t>(i), 3);
        CHECK(z == hashed_normal(11, static_cast<std::uint64_t>(i), 3));
        mean += z;
        var += z * z;
    }
    mean /= N;
    var = var / N - mean * mean;
    CHECK(std::abs(mean) < 0.03);
    CHECK(var == doctest::Approx(1.0).epsilon(0.05));
}
