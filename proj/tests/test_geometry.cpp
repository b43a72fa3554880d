#include "parprobe/geometry.hpp"

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <random>

using namespace parprobe;

namespace {

Box unit_square() { return Box{make_point(0.0, 0.0), make_point(1.0, 1.0)}; }

InclusionFamily disk(double cx, double cy, double r) {
    return InclusionFamily(2, unit_square(), {Shape::parse("disk cx=" + std::to_string(cx) + " cy=" +
                                                               std::to_string(cy) + " r=" + std::to_string(r),
                                                           2)});
}

Shape random_star(std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    Shape s;
    s.kind = Shape::Kind::star;
    s.cx = TimeFn::constant(0.4 + 0.2 * u(rng));
    s.cy = TimeFn::constant(0.4 + 0.2 * u(rng));
    s.r = TimeFn::constant(0.15 + 0.1 * u(rng));
    for (int m = 2; m <= 4; ++m) {
        s.cos_terms.push_back({m, TimeFn::constant(0.03 * (2 * u(rng) - 1))});
        s.sin_terms.push_back({m, TimeFn::constant(0.03 * (2 * u(rng) - 1))});
    }
    return s;
}

} // namespace

TEST_CASE("time functions") {
    const TimeFn f = TimeFn::parse("1,2,3;sin:0.5,2,0.1");
    const double t = 0.3;
    CHECK(f(t) == doctest::Approx(1 + 2 * t + 3 * t * t + 0.5 * std::sin(2 * t + 0.1)));
    CHECK(f.derivative(t) == doctest::Approx(2 + 6 * t + std::cos(2 * t + 0.1)));
    CHECK_THROWS_AS(TimeFn::parse("sin:1,2"), ConfigError);
}

TEST_CASE("shape parsing") {
    CHECK_THROWS_AS(Shape::parse("blob r=1", 2), ConfigError);
    CHECK_THROWS_AS(Shape::parse("disk cx=0.5", 2), ConfigError);
    CHECK_THROWS_AS(Shape::parse("disk r=0.1 q=2", 2), ConfigError);
    CHECK_THROWS_AS(Shape::parse("interval lo=0.1 hi=0.2", 2), ConfigError);
    CHECK_THROWS_AS(Shape::parse("ellipse a=0.1", 2), ConfigError);
    const Shape s = Shape::parse("disk cx=0.5 cy=0.5 r=0.2", 2);
    CHECK(s.level(make_point(0.5, 0.9), 0.0) == doctest::Approx(0.2));
    CHECK(s.level(make_point(0.5, 0.5), 0.0) == doctest::Approx(-0.2));
    const Shape back = Shape::parse(s.describe(), 2);
    CHECK(back.level(make_point(0.1, 0.3), 0.0) == doctest::Approx(s.level(make_point(0.1, 0.3), 0.0)));
}

TEST_CASE("moving disk follows its centre") {
    const InclusionFamily f(2, unit_square(), {Shape::parse("disk cx=0.3,1 cy=0.5 r=0.1", 2)});
    CHECK_FALSE(f.is_static());
    CHECK(f.contains(make_point(0.3, 0.5), 0.0));
    CHECK_FALSE(f.contains(make_point(0.3, 0.5), 0.3));
    CHECK(f.contains(make_point(0.6, 0.5), 0.3));
}

TEST_CASE("distance to a disk") {
    const InclusionFamily f = disk(0.5, 0.5, 0.2);
    CHECK(f.distance(make_point(0.9, 0.5), 0.0) == doctest::Approx(0.2).epsilon(1e-3));
    CHECK(f.distance(make_point(0.5, 0.5), 0.0) == 0.0);
    const Point nrm = f.normal(make_point(0.7, 0.5), 0.0);
    CHECK(nrm(0) == doctest::Approx(1.0));
    CHECK(nrm(1) == doctest::Approx(0.0).epsilon(1e-9));
}

TEST_CASE("hausdorff distances of two disks") {
    // For disks both distances equal |c1 - c2| + |r1 - r2|.
    const InclusionFamily a = disk(0.5, 0.5, 0.2), b = disk(0.45, 0.52, 0.17);
    const double exact = std::hypot(0.05, 0.02) + 0.03;
    const ModifiedDistance md = modified_distance(a, b, 0.0);
    const double res = 0.25 * a.default_spacing();
    CHECK(md.hausdorff_closures == doctest::Approx(exact).epsilon(res / exact));
    CHECK(md.hausdorff_boundaries == doctest::Approx(exact).epsilon(res / exact));
    CHECK(md.value <= md.hausdorff_closures + 1e-12);
    CHECK(md.value > 0.0);
}

TEST_CASE("shifted disks: modified distance is the shift") {
    const ModifiedDistance md = modified_distance(disk(0.5, 0.5, 0.2), disk(0.45, 0.5, 0.2), 0.0);
    CHECK(md.value == doctest::Approx(0.05).epsilon(0.02));
}

TEST_CASE("modified distance never exceeds the closure distance on random stars") {
    std::mt19937_64 rng(99);
    for (int i = 0; i < 10; ++i) {
        const InclusionFamily a(2, unit_square(), {random_star(rng)}), b(2, unit_square(), {random_star(rng)});
        const ModifiedDistance md = modified_distance(a, b, 0.0);
        CHECK(md.value <= md.hausdorff_closures + 1e-12);
        CHECK(md.hausdorff_boundaries <= 10.0 * md.value);
    }
}

TEST_CASE("identical inclusions have zero distances") {
    const ModifiedDistance md = modified_distance(disk(0.5, 0.5, 0.2), disk(0.5, 0.5, 0.2), 0.0);
    CHECK(md.value == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(md.hausdorff_closures == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("sampled set hausdorff against known squares") {
    const Lattice lat = Lattice::covering(unit_square(), 1.0 / 64);
    auto square = [](double half) {
        return [half](const Point& x) { return std::max(std::abs(x(0) - 0.5), std::abs(x(1) - 0.5)) - half; };
    };
    const SampledSet a = SampledSet::from_level(lat, square(0.25)), b = SampledSet::from_level(lat, square(0.125));
    CHECK(hausdorff_distance(a, b) == doctest::Approx(0.125 * std::sqrt(2.0)).epsilon(0.05));
    CHECK(boundary_hausdorff_distance(a, b) == doctest::Approx(0.125 * std::sqrt(2.0)).epsilon(0.05));
    const SampledSet grown = dilate_erode(b, 0.125, MorphMode::dilate);
    CHECK(grown.contains(make_point(0.5, 0.74)));
    CHECK_FALSE(grown.contains(make_point(0.5, 0.9)));
    CHECK_THROWS_AS(dilate_erode(b, -1.0, MorphMode::dilate), DomainError);
}

TEST_CASE("raw grids round-trip") {
    RawGrid g;
    g.n = 2;
    g.dims = {8, 8};
    g.spacing = 0.125;
    g.T = 1.0;
    g.steps = 2;
    g.data.assign(3 * 64, 0);
    for (int s = 0; s <= 2; ++s) g.data[static_cast<std::size_t>(s) * 64 + 27 + s] = 1;
    const auto path = (std::filesystem::temp_directory_path() / "parprobe_raw_roundtrip.bin").string();
    write_raw_grid(path, g);
    const RawGrid r = read_raw_grid(path);
    CHECK(r.dims == g.dims);
    CHECK(r.steps == g.steps);
    CHECK(r.data == g.data);
    std::filesystem::remove(path);
}

TEST_CASE("family checks reject inclusions near the outer boundary") {
    GeometryConfig cfg;
    cfg.rho0 = 0.1;
    CHECK_NOTHROW(check_family(disk(0.5, 0.5, 0.2), cfg, 1.0));
    CHECK_THROWS_AS(check_family(disk(0.5, 0.5, 0.45), cfg, 1.0), DomainError);
    cfg.rho0 = -1.0;
    CHECK_THROWS(cfg.validate());
}

TEST_CASE("chain of balls") {
    const std::vector<Point> arc = {make_point(0.0, 0.0), make_point(1.0, 0.0)};
    const auto chain = chain_of_balls(arc, 0.1, make_point(1.0, 0.0));
    REQUIRE(chain.size() >= 2);
    for (std::size_t i = 1; i < chain.size(); ++i) CHECK((chain[i] - chain[i - 1]).norm() <= 0.2 + 1e-12);
    CHECK((chain.back() - make_point(1.0, 0.0)).norm() < 1e-12);
    CHECK_THROWS_AS(chain_of_balls(arc, 0.0, make_point(1.0, 0.0)), DomainError);
}

TEST_CASE("probe construction for shifted disks") {
    Lambdas lam{0.9, 0.9, 0.9};
    GeometryConfig cfg;
    const ProbeConfig p = make_probe(disk(0.5, 0.5, 0.2), disk(0.45, 0.5, 0.2), 0.05, 0.001, lam, cfg);
    CHECK(p.d_mu == doctest::Approx(0.05).epsilon(0.02));
    CHECK(p.separation_ok);
    CHECK(p.t1 == doctest::Approx(0.05 - 0.9 * 1e-6));
    CHECK_THROWS_AS(make_probe(disk(0.5, 0.5, 0.2), disk(0.45, 0.5, 0.2), 0.05, 0.001, Lambdas{0.0, 1, 1}, cfg),
                    PreconditionError);
}
