#include "parprobe/analysis.hpp"

#include "parprobe/quadrature.hpp"

#include <boost/math/quadrature/tanh_sinh.hpp>

#include <tbb/parallel_for.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <random>
#include <sstream>

namespace parprobe {

namespace {

std::string fmt(double v) {
    std::ostringstream os;
    os.precision(6);
    os << v;
    return os.str();
}

std::string fmt_point(const Point& p) {
    std::string s = "(";
    for (int i = 0; i < p.size(); ++i) s += (i ? "," : "") + fmt(p(i));
    return s + ")";
}

// Composite 20-point Gauss-Legendre nodes on [a, b].
struct Nodes {
    std::vector<double> x, w;
};

Nodes gauss_nodes(double a, double b, int panels) {
    using G = boost::math::quadrature::gauss<double, 20>;
    const auto& ab = G::abscissa();
    const auto& wt = G::weights();
    Nodes out;
    const double len = (b - a) / panels;
    for (int p = 0; p < panels; ++p) {
        const double c = a + (p + 0.5) * len, r = 0.5 * len;
        for (std::size_t i = 0; i < ab.size(); ++i) {
            out.x.push_back(c - r * ab[i]);
            out.w.push_back(r * wt[i]);
            out.x.push_back(c + r * ab[i]);
            out.w.push_back(r * wt[i]);
        }
    }
    return out;
}

// Quadrature points (x, weight) on the ball of radius r about the origin.
std::vector<std::pair<Point, double>> ball_nodes(double r, int n, int radial_panels = 6, int angles = 96) {
    std::vector<std::pair<Point, double>> out;
    if (n == 1) {
        const Nodes g = gauss_nodes(-r, r, 2 * radial_panels);
        for (std::size_t i = 0; i < g.x.size(); ++i) out.push_back({make_point(g.x[i]), g.w[i]});
        return out;
    }
    const Nodes g = gauss_nodes(0.0, r, radial_panels);
    for (std::size_t i = 0; i < g.x.size(); ++i)
        for (int a = 0; a < angles; ++a) {
            const double th = 2.0 * kPi * a / angles;
            out.push_back({make_point(g.x[i] * std::cos(th), g.x[i] * std::sin(th)), g.w[i] * g.x[i] * 2.0 * kPi / angles});
        }
    return out;
}

// Smallest C in [lo, hi] with pred(C), assuming pred is monotone; +inf if none.
template <class P>
double smallest_constant(P&& pred, double lo = 1e-12, double hi = 1e12) {
    if (pred(lo)) return lo;
    if (!pred(hi)) return std::numeric_limits<double>::infinity();
    for (int it = 0; it < 200 && hi / lo > 1.0 + 1e-12; ++it) {
        const double mid = std::sqrt(lo * hi);
        (pred(mid) ? hi : lo) = mid;
    }
    return hi;
}

} // namespace

// ---------------------------------------------------------------- Gaussian convolution

void ConvolutionParams::validate() const {
    if (n != 1 && n != 2) throw PreconditionError("convolution: n must be 1 or 2");
    const double lim = 0.5 * n + 1.0;
    if (!(alpha < lim) || !(beta < lim))
        throw PreconditionError("convolution: alpha and beta must be below n/2 + 1 = " + fmt(lim));
    if (!(a > 0.0)) throw PreconditionError("convolution: a must be positive");
}

double convolution_constant(const ConvolutionParams& p) {
    p.validate();
    return std::pow(4.0 * kPi, 0.5 * p.n) * std::beta(0.5 * p.n + 1.0 - p.alpha, 0.5 * p.n + 1.0 - p.beta);
}

std::vector<ConvolutionPair> random_convolution_pairs(int n, int count, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> pos(-0.5, 0.5), start(0.0, 1.0), span(0.1, 1.0);
    std::vector<ConvolutionPair> out;
    for (int i = 0; i < count; ++i) {
        ConvolutionPair p;
        p.x = Point(n);
        p.y = Point(n);
        for (int d = 0; d < n; ++d) p.x(d) = pos(rng);
        for (int d = 0; d < n; ++d) p.y(d) = pos(rng);
        p.s = start(rng);
        p.t = p.s + span(rng);
        out.push_back(p);
    }
    return out;
}

double convolution_integral(const ConvolutionParams& p, const ConvolutionPair& pair, double* error) {
    p.validate();
    if (!(pair.s < pair.t)) throw PreconditionError("convolution: need s < t");
    const double s = pair.s, t = pair.t, a = p.a;
    auto inner = [&](double tau) {
        const double A = t - tau, B = tau - s;
        if (!(A > 0.0) || !(B > 0.0)) return 0.0;
        double prod = std::pow(A, -p.alpha) * std::pow(B, -p.beta);
        for (int i = 0; i < p.n; ++i) {
            const double xi = pair.x(i), yi = pair.y(i);
            const double c = (B * xi + A * yi) / (A + B);
            const double sig = std::sqrt(2.0 * A * B / (a * (A + B)));
            auto f = [&](double z) {
                return std::exp(-a * (xi - z) * (xi - z) / (4.0 * A) - a * (z - yi) * (z - yi) / (4.0 * B));
            };
            prod *= integrate_adaptive<double>(f, c - 14.0 * sig, c + 14.0 * sig, 0.0, 1e-13, 4, 400).value;
        }
        return prod;
    };
    boost::math::quadrature::tanh_sinh<double> ts;
    double err = 0.0, l1 = 0.0;
    const double v = ts.integrate(inner, s, t, 1e-11, &err, &l1);
    if (error) *error = err;
    return v;
}

InequalityReport check_convolution(const ConvolutionParams& p, const std::vector<ConvolutionPair>& pairs, double tolerance) {
    p.validate();
    InequalityReport rep;
    rep.check = "convolution";
    rep.tolerance = tolerance;
    rep.reference_constant = convolution_constant(p);
    if (pairs.empty()) throw PreconditionError("convolution: no parameter pairs");
    std::vector<InequalityEntry> entries(pairs.size());
    std::vector<std::string> failures(pairs.size());
    tbb::parallel_for(std::size_t(0), pairs.size(), [&](std::size_t i) {
        const ConvolutionPair& q = pairs[i];
        const double span = q.t - q.s;
        const double shape = std::pow(p.a, -0.5 * p.n) * std::pow(span, 0.5 * p.n + 1.0 - p.alpha - p.beta) *
                             std::exp(-p.a * (q.x - q.y).squaredNorm() / (4.0 * span));
        InequalityEntry& e = entries[i];
        e.descriptor = "x=" + fmt_point(q.x) + " y=" + fmt_point(q.y) + " s=" + fmt(q.s) + " t=" + fmt(q.t);
        try {
            e.lhs = convolution_integral(p, q, &e.error);
            if (!std::isfinite(e.lhs) || e.error > 1e-6 * std::abs(e.lhs)) failures[i] = "quadrature did not converge";
        } catch (const std::exception& ex) {
            failures[i] = ex.what();
            e.lhs = std::numeric_limits<double>::quiet_NaN();
        }
        e.fitted_constant = e.lhs / shape;
        e.rhs = shape;
    });
    double mean = 0.0;
    for (const auto& e : entries) mean += e.fitted_constant;
    mean /= entries.size();
    double var = 0.0;
    for (const auto& e : entries) var += (e.fitted_constant - mean) * (e.fitted_constant - mean);
    const double sd = std::sqrt(var / entries.size());
    rep.fitted_constant = mean;
    rep.statistic = sd / std::abs(mean);
    for (auto& e : entries) {
        e.rhs *= mean;
        e.slack = tolerance * std::abs(mean) - std::abs(e.fitted_constant - mean);
    }
    rep.entries = std::move(entries);
    std::string fail;
    for (std::size_t i = 0; i < failures.size(); ++i)
        if (!failures[i].empty()) fail += "pair " + std::to_string(i) + ": " + failures[i] + "; ";
    rep.pass = fail.empty() && std::isfinite(rep.statistic) && rep.statistic < tolerance;
    rep.detail = "alpha=" + fmt(p.alpha) + " beta=" + fmt(p.beta) + " a=" + fmt(p.a) + " n=" + std::to_string(p.n) +
                 " std/mean=" + fmt(rep.statistic) + " closed-form C=" + fmt(rep.reference_constant) +
                 (fail.empty() ? "" : " failures: " + fail);
    return rep;
}

// ---------------------------------------------------------------- two spheres, one cylinder

std::vector<CaloricFn> caloric_suite(int n, std::uint64_t seed) {
    if (n != 1 && n != 2) throw PreconditionError("caloric suite: n must be 1 or 2");
    std::vector<CaloricFn> out;
    auto poly = [&](std::string name, std::function<double(const Point&, double)> f) {
        out.push_back({std::move(name), std::move(f), -std::numeric_limits<double>::infinity()});
    };
    auto kernel = [n](const Point& x, double t, const Point& c, double off) {
        const double tt = t + off;
        return std::pow(4.0 * kPi * tt, -0.5 * n) * std::exp(-(x - c).squaredNorm() / (4.0 * tt));
    };
    poly("constant", [](const Point&, double) { return 1.0; });
    poly("x1", [](const Point& x, double) { return x(0); });
    poly("x1^2+2t", [](const Point& x, double t) { return x(0) * x(0) + 2.0 * t; });
    poly("x1^3+6x1t", [](const Point& x, double t) { return x(0) * x(0) * x(0) + 6.0 * x(0) * t; });
    poly("x1^4+12x1^2t+12t^2", [](const Point& x, double t) {
        return std::pow(x(0), 4) + 12.0 * x(0) * x(0) * t + 12.0 * t * t;
    });
    if (n == 2) {
        poly("x1x2", [](const Point& x, double) { return x(0) * x(1); });
        poly("x1^2-x2^2", [](const Point& x, double) { return x(0) * x(0) - x(1) * x(1); });
        poly("x1^2x2^2+2t|x|^2+4t^2", [](const Point& x, double t) {
            return x(0) * x(0) * x(1) * x(1) + 2.0 * t * x.squaredNorm() + 4.0 * t * t;
        });
        poly("x1^3x2-x1x2^3", [](const Point& x, double) {
            return x(0) * x(0) * x(0) * x(1) - x(0) * x(1) * x(1) * x(1);
        });
        poly("1+x1+x2^2+2t", [](const Point& x, double t) { return 1.0 + x(0) + x(1) * x(1) + 2.0 * t; });
    } else {
        poly("1+x1", [](const Point& x, double) { return 1.0 + x(0); });
        poly("x1^2+2t-3", [](const Point& x, double t) { return x(0) * x(0) + 2.0 * t - 3.0; });
        poly("x1^3+6x1t+x1", [](const Point& x, double t) { return x(0) * x(0) * x(0) + 6.0 * x(0) * t + x(0); });
        poly("2-x1^2-2t", [](const Point& x, double t) { return 2.0 - x(0) * x(0) - 2.0 * t; });
        poly("x1^4+12x1^2t+12t^2+1", [](const Point& x, double t) {
            return std::pow(x(0), 4) + 12.0 * x(0) * x(0) * t + 12.0 * t * t + 1.0;
        });
    }
    const std::vector<std::pair<std::vector<double>, double>> kernels = {
        {{0.0, 0.0}, 1.0}, {{0.5, 0.0}, 0.5}, {{-0.3, 0.4}, 0.25}, {{1.5, 0.0}, 2.0}};
    for (const auto& [c, off] : kernels) {
        Point cp = n == 2 ? make_point(c[0], c[1]) : make_point(c[0]);
        out.push_back({"kernel c=" + fmt_point(cp) + " offset=" + fmt(off),
                       [kernel, cp, off = off](const Point& x, double t) { return kernel(x, t, cp, off); }, -off});
    }
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> weight(-1.0, 1.0), centre(-2.0, 2.0), offset(0.2, 1.5);
    while (out.size() < 20) {
        std::vector<std::tuple<double, Point, double>> terms;
        double tmin = -std::numeric_limits<double>::infinity();
        std::string name = "superposition";
        for (int j = 0; j < 3; ++j) {
            Point c(n);
            for (int d = 0; d < n; ++d) c(d) = centre(rng);
            const double w = weight(rng), off = offset(rng);
            terms.emplace_back(w, c, off);
            tmin = std::max(tmin, -off);
            name += " " + fmt(w) + "@" + fmt_point(c) + "+" + fmt(off);
        }
        out.push_back({name,
                       [kernel, terms](const Point& x, double t) {
                           double v = 0.0;
                           for (const auto& [w, c, off] : terms) v += w * kernel(x, t, c, off);
                           return v;
                       },
                       tmin});
    }
    return out;
}

TwoSphereNorms two_sphere_norms(const CaloricFn& u, double r1, double r2, double R, int n) {
    if (!(u.t_min < 0.0)) throw DomainError("two-sphere: '" + u.name + "' is not defined on the whole cylinder");
    const double T = R * R;
    auto ball = [&](double r, double t) {
        double acc = 0.0;
        for (const auto& [x, w] : ball_nodes(r, n)) {
            const double v = u.u(x, t);
            acc += w * v * v;
        }
        return acc;
    };
    TwoSphereNorms out;
    out.small = std::sqrt(ball(r1, T));
    out.medium = std::sqrt(ball(r2, T));
    const Nodes tn = gauss_nodes(0.0, T, 4);
    const auto nodes = ball_nodes(R, n);
    double acc = 0.0;
    for (std::size_t i = 0; i < tn.x.size(); ++i) {
        double slice = 0.0;
        for (const auto& [x, w] : nodes) {
            const double v = u.u(x, tn.x[i]);
            slice += w * v * v;
        }
        acc += tn.w[i] * slice;
    }
    out.cylinder = std::sqrt(acc);
    return out;
}

InequalityReport check_two_sphere_one_cylinder(const std::vector<CaloricFn>& suite, double r1, double r2, double R,
                                               int n, double eta1) {
    if (!(0.0 < r1 && r1 <= r2 && r2 <= eta1 * R))
        throw PreconditionError("two-sphere: need 0 < r1 <= r2 <= eta1 R (eta1 = " + fmt(eta1) + ")");
    if (suite.empty()) throw PreconditionError("two-sphere: empty suite");
    std::vector<TwoSphereNorms> norms(suite.size());
    for (const auto& u : suite)
        if (!(u.t_min < 0.0)) throw DomainError("two-sphere: '" + u.name + "' is not defined on the whole cylinder");
    tbb::parallel_for(std::size_t(0), suite.size(),
                      [&](std::size_t i) { norms[i] = two_sphere_norms(suite[i], r1, r2, R, n); });

    const double L = std::log(R / r1);
    // log(rhs) - log(lhs) at constant C.
    auto margin = [&](const TwoSphereNorms& m, double C) {
        if (m.medium == 0.0) return std::numeric_limits<double>::infinity();
        const double th = 1.0 / (C * L);
        return std::log(C * R / r2) + (1.0 - th) * std::log(m.cylinder) + th * std::log(m.small) - std::log(m.medium);
    };
    auto rhs = [&](const TwoSphereNorms& m, double C) {
        const double th = 1.0 / (C * L);
        return C * R / r2 * std::pow(m.cylinder, 1.0 - th) * std::pow(m.small, th);
    };
    // Smallest C >= 1/log(R/r1) (so theta_1 <= 1) passing the predicate:
    // geometric scan then bisection.
    const double c_floor = 1.0 / L;
    auto minimal = [&](auto&& ok) {
        if (ok(c_floor)) return c_floor;
        double lo = c_floor, hi = c_floor;
        while (hi < 1e12) {
            lo = hi;
            hi *= 1.5;
            if (ok(hi)) break;
        }
        if (!ok(hi)) return std::numeric_limits<double>::infinity();
        for (int it = 0; it < 100 && hi - lo > 1e-13 * hi; ++it) {
            const double mid = 0.5 * (lo + hi);
            (ok(mid) ? hi : lo) = mid;
        }
        return hi;
    };
    InequalityReport rep;
    rep.check = "two_sphere_one_cylinder";
    const double C = minimal([&](double c) {
        for (const auto& m : norms)
            if (!(margin(m, c) >= 0.0)) return false;
        return true;
    });
    rep.fitted_constant = C;
    bool all = std::isfinite(C);
    for (std::size_t i = 0; i < suite.size(); ++i) {
        InequalityEntry e;
        e.descriptor = suite[i].name;
        e.lhs = norms[i].medium;
        e.fitted_constant = minimal([&](double c) { return margin(norms[i], c) >= 0.0; });
        e.rhs = std::isfinite(C) ? rhs(norms[i], C) : std::numeric_limits<double>::infinity();
        e.slack = e.rhs - e.lhs;
        all = all && e.slack >= 0.0;
        rep.entries.push_back(e);
    }
    rep.statistic = std::isfinite(C) ? 1.0 / (C * L) : 0.0; // theta_1 at the fitted C
    rep.pass = all;
    rep.detail = "r1=" + fmt(r1) + " r2=" + fmt(r2) + " R=" + fmt(R) + " eta1=" + fmt(eta1) + " fitted C=" + fmt(C) +
                 " theta1=" + fmt(rep.statistic);
    return rep;
}

// ---------------------------------------------------------------- interpolation

std::vector<SampledFn> interpolation_suite(int n, std::uint64_t seed) {
    if (n != 1 && n != 2) throw PreconditionError("interpolation suite: n must be 1 or 2");
    std::vector<SampledFn> out;
    auto zero = [n]() { return Point(Point::Zero(n)); };
    out.push_back({"constant 1", [](const Point&) { return 1.0; }, [zero](const Point&) { return zero(); }});
    out.push_back({"constant 2.5", [](const Point&) { return 2.5; }, [zero](const Point&) { return zero(); }});
    out.push_back({"x1", [](const Point& x) { return x(0); },
                   [zero](const Point&) {
                       Point g = zero();
                       g(0) = 1.0;
                       return g;
                   }});
    out.push_back({"1+0.5x1-0.3xn", [n](const Point& x) { return 1.0 + 0.5 * x(0) - 0.3 * x(n - 1); },
                   [zero, n](const Point&) {
                       Point g = zero();
                       g(0) += 0.5;
                       g(n - 1) -= 0.3;
                       return g;
                   }});
    out.push_back({"|x|^2", [](const Point& x) { return x.squaredNorm(); }, [](const Point& x) { return Point(2.0 * x); }});
    out.push_back({"sin(3x1)cos(2xn)",
                   [n](const Point& x) { return std::sin(3.0 * x(0)) * std::cos(2.0 * x(n - 1)); },
                   [zero, n](const Point& x) {
                       Point g = zero();
                       if (n == 1) {
                           g(0) = 3.0 * std::cos(3.0 * x(0)) * std::cos(2.0 * x(0)) -
                                  2.0 * std::sin(3.0 * x(0)) * std::sin(2.0 * x(0));
                       } else {
                           g(0) = 3.0 * std::cos(3.0 * x(0)) * std::cos(2.0 * x(1));
                           g(1) = -2.0 * std::sin(3.0 * x(0)) * std::sin(2.0 * x(1));
                       }
                       return g;
                   }});
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> pos(-0.7, 0.7), width(0.1, 0.5), amp(0.5, 2.0);
    for (int b = 0; b < 8; ++b) {
        Point c(n);
        for (int d = 0; d < n; ++d) c(d) = pos(rng);
        const double w = width(rng), A = amp(rng);
        out.push_back({"bump A=" + fmt(A) + " c=" + fmt_point(c) + " w=" + fmt(w),
                       [c, w, A](const Point& x) { return A * std::exp(-(x - c).squaredNorm() / (w * w)); },
                       [c, w, A](const Point& x) {
                           return Point(-2.0 * A / (w * w) * std::exp(-(x - c).squaredNorm() / (w * w)) * (x - c));
                       }});
    }
    return out;
}

InequalityReport check_interpolation(const std::vector<SampledFn>& suite, double r, int n) {
    if (!(r > 0.0)) throw PreconditionError("interpolation: r must be positive");
    if (suite.empty()) throw PreconditionError("interpolation: empty suite");
    // Sup-norm sample points: dense polar grid (n = 2) or uniform points (n = 1).
    std::vector<Point> probes;
    if (n == 1) {
        for (int i = 0; i <= 4096; ++i) probes.push_back(make_point(-r + 2.0 * r * i / 4096));
    } else {
        probes.push_back(make_point(0.0, 0.0));
        for (int i = 1; i <= 128; ++i)
            for (int a = 0; a < 512; ++a) {
                const double rr = r * i / 128, th = 2.0 * kPi * a / 512;
                probes.push_back(make_point(rr * std::cos(th), rr * std::sin(th)));
            }
    }
    const auto quad = ball_nodes(r, n, 8, 256);
    std::vector<double> base(suite.size()), sup(suite.size());
    tbb::parallel_for(std::size_t(0), suite.size(), [&](std::size_t i) {
        const auto& f = suite[i];
        double gmax = 0.0, dmax = 0.0;
        for (const auto& x : probes) {
            gmax = std::max(gmax, std::abs(f.g(x)));
            Point grad(n);
            if (f.grad) {
                grad = f.grad(x);
            } else {
                const double h = 1e-5 * r;
                for (int d = 0; d < n; ++d) {
                    Point a = x, b = x;
                    a(d) += h;
                    b(d) -= h;
                    grad(d) = (f.g(a) - f.g(b)) / (2.0 * h);
                }
            }
            dmax = std::max(dmax, grad.norm());
        }
        double l2 = 0.0;
        for (const auto& [x, w] : quad) {
            const double v = f.g(x);
            l2 += w * v * v;
        }
        sup[i] = gmax;
        base[i] = std::pow(gmax + r * dmax, static_cast<double>(n) / (n + 2)) *
                  std::pow(std::pow(r, -n) * l2, 1.0 / (n + 2));
    });
    InequalityReport rep;
    rep.check = "interpolation";
    double C = 0.0;
    for (std::size_t i = 0; i < suite.size(); ++i)
        if (base[i] > 0.0) C = std::max(C, sup[i] / base[i]);
    rep.fitted_constant = C;
    bool all = std::isfinite(C);
    double lo = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < suite.size(); ++i) {
        InequalityEntry e;
        e.descriptor = suite[i].name;
        e.lhs = sup[i];
        e.rhs = C * base[i];
        e.fitted_constant = base[i] > 0.0 ? sup[i] / base[i] : 0.0;
        e.slack = e.rhs - e.lhs;
        all = all && e.slack >= 0.0;
        if (base[i] > 0.0) lo = std::min(lo, e.fitted_constant);
        rep.entries.push_back(e);
    }
    rep.statistic = C / lo; // spread of the per-member constants
    rep.pass = all;
    rep.detail = "r=" + fmt(r) + " fitted C=" + fmt(C) + " spread=" + fmt(rep.statistic);
    return rep;
}

// ---------------------------------------------------------------- cylinder L2 bound

double cylinder_integral(const FieldHistory& gamma, double tau, const Point& x0, double t0,
                             double rho) {
    const Grid& g = gamma.grid;
    const int n = g.dim();
    const double lo_t = std::max(t0 - rho * rho, tau), hi_t = t0;
    if (!(hi_t > lo_t)) return 0.0;
    std::vector<std::pair<Point, double>> nodes;
    for (auto [x, w] : ball_nodes(rho, n, 2, 64)) nodes.push_back({Point(x + x0), w});
    std::map<int, std::vector<double>> cache;
    auto values = [&](int m) -> const std::vector<double>& {
        auto it = cache.find(m);
        if (it != cache.end()) return it->second;
        std::vector<double> v(nodes.size());
        for (std::size_t p = 0; p < nodes.size(); ++p) v[p] = gamma.at(nodes[p].first, m);
        return cache.emplace(m, std::move(v)).first->second;
    };
    using G = boost::math::quadrature::gauss<double, 4>;
    const auto& ab = G::abscissa();
    const auto& wt = G::weights();
    double acc = 0.0;
    const int m_lo = std::max(1, static_cast<int>(std::floor((lo_t - g.t0) / g.dt)));
    const int m_hi = std::min(g.steps, static_cast<int>(std::ceil((hi_t - g.t0) / g.dt - 1e-12)));
    for (int m = m_lo; m <= m_hi; ++m) {
        const double a = std::max(g.time(m - 1), lo_t), b = std::min(g.time(m), hi_t);
        if (!(b > a)) continue;
        const auto& v0 = values(m - 1);
        const auto& v1 = values(m);
        const double c = 0.5 * (a + b), r = 0.5 * (b - a);
        for (std::size_t i = 0; i < ab.size(); ++i)
            for (int sgn : {-1, 1}) {
                if (ab[i] == 0.0 && sgn < 0) continue;
                const double tt = c + sgn * r * ab[i];
                const double lam = (tt - g.time(m - 1)) / g.dt;
                double slice = 0.0;
                for (std::size_t p = 0; p < nodes.size(); ++p) {
                    const double v = (1.0 - lam) * v0[p] + lam * v1[p];
                    slice += nodes[p].second * v * v;
                }
                acc += r * wt[i] * slice;
            }
    }
    return acc;
}

InequalityReport check_cylinder_bound(const InclusionFamily& q, const Material& mat, const Grid& grid,
                                const std::vector<CylinderInstance>& instances, const CylinderOptions& opts) {
    if (!(opts.delta1 > 0.0 && opts.delta1 < 1.0)) throw PreconditionError("cylinder bound: delta1 must lie in (0, 1)");
    if (instances.empty()) throw PreconditionError("cylinder bound: no instances");
    const int n = grid.dim();
    const Grid ext = grid.extended();
    struct Prepared {
        double rho, lhs, span, dist2;
        bool case_i;
    };
    std::vector<Prepared> prep(instances.size());
    std::map<std::pair<std::vector<double>, double>, std::shared_ptr<FieldHistory>> kernels;
    for (std::size_t i = 0; i < instances.size(); ++i) {
        const auto& in = instances[i];
        if (!(in.t0 > in.tau)) throw PreconditionError("cylinder bound: need t0 > tau");
        if (in.t0 > grid.T() + 1e-12) throw PreconditionError("cylinder bound: t0 beyond the time horizon");
        const double span = in.t0 - in.tau, d2 = (in.x0 - in.xi).squaredNorm();
        const double rho = opts.delta1 * std::sqrt(d2 + span);
        for (int a = 0; a < n; ++a)
            if (in.x0(a) - rho < ext.omega.lo(a) || in.x0(a) + rho > ext.omega.hi(a))
                throw PreconditionError("cylinder bound: cylinder leaves the computational box");
        const std::vector<double> key(in.xi.data(), in.xi.data() + n);
        auto& slot = kernels[{key, in.tau}];
        if (!slot) slot = std::make_shared<FieldHistory>(discrete_fundamental(in.xi, in.tau, q, mat, grid, false, opts.solver));
        prep[i] = {rho, cylinder_integral(*slot, in.tau, in.x0, in.t0, rho), span, d2,
                   in.t0 - rho * rho < in.tau};
    }
    auto bound = [&](const Prepared& p, double C) {
        return C * std::pow(p.rho, n) * std::pow(p.span, 1.0 - n) * std::exp(-p.dist2 / (C * p.span));
    };
    InequalityReport rep;
    rep.check = "cylinder_bound";
    double C = 0.0;
    std::vector<double> own(prep.size());
    for (std::size_t i = 0; i < prep.size(); ++i) {
        own[i] = smallest_constant([&](double c) { return bound(prep[i], c) >= prep[i].lhs; });
        C = std::max(C, own[i]);
    }
    rep.fitted_constant = C;
    bool all = std::isfinite(C);
    int cases[2] = {0, 0};
    for (std::size_t i = 0; i < prep.size(); ++i) {
        const auto& in = instances[i];
        InequalityEntry e;
        e.descriptor = std::string(prep[i].case_i ? "case i" : "case ii") + " xi=" + fmt_point(in.xi) +
                       " tau=" + fmt(in.tau) + " x0=" + fmt_point(in.x0) + " t0=" + fmt(in.t0) +
                       " rho=" + fmt(prep[i].rho);
        e.lhs = prep[i].lhs;
        e.rhs = bound(prep[i], C);
        e.slack = e.rhs - e.lhs;
        e.fitted_constant = own[i];
        all = all && e.slack >= 0.0;
        ++cases[prep[i].case_i ? 0 : 1];
        rep.entries.push_back(e);
    }
    rep.statistic = C;
    rep.pass = all;
    rep.detail = "delta1=" + fmt(opts.delta1) + " fitted C=" + fmt(C) + " case i: " + std::to_string(cases[0]) +
                 " case ii: " + std::to_string(cases[1]) + " inclusion=" + q.id();
    return rep;
}

// ---------------------------------------------------------------- asymptotics near a curved interface

AsymptoticReport check_asymptotic_estimate(const ChartFn& phi, const Material& mat,
                                           const std::vector<AsymptoticSample>& samples,
                                           const AsymptoticOptions& opts) {
    if (samples.size() < 3) throw PreconditionError("asymptotic: need at least 3 samples");
    const int n = static_cast<int>(samples.front().x.size());
    if (n != 1 && n != 2) throw PreconditionError("asymptotic: n must be 1 or 2");
    if (opts.cells % 2 != 0) throw ConfigError("asymptotic: cells must be even so the flat interface is a face");
    for (const auto& s : samples) {
        if (s.x.size() != n) throw PreconditionError("asymptotic: mixed sample dimensions");
        if (!(s.t > 0.0)) throw PreconditionError("asymptotic: sample time must be positive");
        const double xp2 = n == 2 ? s.x(0) * s.x(0) : 0.0;
        if (!(s.x(n - 1) > (xp2 + s.t) / (opts.cone_C * opts.rho0)))
            throw PreconditionError("asymptotic: sample " + fmt_point(s.x) + ", t=" + fmt(s.t) +
                                    " violates the nontangential cone condition");
        if (!(s.y_n < 0.0 && s.y_n > -opts.rho0 / opts.cone_C))
            throw PreconditionError("asymptotic: y_n must lie in (-rho0/C, 0)");
    }
    Box box{Point::Constant(n, -opts.halfwidth), Point::Constant(n, opts.halfwidth)};
    const Grid grid = Grid::make(box, 2.0 * opts.halfwidth / opts.cells, 1.0, opts.steps, 0.0);
    SolverOptions sopts;
    sopts.theta = opts.theta;
    sopts.subsamples = opts.subsamples;
    auto tangential = [n](const Point& X) { return n == 2 ? make_point(X(0)) : Point(0); };
    const InclusionFamily flat = InclusionFamily::from_level(
        n, box, [n](const Point& X, double) { return -X(n - 1); }, false, "flat");

    AsymptoticReport out;
    std::map<double, std::shared_ptr<FieldHistory>> flat_cache;
    auto value_and_grad = [&](const FieldHistory& f, const Point& X, double& v, Point& g) {
        v = f.at(X, opts.steps);
        g = Point(n);
        for (int d = 0; d < n; ++d) {
            Point a = X, b = X;
            a(d) += grid.spacing;
            b(d) -= grid.spacing;
            g(d) = (f.at(a, opts.steps) - f.at(b, opts.steps)) / (2.0 * grid.spacing);
        }
    };
    for (const auto& s : samples) {
        const double sc = std::sqrt(s.t);
        const Point X = s.x / sc;
        Point Y = Point::Zero(n);
        Y(n - 1) = s.y_n / sc;
        const InclusionFamily curved = InclusionFamily::from_level(
            n, box,
            [phi, sc, n, tangential](const Point& Z, double T) {
                return phi(Point(tangential(Z) * sc), sc * sc * T) / sc - Z(n - 1);
            },
            false, "scaled chart s=" + fmt(sc));
        if (!curved.contains(X, 1.0) || curved.contains(Y, 0.0))
            throw PreconditionError("asymptotic: sample and pole must lie on opposite sides of the interface");
        auto& fslot = flat_cache[Y(n - 1)];
        if (!fslot) fslot = std::make_shared<FieldHistory>(discrete_fundamental(Y, 0.0, flat, mat, grid, false, sopts));
        const FieldHistory fc = discrete_fundamental(Y, 0.0, curved, mat, grid, false, sopts);
        double vc = 0.0, vf = 0.0;
        Point gc, gf;
        value_and_grad(fc, X, vc, gc);
        value_and_grad(*fslot, X, vf, gf);
        AsymptoticPoint p;
        p.scale = sc;
        Point y = Point::Zero(n);
        y(n - 1) = s.y_n;
        p.distance = std::sqrt((s.x - y).squaredNorm() + s.t);
        // Scaled kernels carry t^{n/2} automatically at unit scaled time.
        p.value_diff = std::abs(vc - vf);
        p.gradient_diff = (gc - gf).norm() / sc;
        p.kernel_gap = std::abs(vf - gamma_plus(X, 1.0, Y, 0.0, mat).value);
        out.discretization_floor = std::max(out.discretization_floor, p.kernel_gap);
        out.points.push_back(p);
    }
    std::vector<double> ld, lv, lg;
    for (const auto& p : out.points) {
        ld.push_back(std::log(p.distance));
        lv.push_back(std::log(std::max(p.value_diff, 1e-300)));
        lg.push_back(std::log(std::max(p.gradient_diff, 1e-300)));
    }
    out.value_fit = fit_line(ld, lv);
    out.gradient_fit = fit_line(ld, lg);
    // Gradient exponent -1 + beta/(beta+1); beta in (0,1) means beta/(beta+1) in (0,1/2).
    const double e = std::clamp(1.0 + out.gradient_fit.slope, 1e-6, 0.5 - 1e-9);
    out.beta = e / (1.0 - e);

    auto fill = [&](InequalityReport& rep, const std::string& name, auto&& lhs_of, auto&& shape) {
        rep.check = name;
        double C = 0.0;
        std::vector<double> own;
        for (std::size_t i = 0; i < samples.size(); ++i) {
            own.push_back(smallest_constant([&](double c) { return shape(i, c) >= lhs_of(i); }));
            C = std::max(C, own.back());
        }
        rep.fitted_constant = C;
        bool all = std::isfinite(C);
        for (std::size_t i = 0; i < samples.size(); ++i) {
            InequalityEntry en;
            en.descriptor = "x=" + fmt_point(samples[i].x) + " t=" + fmt(samples[i].t) + " y_n=" + fmt(samples[i].y_n);
            en.lhs = lhs_of(i);
            en.rhs = shape(i, C);
            en.slack = en.rhs - en.lhs;
            en.fitted_constant = own[i];
            all = all && en.slack >= 0.0;
            rep.entries.push_back(en);
        }
        return all;
    };
    auto gauss = [&](std::size_t i, double c) {
        Point y = Point::Zero(n);
        y(n - 1) = samples[i].y_n;
        return std::exp(-(samples[i].x - y).squaredNorm() / (c * samples[i].t));
    };
    const bool vb = fill(
        out.value, "asymptotic_value", [&](std::size_t i) { return out.points[i].value_diff; },
        [&](std::size_t i, double c) { return c * out.points[i].distance / opts.rho0 * gauss(i, c); });
    const bool gb = fill(
        out.gradient, "asymptotic_gradient", [&](std::size_t i) { return out.points[i].gradient_diff; },
        [&](std::size_t i, double c) { return c * std::pow(out.points[i].distance, -1.0 + e) * gauss(i, c); });
    out.value.statistic = out.value_fit.slope;
    out.value.tolerance = opts.min_slope;
    out.value.pass = vb && out.value_fit.slope >= opts.min_slope;
    out.value.detail = "slope=" + fmt(out.value_fit.slope) + " r2=" + fmt(out.value_fit.r_squared) +
                       " fitted C=" + fmt(out.value.fitted_constant) +
                       " discretization floor=" + fmt(out.discretization_floor);
    out.gradient.statistic = out.gradient_fit.slope;
    out.gradient.pass = gb;
    out.gradient.detail = "slope=" + fmt(out.gradient_fit.slope) + " beta=" + fmt(out.beta) +
                          " fitted C=" + fmt(out.gradient.fitted_constant);
    return out;
}

} // namespace parprobe
