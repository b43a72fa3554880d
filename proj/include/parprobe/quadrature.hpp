#ifndef PARPROBE_QUADRATURE_HPP
#define PARPROBE_QUADRATURE_HPP

#include "parprobe/types.hpp"

#include <boost/math/quadrature/gauss.hpp>
#include <boost/math/quadrature/gauss_kronrod.hpp>

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <complex>
#include <queue>
#include <vector>

namespace parprobe {

using cplx = std::complex<double>;

// Fixed Talbot contour inversion of a Laplace transform (Weideman & Trefethen
// optimized parameters). F maps a complex p to a value of type R, which is
// either cplx or an Eigen array of cplx; F must satisfy F(conj p) = conj F(p)
// and be analytic off the negative real axis. Returns the real inverse at t.
template <class F>
auto talbot_invert(F&& fn, double t, int nodes = 32) {
    constexpr double sigma = -0.6122, mu = 0.5017, alpha = 0.6407, nu = 0.2645;
    const double scale = nodes / t;
    const int half = nodes / 2;
    using R = decltype(fn(cplx{}));
    R acc{};
    bool first = true;
    for (int k = 0; k < half; ++k) {
        const double th = (k + 0.5) * 2.0 * kPi / nodes;
        const double c = 1.0 / std::tan(alpha * th);
        const double s = std::sin(alpha * th);
        const cplx z = scale * cplx(sigma + mu * th * c, nu * th);
        const cplx dz = scale * cplx(mu * (c - alpha * th / (s * s)), nu);
        const cplx w = std::exp(z * t) * dz;
        if (first) {
            acc = fn(z) * w;
            first = false;
        } else {
            acc += fn(z) * w;
        }
    }
    if constexpr (std::is_same_v<R, cplx>) {
        return 2.0 / nodes * acc.imag();
    } else {
        return (2.0 / nodes * acc.imag()).eval();
    }
}

inline double norm_of(double v) { return std::abs(v); }

template <class Derived>
double norm_of(const Eigen::ArrayBase<Derived>& v) {
    return v.abs().maxCoeff();
}

template <class V>
struct QuadResult {
    V value;
    double error = 0.0;
    int panels = 0;
    bool converged = true;
};

// One Gauss-Kronrod 10/21 panel; returns (kronrod, |kronrod - gauss|).
template <class V, class F>
std::pair<V, double> gk21_panel(F& fn, double a, double b) {
    using GK = boost::math::quadrature::gauss_kronrod<double, 21>;
    using G = boost::math::quadrature::gauss<double, 10>;
    const auto& xk = GK::abscissa();
    const auto& wk = GK::weights();
    const auto& wg = G::weights();
    const double c = 0.5 * (a + b), r = 0.5 * (b - a);
    V f0 = fn(c);
    V kron = f0 * wk[0];
    V gauss = f0 * 0.0;
    for (unsigned i = 1; i < xk.size(); ++i) {
        V fp = fn(c + r * xk[i]);
        V fm = fn(c - r * xk[i]);
        V sum = fp + fm;
        kron = kron + sum * wk[i];
        if (i & 1u) gauss = gauss + sum * wg[i / 2];
    }
    kron = kron * r;
    gauss = gauss * r;
    V diff = kron - gauss;
    return {kron, norm_of(diff)};
}

// Globally adaptive vector-valued Gauss-Kronrod on [a, b], starting from
// `initial_panels` equal panels and bisecting the worst panel until the
// summed error estimate is below max(abs_tol, rel_tol * |I|).
template <class V, class F>
QuadResult<V> integrate_adaptive(F&& fn, double a, double b, double abs_tol, double rel_tol,
                                 int initial_panels = 1, int max_panels = 2000) {
    struct Panel {
        double a, b, err;
        V val;
        bool operator<(const Panel& o) const { return err < o.err; }
    };
    std::priority_queue<Panel> heap;
    const int p0 = std::max(1, initial_panels);
    for (int i = 0; i < p0; ++i) {
        const double lo = a + (b - a) * i / p0, hi = a + (b - a) * (i + 1) / p0;
        auto [v, e] = gk21_panel<V>(fn, lo, hi);
        heap.push({lo, hi, e, v});
    }
    auto totals = [&](std::priority_queue<Panel> h) {
        V s = h.top().val * 0.0;
        double e = 0.0;
        while (!h.empty()) {
            s = s + h.top().val;
            e += h.top().err;
            h.pop();
        }
        return std::pair<V, double>{s, e};
    };
    auto [sum, err] = totals(heap);
    int count = p0;
    while (err > std::max(abs_tol, rel_tol * norm_of(sum)) && count < max_panels) {
        Panel worst = heap.top();
        heap.pop();
        const double mid = 0.5 * (worst.a + worst.b);
        auto [v1, e1] = gk21_panel<V>(fn, worst.a, mid);
        auto [v2, e2] = gk21_panel<V>(fn, mid, worst.b);
        heap.push({worst.a, mid, e1, v1});
        heap.push({mid, worst.b, e2, v2});
        sum = sum - worst.val + v1 + v2;
        err += e1 + e2 - worst.err;
        ++count;
    }
    // Re-sum to drop accumulated cancellation in the running totals.
    std::tie(sum, err) = totals(heap);
    QuadResult<V> out{sum, err, count, true};
    out.converged = err <= std::max(abs_tol, rel_tol * norm_of(sum)) * 1.0001;
    return out;
}

} // namespace parprobe

#endif
