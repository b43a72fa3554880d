#include "parprobe/kernels.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>

namespace parprobe {

Material::Material(double contrast) : k(contrast) {
    if (!(contrast > 0.0) || std::abs(contrast - 1.0) <= 1e-9) {
        throw DomainError("material contrast must satisfy k > 0, k != 1 (got " +
                          std::to_string(contrast) + ")");
    }
}

KernelEval heat_kernel(const Point& x, double t, const Point& y, double s, double d) {
    KernelEval out;
    out.x = x;
    out.y = y;
    out.t = t;
    out.s = s;
    out.gradient = Point::Zero(x.size());
    const double tau = t - s;
    if (tau <= 0.0) return out;
    const int n = static_cast<int>(x.size());
    const Point r = x - y;
    out.value = std::pow(4.0 * kPi * d * tau, -0.5 * n) * std::exp(-r.squaredNorm() / (4.0 * d * tau));
    out.gradient = -r / (2.0 * d * tau) * out.value;
    return out;
}

KernelEval gamma0(const Point& x, double t, const Point& y, double s) {
    return heat_kernel(x, t, y, s, 1.0);
}

TransformPair scattered_transform(double xi, cplx p, double xn, double yn, double k, int side) {
    const cplx mu1 = std::sqrt(p + xi * xi);
    const cplx mu2 = std::sqrt(xi * xi + p / k);
    TransformPair out;
    if (yn <= 0.0) {
        if (side < 0) {
            const cplx refl = (mu1 - k * mu2) / (mu1 + k * mu2);
            out.value = refl * std::exp(mu1 * (xn + yn)) / (2.0 * mu1);
            out.dn = mu1 * out.value;
        } else {
            out.value = std::exp(mu1 * yn - mu2 * xn) / (mu1 + k * mu2);
            out.dn = -mu2 * out.value;
        }
    } else {
        if (side > 0) {
            const cplx refl = (k * mu2 - mu1) / (k * mu2 + mu1);
            out.value = refl * std::exp(-mu2 * (xn + yn)) / (2.0 * k * mu2);
            out.dn = -mu2 * out.value;
        } else {
            out.value = std::exp(mu1 * xn - mu2 * yn) / (mu1 + k * mu2);
            out.dn = mu1 * out.value;
        }
    }
    return out;
}

std::pair<double, double> scattered_hat(double xi, double xn, double yn, double t, double k,
                                        int side, int nodes) {
    // Shift by the rightmost branch point so that every singularity sits on (-inf, 0].
    const double m = std::min(1.0, k);
    const double shift = m * xi * xi;
    auto fn = [&](cplx q) {
        const TransformPair tp = scattered_transform(xi, q - shift, xn, yn, k, side);
        Eigen::Array<cplx, 2, 1> v;
        v << tp.value, tp.dn;
        return v;
    };
    const Eigen::Array2d inv = talbot_invert(fn, t, nodes);
    const double damp = std::exp(-shift * t);
    return {damp * inv(0), damp * inv(1)};
}

namespace {

bool same_phase(double yn, int side) {
    return (yn <= 0.0 && side < 0) || (yn > 0.0 && side > 0);
}

} // namespace

KernelEval gamma_plus_side(const Point& x, double t, const Point& y, double s, const Material& mat,
                           int side, const KernelOptions& opts) {
    const int n = static_cast<int>(x.size());
    if (n != y.size() || n < 1 || n > 2) throw DomainError("gamma_plus: dimension mismatch");
    KernelEval out;
    out.x = x;
    out.y = y;
    out.t = t;
    out.s = s;
    out.gradient = Point::Zero(n);
    const double tau = t - s;
    if (tau <= 0.0) return out;
    const double k = mat.k;
    const double xn = x(n - 1), yn = y(n - 1);

    if (same_phase(yn, side)) {
        const KernelEval direct = heat_kernel(x, t, y, s, side > 0 ? k : 1.0);
        out.value = direct.value;
        out.gradient = direct.gradient;
    }

    if (n == 1) {
        const auto [g, gn] = scattered_hat(0.0, xn, yn, tau, k, side, opts.talbot_nodes);
        out.value += g;
        out.gradient(0) += gn;
        out.error = 1e-13 * std::abs(g);
        return out;
    }

    const double dx = x(0) - y(0);
    const double m = std::min(1.0, k);
    const double xi_max = std::sqrt(-std::log(opts.cutoff) / (m * tau));
    auto integrand = [&](double xi) {
        const auto [g, gn] = scattered_hat(xi, xn, yn, tau, k, side, opts.talbot_nodes);
        const double c = std::cos(xi * dx), sn = std::sin(xi * dx);
        Eigen::Array3d v;
        v << c * g, -xi * sn * g, c * gn;
        return Eigen::Array3d(v / kPi);
    };
    const double peak = 1.0 / (4.0 * kPi * tau);
    const int p0 = 4 + static_cast<int>(std::ceil(xi_max * std::abs(dx) / (2.0 * kPi)));
    const auto res = integrate_adaptive<Eigen::Array3d>(integrand, 0.0, xi_max, opts.abs_tol * peak,
                                                        opts.rel_tol, p0);
    if (!res.converged) {
        throw NumericError("gamma_plus: frequency quadrature did not converge", res.error);
    }
    out.value += res.value(0);
    out.gradient(0) += res.value(1);
    out.gradient(1) += res.value(2);
    out.error = res.error;
    return out;
}

KernelEval gamma_plus(const Point& x, double t, const Point& y, double s, const Material& mat,
                      const KernelOptions& opts) {
    return gamma_plus_side(x, t, y, s, mat, x(x.size() - 1) >= 0.0 ? 1 : -1, opts);
}

KernelEval gamma_plus_adjoint(const Point& x, double t, const Point& y, double s,
                              const Material& mat, const KernelOptions& opts) {
    KernelEval e = gamma_plus(x, s, y, t, mat, opts);
    e.t = t;
    e.s = s;
    return e;
}

FourierValue gamma_plus_fourier(const Point& zeta_prime, double xn, double t, const Point& y,
                                const Material& mat, double rel_tol) {
    const int n = static_cast<int>(y.size());
    if (zeta_prime.size() != n - 1) throw DomainError("gamma_plus_fourier: frequency has wrong size");
    if (!(xn > 0.0) || !(y(n - 1) < 0.0)) {
        throw DomainError("gamma_plus_fourier: only x_n > 0 > y_n is supported");
    }
    if (!(t > 0.0)) return {};
    const double k = mat.k;
    const double yn = y(n - 1);
    const double xi = n == 2 ? std::abs(zeta_prime(0)) : 0.0;
    const double m = std::min(1.0, k);
    const double seg = std::abs(k - 1.0) * xi * xi;

    // Im F(p + i0) on the cut, p = -m xi^2 - sigma.
    auto im_f = [&](double sigma) {
        const double p = -m * xi * xi - sigma;
        const cplx mu1 = std::sqrt(cplx(p + xi * xi, 0.0));
        const cplx mu2 = std::sqrt(cplx(xi * xi + p / k, 0.0));
        return (std::exp(mu1 * yn - mu2 * xn) / (mu1 + k * mu2)).imag();
    };

    double total = 0.0, err = 0.0;
    if (seg > 0.0) {
        auto f = [&](double phi) {
            const double sigma = 0.5 * seg * (1.0 - std::cos(phi));
            return std::exp(-sigma * t) * im_f(sigma) * 0.5 * seg * std::sin(phi);
        };
        const auto r = integrate_adaptive<double>(f, 0.0, kPi, 1e-300, rel_tol, 4);
        total += r.value;
        err += r.error;
    }
    const double w_max = std::sqrt(40.0 / t);
    const double freq = std::abs(yn) + xn / std::sqrt(std::min(1.0, k));
    auto g = [&](double w) {
        const double sigma = seg + w * w;
        return std::exp(-sigma * t) * im_f(sigma) * 2.0 * w;
    };
    const int p0 = 4 + static_cast<int>(std::ceil(w_max * freq / kPi));
    const auto r = integrate_adaptive<double>(g, 0.0, w_max, 1e-300, rel_tol, p0);
    total += r.value;
    err += r.error;
    const double damp = std::exp(-m * xi * xi * t) / kPi;
    double phase = 0.0;
    if (n == 2) phase = y(0) * zeta_prime(0);
    FourierValue out;
    out.value = std::polar(1.0, -phase) * (-damp * total);
    out.error = damp * err;
    return out;
}

double gaussian_envelope(const Point& x, double t, const Point& y, double s, double c,
                         EnvelopeKind which) {
    const double tau = t - s;
    if (tau <= 0.0) return 0.0;
    const int n = static_cast<int>(x.size());
    const double base =
        c * std::pow(4.0 * kPi * tau, -0.5 * n) * std::exp(-(x - y).squaredNorm() / (4.0 * c * tau));
    return which == EnvelopeKind::value ? base : base / std::sqrt(tau);
}

double cutoff_theta(double z) {
    const double a = std::abs(z);
    if (a <= 1.0) return 1.0;
    if (a >= 2.0) return 0.0;
    const double u = a - 1.0;
    return 1.0 - u * u * u * (10.0 - 15.0 * u + 6.0 * u * u);
}

double cutoff_theta_prime(double z) {
    const double a = std::abs(z);
    if (a <= 1.0 || a >= 2.0) return 0.0;
    const double u = a - 1.0;
    const double d = -30.0 * u * u * (1.0 - u) * (1.0 - u);
    return z > 0 ? d : -d;
}

FlatteningMap FlatteningMap::make(std::function<double(const Point&, double)> phi, double rho0,
                                  double E, int n) {
    if (!(rho0 > 0.0) || !(E > 0.0)) throw DomainError("flattening map needs rho0 > 0 and E > 0");
    FlatteningMap m;
    m.phi = std::move(phi);
    m.r1 = rho0 * std::min(0.25, 1.0 / (32.0 * E));
    m.n = n;
    return m;
}

std::pair<Point, double> flatten(const FlatteningMap& map, const Point& x, double t) {
    const int n = map.n;
    Point xp(n - 1);
    for (int i = 0; i < n - 1; ++i) xp(i) = x(i);
    const double r = xp.size() ? xp.norm() : 0.0;
    Point xi = x;
    xi(n - 1) = x(n - 1) - map.phi(xp, t) * cutoff_theta(r / map.r1) *
                               cutoff_theta(x(n - 1) / map.r1) *
                               cutoff_theta(t / (map.r1 * map.r1));
    return {xi, t};
}

} // namespace parprobe
