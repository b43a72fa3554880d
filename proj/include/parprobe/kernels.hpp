#ifndef PARPROBE_KERNELS_HPP
#define PARPROBE_KERNELS_HPP

#include "parprobe/quadrature.hpp"
#include "parprobe/types.hpp"

#include <complex>
#include <functional>
#include <utility>

namespace parprobe {

// Conductivity contrast of the inclusion phase.
struct Material {
    explicit Material(double contrast);
    double k;
};

struct KernelEval {
    double value = 0.0;
    Point gradient;
    double error = 0.0; // quadrature error estimate for the value
    Point x, y;
    double t = 0.0, s = 0.0;
};

struct KernelOptions {
    int talbot_nodes = 32;
    double rel_tol = 1e-10;
    double abs_tol = 1e-13; // relative to the free-space peak (4 pi (t-s))^{-n/2}
    double cutoff = 1e-16;  // tail level at which the frequency integral is truncated
};

// Free-space heat kernel of d/dt - Laplacian.
KernelEval gamma0(const Point& x, double t, const Point& y, double s);

// Heat kernel with diffusivity d (used for the direct part inside the k phase).
KernelEval heat_kernel(const Point& x, double t, const Point& y, double s, double d);

// Flat-interface two-phase kernel: conductivity k on x_n > 0, 1 on x_n < 0.
// A point with x_n == 0 is treated as lying on the k side.
KernelEval gamma_plus(const Point& x, double t, const Point& y, double s, const Material& mat,
                      const KernelOptions& opts = {});

// One-sided evaluation: side = +1 uses the x_n > 0 representation, -1 the x_n < 0
// one, regardless of the sign of x_n. Used for interface limits.
KernelEval gamma_plus_side(const Point& x, double t, const Point& y, double s, const Material& mat,
                           int side, const KernelOptions& opts = {});

// Adjoint kernel Gamma_+^*(x,t;y,s) = Gamma_+(x,s;y,t), nonzero for t < s.
KernelEval gamma_plus_adjoint(const Point& x, double t, const Point& y, double s,
                              const Material& mat, const KernelOptions& opts = {});

// Laplace-domain 1-D transmission transform of the scattered part (reflected or
// transmitted wave) at tangential frequency xi: value and x_n-derivative.
struct TransformPair {
    cplx value, dn;
};
TransformPair scattered_transform(double xi, cplx p, double xn, double yn, double k, int side);

// Tangential Fourier transform of the scattered part at lag t, by Talbot
// inversion: returns (value, d/dx_n).
std::pair<double, double> scattered_hat(double xi, double xn, double yn, double t, double k,
                                        int side, int nodes = 32);

// Tangential Fourier transform F_{zeta'}(Gamma_+(., x_n, t; y, 0)) for x_n > 0 > y_n,
// computed from the branch-cut integral of the exact transform along the
// negative real axis (independent of the Talbot route).
struct FourierValue {
    cplx value;
    double error = 0.0;
};
FourierValue gamma_plus_fourier(const Point& zeta_prime, double xn, double t, const Point& y,
                                const Material& mat, double rel_tol = 1e-10);

// Gaussian envelopes C (4 pi tau)^{-n/2} exp(-r^2/(4 C tau)), times tau^{-1/2} for
// the gradient. C = 1 reproduces gamma0 exactly.
enum class EnvelopeKind { value, gradient };
double gaussian_envelope(const Point& x, double t, const Point& y, double s, double c,
                         EnvelopeKind which);

// Cutoff used by the flattening map: 1 on [-1,1], 0 outside (-2,2), quintic
// smoothstep in between (|theta'| <= 15/8).
double cutoff_theta(double z);
double cutoff_theta_prime(double z);

struct FlatteningMap {
    // Chart function phi(x', t); x' has n-1 entries.
    std::function<double(const Point&, double)> phi;
    double r1 = 0.0;
    int n = 2;

    static FlatteningMap make(std::function<double(const Point&, double)> phi, double rho0,
                              double E, int n);
};

// (xi, tau) = Psi(x, t).
std::pair<Point, double> flatten(const FlatteningMap& map, const Point& x, double t);

} // namespace parprobe

#endif
