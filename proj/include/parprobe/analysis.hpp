#ifndef PARPROBE_ANALYSIS_HPP
#define PARPROBE_ANALYSIS_HPP

#include "parprobe/geometry.hpp"
#include "parprobe/kernels.hpp"
#include "parprobe/probe.hpp"
#include "parprobe/solver.hpp"

#include <cstdint>
#include <functional>
#include <limits>
#include <string>
#include <vector>

namespace parprobe {

struct InequalityEntry {
    std::string descriptor;
    double lhs = 0.0, rhs = 0.0;
    double slack = 0.0;           // rhs - lhs at the report's fitted constant
    double fitted_constant = 0.0; // smallest constant that works for this entry alone
    double error = 0.0;           // quadrature error estimate of lhs, when known
};

struct InequalityReport {
    std::string check;
    std::uint64_t seed = 0;
    std::vector<InequalityEntry> entries;
    double fitted_constant = 0.0;
    double reference_constant = std::numeric_limits<double>::quiet_NaN();
    double statistic = 0.0; // check-specific summary (spread, slope, ...)
    double tolerance = 0.0;
    bool pass = false;
    std::string detail;
};

// Space-time Gaussian convolution
//   int_s^t int (t-tau)^{-alpha} e^{-a|x-xi|^2/(4(t-tau))} (tau-s)^{-beta} e^{-a|xi-y|^2/(4(tau-s))} dxi dtau
// against C a^{-n/2} (t-s)^{n/2+1-alpha-beta} e^{-a|x-y|^2/(4(t-s))}.
struct ConvolutionParams {
    double alpha = 0.0, beta = 0.0, a = 1.0;
    int n = 2;
    void validate() const;
};

struct ConvolutionPair {
    Point x, y;
    double s = 0.0, t = 1.0;
};

// (4 pi)^{n/2} B(n/2 + 1 - alpha, n/2 + 1 - beta).
double convolution_constant(const ConvolutionParams& p);
std::vector<ConvolutionPair> random_convolution_pairs(int n, int count, std::uint64_t seed);
// Brute-force value of the convolution integral (tanh-sinh in tau, adaptive
// Gauss-Kronrod in each coordinate of xi). Sets *error when given.
double convolution_integral(const ConvolutionParams& p, const ConvolutionPair& pair, double* error = nullptr);
// Pass iff std/mean of quadrature / closed-form shape is below `tolerance`.
InequalityReport check_convolution(const ConvolutionParams& p, const std::vector<ConvolutionPair>& pairs, double tolerance = 1e-3);

// Solution of the heat equation, defined for t > t_min.
struct CaloricFn {
    std::string name;
    std::function<double(const Point&, double)> u;
    double t_min = -std::numeric_limits<double>::infinity();
};

// 20 members: constants and caloric polynomials up to degree 4, time-offset
// heat kernels, random superpositions of translated kernels.
std::vector<CaloricFn> caloric_suite(int n, std::uint64_t seed);

struct TwoSphereNorms {
    double small = 0.0;    // ||u(., R^2)|| on B_{r1}
    double medium = 0.0;   // ||u(., R^2)|| on B_{r2}
    double cylinder = 0.0; // ||u|| on B_R x (0, R^2)
};
TwoSphereNorms two_sphere_norms(const CaloricFn& u, double r1, double r2, double R, int n);

// ||u(R^2)||_{B_r2} <= C R/r2 ||u||_{cyl}^{1-theta} ||u(R^2)||_{B_r1}^theta,
// theta = 1/(C log(R/r1)), one C fitted over the whole suite.
InequalityReport check_two_sphere_one_cylinder(const std::vector<CaloricFn>& suite, double r1, double r2,
                                               double R, int n = 2, double eta1 = 0.25);

struct SampledFn {
    std::string name;
    std::function<double(const Point&)> g;
    std::function<Point(const Point&)> grad; // central differences when empty
};
std::vector<SampledFn> interpolation_suite(int n, std::uint64_t seed);

// ||g||_inf <= C [||g||_inf + r ||grad g||_inf]^{n/(n+2)} (r^{-n} int_{B_r} g^2)^{1/(n+2)}
// on the ball of radius r about the origin, one C over the suite.
InequalityReport check_interpolation(const std::vector<SampledFn>& suite, double r, int n = 2);

struct CylinderInstance {
    Point xi;
    double tau = 0.0;
    Point x0;
    double t0 = 0.0;
};

struct CylinderOptions {
    double delta1 = 0.25;
    SolverOptions solver;
};

// int over Q_rho(x0,t0) of |Gamma(.;xi,tau)|^2 against C rho^n (t0-tau)^{1-n} e^{-|x0-xi|^2/(C(t0-tau))},
// rho = delta1 [|x0-xi|^2 + t0 - tau]^{1/2}; Gamma from the discrete solver on grid.extended().
InequalityReport check_cylinder_bound(const InclusionFamily& q, const Material& mat, const Grid& grid,
                                const std::vector<CylinderInstance>& instances, const CylinderOptions& opts = {});
// Cylinder integral for one instance (the left-hand side above).
double cylinder_integral(const FieldHistory& gamma, double tau, const Point& x0, double t0,
                             double rho);

// Interface chart x_n = phi(x', t); the k phase lies above.
using ChartFn = std::function<double(const Point& xprime, double t)>;

struct AsymptoticSample {
    Point x;
    double t = 0.0;
    double y_n = 0.0;
};

struct AsymptoticOptions {
    double rho0 = 1.0;
    double cone_C = 4.0;     // constant of the nontangential cone
    double halfwidth = 6.0;  // solver box half-width in scaled units
    int cells = 192;         // per axis
    int steps = 128;         // time steps over the scaled unit time
    int subsamples = 8;
    double theta = 1.0;
    double min_slope = 0.8;
};

struct AsymptoticPoint {
    double scale = 0.0;      // sqrt(t)
    double distance = 0.0;   // [|x-y|^2 + t]^{1/2}
    double value_diff = 0.0; // t^{n/2} |Gamma_curved - Gamma_flat|
    double gradient_diff = 0.0; // t^{n/2} |grad(Gamma_curved - Gamma_flat)|
    double kernel_gap = 0.0; // t^{n/2} |Gamma_flat(solver) - Gamma_+(closed form)|
};

struct AsymptoticReport {
    InequalityReport value;    // statistic: fitted slope of log value_diff vs log distance
    InequalityReport gradient; // statistic: fitted slope of log gradient_diff vs log distance
    std::vector<AsymptoticPoint> points;
    LineFit value_fit, gradient_fit;
    double beta = 0.0; // largest Hoelder exponent in (0,1) consistent with the gradient slope
    double discretization_floor = 0.0;
};

// Each sample is solved in parabolically rescaled coordinates (x/sqrt(t), 1),
// where the chart becomes phi(sqrt(t) X', t T)/sqrt(t); the flat kernel is
// the same solver with phi = 0, so grid error cancels in the difference.
AsymptoticReport check_asymptotic_estimate(const ChartFn& phi, const Material& mat,
                                           const std::vector<AsymptoticSample>& samples,
                                           const AsymptoticOptions& opts = {});

} // namespace parprobe

#endif
