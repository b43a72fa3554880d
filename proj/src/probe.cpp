#include "parprobe/probe.hpp"

#include "parprobe/quadrature.hpp"

#include <tbb/parallel_for.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace parprobe {

namespace {

bool same_lattice(const Grid& a, const Grid& b) {
    return a.dim() == b.dim() && a.cells == b.cells && a.steps == b.steps && a.spacing == b.spacing &&
           a.dt == b.dt && a.t0 == b.t0 && (a.omega.lo - b.omega.lo).norm() == 0.0;
}

// Flux-consistent cell gradients: the face flux a_f (u_d - u_c)/h divided by the
// coefficient of the cell itself, averaged over the two faces on each axis.
// Away from coefficient jumps this is the central difference.
Eigen::MatrixXd cell_gradients(const Grid& g, const Eigen::VectorXd& u, const Eigen::VectorXd& coef,
                               const Eigen::VectorXd& face_coef) {
    const int nx = g.cells[0], ny = g.cells[1];
    Eigen::MatrixXd grad = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(g.size()), g.dim());
    Eigen::VectorXd count = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(g.size()) * g.dim());
    Eigen::Index f = 0;
    auto add = [&](std::size_t c, std::size_t d, int axis, double af) {
        const double flux = af * (u(d) - u(c)) / g.spacing;
        grad(c, axis) += flux / coef(c);
        grad(d, axis) += flux / coef(d);
        count(c * g.dim() + axis) += 1.0;
        count(d * g.dim() + axis) += 1.0;
    };
    for (int j = 0; j < ny; ++j)
        for (int i = 0; i + 1 < nx; ++i, ++f) add(g.index(i, j), g.index(i + 1, j), 0, face_coef(f));
    if (g.dim() == 2)
        for (int j = 0; j + 1 < ny; ++j)
            for (int i = 0; i < nx; ++i, ++f) add(g.index(i, j), g.index(i, j + 1), 1, face_coef(f));
    for (Eigen::Index c = 0; c < grad.rows(); ++c)
        for (int a = 0; a < g.dim(); ++a) grad(c, a) /= std::max(1.0, count(c * g.dim() + a));
    return grad;
}

double midpoint_term(const Grid& g, const Eigen::MatrixXd& gu, const Eigen::MatrixXd& gv, const Eigen::VectorXd& frac) {
    double acc = 0.0;
    for (Eigen::Index c = 0; c < frac.size(); ++c)
        if (frac(c) != 0.0) acc += frac(c) * gu.row(c).dot(gv.row(c));
    return acc * std::pow(g.spacing, g.dim());
}

double face_term(const Grid& g, const Eigen::VectorXd& u, const Eigen::VectorXd& v, const Eigen::VectorXd& w) {
    const int nx = g.cells[0], ny = g.cells[1];
    const double ih2 = 1.0 / (g.spacing * g.spacing);
    double acc = 0.0;
    Eigen::Index f = 0;
    for (int j = 0; j < ny; ++j)
        for (int i = 0; i + 1 < nx; ++i, ++f) {
            if (w(f) == 0.0) continue;
            const std::size_t c = g.index(i, j), d = g.index(i + 1, j);
            acc += w(f) * (u(d) - u(c)) * (v(d) - v(c)) * ih2;
        }
    if (g.dim() == 2)
        for (int j = 0; j + 1 < ny; ++j)
            for (int i = 0; i < nx; ++i, ++f) {
                if (w(f) == 0.0) continue;
                const std::size_t c = g.index(i, j), d = g.index(i, j + 1);
                acc += w(f) * (u(d) - u(c)) * (v(d) - v(c)) * ih2;
            }
    return acc * std::pow(g.spacing, g.dim());
}

} // namespace

VolumeResult volume_functionals(const Poles& poles, const InclusionFamily& q1, const InclusionFamily& q2,
                                const Material& mat, const Grid& grid, VolumeQuadrature quad,
                                const SolverOptions& opts) {
    VolumeResult out;
    if (poles.s >= poles.tau) return out; // causality
    for (const InclusionFamily* q : {&q1, &q2}) {
        if (q->is_empty()) continue;
        if (q->contains(poles.y, poles.s) || q->contains(poles.xi, poles.tau))
            throw PreconditionError("volume_functional: a probe point lies inside an inclusion");
    }
    const Grid ext = grid.extended();
    const TransmissionSolver s1(ext, q1, mat, opts), s2(ext, q2, mat, opts);
    const FieldHistory gamma2 = s2.propagate_source(poles.y, ext.level_of(poles.s));
    const FieldHistory adj1 = s1.propagate_adjoint(poles.xi, ext.level_of(poles.tau));
    double mid[2] = {0.0, 0.0}, face[2] = {0.0, 0.0};
    const int first = std::max(1, ext.level_of(poles.s));
    const int last = std::min(ext.steps, ext.level_of(poles.tau) + 1);
    const double km1 = mat.k - 1.0;
    for (int m = first; m <= last; ++m) {
        const Eigen::VectorXd& u = gamma2.levels[m];
        const Eigen::VectorXd& v = adj1.levels[m - 1];
        // Gamma_2 lives in the Q_2 medium, Gamma_1^* in the Q_1 medium.
        const Eigen::VectorXd w1 = s1.face_weights(m), w2 = s2.face_weights(m);
        const Eigen::VectorXd f1 = s1.fractions(m), f2 = s2.fractions(m);
        const Eigen::MatrixXd gu = cell_gradients(ext, u, (1.0 + km1 * f2.array()).matrix(),
                                                  (1.0 + km1 * w2.array()).matrix());
        const Eigen::MatrixXd gv = cell_gradients(ext, v, (1.0 + km1 * f1.array()).matrix(),
                                                  (1.0 + km1 * w1.array()).matrix());
        if (!q1.is_empty()) {
            mid[0] += midpoint_term(ext, gu, gv, f1);
            face[0] += face_term(ext, u, v, w1);
        }
        if (!q2.is_empty()) {
            mid[1] += midpoint_term(ext, gu, gv, f2);
            face[1] += face_term(ext, u, v, w2);
        }
    }
    const double dt = ext.dt;
    const bool use_mid = quad == VolumeQuadrature::midpoint;
    out.s1 = dt * (use_mid ? mid[0] : face[0]);
    out.s2 = dt * (use_mid ? mid[1] : face[1]);
    out.s1_alt = dt * (use_mid ? face[0] : mid[0]);
    out.s2_alt = dt * (use_mid ? face[1] : mid[1]);
    return out;
}

GapFunctional volume_functional(int j, const Poles& poles, const InclusionFamily& q1, const InclusionFamily& q2,
                                const Material& mat, const Grid& grid, VolumeQuadrature quad,
                                const SolverOptions& opts) {
    if (j != 1 && j != 2) throw PreconditionError("volume_functional: j must be 1 or 2");
    const VolumeResult r = volume_functionals(poles, q1, q2, mat, grid, quad, opts);
    GapFunctional g;
    g.method = GapMethod::volume_integral;
    g.poles = poles;
    g.value = j == 1 ? r.s1 : r.s2;
    g.estimated_error = j == 1 ? std::abs(r.s1 - r.s1_alt) : std::abs(r.s2 - r.s2_alt);
    return g;
}

GapFunctional gap_functional_dtn(const Poles& poles, const DiscreteDtN& dtn1, const DiscreteDtN& dtn2,
                                 KernelModel model) {
    const auto& m1 = dtn1.metadata();
    const auto& m2 = dtn2.metadata();
    if (!same_lattice(m1.grid, m2.grid)) throw PreconditionError("gap_functional_dtn: DtN maps use different lattices");
    if (m1.k != m2.k) throw PreconditionError("gap_functional_dtn: DtN maps use different materials");
    const Grid& grid = m1.grid;
    if (grid.omega.contains(poles.y) || grid.omega.contains(poles.xi))
        throw PreconditionError("gap_functional_dtn: probe points must lie outside Omega");
    GapFunctional g;
    g.method = GapMethod::dtn_pairing;
    g.poles = poles;
    if (poles.s >= poles.tau) return g;
    const Material mat(m1.k);
    const InclusionFamily& q2 = *m2.family;
    const InclusionFamily& q1 = model == KernelModel::exact ? *m1.family : *m2.family;
    const FieldHistory gamma2 = discrete_fundamental(poles.y, poles.s, q2, mat, grid, false, m2.solver);
    const FieldHistory adj1 = discrete_fundamental(poles.xi, poles.tau, q1, mat, grid, true, m1.solver);
    const BoundaryData gdata = omega_trace(gamma2, grid);
    const BoundaryData phi = omega_trace(adj1, grid);
    const BoundaryData l1 = dtn1.apply(gdata);
    const BoundaryData l2 = dtn2.apply(gdata);
    BoundaryData diff = l1;
    diff.values -= l2.values;
    g.value = boundary_pairing(diff, phi, grid) / (mat.k - 1.0);
    // Flux consistency: Lambda_2 applied to the trace of Gamma_2 should return
    // the normal derivative of Gamma_2 itself.
    BoundaryData resid = l2;
    resid.values -= omega_flux(gamma2, grid).values;
    g.estimated_error = 2.0 * std::abs(boundary_pairing(resid, phi, grid) / (mat.k - 1.0));
    return g;
}

// ---------------------------------------------------------------- I^{(h)}

namespace {

IhResult ih_once(double h, const Lambdas& lam, double k, int n, int nodes, double rel_tol, double tail) {
    const double T = lam.l2 * h * h;
    const double d = (lam.l1 + lam.l3) * h;
    IhResult out;
    if (n == 1) {
        auto fn = [&](cplx p) {
            const cplx mu1 = std::sqrt(p), mu2 = std::sqrt(p / k);
            return mu2 * std::exp(-mu1 * d) / (2.0 * (mu1 + k * mu2) * (mu1 + mu2));
        };
        out.signed_value = talbot_invert(fn, T, nodes);
    } else {
        const double m = std::min(1.0, k);
        auto integrand = [&](double xi) {
            const double shift = m * xi * xi;
            auto fn = [&](cplx q) {
                const cplx p = q - shift;
                const cplx mu1 = std::sqrt(p + xi * xi), mu2 = std::sqrt(xi * xi + p / k);
                return (xi * xi + mu1 * mu2) * std::exp(-mu1 * d) / (2.0 * mu1 * (mu1 + k * mu2) * (mu1 + mu2));
            };
            return std::exp(-shift * T) * talbot_invert(fn, T, nodes) / kPi;
        };
        const double xmax = std::sqrt(-std::log(tail) / (m * T));
        const QuadResult<double> r = integrate_adaptive<double>(integrand, 0.0, xmax, 0.0, rel_tol, 8, 4000);
        if (!r.converged) throw NumericError("ih_integral: frequency quadrature did not converge", r.error);
        out.signed_value = r.value;
        out.error = r.error;
    }
    out.value = std::abs(out.signed_value);
    return out;
}

} // namespace

IhResult ih_integral(double h, const Lambdas& lam, const Material& mat, int n, const IhOptions& opts) {
    if (!(h > 0.0)) throw PreconditionError("ih_integral: h must be positive");
    for (double l : {lam.l1, lam.l2, lam.l3})
        if (!(l > 0.0 && l <= 1.0)) throw PreconditionError("ih_integral: lambdas must lie in (0, 1]");
    if (n != 1 && n != 2) throw PreconditionError("ih_integral: n must be 1 or 2");
    IhResult base = ih_once(h, lam, mat.k, n, opts.talbot_nodes, opts.rel_tol, opts.tail);
    // Contour error: compare against a finer contour.
    const IhResult fine = ih_once(h, lam, mat.k, n, opts.talbot_nodes + 16, opts.rel_tol, opts.tail);
    base.error += std::abs(fine.signed_value - base.signed_value);
    return base;
}

Calibration calibrate_lambdas(const Material& mat, int n, const std::vector<double>& levels_in, const IhOptions& opts) {
    std::vector<double> levels = levels_in;
    if (levels.empty())
        for (int i = 1; i <= 10; ++i) levels.push_back(0.1 * i);
    const int L = static_cast<int>(levels.size());
    std::vector<IhResult> res(static_cast<std::size_t>(L) * L * L);
    std::vector<int> failed(res.size(), 0);
    tbb::parallel_for(0, static_cast<int>(res.size()), [&](int idx) {
        const Lambdas lam{levels[idx / (L * L)], levels[(idx / L) % L], levels[idx % L]};
        try {
            res[idx] = ih_integral(1.0, lam, mat, n, opts);
        } catch (const NumericError&) {
            failed[idx] = 1;
        }
    });
    Calibration best;
    bool found = false;
    double best_sig = 0.0;
    for (std::size_t idx = 0; idx < res.size(); ++idx) {
        if (failed[idx]) continue;
        const Lambdas lam{levels[idx / (L * L)], levels[(idx / L) % L], levels[idx % L]};
        const IhResult& r = res[idx];
        best_sig = std::max(best_sig, r.error > 0.0 ? r.value / r.error : INFINITY);
        if (!(r.value >= 10.0 * r.error) || r.value == 0.0) continue;
        const double score = r.value * std::pow(std::min({lam.l1, lam.l2, lam.l3}), n);
        if (!found || score > best.score) {
            best = Calibration{lam, r.value, r.error, score, 0.0};
            found = true;
        }
    }
    if (!found) {
        std::ostringstream os;
        os << "calibrate_lambdas: no triple with I^(1) above 10x its quadrature error (best significance "
           << best_sig << ")";
        throw NumericError(os.str());
    }
    IhOptions fine = opts;
    fine.talbot_nodes *= 2;
    fine.rel_tol *= 0.1;
    const IhResult refined = ih_integral(1.0, best.lambdas, mat, n, fine);
    best.refined_change = std::abs(refined.value - best.i1) / best.i1;
    return best;
}

// ---------------------------------------------------------------- blow-up sweep

LineFit fit_line(const std::vector<double>& x, const std::vector<double>& y) {
    const std::size_t N = x.size();
    if (N < 2 || y.size() != N) throw PreconditionError("fit_line: need at least two points");
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < N; ++i) {
        mx += x[i];
        my += y[i];
    }
    mx /= N;
    my /= N;
    double sxx = 0.0, sxy = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < N; ++i) {
        sxx += (x[i] - mx) * (x[i] - mx);
        sxy += (x[i] - mx) * (y[i] - my);
        syy += (y[i] - my) * (y[i] - my);
    }
    LineFit f;
    f.slope = sxy / sxx;
    f.intercept = my - f.slope * mx;
    double ssr = 0.0;
    for (std::size_t i = 0; i < N; ++i) {
        const double r = y[i] - (f.intercept + f.slope * x[i]);
        ssr += r * r;
    }
    f.r_squared = syy > 0.0 ? 1.0 - ssr / syy : 1.0;
    f.rms = std::sqrt(ssr / N);
    return f;
}

BlowupSweep blowup_sweep(const InclusionFamily& d1, const InclusionFamily& d2, double t_bar, const Lambdas& lambdas,
                         const Material& mat, const GeometryConfig& cfg, const std::vector<double>& h_list,
                         double delta, const LocalGridSpec& spec, double spacing) {
    if (h_list.size() < 2) throw PreconditionError("blowup_sweep: need at least two h values");
    for (std::size_t i = 1; i < h_list.size(); ++i)
        if (!(h_list[i] < h_list[i - 1])) throw PreconditionError("blowup_sweep: h values must be strictly decreasing");
    const int n = d1.dim();
    const double i1 = ih_integral(1.0, lambdas, mat, n).value;
    BlowupSweep sweep;
    sweep.points.resize(h_list.size());
    // Probe construction first so that an inadmissible h fails before any solve.
    for (std::size_t i = 0; i < h_list.size(); ++i) {
        BlowupPoint& p = sweep.points[i];
        p.h = h_list[i];
        p.probe = make_probe(d1, d2, t_bar, p.h, lambdas, cfg, delta, spacing);
        if (!p.probe.separation_ok) {
            std::ostringstream os;
            os.precision(17);
            os << "blowup_sweep: separation checks fail at h = " << p.h << " (dist(y_bar, D1) = "
               << p.probe.sep_ybar_d1 << ", dist(y1, D1) = " << p.probe.sep_y1_d1 << ", dist to D2 = "
               << p.probe.sep_d2 << ")";
            throw PreconditionError(os.str());
        }
        if (!(p.probe.t1 > 0.0)) throw PreconditionError("blowup_sweep: t1 must be positive");
    }
    tbb::parallel_for(0, static_cast<int>(h_list.size()), [&](int i) {
        BlowupPoint& p = sweep.points[i];
        const ProbeConfig& pr = p.probe;
        const InclusionFamily& q1 = pr.swapped ? d2 : d1;
        const InclusionFamily& q2 = pr.swapped ? d1 : d2;
        const double h = p.h;
        const double half = spec.halfwidth * h;
        Box box{pr.base_point - Point::Constant(n, half), pr.base_point + Point::Constant(n, half)};
        Grid g = Grid::make(box, h / spec.cells_per_h, pr.t_bar - pr.t1, spec.steps);
        g.t0 = pr.t1;
        SolverOptions so;
        so.theta = spec.theta;
        so.subsamples = spec.subsamples;
        const Poles poles{pr.y1, pr.t1, pr.y_bar, pr.t_bar};
        const VolumeResult r = volume_functionals(poles, q1, q2, mat, g, VolumeQuadrature::midpoint, so);
        p.u = std::abs(r.u());
        p.u_alt = std::abs(r.s1_alt - r.s2_alt);
        p.error = r.error();
        p.ih_reference = i1 * std::pow(h, -n);
    });
    std::vector<double> lx, ly;
    for (const auto& p : sweep.points) {
        if (!(p.u > 0.0)) throw NumericError("blowup_sweep: |U| vanished; no blow-up to fit");
        lx.push_back(std::log(p.h));
        ly.push_back(std::log(p.u));
    }
    const LineFit f = fit_line(lx, ly);
    sweep.fitted_slope = f.slope;
    sweep.intercept = f.intercept;
    sweep.r_squared = f.r_squared;
    sweep.fit_residual = f.rms;
    return sweep;
}

// ---------------------------------------------------------------- detection

DetectResult detect_boundary(const DiscreteDtN& dtn1, const DiscreteDtN& dtn2, double t_bar,
                             const std::vector<Point>& directions, const DetectOptions& opts) {
    const auto& m2 = dtn2.metadata();
    if (!same_lattice(dtn1.metadata().grid, m2.grid)) throw PreconditionError("detect_boundary: lattice mismatch");
    if (directions.empty()) throw PreconditionError("detect_boundary: no directions");
    const Grid& grid = m2.grid;
    const Material mat(m2.k);
    const int top = grid.level_of(t_bar);
    const double w = opts.band_cells * grid.spacing;
    const InclusionFamily dilated = m2.family->offset(w);
    const DiscreteDtN ref = dtn2.is_dense() ? DiscreteDtN::assemble(dilated, mat, grid, m2.flux, m2.solver)
                                            : DiscreteDtN::matrix_free(dilated, mat, grid, m2.flux, m2.solver);
    std::optional<DiscreteDtN> noisy_twin;
    if (dtn1.noise_level() > 0.0) noisy_twin = dtn2.with_noise(dtn1.noise_level(), opts.seed ^ 0x5eedULL);

    std::vector<int> lag_levels;
    for (int i = opts.lags - 1; i >= 0; --i) {
        const int lag = std::max(1, static_cast<int>(std::lround(top * std::ldexp(1.0, -i))));
        if (lag_levels.empty() || lag > lag_levels.back()) lag_levels.push_back(std::min(lag, top));
    }
    const Point centre = 0.5 * (grid.omega.lo + grid.omega.hi);
    DetectResult out;
    out.directions.resize(directions.size());
    std::vector<double> floors(directions.size(), 0.0);
    tbb::parallel_for(0, static_cast<int>(directions.size()), [&](int d) {
        DetectDirection& dir = out.directions[d];
        dir.direction = directions[d].normalized();
        double exit = std::numeric_limits<double>::infinity();
        for (int a = 0; a < grid.dim(); ++a) {
            if (dir.direction(a) > 0) exit = std::min(exit, (grid.omega.hi(a) - centre(a)) / dir.direction(a));
            if (dir.direction(a) < 0) exit = std::min(exit, (grid.omega.lo(a) - centre(a)) / dir.direction(a));
        }
        dir.pole = centre + (exit + opts.gap_cells * grid.spacing) * dir.direction;
        for (int lag : lag_levels) {
            const Poles poles{dir.pole, grid.time(top - lag), dir.pole, t_bar};
            dir.lags.push_back(lag * grid.dt);
            dir.signal.push_back(gap_functional_dtn(poles, dtn1, dtn2, KernelModel::reference).value);
            dir.reference.push_back(gap_functional_dtn(poles, ref, dtn2, KernelModel::reference).value / w);
            if (noisy_twin)
                floors[d] = std::max(floors[d],
                                     std::abs(gap_functional_dtn(poles, *noisy_twin, dtn2, KernelModel::reference).value));
        }
    });
    double scale = 0.0;
    for (const auto& dir : out.directions)
        for (double r : dir.reference) scale = std::max(scale, std::abs(r) * w);
    out.noise_floor = *std::max_element(floors.begin(), floors.end());
    out.threshold = opts.threshold_factor * std::max(out.noise_floor, 1e-9 * scale);
    for (auto& dir : out.directions) {
        for (std::size_t i = 0; i < dir.signal.size(); ++i)
            if (std::abs(dir.signal[i]) > out.threshold) {
                dir.onset = static_cast<int>(i);
                break;
            }
        if (dir.onset >= 0 && dir.reference.back() != 0.0) {
            dir.estimate = std::abs(dir.signal.back() / dir.reference.back());
            if (!out.distinguishable || dir.estimate > out.estimate) {
                out.estimate = dir.estimate;
                out.witness = dir.pole;
            }
            out.distinguishable = true;
        }
    }
    out.status = out.distinguishable ? "distinguishable" : "indistinguishable at resolution";
    const auto& f1 = *dtn1.metadata().family;
    const auto& f2 = *m2.family;
    out.true_d_mu = std::numeric_limits<double>::quiet_NaN();
    if (!f1.is_empty() && !f2.is_empty()) {
        try {
            out.true_d_mu = modified_distance(f1, f2, t_bar).value;
        } catch (const DomainError&) {
        }
    }
    return out;
}

} // namespace parprobe
