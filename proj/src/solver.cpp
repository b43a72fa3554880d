#include "parprobe/solver.hpp"

#include <Eigen/IterativeLinearSolvers>
#include <Eigen/QR>
#include <Eigen/SVD>
#include <Eigen/SparseCholesky>
#include <Eigen/SparseCore>

#include <tbb/parallel_for.h>

#include <algorithm>
#include <cmath>
#include <iostream>
#include <sstream>

namespace parprobe {

using SpMat = Eigen::SparseMatrix<double>;

// ---------------------------------------------------------------- grid

Grid Grid::make(const Box& omega, double spacing, double T, int steps, double collar) {
    if (!(spacing > 0.0)) throw ConfigError("grid: spacing must be positive");
    if (steps < 1) throw ConfigError("grid: need at least one time step");
    if (!(T > 0.0)) throw ConfigError("grid: T must be positive");
    Grid g;
    g.omega = omega;
    g.spacing = spacing;
    g.steps = steps;
    g.dt = T / steps;
    g.collar = collar;
    for (int i = 0; i < omega.dim(); ++i) {
        const double extent = omega.hi(i) - omega.lo(i);
        const double cells = extent / spacing;
        g.cells[i] = static_cast<int>(std::lround(cells));
        if (g.cells[i] < 2 || std::abs(cells - g.cells[i]) > 1e-8 * cells) {
            std::ostringstream os;
            os << "grid: extent " << extent << " along axis " << i << " is not a multiple of spacing "
               << spacing;
            throw ConfigError(os.str());
        }
    }
    if (omega.dim() == 1) g.cells[1] = 1;
    g.validate();
    return g;
}

void Grid::validate() const {
    if (!(spacing > 0.0) || !(dt > 0.0)) throw ConfigError("grid: spacing and dt must be positive");
    if (dt > spacing * (1.0 + 1e-12)) {
        std::ostringstream os;
        os << "grid: dt = " << dt << " exceeds spacing = " << spacing;
        throw ConfigError(os.str());
    }
    if (collar < 0.0) throw ConfigError("grid: collar must be nonnegative");
}

Point Grid::centre(std::size_t c) const {
    Point p = omega.lo;
    p(0) += (static_cast<int>(c % cells[0]) + 0.5) * spacing;
    if (dim() == 2) p(1) += (static_cast<int>(c / cells[0]) + 0.5) * spacing;
    return p;
}

int Grid::level_of(double t) const {
    const double r = (t - t0) / dt;
    const int m = static_cast<int>(std::lround(r));
    if (std::abs(r - m) > 1e-6 || m < 0 || m > steps) {
        std::ostringstream os;
        os.precision(17);
        os << "time " << t << " is not on the time lattice (t0 = " << t0 << ", dt = " << dt << ", steps = "
           << steps << ")";
        throw PreconditionError(os.str());
    }
    return m;
}

int Grid::collar_cells() const { return static_cast<int>(std::ceil(collar / spacing - 1e-9)); }

Grid Grid::extended() const {
    Grid g = *this;
    const int cc = collar_cells();
    for (int i = 0; i < dim(); ++i) {
        g.omega.lo(i) -= cc * spacing;
        g.omega.hi(i) += cc * spacing;
        g.cells[i] += 2 * cc;
    }
    g.collar = 0.0;
    return g;
}

std::vector<BoundaryFace> boundary_faces(const Grid& grid) {
    std::vector<BoundaryFace> out;
    const int nx = grid.cells[0], ny = grid.cells[1];
    const double h = grid.spacing;
    auto add = [&](std::size_t c, int axis, int outward) {
        BoundaryFace f{c, axis, outward, grid.centre(c)};
        f.centre(axis) += 0.5 * h * outward;
        out.push_back(f);
    };
    if (grid.dim() == 1) {
        add(0, 0, -1);
        add(nx - 1, 0, +1);
        return out;
    }
    for (int j = 0; j < ny; ++j) add(grid.index(0, j), 0, -1);
    for (int j = 0; j < ny; ++j) add(grid.index(nx - 1, j), 0, +1);
    for (int i = 0; i < nx; ++i) add(grid.index(i, 0), 1, -1);
    for (int i = 0; i < nx; ++i) add(grid.index(i, ny - 1), 1, +1);
    return out;
}

BoundaryData BoundaryData::zeros(const Grid& grid) {
    BoundaryData b;
    b.values = Eigen::MatrixXd::Zero(grid.steps + 1, static_cast<Eigen::Index>(boundary_faces(grid).size()));
    return b;
}

double FieldHistory::at(const Point& x, int level) const {
    const Eigen::VectorXd& u = levels.at(level);
    double f[2] = {0.0, 0.0};
    int i0[2] = {0, 0};
    for (int a = 0; a < grid.dim(); ++a) {
        const double s = (x(a) - grid.omega.lo(a)) / grid.spacing - 0.5;
        const double c = std::clamp(s, 0.0, static_cast<double>(grid.cells[a] - 1));
        i0[a] = std::min(static_cast<int>(std::floor(c)), std::max(grid.cells[a] - 2, 0));
        f[a] = c - i0[a];
    }
    if (grid.dim() == 1) return (1 - f[0]) * u(i0[0]) + f[0] * u(i0[0] + 1);
    auto v = [&](int di, int dj) { return u(grid.index(i0[0] + di, i0[1] + dj)); };
    return (1 - f[0]) * (1 - f[1]) * v(0, 0) + f[0] * (1 - f[1]) * v(1, 0) + (1 - f[0]) * f[1] * v(0, 1) +
           f[0] * f[1] * v(1, 1);
}

// ---------------------------------------------------------------- coefficients

Eigen::VectorXd cell_fractions(const InclusionFamily& q, const Grid& grid, double t, int subsamples) {
    if (subsamples < 1) throw ConfigError("solver: subsamples must be >= 1");
    Eigen::VectorXd frac = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(grid.size()));
    if (q.is_empty()) return frac;
    const int n = grid.dim();
    const double h = grid.spacing;
    const double reach = 2.0 * h * std::sqrt(static_cast<double>(n));
    for (std::size_t c = 0; c < grid.size(); ++c) {
        const Point x = grid.centre(c);
        if (subsamples == 1) {
            frac(c) = q.contains(x, t) ? 1.0 : 0.0;
            continue;
        }
        const double lv = q.level(x, t);
        if (lv > reach) continue;
        if (lv < -reach) {
            frac(c) = 1.0;
            continue;
        }
        // Inside length of each of `subsamples` columns across the last axis:
        // bisection when the level changes sign once along the column,
        // midpoint counting otherwise.
        const int axis = n - 1;
        double inside = 0.0;
        for (int a = 0; a < (n == 2 ? subsamples : 1); ++a) {
            Point base = x;
            if (n == 2) base(0) += ((a + 0.5) / subsamples - 0.5) * h;
            auto at = [&](double u) {
                Point p = base;
                p(axis) += (u - 0.5) * h;
                return q.level(p, t);
            };
            std::vector<double> lv_edge(subsamples + 1);
            int changes = 0, last = 0;
            for (int b = 0; b <= subsamples; ++b) {
                lv_edge[b] = at(static_cast<double>(b) / subsamples);
                if (b > 0 && (lv_edge[b] <= 0.0) != (lv_edge[b - 1] <= 0.0)) {
                    ++changes;
                    last = b;
                }
            }
            if (changes == 0) {
                inside += lv_edge[0] <= 0.0 ? 1.0 : 0.0;
            } else if (changes == 1) {
                double lo = static_cast<double>(last - 1) / subsamples, hi = static_cast<double>(last) / subsamples;
                double vlo = lv_edge[last - 1], vhi = lv_edge[last];
                const bool lo_in = vlo <= 0.0;
                for (int it = 0; it < 40; ++it) {
                    const double mid = 0.5 * (lo + hi), vm = at(mid);
                    if ((vm <= 0.0) == lo_in) lo = mid, vlo = vm;
                    else hi = mid, vhi = vm;
                }
                // Secant on the final bracket: exact for levels linear along the column.
                const double root = vhi != vlo ? std::clamp(lo - vlo * (hi - lo) / (vhi - vlo), lo, hi) : 0.5 * (lo + hi);
                inside += lo_in ? root : 1.0 - root;
            } else {
                int hits = 0;
                for (int b = 0; b < subsamples; ++b) hits += at((b + 0.5) / subsamples) <= 0.0;
                inside += static_cast<double>(hits) / subsamples;
            }
        }
        frac(c) = inside / (n == 2 ? subsamples : 1);
    }
    return frac;
}

// ---------------------------------------------------------------- transmission solver

struct TransmissionSolver::Level {
    Eigen::VectorXd frac, coef;
    Eigen::VectorXd fx, fy; // interior face coefficients
    Eigen::VectorXd bdiag;  // 2 a_c / h^2 per boundary face
    SpMat A;                // stiffness incl. Dirichlet half-cell terms
    SpMat lhs;              // I + theta dt A
    std::shared_ptr<Eigen::SimplicialLDLT<SpMat>> ldlt;

    void solve(const Eigen::VectorXd& rhs, Eigen::VectorXd& out, double tol) const {
        if (ldlt) {
            out = ldlt->solve(rhs);
            return;
        }
        Eigen::ConjugateGradient<SpMat, Eigen::Lower | Eigen::Upper> cg;
        cg.setTolerance(tol);
        cg.setMaxIterations(5000);
        cg.compute(lhs);
        out = cg.solve(rhs);
        if (cg.info() != Eigen::Success) {
            std::ostringstream os;
            os << "solver: conjugate gradient did not converge (" << cg.iterations()
               << " iterations, residual " << cg.error() << ")";
            throw NumericError(os.str(), cg.error());
        }
    }
};

TransmissionSolver::TransmissionSolver(Grid grid, const InclusionFamily& q, const Material& mat, SolverOptions opts)
    : grid_(std::move(grid)), k_(mat.k), opts_(opts) {
    grid_.validate();
    if (!(opts_.theta >= 0.5 && opts_.theta <= 1.0)) throw ConfigError("solver: theta must lie in [0.5, 1]");
    faces_ = boundary_faces(grid_);
    family_ = std::make_shared<InclusionFamily>(q);
    static_ = q.is_empty() || q.is_static();
    if (static_) static_level_ = build_level(cell_fractions(q, grid_, grid_.t0, opts_.subsamples), true);
}

std::shared_ptr<const TransmissionSolver::Level> TransmissionSolver::build_level(Eigen::VectorXd frac,
                                                                                  bool factor) const {
    auto lv = std::make_shared<Level>();
    const int nx = grid_.cells[0], ny = grid_.cells[1];
    const double ih2 = 1.0 / (grid_.spacing * grid_.spacing);
    lv->frac = std::move(frac);
    lv->coef = (1.0 + (k_ - 1.0) * lv->frac.array()).matrix();
    const Eigen::VectorXd& a = lv->coef;
    auto harm = [](double p, double q) { return 2.0 * p * q / (p + q); };
    std::vector<Eigen::Triplet<double>> trip;
    trip.reserve(grid_.size() * 5);
    Eigen::VectorXd diag = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(grid_.size()));
    lv->fx.resize((nx - 1) * ny);
    for (int j = 0; j < ny; ++j)
        for (int i = 0; i + 1 < nx; ++i) {
            const std::size_t c = grid_.index(i, j), d = grid_.index(i + 1, j);
            const double af = harm(a(c), a(d));
            lv->fx(j * (nx - 1) + i) = af;
            diag(c) += af * ih2;
            diag(d) += af * ih2;
            trip.emplace_back(c, d, -af * ih2);
            trip.emplace_back(d, c, -af * ih2);
        }
    if (grid_.dim() == 2) {
        lv->fy.resize(nx * (ny - 1));
        for (int j = 0; j + 1 < ny; ++j)
            for (int i = 0; i < nx; ++i) {
                const std::size_t c = grid_.index(i, j), d = grid_.index(i, j + 1);
                const double af = harm(a(c), a(d));
                lv->fy(j * nx + i) = af;
                diag(c) += af * ih2;
                diag(d) += af * ih2;
                trip.emplace_back(c, d, -af * ih2);
                trip.emplace_back(d, c, -af * ih2);
            }
    }
    lv->bdiag.resize(static_cast<Eigen::Index>(faces_.size()));
    for (std::size_t f = 0; f < faces_.size(); ++f) {
        const std::size_t c = faces_[f].cell;
        lv->bdiag(f) = 2.0 * a(c) * ih2;
        diag(c) += lv->bdiag(f);
    }
    for (std::size_t c = 0; c < grid_.size(); ++c) trip.emplace_back(c, c, diag(c));
    lv->A.resize(grid_.size(), grid_.size());
    lv->A.setFromTriplets(trip.begin(), trip.end());
    SpMat id(grid_.size(), grid_.size());
    id.setIdentity();
    lv->lhs = id + opts_.theta * grid_.dt * lv->A;
    if (factor) {
        lv->ldlt = std::make_shared<Eigen::SimplicialLDLT<SpMat>>(lv->lhs);
        if (lv->ldlt->info() != Eigen::Success) throw NumericError("solver: sparse factorization failed");
    }
    return lv;
}

std::shared_ptr<const TransmissionSolver::Level> TransmissionSolver::level(int m) const {
    if (static_) return static_level_;
    return build_level(cell_fractions(*family_, grid_, grid_.time(m), opts_.subsamples), false);
}

Eigen::VectorXd TransmissionSolver::fractions(int m) const { return level(m)->frac; }

Eigen::VectorXd TransmissionSolver::coefficient(int m) const { return level(m)->coef; }

Eigen::VectorXd TransmissionSolver::face_weights(int m) const {
    const auto lv = level(m);
    Eigen::VectorXd w(lv->fx.size() + lv->fy.size());
    w << lv->fx, lv->fy;
    return ((w.array() - 1.0) / (k_ - 1.0)).matrix();
}

void TransmissionSolver::step(int m, const Eigen::VectorXd& prev, const Eigen::VectorXd* g_prev,
                              const Eigen::VectorXd* g_cur, Eigen::VectorXd& out) const {
    const double dt = grid_.dt, th = opts_.theta;
    const auto cur = level(m);
    Eigen::VectorXd rhs = prev;
    if (th < 1.0) {
        const auto old = static_ ? cur : level(m - 1);
        rhs -= (1.0 - th) * dt * (old->A * prev);
        if (g_prev)
            for (std::size_t f = 0; f < faces_.size(); ++f)
                rhs(faces_[f].cell) += (1.0 - th) * dt * old->bdiag(f) * (*g_prev)(f);
    }
    if (g_cur)
        for (std::size_t f = 0; f < faces_.size(); ++f)
            rhs(faces_[f].cell) += th * dt * cur->bdiag(f) * (*g_cur)(f);
    cur->solve(rhs, out, opts_.cg_tol);
}

void TransmissionSolver::step_adjoint(int m, const Eigen::VectorXd& next, Eigen::VectorXd& out) const {
    const auto cur = level(m);
    Eigen::VectorXd tmp;
    cur->solve(next, tmp, opts_.cg_tol);
    if (opts_.theta < 1.0) {
        const auto old = static_ ? cur : level(m - 1);
        out = tmp - (1.0 - opts_.theta) * grid_.dt * (old->A * tmp);
    } else {
        out = std::move(tmp);
    }
}

FieldHistory TransmissionSolver::solve(const BoundaryData& g, int first_level) const {
    if (g.levels() != grid_.steps + 1 || g.faces() != static_cast<int>(faces_.size()))
        throw PreconditionError("solve: boundary data does not match the grid lattice");
    FieldHistory out{grid_, {}};
    const Eigen::Index n = static_cast<Eigen::Index>(grid_.size());
    out.levels.assign(grid_.steps + 1, Eigen::VectorXd::Zero(n));
    const int start = std::max(first_level, 1);
    for (int m = start; m <= grid_.steps; ++m) {
        const Eigen::VectorXd gp = g.values.row(m - 1).transpose();
        const Eigen::VectorXd gc = g.values.row(m).transpose();
        step(m, out.levels[m - 1], &gp, &gc, out.levels[m]);
    }
    return out;
}

Eigen::VectorXd TransmissionSolver::discrete_delta(const Point& y) const {
    const int n = grid_.dim();
    const double h = grid_.spacing;
    Eigen::VectorXd d = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(grid_.size()));
    int lo[2] = {0, 0}, hi[2] = {0, 0};
    for (int a = 0; a < n; ++a) {
        const double s = (y(a) - grid_.omega.lo(a)) / h - 0.5;
        lo[a] = static_cast<int>(std::floor(s)) - 1;
        hi[a] = lo[a] + 3;
        if (lo[a] < 0 || hi[a] >= grid_.cells[a])
            throw PreconditionError("discrete delta: source too close to the edge of the computational box");
    }
    double mass = 0.0;
    for (int j = lo[1]; j <= (n == 2 ? hi[1] : 0); ++j)
        for (int i = lo[0]; i <= hi[0]; ++i) {
            const std::size_t c = grid_.index(i, j);
            const Point x = grid_.centre(c);
            double w = 1.0;
            for (int a = 0; a < n; ++a) w *= std::max(0.0, 1.0 - std::abs(x(a) - y(a)) / h);
            d(c) = w;
            mass += w;
        }
    return d / (mass * std::pow(h, n));
}

FieldHistory TransmissionSolver::propagate_source(const Point& y, int start) const {
    if (start < 0 || start >= grid_.steps) throw PreconditionError("propagate_source: start level out of range");
    FieldHistory out{grid_, {}};
    out.levels.assign(grid_.steps + 1, Eigen::VectorXd::Zero(static_cast<Eigen::Index>(grid_.size())));
    out.levels[start] = discrete_delta(y);
    for (int m = start + 1; m <= grid_.steps; ++m) step(m, out.levels[m - 1], nullptr, nullptr, out.levels[m]);
    return out;
}

FieldHistory TransmissionSolver::propagate_adjoint(const Point& y, int stop) const {
    if (stop <= 0 || stop > grid_.steps) throw PreconditionError("propagate_adjoint: stop level out of range");
    FieldHistory out{grid_, {}};
    out.levels.assign(grid_.steps + 1, Eigen::VectorXd::Zero(static_cast<Eigen::Index>(grid_.size())));
    out.levels[stop] = discrete_delta(y);
    for (int m = stop; m >= 1; --m) step_adjoint(m, out.levels[m], out.levels[m - 1]);
    return out;
}

BoundaryData TransmissionSolver::boundary_flux(const FieldHistory& u, const BoundaryData& g, FluxKind kind) const {
    BoundaryData out = BoundaryData::zeros(grid_);
    const double h = grid_.spacing;
    for (std::size_t f = 0; f < faces_.size(); ++f) {
        const auto& face = faces_[f];
        std::size_t inner = face.cell;
        if (kind == FluxKind::second_order) {
            const std::ptrdiff_t stride = face.axis == 0 ? 1 : grid_.cells[0];
            inner = static_cast<std::size_t>(static_cast<std::ptrdiff_t>(face.cell) - face.outward * stride);
        }
        for (int m = 0; m <= grid_.steps; ++m) {
            const double gv = g.values(m, f), u1 = u.levels[m](face.cell);
            out.values(m, f) = kind == FluxKind::conservative
                                   ? 2.0 * (gv - u1) / h
                                   : (8.0 * gv - 9.0 * u1 + u.levels[m](inner)) / (3.0 * h);
        }
    }
    return out;
}

FieldHistory solve_forward(const BoundaryData& g, const InclusionFamily& q, const Material& mat, const Grid& grid,
                           const SolverOptions& opts) {
    return TransmissionSolver(grid, q, mat, opts).solve(g);
}

BoundaryData boundary_flux(const FieldHistory& u, const BoundaryData& g, const InclusionFamily& q,
                           const Material& mat, const Grid& grid, TransmissionSolver::FluxKind kind) {
    return TransmissionSolver(grid, q, mat).boundary_flux(u, g, kind);
}

FieldHistory discrete_fundamental(const Point& y, double s, const InclusionFamily& q, const Material& mat,
                                  const Grid& grid, bool adjoint, const SolverOptions& opts) {
    const TransmissionSolver solver(grid.extended(), q, mat, opts);
    const int m = grid.level_of(s);
    return adjoint ? solver.propagate_adjoint(y, m) : solver.propagate_source(y, m);
}

namespace {

// Calls fn(face, level, inside value, outside value) for every face of Omega.
template <class Fn>
BoundaryData across_omega_faces(const FieldHistory& field, const Grid& omega_grid, Fn&& fn) {
    const int cc = omega_grid.collar_cells();
    if (cc < 1) throw PreconditionError("grid needs a collar of at least one cell");
    const Grid& ext = field.grid;
    const auto faces = boundary_faces(omega_grid);
    BoundaryData out = BoundaryData::zeros(omega_grid);
    for (std::size_t f = 0; f < faces.size(); ++f) {
        const std::size_t c = faces[f].cell;
        int ij[2] = {static_cast<int>(c % omega_grid.cells[0]) + cc,
                     omega_grid.dim() == 2 ? static_cast<int>(c / omega_grid.cells[0]) + cc : 0};
        const std::size_t in = ext.index(ij[0], ij[1]);
        ij[faces[f].axis] += faces[f].outward;
        const std::size_t outc = ext.index(ij[0], ij[1]);
        for (int m = 0; m < static_cast<int>(field.levels.size()); ++m)
            out.values(m, f) = fn(field.levels[m](in), field.levels[m](outc));
    }
    return out;
}

} // namespace

BoundaryData omega_trace(const FieldHistory& field, const Grid& omega_grid) {
    return across_omega_faces(field, omega_grid, [](double in, double out) { return 0.5 * (in + out); });
}

BoundaryData omega_flux(const FieldHistory& field, const Grid& omega_grid) {
    const double h = omega_grid.spacing;
    return across_omega_faces(field, omega_grid, [h](double in, double out) { return (out - in) / h; });
}

// ---------------------------------------------------------------- DtN

double hashed_normal(std::uint64_t seed, std::uint64_t i, std::uint64_t j) {
    auto mix = [](std::uint64_t z) {
        z += 0x9e3779b97f4a7c15ULL;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    };
    const std::uint64_t a = mix(seed ^ mix(i ^ mix(j)));
    const std::uint64_t b = mix(a);
    const double u1 = ((a >> 11) + 0.5) * 0x1.0p-53;
    const double u2 = ((b >> 11) + 0.5) * 0x1.0p-53;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * kPi * u2);
}

Eigen::VectorXd DiscreteDtN::flatten(const BoundaryData& g) {
    const int M = g.levels() - 1, F = g.faces();
    Eigen::VectorXd v(static_cast<Eigen::Index>(M) * F);
    for (int m = 1; m <= M; ++m) v.segment((m - 1) * F, F) = g.values.row(m).transpose();
    return v;
}

BoundaryData DiscreteDtN::unflatten(const Eigen::VectorXd& v) const {
    BoundaryData g = BoundaryData::zeros(meta_.grid);
    const int F = g.faces();
    for (int m = 1; m < g.levels(); ++m) g.values.row(m) = v.segment((m - 1) * F, F).transpose();
    return g;
}

int DiscreteDtN::dimension() const {
    return meta_.grid.steps * static_cast<int>(boundary_faces(meta_.grid).size());
}

const Eigen::MatrixXd& DiscreteDtN::matrix() const {
    if (!dense_) throw PreconditionError("DtN map is matrix-free; no matrix stored");
    return matrix_;
}

namespace {

DiscreteDtN::Metadata make_meta(const InclusionFamily& q, const Material& mat, const Grid& grid,
                                TransmissionSolver::FluxKind flux, const SolverOptions& opts) {
    DiscreteDtN::Metadata m;
    m.grid = grid;
    m.k = mat.k;
    m.inclusion_id = q.id();
    m.flux = flux;
    m.solver = opts;
    m.family = std::make_shared<InclusionFamily>(q);
    return m;
}

} // namespace

DiscreteDtN DiscreteDtN::matrix_free(const InclusionFamily& q, const Material& mat, const Grid& grid,
                                     TransmissionSolver::FluxKind flux, const SolverOptions& opts) {
    DiscreteDtN d;
    d.meta_ = make_meta(q, mat, grid, flux, opts);
    d.solver_ = std::make_shared<TransmissionSolver>(grid, q, mat, opts);
    return d;
}

DiscreteDtN DiscreteDtN::assemble(const InclusionFamily& q, const Material& mat, const Grid& grid,
                                  TransmissionSolver::FluxKind flux, const SolverOptions& opts) {
    DiscreteDtN d = matrix_free(q, mat, grid, flux, opts);
    const int M = grid.steps;
    const int F = static_cast<int>(boundary_faces(grid).size());
    const Eigen::Index D = static_cast<Eigen::Index>(M) * F;
    d.matrix_ = Eigen::MatrixXd::Zero(D, D);
    const TransmissionSolver& solver = *d.solver_;
    // A time-invariant coefficient makes the map block Toeplitz in time: only
    // data switched on at level 1 needs solving.
    const int first_levels = solver.is_static() ? 1 : M;
    tbb::parallel_for(0, first_levels * F, [&](int col) {
        const int m0 = col / F + 1, f = col % F;
        BoundaryData g = BoundaryData::zeros(grid);
        g.values(m0, f) = 1.0;
        const FieldHistory u = solver.solve(g, m0);
        const BoundaryData fl = solver.boundary_flux(u, g, flux);
        for (int m = m0; m <= M; ++m) {
            const auto rows = fl.values.row(m).transpose();
            if (solver.is_static()) {
                for (int shift = 0; m + shift <= M; ++shift)
                    d.matrix_.block((m - 1 + shift) * F, (m0 - 1 + shift) * F + f, F, 1) = rows;
            } else {
                d.matrix_.block((m - 1) * F, (m0 - 1) * F + f, F, 1) = rows;
            }
        }
    });
    d.dense_ = true;
    return d;
}

DiscreteDtN DiscreteDtN::assemble(const InclusionFamily& q, const Material& mat, const Grid& grid,
                                  const std::vector<BoundaryData>& basis, TransmissionSolver::FluxKind flux,
                                  const SolverOptions& opts) {
    if (basis.empty()) throw PreconditionError("assemble_dtn: empty basis");
    DiscreteDtN d = matrix_free(q, mat, grid, flux, opts);
    const Eigen::Index D = d.dimension();
    Eigen::MatrixXd B(D, static_cast<Eigen::Index>(basis.size()));
    for (std::size_t j = 0; j < basis.size(); ++j) B.col(j) = flatten(basis[j]);
    const Eigen::VectorXd sv = Eigen::JacobiSVD<Eigen::MatrixXd>(B).singularValues();
    d.condition_ = sv(sv.size() - 1) > 0.0 ? std::pow(sv(0) / sv(sv.size() - 1), 2) : INFINITY;
    if (d.condition_ > 1e12)
        std::cerr << "warning: DtN basis is under-resolved (Gram condition estimate " << d.condition_ << ")\n";
    Eigen::MatrixXd cols(D, B.cols());
    tbb::parallel_for(0, static_cast<int>(basis.size()), [&](int j) {
        const FieldHistory u = d.solver_->solve(basis[j]);
        cols.col(j) = flatten(d.solver_->boundary_flux(u, basis[j], flux));
    });
    // Lambda restricted to span(B), extended by least squares: M = cols B^+.
    d.matrix_ = cols * B.completeOrthogonalDecomposition().pseudoInverse();
    d.basis_ = basis;
    d.dense_ = true;
    return d;
}

BoundaryData DiscreteDtN::apply(const BoundaryData& g) const {
    if (g.levels() != meta_.grid.steps + 1) throw PreconditionError("DtN apply: data lattice mismatch");
    Eigen::VectorXd out;
    const Eigen::VectorXd v = flatten(g);
    if (dense_) {
        out = matrix_ * v;
    } else {
        const FieldHistory u = solver_->solve(g);
        out = flatten(solver_->boundary_flux(u, g, meta_.flux));
        if (noise_eps_ > 0.0) {
            const Eigen::Index D = v.size();
            const double sigma = noise_eps_ / (2.0 * std::sqrt(static_cast<double>(D)));
            for (Eigen::Index i = 0; i < D; ++i) {
                double acc = 0.0;
                for (Eigen::Index j = 0; j < D; ++j)
                    if (v(j) != 0.0) acc += hashed_normal(noise_seed_, i, j) * v(j);
                out(i) += sigma * acc;
            }
        }
    }
    return unflatten(out);
}

DiscreteDtN DiscreteDtN::with_noise(double eps, std::uint64_t seed) const {
    if (eps < 0.0) throw ConfigError("noise level must be nonnegative");
    DiscreteDtN d = *this;
    d.noise_eps_ = noise_eps_ + eps;
    d.noise_seed_ = seed;
    if (dense_ && eps > 0.0) {
        const Eigen::Index D = matrix_.rows();
        const double sigma = eps / (2.0 * std::sqrt(static_cast<double>(D)));
        for (Eigen::Index j = 0; j < D; ++j)
            for (Eigen::Index i = 0; i < D; ++i) d.matrix_(i, j) += sigma * hashed_normal(seed, i, j);
    }
    return d;
}

double DiscreteDtN::operator_distance(const DiscreteDtN& a, const DiscreteDtN& b) {
    if (!a.dense_ || !b.dense_) throw PreconditionError("operator_distance needs assembled DtN matrices");
    if (a.matrix_.rows() != b.matrix_.rows()) throw PreconditionError("operator_distance: lattice mismatch");
    const Eigen::MatrixXd diff = a.matrix_ - b.matrix_;
    if (diff.isZero(0.0)) return 0.0;
    // Power iteration on diff^T diff.
    Eigen::VectorXd x = Eigen::VectorXd::Ones(diff.cols()).normalized();
    double sigma = 0.0;
    for (int it = 0; it < 1000; ++it) {
        Eigen::VectorXd y = diff.transpose() * (diff * x);
        const double next = std::sqrt(y.norm());
        if (next == 0.0) break;
        x = y / y.norm();
        if (std::abs(next - sigma) <= 1e-12 * next) {
            sigma = next;
            break;
        }
        sigma = next;
    }
    return sigma;
}

double boundary_pairing(const BoundaryData& flux, const BoundaryData& phi, const Grid& grid) {
    if (flux.levels() != phi.levels() || flux.faces() != phi.faces())
        throw PreconditionError("boundary_pairing: lattice mismatch");
    const double w = grid.dt * std::pow(grid.spacing, grid.dim() - 1);
    double acc = 0.0;
    for (int m = 1; m < flux.levels(); ++m) acc += flux.values.row(m).dot(phi.values.row(m - 1));
    return w * acc;
}

} // namespace parprobe
