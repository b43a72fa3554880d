#ifndef PARPROBE_SOLVER_HPP
#define PARPROBE_SOLVER_HPP

#include "parprobe/geometry.hpp"
#include "parprobe/kernels.hpp"

#include <Eigen/Core>

#include <array>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

namespace parprobe {

// Uniform cell-centred grid on a box with square cells, plus a time lattice
// t_m = t0 + m dt, m = 0..steps. The collar pads the box on every side for the
// free-space kernels (rounded up to whole cells).
struct Grid {
    Box omega;
    std::array<int, 2> cells{1, 1};
    double spacing = 0.0;
    double dt = 0.0;
    int steps = 0;
    double collar = 0.0;
    double t0 = 0.0;

    static Grid make(const Box& omega, double spacing, double T, int steps, double collar = 0.0);
    int dim() const { return omega.dim(); }
    double T() const { return t0 + dt * steps; }
    double time(int m) const { return t0 + dt * m; }
    // Level m with time(m) == t; throws PreconditionError off the lattice.
    int level_of(double t) const;
    std::size_t size() const { return static_cast<std::size_t>(cells[0]) * cells[1]; }
    std::size_t index(int i, int j = 0) const { return static_cast<std::size_t>(j) * cells[0] + i; }
    Point centre(std::size_t c) const;
    // Omega padded by the collar; same spacing, cell faces aligned with Omega's.
    Grid extended() const;
    // Cell offset of Omega inside extended().
    int collar_cells() const;
    void validate() const;
};

// A face on the outer boundary of a grid.
struct BoundaryFace {
    std::size_t cell;
    int axis;    // 0 = x, 1 = y
    int outward; // +1 or -1 along the axis
    Point centre;
};
std::vector<BoundaryFace> boundary_faces(const Grid& grid);

// Samples on the boundary lattice: rows are time levels 0..steps, columns faces.
struct BoundaryData {
    Eigen::MatrixXd values;
    static BoundaryData zeros(const Grid& grid);
    int levels() const { return static_cast<int>(values.rows()); }
    int faces() const { return static_cast<int>(values.cols()); }
};

// Field history on a grid: one vector of cell values per time level.
struct FieldHistory {
    Grid grid;
    std::vector<Eigen::VectorXd> levels;
    double at(const Point& x, int level) const; // bilinear in cell centres
};

struct SolverOptions {
    double theta = 1.0;    // 1 implicit Euler, 0.5 Crank-Nicolson
    int subsamples = 4;    // per axis, for cell volume fractions (1: centre indicator)
    double cg_tol = 1e-10; // iterative fallback tolerance
};

// Cell coefficients 1 + (k-1) * (volume fraction of D(t) in the cell).
Eigen::VectorXd cell_fractions(const InclusionFamily& q, const Grid& grid, double t, int subsamples);

// Time stepper for d_t u - div(a grad u) = 0 with Dirichlet data on the outer
// faces (half-cell flux), harmonic face averages of the cell coefficient.
class TransmissionSolver {
public:
    TransmissionSolver(Grid grid, const InclusionFamily& q, const Material& mat, SolverOptions opts = {});

    const Grid& grid() const { return grid_; }
    const SolverOptions& options() const { return opts_; }
    // Inclusion volume fraction per cell at level m.
    Eigen::VectorXd fractions(int m) const;
    // Cell coefficient at level m.
    Eigen::VectorXd coefficient(int m) const;
    // Face weights (a_f - 1)/(k - 1) on interior faces at level m, x-faces then y-faces.
    Eigen::VectorXd face_weights(int m) const;
    bool is_static() const { return static_; }

    // Forward run from u = 0 with boundary data g (levels x faces).
    FieldHistory solve(const BoundaryData& g, int first_level = 0) const;
    // Forward run of a unit-mass source injected at level `start` at point y,
    // zero Dirichlet data.
    FieldHistory propagate_source(const Point& y, int start) const;
    // Backward (transposed) run of a unit-mass source placed at level `stop`.
    FieldHistory propagate_adjoint(const Point& y, int stop) const;

    // One-sided outward derivative on boundary faces.
    enum class FluxKind { second_order, conservative };
    BoundaryData boundary_flux(const FieldHistory& u, const BoundaryData& g, FluxKind kind) const;

    // Discrete delta: tensor hat of half-width one cell, unit mass.
    Eigen::VectorXd discrete_delta(const Point& y) const;

private:
    struct Level;
    std::shared_ptr<const Level> level(int m) const;
    std::shared_ptr<const Level> build_level(Eigen::VectorXd frac, bool factor) const;
    void step(int m, const Eigen::VectorXd& prev, const Eigen::VectorXd* g_prev,
              const Eigen::VectorXd* g_cur, Eigen::VectorXd& out) const;
    void step_adjoint(int m, const Eigen::VectorXd& next, Eigen::VectorXd& out) const;

    Grid grid_;
    double k_;
    SolverOptions opts_;
    bool static_ = false;
    std::vector<BoundaryFace> faces_;
    std::shared_ptr<const InclusionFamily> family_;
    std::shared_ptr<const Level> static_level_;
};

// Convenience wrappers.
FieldHistory solve_forward(const BoundaryData& g, const InclusionFamily& q, const Material& mat,
                           const Grid& grid, const SolverOptions& opts = {});
BoundaryData boundary_flux(const FieldHistory& u, const BoundaryData& g, const InclusionFamily& q,
                           const Material& mat, const Grid& grid,
                           TransmissionSolver::FluxKind kind = TransmissionSolver::FluxKind::second_order);

// Discrete Gamma(x, t; y, s) (forward) or Gamma^*(x, t; y, s) (adjoint, backward in
// time) on grid.extended(); zero Dirichlet data on the collar edge.
FieldHistory discrete_fundamental(const Point& y, double s, const InclusionFamily& q, const Material& mat,
                                  const Grid& grid, bool adjoint = false, const SolverOptions& opts = {});

// Face averages of an extended-grid field on the faces of Omega: the boundary
// data that reproduces the field inside Omega exactly.
BoundaryData omega_trace(const FieldHistory& field, const Grid& omega_grid);
// Outward difference quotient of an extended-grid field across the faces of Omega.
BoundaryData omega_flux(const FieldHistory& field, const Grid& omega_grid);

// Discrete Lambda_Q on the boundary lattice of Omega. Coordinates are
// (level m = 1..steps, face f), level-major; level 0 is fixed by u(., 0) = 0.
class DiscreteDtN {
public:
    struct Metadata {
        Grid grid;
        double k = 2.0;
        std::string inclusion_id;
        TransmissionSolver::FluxKind flux = TransmissionSolver::FluxKind::second_order;
        SolverOptions solver;
        std::shared_ptr<const InclusionFamily> family;
    };

    // Columns from nodal unit data (dense; small grids).
    static DiscreteDtN assemble(const InclusionFamily& q, const Material& mat, const Grid& grid,
                                TransmissionSolver::FluxKind flux = TransmissionSolver::FluxKind::second_order,
                                const SolverOptions& opts = {});
    // Columns Lambda_Q b_j for a user basis; condition() reports the basis Gram
    // condition estimate.
    static DiscreteDtN assemble(const InclusionFamily& q, const Material& mat, const Grid& grid,
                                const std::vector<BoundaryData>& basis,
                                TransmissionSolver::FluxKind flux = TransmissionSolver::FluxKind::second_order,
                                const SolverOptions& opts = {});
    // Applies Lambda_Q by solving on demand (no matrix stored).
    static DiscreteDtN matrix_free(const InclusionFamily& q, const Material& mat, const Grid& grid,
                                   TransmissionSolver::FluxKind flux = TransmissionSolver::FluxKind::second_order,
                                   const SolverOptions& opts = {});

    const Metadata& metadata() const { return meta_; }
    bool is_dense() const { return dense_; }
    const Eigen::MatrixXd& matrix() const;
    double condition() const { return condition_; }
    int dimension() const; // (steps) x (faces)

    BoundaryData apply(const BoundaryData& g) const;

    // Additive white noise on the matrix entries with expected operator norm eps.
    DiscreteDtN with_noise(double eps, std::uint64_t seed) const;
    double noise_level() const { return noise_eps_; }

    // Lattice operator norm of the difference (discrete L2 on the boundary lattice).
    static double operator_distance(const DiscreteDtN& a, const DiscreteDtN& b);

    static Eigen::VectorXd flatten(const BoundaryData& g);
    BoundaryData unflatten(const Eigen::VectorXd& v) const;

private:
    Metadata meta_;
    bool dense_ = false;
    Eigen::MatrixXd matrix_;
    std::vector<BoundaryData> basis_;
    double condition_ = 1.0;
    std::shared_ptr<const TransmissionSolver> solver_;
    double noise_eps_ = 0.0;
    std::uint64_t noise_seed_ = 0;
};

// Lattice pairing sum_m dt |face| F^m_f phi^{m-1}_f: the flux at level m against
// the adjoint trace one level earlier, matching the implicit Euler adjoint.
double boundary_pairing(const BoundaryData& flux, const BoundaryData& phi, const Grid& grid);

// Reproducible standard normal from (seed, i, j).
double hashed_normal(std::uint64_t seed, std::uint64_t i, std::uint64_t j);

} // namespace parprobe

#endif
