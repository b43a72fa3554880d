#ifndef PARPROBE_GEOMETRY_HPP
#define PARPROBE_GEOMETRY_HPP

#include "parprobe/types.hpp"

#include <array>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace parprobe {

struct GeometryConfig {
    double rho0 = 0.1;
    double E = 1.0;
    double M = 100.0;
    int n = 2;
    void validate() const;
    // Chart radius rho0 * min{1/4, 1/(32 E)}.
    double chart_radius() const;
};

// Axis-aligned box [lo, hi] in R^n.
struct Box {
    Point lo, hi;
    int dim() const { return static_cast<int>(lo.size()); }
    double diameter() const { return (hi - lo).norm(); }
    bool contains(const Point& x) const;
};

// Node lattice x = origin + i * spacing, i in [0, dims).
struct Lattice {
    int n = 2;
    std::array<int, 2> dims{1, 1};
    Point origin;
    double spacing = 1.0;

    static Lattice covering(const Box& box, double spacing);
    std::size_t size() const { return static_cast<std::size_t>(dims[0]) * (n == 2 ? dims[1] : 1); }
    Point node(std::size_t idx) const;
    std::size_t index(int i, int j = 0) const { return static_cast<std::size_t>(j) * dims[0] + i; }
};

// Scalar function of (x, t): negative inside, zero on the boundary.
using LevelFn = std::function<double(const Point&, double)>;

class PointIndex; // nearest-neighbour structure over a point cloud

// Sampled closed set: member lattice nodes plus sub-grid boundary samples.
class SampledSet {
public:
    SampledSet() = default;
    // Samples {level <= 0} on the lattice; boundary points by root-finding on
    // sign-changing lattice edges (bisection on the level function).
    static SampledSet from_level(const Lattice& lat, std::function<double(const Point&)> level);
    // Samples a mask on the lattice (no level function): boundary points are
    // the midpoints of mixed edges.
    static SampledSet from_mask(const Lattice& lat, std::vector<std::uint8_t> mask);
    // Builds an explicit point cloud (member points and boundary points).
    static SampledSet from_points(int n, std::vector<Point> points, std::vector<Point> boundary,
                                  double resolution);

    int dim() const { return n_; }
    bool empty() const { return points_.empty() && boundary_.empty(); }
    double resolution() const { return resolution_; }
    const std::vector<Point>& points() const { return points_; }
    const std::vector<Point>& boundary_points() const { return boundary_; }
    const Lattice* lattice() const { return lattice_ ? &*lattice_ : nullptr; }
    const std::vector<std::uint8_t>& mask() const { return mask_; }
    bool has_level() const { return static_cast<bool>(level_); }
    double level(const Point& x) const { return level_(x); }

    bool contains(const Point& x) const;
    // dist(x, closure of A); exact zero for members.
    double distance(const Point& x) const;
    // dist(x, boundary samples).
    double boundary_distance(const Point& x) const;
    Point nearest_boundary(const Point& x) const;

    // Lattice-backed set: explicit node mask, optional level function used for
    // boundary root-finding and off-lattice membership.
    static SampledSet build(const Lattice& lat, std::vector<std::uint8_t> mask,
                            std::function<double(const Point&)> level);

private:
    void build_index();
    int n_ = 2;
    double resolution_ = 0.0;
    std::optional<Lattice> lattice_;
    std::vector<std::uint8_t> mask_;
    std::vector<Point> points_;
    std::vector<Point> boundary_;
    std::function<double(const Point&)> level_;
    std::shared_ptr<const PointIndex> all_index_;
    std::shared_ptr<const PointIndex> member_index_;
    std::shared_ptr<const PointIndex> boundary_index_;
};

double hausdorff_distance(const SampledSet& a, const SampledSet& b);
// Hausdorff distance between the boundary samples only.
double boundary_hausdorff_distance(const SampledSet& a, const SampledSet& b);

enum class MorphMode { dilate, erode, boundary_band };
// [A]_eps, (A)_eps or [boundary A]_eps, resampled on the lattice of A (extended
// by eps for dilation). An erosion that empties the set returns an empty set.
SampledSet dilate_erode(const SampledSet& a, double eps, MorphMode mode);

// Scalar coefficient c(t) = sum_i c_i t^i + sum_j A_j sin(w_j t + p_j).
struct TimeFn {
    std::vector<double> poly{0.0};
    std::vector<std::array<double, 3>> trig;
    double operator()(double t) const;
    double derivative(double t) const;
    static TimeFn constant(double c) { return TimeFn{{c}, {}}; }
    static TimeFn parse(const std::string& text);
};

// Analytic shape primitive; the inclusion is the union of its primitives.
struct Shape {
    enum class Kind { disk, ellipse, star, graph, interval };
    Kind kind = Kind::disk;
    // disk/ellipse/star: cx, cy; disk/star: r; ellipse: a, b, angle; star:
    // cos/sin harmonics; graph: coefficients of phi(x') = sum c_i x'^i (region
    // x_n > phi); interval: lo, hi.
    TimeFn cx, cy, r, a, b, angle, lo, hi;
    std::vector<std::pair<int, TimeFn>> cos_terms, sin_terms;
    std::vector<TimeFn> graph_coeffs;

    double level(const Point& x, double t) const;
    // Parametric boundary samples (count of them for closed curves).
    std::vector<Point> boundary_samples(double t, int count, const Box& window) const;
    static Shape parse(const std::string& text, int n);
    std::string describe() const;
};

// Raw space-time indicator grid (n, dims, spacing, T, steps), origin at 0.
struct RawGrid {
    int n = 2;
    std::array<int, 2> dims{1, 1};
    double spacing = 1.0;
    double T = 1.0;
    int steps = 1;
    std::vector<std::uint8_t> data; // (steps + 1) slices, row-major, x fastest
    bool at(const Point& x, double t) const;
};

RawGrid read_raw_grid(const std::string& path);
void write_raw_grid(const std::string& path, const RawGrid& grid);

// Time-varying inclusion D(t) inside the domain box.
class InclusionFamily {
public:
    InclusionFamily() = default;
    InclusionFamily(int n, Box domain, std::vector<Shape> shapes);
    static InclusionFamily from_raw(const RawGrid& grid, Box domain);
    static InclusionFamily empty(int n, Box domain);
    // Family given by a user level function (negative inside). The solver's
    // cell shortcut assumes |grad level| stays below about 2.
    static InclusionFamily from_level(int n, Box domain, LevelFn level, bool time_dependent, std::string id);

    int dim() const { return n_; }
    const Box& domain() const { return domain_; }
    const std::vector<Shape>& shapes() const { return shapes_; }
    bool is_empty() const { return shapes_.empty() && !raw_ && !custom_; }
    // Family with level function shifted by -w (a dilation for distance-like levels).
    InclusionFamily offset(double w) const;
    // True when no coefficient depends on time.
    bool is_static() const;
    std::string id() const;

    double level(const Point& x, double t) const;
    bool contains(const Point& x, double t) const { return level(x, t) <= 0.0; }
    // dist(x, closure of D(t)).
    double distance(const Point& x, double t) const;
    // Boundary samples of D(t) lying on the union boundary.
    std::vector<Point> boundary_samples(double t, double spacing) const;
    // Exterior unit normal at P (gradient of the level function).
    Point normal(const Point& p, double t) const;
    SampledSet slice(double t, double spacing) const;
    // Default sampling resolution: domain diameter / 256.
    double default_spacing() const { return domain_.diameter() / 256.0; }

private:
    int n_ = 2;
    Box domain_;
    std::vector<Shape> shapes_;
    std::shared_ptr<RawGrid> raw_;
    double offset_ = 0.0;
    LevelFn custom_;
    bool custom_static_ = true;
    std::string custom_id_;
    std::shared_ptr<struct RawSliceCache> raw_cache_;
    const SampledSet& raw_slice(double t) const;
    double base_level(const Point& x, double t) const;
};

// Checks dist(D(t), boundary of Omega) >= rho0 and connectedness of Omega \ D(t)
// on sampled times; throws DomainError naming the violated condition.
void check_family(const InclusionFamily& d, const GeometryConfig& cfg, double T, int samples = 9);

struct ModifiedDistance {
    double value = 0.0;
    Point witness;        // maximising boundary point O
    bool on_first = true; // O lies on the boundary of D1
    double hausdorff_closures = 0.0;
    double hausdorff_boundaries = 0.0;
};

// Visibility-restricted distance; G(t) is found by flood fill from the
// boundary of the domain on a lattice of the given spacing (0: default).
ModifiedDistance modified_distance(const InclusionFamily& d1, const InclusionFamily& d2, double t,
                                   double spacing = 0.0);

// sup over chart points of |phi_{P,1} - phi_{P,2}|; O1, O2 must carry level functions.
double relative_graph_gamma(const SampledSet& o1, const SampledSet& o2, const GeometryConfig& cfg);

Point boundary_normal(const InclusionFamily& d, const Point& p, double t, double tol = 0.0);

struct ProbeConfig {
    Point base_point, normal;
    double t_bar = 0.0, h = 0.0;
    double lambda1 = 0.0, lambda2 = 0.0, lambda3 = 0.0;
    double t1 = 0.0;
    Point y_bar, y1;
    double rho = 0.0, delta = 0.1, d_mu = 0.0;
    bool swapped = false; // O was found on D2; roles of D1 and D2 exchanged
    // Separation margins over [t1, t_bar] and whether each bound holds.
    double sep_ybar_d1 = 0.0, sep_y1_d1 = 0.0, sep_d2 = 0.0;
    bool separation_ok = false;
};

struct Lambdas {
    double l1 = 0.5, l2 = 0.5, l3 = 0.5;
};

ProbeConfig make_probe(const InclusionFamily& d1, const InclusionFamily& d2, double t_bar, double h,
                       const Lambdas& lambdas, const GeometryConfig& cfg, double delta = 0.1,
                       double spacing = 0.0);

// Halves delta until every h = delta * min{rho, sqrt(t_bar)} * f, f in fractions,
// passes the separation checks. Returns the admissible delta.
double find_admissible_delta(const InclusionFamily& d1, const InclusionFamily& d2, double t_bar,
                             const Lambdas& lambdas, const GeometryConfig& cfg, double delta0,
                             const std::vector<double>& fractions, double spacing = 0.0);

// Chain of ball centres along a polyline, spacing 2 rho_bar, ending at target.
std::vector<Point> chain_of_balls(const std::vector<Point>& arc, double rho_bar, const Point& target);

} // namespace parprobe

#endif
