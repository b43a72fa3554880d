#include "parprobe/geometry.hpp"

#include <boost/geometry.hpp>
#include <boost/geometry/index/rtree.hpp>

#include <algorithm>
#include <cmath>
#include <deque>
#include <fstream>
#include <limits>
#include <map>
#include <mutex>
#include <sstream>

namespace bg = boost::geometry;
namespace bgi = boost::geometry::index;

namespace parprobe {

using BPoint = bg::model::point<double, 2, bg::cs::cartesian>;

class PointIndex {
public:
    explicit PointIndex(const std::vector<Point>& pts) {
        std::vector<BPoint> v;
        v.reserve(pts.size());
        for (const auto& p : pts) v.emplace_back(p(0), p.size() > 1 ? p(1) : 0.0);
        tree_ = bgi::rtree<BPoint, bgi::quadratic<16>>(v.begin(), v.end());
    }
    double nearest(const Point& x, Point* out = nullptr) const {
        if (tree_.empty()) return std::numeric_limits<double>::infinity();
        const BPoint q(x(0), x.size() > 1 ? x(1) : 0.0);
        std::vector<BPoint> hit;
        tree_.query(bgi::nearest(q, 1), std::back_inserter(hit));
        if (out) {
            *out = x;
            (*out)(0) = bg::get<0>(hit[0]);
            if (x.size() > 1) (*out)(1) = bg::get<1>(hit[0]);
        }
        return bg::distance(q, hit[0]);
    }

private:
    bgi::rtree<BPoint, bgi::quadratic<16>> tree_;
};

// ---------------------------------------------------------------- config

void GeometryConfig::validate() const {
    if (!(rho0 > 0.0)) throw ConfigError("geometry: rho0 must be positive");
    if (!(E > 0.0)) throw ConfigError("geometry: E must be positive");
    if (!(M > 0.0)) throw ConfigError("geometry: M must be positive");
    if (n != 1 && n != 2) throw ConfigError("geometry: n must be 1 or 2");
}

double GeometryConfig::chart_radius() const { return rho0 * std::min(0.25, 1.0 / (32.0 * E)); }

bool Box::contains(const Point& x) const {
    for (int i = 0; i < dim(); ++i)
        if (x(i) < lo(i) || x(i) > hi(i)) return false;
    return true;
}

Lattice Lattice::covering(const Box& box, double spacing) {
    Lattice l;
    l.n = box.dim();
    l.origin = box.lo;
    l.spacing = spacing;
    for (int i = 0; i < l.n; ++i)
        l.dims[i] = static_cast<int>(std::ceil((box.hi(i) - box.lo(i)) / spacing - 1e-9)) + 1;
    if (l.n == 1) l.dims[1] = 1;
    return l;
}

Point Lattice::node(std::size_t idx) const {
    Point p = origin;
    p(0) += static_cast<int>(idx % dims[0]) * spacing;
    if (n == 2) p(1) += static_cast<int>(idx / dims[0]) * spacing;
    return p;
}

// ---------------------------------------------------------------- sampled sets

namespace {

Point bisect_edge(const std::function<double(const Point&)>& level, Point a, Point b) {
    const bool ina = level(a) <= 0.0;
    for (int it = 0; it < 48; ++it) {
        const Point m = 0.5 * (a + b);
        if ((level(m) <= 0.0) == ina) {
            a = m;
        } else {
            b = m;
        }
    }
    return 0.5 * (a + b);
}

template <class Fn>
void for_each_edge(const Lattice& lat, Fn&& fn) {
    for (int j = 0; j < lat.dims[1]; ++j)
        for (int i = 0; i < lat.dims[0]; ++i) {
            const std::size_t a = lat.index(i, j);
            if (i + 1 < lat.dims[0]) fn(a, lat.index(i + 1, j));
            if (lat.n == 2 && j + 1 < lat.dims[1]) fn(a, lat.index(i, j + 1));
        }
}

} // namespace

SampledSet SampledSet::build(const Lattice& lat, std::vector<std::uint8_t> mask,
                             std::function<double(const Point&)> level) {
    SampledSet s;
    s.n_ = lat.n;
    s.resolution_ = lat.spacing;
    for (std::size_t i = 0; i < mask.size(); ++i)
        if (mask[i]) s.points_.push_back(lat.node(i));
    for_each_edge(lat, [&](std::size_t a, std::size_t b) {
        if (mask[a] == mask[b]) return;
        if (level && (level(lat.node(a)) <= 0.0) != (level(lat.node(b)) <= 0.0)) {
            s.boundary_.push_back(bisect_edge(level, lat.node(a), lat.node(b)));
        } else {
            s.boundary_.push_back(0.5 * (lat.node(a) + lat.node(b)));
        }
    });
    s.lattice_ = lat;
    s.mask_ = std::move(mask);
    s.level_ = std::move(level);
    s.build_index();
    return s;
}

SampledSet SampledSet::from_level(const Lattice& lat, std::function<double(const Point&)> level) {
    std::vector<std::uint8_t> mask(lat.size());
    for (std::size_t i = 0; i < mask.size(); ++i) mask[i] = level(lat.node(i)) <= 0.0;
    return build(lat, std::move(mask), std::move(level));
}

SampledSet SampledSet::from_mask(const Lattice& lat, std::vector<std::uint8_t> mask) {
    return build(lat, std::move(mask), {});
}

SampledSet SampledSet::from_points(int n, std::vector<Point> points, std::vector<Point> boundary,
                                   double resolution) {
    if (!(resolution > 0.0)) throw DomainError("sampled set resolution must be positive");
    SampledSet s;
    s.n_ = n;
    s.points_ = std::move(points);
    s.boundary_ = std::move(boundary);
    s.resolution_ = resolution;
    s.build_index();
    return s;
}

void SampledSet::build_index() {
    std::vector<Point> all = points_;
    all.insert(all.end(), boundary_.begin(), boundary_.end());
    all_index_ = std::make_shared<PointIndex>(all);
    boundary_index_ = std::make_shared<PointIndex>(boundary_);
    member_index_ = std::make_shared<PointIndex>(points_);
}

bool SampledSet::contains(const Point& x) const {
    if (level_) return level_(x) <= 0.0;
    if (lattice_) {
        const Lattice& l = *lattice_;
        int idx[2] = {0, 0};
        for (int i = 0; i < l.n; ++i) {
            idx[i] = static_cast<int>(std::lround((x(i) - l.origin(i)) / l.spacing));
            if (idx[i] < 0 || idx[i] >= l.dims[i]) return false;
        }
        return mask_[l.index(idx[0], idx[1])] != 0;
    }
    return member_index_->nearest(x) <= 0.5 * resolution_;
}

double SampledSet::distance(const Point& x) const {
    if (empty()) throw DomainError("distance to an empty set");
    if (contains(x)) return 0.0;
    return all_index_->nearest(x);
}

double SampledSet::boundary_distance(const Point& x) const {
    if (boundary_.empty()) throw DomainError("set has no boundary samples");
    return boundary_index_->nearest(x);
}

Point SampledSet::nearest_boundary(const Point& x) const {
    if (boundary_.empty()) throw DomainError("set has no boundary samples");
    Point out;
    boundary_index_->nearest(x, &out);
    return out;
}

double hausdorff_distance(const SampledSet& a, const SampledSet& b) {
    if (a.empty() || b.empty()) throw DomainError("hausdorff_distance: empty set");
    double d = 0.0;
    auto sweep = [&](const SampledSet& from, const SampledSet& to) {
        for (const auto& p : from.points()) d = std::max(d, to.distance(p));
        for (const auto& p : from.boundary_points()) d = std::max(d, to.distance(p));
    };
    sweep(a, b);
    sweep(b, a);
    return d;
}

double boundary_hausdorff_distance(const SampledSet& a, const SampledSet& b) {
    if (a.boundary_points().empty() || b.boundary_points().empty())
        throw DomainError("boundary_hausdorff_distance: empty boundary");
    double d = 0.0;
    for (const auto& p : a.boundary_points()) d = std::max(d, b.boundary_distance(p));
    for (const auto& p : b.boundary_points()) d = std::max(d, a.boundary_distance(p));
    return d;
}

SampledSet dilate_erode(const SampledSet& a, double eps, MorphMode mode) {
    if (eps < 0.0) throw DomainError("dilate_erode: eps must be nonnegative");
    if (a.empty()) throw DomainError("dilate_erode: empty set");
    const double res = a.resolution();
    // One tolerance for all modes so that [A]_e \ (A)_e = [dA]_e node by node.
    const double e = eps * (1.0 + 1e-12) + 1e-12 * res;
    Lattice lat;
    if (a.lattice()) {
        lat = *a.lattice();
    } else {
        Point lo = a.boundary_points().empty() ? a.points().front() : a.boundary_points().front();
        Point hi = lo;
        for (const auto& p : a.points()) lo = lo.cwiseMin(p), hi = hi.cwiseMax(p);
        for (const auto& p : a.boundary_points()) lo = lo.cwiseMin(p), hi = hi.cwiseMax(p);
        lat = Lattice::covering(Box{lo, hi}, res);
    }
    const int pad = mode == MorphMode::erode ? 0 : static_cast<int>(std::ceil(eps / res)) + 2;
    for (int i = 0; i < lat.n; ++i) {
        lat.origin(i) -= pad * res;
        lat.dims[i] += 2 * pad;
    }
    auto src = std::make_shared<SampledSet>(a);
    std::function<double(const Point&)> level;
    std::function<bool(const Point&)> member;
    switch (mode) {
    case MorphMode::dilate:
        level = [src, e](const Point& x) {
            const double bd = src->boundary_distance(x);
            return src->contains(x) ? -bd - e : bd - e;
        };
        member = [src, e](const Point& x) { return src->contains(x) || src->boundary_distance(x) <= e; };
        break;
    case MorphMode::erode:
        level = [src, e](const Point& x) {
            const double bd = src->boundary_distance(x);
            return src->contains(x) ? e - bd : bd + e;
        };
        member = [src, e](const Point& x) { return src->contains(x) && src->boundary_distance(x) > e; };
        break;
    case MorphMode::boundary_band:
        level = [src, e](const Point& x) { return src->boundary_distance(x) - e; };
        member = [src, e](const Point& x) { return src->boundary_distance(x) <= e; };
        break;
    }
    std::vector<std::uint8_t> mask(lat.size());
    bool any = false;
    for (std::size_t i = 0; i < mask.size(); ++i) {
        mask[i] = member(lat.node(i));
        any = any || mask[i];
    }
    if (!any) {
        SampledSet empty;
        return empty;
    }
    // Membership off the lattice follows the level function; boundary samples
    // come from bisection on it.
    return SampledSet::build(lat, std::move(mask), std::move(level));
}

// ---------------------------------------------------------------- time functions, shapes

double TimeFn::operator()(double t) const {
    double v = 0.0, tp = 1.0;
    for (double c : poly) {
        v += c * tp;
        tp *= t;
    }
    for (const auto& tr : trig) v += tr[0] * std::sin(tr[1] * t + tr[2]);
    return v;
}

double TimeFn::derivative(double t) const {
    double v = 0.0, tp = 1.0;
    for (std::size_t i = 1; i < poly.size(); ++i) {
        v += static_cast<double>(i) * poly[i] * tp;
        tp *= t;
    }
    for (const auto& tr : trig) v += tr[0] * tr[1] * std::cos(tr[1] * t + tr[2]);
    return v;
}

namespace {

std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::string cur;
    std::istringstream is(s);
    while (std::getline(is, cur, sep))
        if (!cur.empty()) out.push_back(cur);
    return out;
}

double to_double(const std::string& s, const std::string& ctx) {
    try {
        std::size_t pos = 0;
        const double v = std::stod(s, &pos);
        if (pos != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw ConfigError("cannot parse number '" + s + "' in " + ctx);
    }
}

} // namespace

TimeFn TimeFn::parse(const std::string& text) {
    TimeFn f;
    f.poly.clear();
    for (const auto& part : split(text, ';')) {
        if (part.rfind("sin:", 0) == 0) {
            const auto v = split(part.substr(4), ',');
            if (v.size() != 3) throw ConfigError("sin term needs amplitude,omega,phase: " + part);
            f.trig.push_back({to_double(v[0], text), to_double(v[1], text), to_double(v[2], text)});
        } else {
            for (const auto& c : split(part, ',')) f.poly.push_back(to_double(c, text));
        }
    }
    if (f.poly.empty()) f.poly.push_back(0.0);
    return f;
}

double Shape::level(const Point& x, double t) const {
    switch (kind) {
    case Kind::disk: {
        const Point c = make_point(cx(t), cy(t));
        return (x - c).norm() - r(t);
    }
    case Kind::ellipse: {
        const double th = angle(t), ca = std::cos(th), sa = std::sin(th);
        const double dx = x(0) - cx(t), dy = x(1) - cy(t);
        const double u = ca * dx + sa * dy, v = -sa * dx + ca * dy;
        const double A = a(t), B = b(t);
        return (std::sqrt(u * u / (A * A) + v * v / (B * B)) - 1.0) * std::min(A, B);
    }
    case Kind::star: {
        const double dx = x(0) - cx(t), dy = x(1) - cy(t);
        const double th = std::atan2(dy, dx);
        double rr = 1.0;
        for (const auto& [m, c] : cos_terms) rr += c(t) * std::cos(m * th);
        for (const auto& [m, c] : sin_terms) rr += c(t) * std::sin(m * th);
        return std::hypot(dx, dy) - r(t) * rr;
    }
    case Kind::graph: {
        const double xp = x.size() == 2 ? x(0) : 0.0;
        double phi = 0.0, pw = 1.0;
        for (const auto& c : graph_coeffs) {
            phi += c(t) * pw;
            pw *= xp;
        }
        return phi - x(x.size() - 1);
    }
    case Kind::interval:
        return std::max(lo(t) - x(0), x(0) - hi(t));
    }
    return 1.0;
}

std::vector<Point> Shape::boundary_samples(double t, int count, const Box& window) const {
    std::vector<Point> out;
    switch (kind) {
    case Kind::disk:
    case Kind::ellipse:
    case Kind::star:
        for (int i = 0; i < count; ++i) {
            const double th = 2.0 * kPi * i / count;
            if (kind == Kind::disk) {
                out.push_back(make_point(cx(t) + r(t) * std::cos(th), cy(t) + r(t) * std::sin(th)));
            } else if (kind == Kind::ellipse) {
                const double u = a(t) * std::cos(th), v = b(t) * std::sin(th);
                const double ang = angle(t), ca = std::cos(ang), sa = std::sin(ang);
                out.push_back(make_point(cx(t) + ca * u - sa * v, cy(t) + sa * u + ca * v));
            } else {
                double rr = 1.0;
                for (const auto& [m, c] : cos_terms) rr += c(t) * std::cos(m * th);
                for (const auto& [m, c] : sin_terms) rr += c(t) * std::sin(m * th);
                out.push_back(make_point(cx(t) + r(t) * rr * std::cos(th), cy(t) + r(t) * rr * std::sin(th)));
            }
        }
        break;
    case Kind::graph:
        if (window.dim() == 1) {
            out.push_back(make_point(graph_coeffs.empty() ? 0.0 : graph_coeffs[0](t)));
        } else {
            for (int i = 0; i < count; ++i) {
                const double xp = window.lo(0) + (window.hi(0) - window.lo(0)) * i / (count - 1);
                double phi = 0.0, pw = 1.0;
                for (const auto& c : graph_coeffs) {
                    phi += c(t) * pw;
                    pw *= xp;
                }
                out.push_back(make_point(xp, phi));
            }
        }
        break;
    case Kind::interval:
        out.push_back(make_point(lo(t)));
        out.push_back(make_point(hi(t)));
        break;
    }
    return out;
}

Shape Shape::parse(const std::string& text, int n) {
    const auto tokens = split(text, ' ');
    if (tokens.empty()) throw ConfigError("empty shape description");
    Shape s;
    const std::string& kind = tokens[0];
    if (kind == "disk") s.kind = Kind::disk;
    else if (kind == "ellipse") s.kind = Kind::ellipse;
    else if (kind == "star") s.kind = Kind::star;
    else if (kind == "graph") s.kind = Kind::graph;
    else if (kind == "interval") s.kind = Kind::interval;
    else throw ConfigError("unknown shape kind '" + kind + "'");
    if ((s.kind == Kind::interval) != (n == 1) && s.kind != Kind::graph)
        throw ConfigError("shape '" + kind + "' does not match dimension " + std::to_string(n));
    bool have_r = false, have_lo = false, have_hi = false, have_a = false, have_b = false;
    for (std::size_t i = 1; i < tokens.size(); ++i) {
        const auto eq = tokens[i].find('=');
        if (eq == std::string::npos) throw ConfigError("shape token without '=': " + tokens[i]);
        const std::string key = tokens[i].substr(0, eq);
        const TimeFn val = TimeFn::parse(tokens[i].substr(eq + 1));
        if (key == "cx") s.cx = val;
        else if (key == "cy") s.cy = val;
        else if (key == "r") s.r = val, have_r = true;
        else if (key == "a") s.a = val, have_a = true;
        else if (key == "b") s.b = val, have_b = true;
        else if (key == "angle") s.angle = val;
        else if (key == "lo") s.lo = val, have_lo = true;
        else if (key == "hi") s.hi = val, have_hi = true;
        else if (key.size() > 1 && key[0] == 'c' && std::isdigit(static_cast<unsigned char>(key[1])))
            s.cos_terms.emplace_back(std::stoi(key.substr(1)), val);
        else if (key.size() > 1 && key[0] == 's' && std::isdigit(static_cast<unsigned char>(key[1])))
            s.sin_terms.emplace_back(std::stoi(key.substr(1)), val);
        else if (key.size() > 1 && key[0] == 'g' && std::isdigit(static_cast<unsigned char>(key[1]))) {
            const std::size_t d = std::stoul(key.substr(1));
            if (s.graph_coeffs.size() <= d) s.graph_coeffs.resize(d + 1, TimeFn::constant(0.0));
            s.graph_coeffs[d] = val;
        } else throw ConfigError("unknown shape key '" + key + "' for " + kind);
    }
    if ((s.kind == Kind::disk || s.kind == Kind::star) && !have_r)
        throw ConfigError(kind + " needs r=");
    if (s.kind == Kind::ellipse && !(have_a && have_b)) throw ConfigError("ellipse needs a= and b=");
    if (s.kind == Kind::interval && !(have_lo && have_hi)) throw ConfigError("interval needs lo= and hi=");
    return s;
}

std::string Shape::describe() const {
    std::ostringstream os;
    os.precision(17);
    auto fn = [&](const char* name, const TimeFn& f) {
        os << ' ' << name << '=';
        for (std::size_t i = 0; i < f.poly.size(); ++i) os << (i ? "," : "") << f.poly[i];
        for (const auto& tr : f.trig) os << ";sin:" << tr[0] << ',' << tr[1] << ',' << tr[2];
    };
    switch (kind) {
    case Kind::disk: os << "disk"; fn("cx", cx); fn("cy", cy); fn("r", r); break;
    case Kind::ellipse: os << "ellipse"; fn("cx", cx); fn("cy", cy); fn("a", a); fn("b", b); fn("angle", angle); break;
    case Kind::star:
        os << "star"; fn("cx", cx); fn("cy", cy); fn("r", r);
        for (const auto& [m, c] : cos_terms) fn(("c" + std::to_string(m)).c_str(), c);
        for (const auto& [m, c] : sin_terms) fn(("s" + std::to_string(m)).c_str(), c);
        break;
    case Kind::graph:
        os << "graph";
        for (std::size_t i = 0; i < graph_coeffs.size(); ++i) fn(("g" + std::to_string(i)).c_str(), graph_coeffs[i]);
        break;
    case Kind::interval: os << "interval"; fn("lo", lo); fn("hi", hi); break;
    }
    return os.str();
}

// ---------------------------------------------------------------- raw grids

bool RawGrid::at(const Point& x, double t) const {
    int idx[2] = {0, 0};
    for (int i = 0; i < n; ++i) {
        idx[i] = static_cast<int>(std::floor(x(i) / spacing));
        if (idx[i] < 0 || idx[i] >= dims[i]) return false;
    }
    const int slice = std::clamp(static_cast<int>(std::lround(t / T * steps)), 0, steps);
    const std::size_t per = static_cast<std::size_t>(dims[0]) * (n == 2 ? dims[1] : 1);
    return data[slice * per + static_cast<std::size_t>(idx[1]) * dims[0] + idx[0]] != 0;
}

RawGrid read_raw_grid(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open raw grid file " + path);
    std::string magic;
    RawGrid g;
    in >> magic >> g.n;
    if (magic != "PPRAW" || (g.n != 1 && g.n != 2)) throw ConfigError("bad raw grid header in " + path);
    in >> g.dims[0];
    if (g.n == 2) in >> g.dims[1];
    in >> g.spacing >> g.T >> g.steps;
    if (!in || g.spacing <= 0.0 || g.T <= 0.0 || g.steps < 0 || g.dims[0] <= 0 || g.dims[1] <= 0)
        throw ConfigError("bad raw grid header in " + path);
    in.get(); // newline
    const std::size_t per = static_cast<std::size_t>(g.dims[0]) * (g.n == 2 ? g.dims[1] : 1);
    g.data.resize(per * (g.steps + 1));
    in.read(reinterpret_cast<char*>(g.data.data()), static_cast<std::streamsize>(g.data.size()));
    if (!in) throw ConfigError("raw grid file " + path + " is truncated");
    return g;
}

void write_raw_grid(const std::string& path, const RawGrid& g) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConfigError("cannot write raw grid file " + path);
    out.precision(17);
    out << "PPRAW " << g.n << ' ' << g.dims[0];
    if (g.n == 2) out << ' ' << g.dims[1];
    out << ' ' << g.spacing << ' ' << g.T << ' ' << g.steps << '\n';
    out.write(reinterpret_cast<const char*>(g.data.data()), static_cast<std::streamsize>(g.data.size()));
}

// ---------------------------------------------------------------- inclusion families

InclusionFamily::InclusionFamily(int n, Box domain, std::vector<Shape> shapes)
    : n_(n), domain_(std::move(domain)), shapes_(std::move(shapes)) {
    if (domain_.dim() != n) throw DomainError("inclusion family: domain dimension mismatch");
}

struct RawSliceCache {
    std::mutex lock;
    std::map<int, std::shared_ptr<SampledSet>> slices;
};

InclusionFamily InclusionFamily::from_raw(const RawGrid& grid, Box domain) {
    InclusionFamily f(grid.n, std::move(domain), {});
    f.raw_ = std::make_shared<RawGrid>(grid);
    f.raw_cache_ = std::make_shared<RawSliceCache>();
    return f;
}

const SampledSet& InclusionFamily::raw_slice(double t) const {
    const int idx = std::clamp(static_cast<int>(std::lround(t / raw_->T * raw_->steps)), 0, raw_->steps);
    std::lock_guard<std::mutex> guard(raw_cache_->lock);
    auto& slot = raw_cache_->slices[idx];
    if (!slot) {
        // Cell-centred samples of the stored indicator.
        Lattice lat;
        lat.n = raw_->n;
        lat.dims = raw_->dims;
        lat.spacing = raw_->spacing;
        lat.origin = Point::Constant(raw_->n, 0.5 * raw_->spacing);
        std::vector<std::uint8_t> mask(lat.size());
        for (std::size_t i = 0; i < mask.size(); ++i) mask[i] = raw_->at(lat.node(i), t);
        slot = std::make_shared<SampledSet>(SampledSet::from_mask(lat, std::move(mask)));
    }
    return *slot;
}

InclusionFamily InclusionFamily::empty(int n, Box domain) { return InclusionFamily(n, std::move(domain), {}); }

InclusionFamily InclusionFamily::from_level(int n, Box domain, LevelFn level, bool time_dependent, std::string id) {
    if (!level) throw DomainError("inclusion family: empty level function");
    InclusionFamily f(n, std::move(domain), {});
    f.custom_ = std::move(level);
    f.custom_static_ = !time_dependent;
    f.custom_id_ = std::move(id);
    return f;
}

bool InclusionFamily::is_static() const {
    if (custom_) return custom_static_;
    if (raw_) {
        const std::size_t per = raw_->data.size() / (raw_->steps + 1);
        for (int m = 1; m <= raw_->steps; ++m)
            if (!std::equal(raw_->data.begin(), raw_->data.begin() + per, raw_->data.begin() + m * per))
                return false;
        return true;
    }
    auto fixed = [](const TimeFn& f) {
        return f.trig.empty() && std::all_of(f.poly.begin() + 1, f.poly.end(), [](double c) { return c == 0.0; });
    };
    for (const auto& s : shapes_) {
        for (const TimeFn* f : {&s.cx, &s.cy, &s.r, &s.a, &s.b, &s.angle, &s.lo, &s.hi})
            if (!fixed(*f)) return false;
        for (const auto& [m, f] : s.cos_terms)
            if (!fixed(f)) return false;
        for (const auto& [m, f] : s.sin_terms)
            if (!fixed(f)) return false;
        for (const auto& f : s.graph_coeffs)
            if (!fixed(f)) return false;
    }
    return true;
}

std::string InclusionFamily::id() const {
    std::string s;
    if (raw_) {
        s = "raw";
    } else if (custom_) {
        s = custom_id_.empty() ? "level" : custom_id_;
    } else if (shapes_.empty()) {
        return "empty";
    } else {
        for (const auto& sh : shapes_) s += (s.empty() ? "" : " + ") + sh.describe();
    }
    if (offset_ != 0.0) {
        std::ostringstream os;
        os.precision(17);
        os << " offset " << offset_;
        s += os.str();
    }
    return s;
}

InclusionFamily InclusionFamily::offset(double w) const {
    InclusionFamily f = *this;
    f.offset_ += w;
    return f;
}

double InclusionFamily::level(const Point& x, double t) const { return base_level(x, t) - offset_; }

double InclusionFamily::base_level(const Point& x, double t) const {
    if (custom_) return custom_(x, t);
    if (raw_) {
        const SampledSet& s = raw_slice(t);
        const double bd = s.boundary_points().empty() ? domain_.diameter() : s.boundary_distance(x);
        return raw_->at(x, t) ? -bd : bd;
    }
    double v = std::numeric_limits<double>::infinity();
    for (const auto& s : shapes_) v = std::min(v, s.level(x, t));
    return v;
}

std::vector<Point> InclusionFamily::boundary_samples(double t, double spacing) const {
    if (raw_ && offset_ == 0.0) return raw_slice(t).boundary_points();
    if (offset_ != 0.0 || custom_) return slice(t, spacing).boundary_points();
    std::vector<Point> out;
    const double diam = domain_.diameter();
    for (std::size_t i = 0; i < shapes_.size(); ++i) {
        const auto& s = shapes_[i];
        int count = 2;
        if (n_ == 2) {
            double extent = diam;
            if (s.kind == Shape::Kind::disk || s.kind == Shape::Kind::star) extent = 2.0 * kPi * std::abs(s.r(t)) * 1.5;
            if (s.kind == Shape::Kind::ellipse) extent = 2.0 * kPi * std::max(s.a(t), s.b(t));
            count = std::max(64, static_cast<int>(std::ceil(extent / spacing)));
        }
        for (const auto& p : s.boundary_samples(t, count, domain_)) {
            bool covered = false;
            for (std::size_t j = 0; j < shapes_.size() && !covered; ++j)
                if (j != i && shapes_[j].level(p, t) < -1e-12) covered = true;
            if (!covered) out.push_back(p);
        }
    }
    return out;
}

double InclusionFamily::distance(const Point& x, double t) const {
    if (is_empty()) return std::numeric_limits<double>::infinity();
    if (contains(x, t)) return 0.0;
    if (offset_ > 0.0) {
        InclusionFamily base = *this;
        base.offset_ = 0.0;
        return std::max(0.0, base.distance(x, t) - offset_);
    }
    if (offset_ < 0.0 || custom_) return slice(t, default_spacing()).distance(x);
    if (raw_) return raw_slice(t).distance(x);
    double d = std::numeric_limits<double>::infinity();
    for (const auto& s : shapes_) {
        if (s.kind == Shape::Kind::disk) {
            d = std::min(d, std::max(0.0, s.level(x, t)));
        } else if (s.kind == Shape::Kind::interval) {
            d = std::min(d, std::max(0.0, s.level(x, t)));
        } else {
            for (const auto& p : s.boundary_samples(t, 4096, domain_)) d = std::min(d, (x - p).norm());
        }
    }
    return d;
}

Point InclusionFamily::normal(const Point& p, double t) const {
    const double h = 1e-6 * std::max(1.0, domain_.diameter()) * (raw_ ? 1e4 * raw_->spacing : 1.0);
    Point g(n_);
    for (int i = 0; i < n_; ++i) {
        Point a = p, b = p;
        a(i) += h;
        b(i) -= h;
        g(i) = (level(a, t) - level(b, t)) / (2.0 * h);
    }
    const double nn = g.norm();
    if (!(nn > 0.0)) throw DomainError("normal: degenerate level gradient");
    return g / nn;
}

SampledSet InclusionFamily::slice(double t, double spacing) const {
    Lattice lat = Lattice::covering(domain_, spacing);
    if (raw_) {
        std::vector<std::uint8_t> mask(lat.size());
        for (std::size_t i = 0; i < mask.size(); ++i) mask[i] = raw_->at(lat.node(i), t);
        return SampledSet::from_mask(lat, std::move(mask));
    }
    auto self = std::make_shared<InclusionFamily>(*this);
    return SampledSet::from_level(lat, [self, t](const Point& x) { return self->level(x, t); });
}

namespace {

// Flood fill of unblocked lattice nodes starting from the lattice boundary.
std::vector<std::uint8_t> flood_from_boundary(const Lattice& lat, const std::vector<std::uint8_t>& blocked) {
    std::vector<std::uint8_t> reached(lat.size(), 0);
    std::deque<std::size_t> queue;
    auto push = [&](std::size_t i) {
        if (!blocked[i] && !reached[i]) {
            reached[i] = 1;
            queue.push_back(i);
        }
    };
    const int nx = lat.dims[0], ny = lat.dims[1];
    for (int j = 0; j < ny; ++j)
        for (int i = 0; i < nx; ++i)
            if (i == 0 || i == nx - 1 || (lat.n == 2 && (j == 0 || j == ny - 1))) push(lat.index(i, j));
    while (!queue.empty()) {
        const std::size_t c = queue.front();
        queue.pop_front();
        const int i = static_cast<int>(c % nx), j = static_cast<int>(c / nx);
        if (i > 0) push(lat.index(i - 1, j));
        if (i + 1 < nx) push(lat.index(i + 1, j));
        if (lat.n == 2 && j > 0) push(lat.index(i, j - 1));
        if (lat.n == 2 && j + 1 < ny) push(lat.index(i, j + 1));
    }
    return reached;
}

void check_connected(const InclusionFamily& d, double t, const Lattice& lat) {
    std::vector<std::uint8_t> blocked(lat.size());
    for (std::size_t i = 0; i < blocked.size(); ++i) blocked[i] = d.contains(lat.node(i), t);
    const auto reached = flood_from_boundary(lat, blocked);
    for (std::size_t i = 0; i < blocked.size(); ++i)
        if (!blocked[i] && !reached[i]) {
            std::ostringstream os;
            os << "violation of exterior connectedness (q3): Omega \\ D(" << t
               << ") is disconnected near (" << lat.node(i).transpose() << ")";
            throw DomainError(os.str());
        }
}

} // namespace

void check_family(const InclusionFamily& d, const GeometryConfig& cfg, double T, int samples) {
    cfg.validate();
    if (d.is_empty()) return;
    const double sp = d.default_spacing();
    const Lattice lat = Lattice::covering(d.domain(), sp);
    for (int s = 0; s < samples; ++s) {
        const double t = samples > 1 ? T * s / (samples - 1) : 0.0;
        const auto bnd = d.boundary_samples(t, sp);
        if (bnd.empty()) throw DomainError("inclusion slice is empty at t=" + std::to_string(t));
        double margin = std::numeric_limits<double>::infinity();
        for (const auto& p : bnd)
            for (int i = 0; i < d.dim(); ++i)
                margin = std::min({margin, p(i) - d.domain().lo(i), d.domain().hi(i) - p(i)});
        if (margin < cfg.rho0 - sp) {
            throw DomainError("violation of dist(D(t), boundary) >= rho0 (q2) at t=" + std::to_string(t) +
                              ": margin " + std::to_string(margin));
        }
        check_connected(d, t, lat);
    }
}

ModifiedDistance modified_distance(const InclusionFamily& d1, const InclusionFamily& d2, double t,
                                   double spacing) {
    if (d1.is_empty() || d2.is_empty()) throw DomainError("modified_distance: empty slice");
    const double sp = spacing > 0.0 ? spacing : d1.default_spacing();
    const Lattice lat = Lattice::covering(d1.domain(), sp);
    check_connected(d1, t, lat);
    check_connected(d2, t, lat);
    std::vector<std::uint8_t> blocked(lat.size());
    for (std::size_t i = 0; i < blocked.size(); ++i)
        blocked[i] = d1.contains(lat.node(i), t) || d2.contains(lat.node(i), t);
    const auto g = flood_from_boundary(lat, blocked);

    auto visible = [&](const Point& x) {
        int base[2] = {0, 0};
        for (int i = 0; i < lat.n; ++i)
            base[i] = static_cast<int>(std::floor((x(i) - lat.origin(i)) / sp));
        for (int dj = 0; dj <= (lat.n == 2 ? 1 : 0); ++dj)
            for (int di = 0; di <= 1; ++di) {
                const int i = base[0] + di, j = base[1] + dj;
                if (i < 0 || i >= lat.dims[0] || j < 0 || j >= lat.dims[1]) continue;
                if (g[lat.index(i, j)]) return true;
            }
        return false;
    };

    // The sup of dist(., other closure) over a closure is attained on its
    // boundary, so one pass over the boundary samples gives both d_mu
    // (visible samples only) and the Hausdorff distance of the closures.
    ModifiedDistance out;
    bool found = false;
    const auto b1 = d1.boundary_samples(t, 0.25 * sp), b2 = d2.boundary_samples(t, 0.25 * sp);
    // Outside a set, the distance to its closure is the distance to its boundary.
    const SampledSet c1 = SampledSet::from_points(lat.n, {}, d1.boundary_samples(t, 0.05 * sp), 0.05 * sp);
    const SampledSet c2 = SampledSet::from_points(lat.n, {}, d2.boundary_samples(t, 0.05 * sp), 0.05 * sp);
    auto scan = [&](const std::vector<Point>& from, const InclusionFamily& to, const SampledSet& to_curve, bool first) {
        for (const auto& x : from) {
            const double db = to_curve.boundary_distance(x);
            const double d = to.contains(x, t) ? 0.0 : db;
            out.hausdorff_closures = std::max(out.hausdorff_closures, d);
            out.hausdorff_boundaries = std::max(out.hausdorff_boundaries, db);
            if (!visible(x)) continue;
            bool better = !found || d > out.value + 1e-14;
            if (found && std::abs(d - out.value) <= 1e-14) {
                better = std::lexicographical_compare(x.data(), x.data() + x.size(), out.witness.data(),
                                                      out.witness.data() + out.witness.size());
            }
            if (better) {
                out.value = d;
                out.witness = x;
                out.on_first = first;
                found = true;
            }
        }
    };
    scan(b1, d2, c2, true);
    scan(b2, d1, c1, false);
    if (!found) throw DomainError("modified_distance: no boundary point is visible from the outer boundary");
    return out;
}

double relative_graph_gamma(const SampledSet& o1, const SampledSet& o2, const GeometryConfig& cfg) {
    cfg.validate();
    if (!o1.has_level() || !o2.has_level())
        throw DomainError("relative_graph_gamma: both sets need level functions for chart construction");
    if (o1.boundary_points().empty() || o2.boundary_points().empty())
        throw DomainError("relative_graph_gamma: empty boundary");
    if (o1.dim() == 1) {
        double g = 0.0;
        for (const auto& p : o1.boundary_points()) g = std::max(g, o2.boundary_distance(p));
        return g;
    }
    const double r0 = cfg.chart_radius();
    const double reach = r0 + 2.0 * boundary_hausdorff_distance(o1, o2) + 2.0 * o1.resolution();
    const auto& bnd = o1.boundary_points();
    const std::size_t stride = std::max<std::size_t>(1, bnd.size() / 512);
    auto grad = [](const SampledSet& s, const Point& p) {
        const double h = 1e-7;
        Point g(2);
        g(0) = (s.level(p + make_point(h, 0)) - s.level(p - make_point(h, 0))) / (2 * h);
        g(1) = (s.level(p + make_point(0, h)) - s.level(p - make_point(0, h))) / (2 * h);
        return Point(g / g.norm());
    };
    auto graph_value = [&](const SampledSet& s, const Point& base, const Point& nu) {
        constexpr int samples = 96;
        int roots = 0;
        double z_root = 0.0;
        double prev_z = -reach, prev = s.level(base - reach * nu);
        for (int i = 1; i <= samples; ++i) {
            const double z = -reach + 2.0 * reach * i / samples;
            const double v = s.level(base + z * nu);
            if ((v <= 0.0) != (prev <= 0.0)) {
                ++roots;
                double a = prev_z, b = z;
                for (int it = 0; it < 60; ++it) {
                    const double m = 0.5 * (a + b);
                    if ((s.level(base + m * nu) <= 0.0) == (prev <= 0.0)) a = m;
                    else b = m;
                }
                z_root = 0.5 * (a + b);
            }
            prev_z = z;
            prev = v;
        }
        return std::pair<int, double>{roots, z_root};
    };
    double gamma = 0.0;
    for (std::size_t i = 0; i < bnd.size(); i += stride) {
        const Point p = bnd[i];
        const Point nu = grad(o1, p);
        const Point tau = make_point(-nu(1), nu(0));
        for (int k = -16; k <= 16; ++k) {
            const double s = r0 * k / 16.0;
            const Point base = p + s * tau;
            const auto [c1, z1] = graph_value(o1, base, nu);
            const auto [c2, z2] = graph_value(o2, base, nu);
            if (c1 != 1 || c2 != 1) {
                std::ostringstream os;
                os << "relative_graph_gamma: chart construction failed at P=(" << p.transpose()
                   << "), offset " << s << " (boundary is not a graph at radius " << r0 << ")";
                throw DomainError(os.str());
            }
            gamma = std::max(gamma, std::abs(z1 - z2));
        }
    }
    return gamma;
}

Point boundary_normal(const InclusionFamily& d, const Point& p, double t, double tol) {
    const double tl = tol > 0.0 ? tol : d.default_spacing();
    if (std::abs(d.level(p, t)) > tl) {
        std::ostringstream os;
        os << "boundary_normal: point (" << p.transpose() << ") is not on the boundary at t=" << t;
        throw DomainError(os.str());
    }
    return d.normal(p, t);
}

// ---------------------------------------------------------------- probes

ProbeConfig make_probe(const InclusionFamily& d1_in, const InclusionFamily& d2_in, double t_bar, double h,
                       const Lambdas& lam, const GeometryConfig& cfg, double delta, double spacing) {
    cfg.validate();
    for (double l : {lam.l1, lam.l2, lam.l3})
        if (!(l > 0.0 && l <= 1.0)) throw PreconditionError("make_probe: lambdas must lie in (0, 1]");
    if (!(t_bar > 0.0)) throw PreconditionError("make_probe: t_bar must be positive");
    const ModifiedDistance md = modified_distance(d1_in, d2_in, t_bar, spacing);
    const InclusionFamily& d1 = md.on_first ? d1_in : d2_in;
    const InclusionFamily& d2 = md.on_first ? d2_in : d1_in;
    ProbeConfig p;
    p.swapped = !md.on_first;
    p.d_mu = md.value;
    p.base_point = md.witness;
    p.normal = d1.normal(md.witness, t_bar);
    p.t_bar = t_bar;
    p.h = h;
    p.lambda1 = lam.l1;
    p.lambda2 = lam.l2;
    p.lambda3 = lam.l3;
    p.rho = std::min(md.value, cfg.rho0);
    p.delta = delta;
    const double bound = delta * std::min(p.rho, std::sqrt(t_bar));
    if (!(h > 0.0) || h > bound) {
        std::ostringstream os;
        os.precision(17);
        os << "make_probe: h = " << h << " violates 0 < h <= delta*min{rho, sqrt(t_bar)} = " << bound;
        throw PreconditionError(os.str());
    }
    p.t1 = t_bar - lam.l2 * h * h;
    p.y_bar = p.base_point + lam.l1 * h * p.normal;
    p.y1 = p.base_point + lam.l3 * h * p.normal;
    const double lmin = std::min({lam.l1, lam.l2, lam.l3});
    p.sep_ybar_d1 = p.sep_y1_d1 = p.sep_d2 = std::numeric_limits<double>::infinity();
    constexpr int samples = 33;
    for (int i = 0; i < samples; ++i) {
        const double t = p.t1 + (t_bar - p.t1) * i / (samples - 1);
        p.sep_ybar_d1 = std::min(p.sep_ybar_d1, d1.distance(p.y_bar, t));
        p.sep_y1_d1 = std::min(p.sep_y1_d1, d1.distance(p.y1, t));
        p.sep_d2 = std::min({p.sep_d2, d2.distance(p.y_bar, t), d2.distance(p.y1, t)});
    }
    p.separation_ok = p.sep_ybar_d1 >= 0.5 * lmin * h && p.sep_y1_d1 >= 0.5 * lmin * h &&
                      p.sep_d2 >= 0.5 * p.rho;
    return p;
}

double find_admissible_delta(const InclusionFamily& d1, const InclusionFamily& d2, double t_bar,
                             const Lambdas& lambdas, const GeometryConfig& cfg, double delta0,
                             const std::vector<double>& fractions, double spacing) {
    const ModifiedDistance md = modified_distance(d1, d2, t_bar, spacing);
    const double rho = std::min(md.value, cfg.rho0);
    double delta = delta0;
    for (int attempt = 0; attempt < 30; ++attempt, delta *= 0.5) {
        bool ok = true;
        for (double f : fractions) {
            const double h = delta * std::min(rho, std::sqrt(t_bar)) * f;
            if (!make_probe(d1, d2, t_bar, h, lambdas, cfg, delta, spacing).separation_ok) {
                ok = false;
                break;
            }
        }
        if (ok) return delta;
    }
    throw PreconditionError("find_admissible_delta: separation checks fail for every delta tried");
}

std::vector<Point> chain_of_balls(const std::vector<Point>& arc, double rho_bar, const Point& target) {
    if (arc.size() < 2) throw DomainError("chain_of_balls: arc needs at least two vertices");
    if (!(rho_bar > 0.0)) throw DomainError("chain_of_balls: rho_bar must be positive");
    const int n = static_cast<int>(arc.front().size());
    // Reject self-intersecting polylines (non-adjacent segments that meet).
    if (n == 2) {
        auto cross = [](const Point& a, const Point& b, const Point& c) {
            return (b(0) - a(0)) * (c(1) - a(1)) - (b(1) - a(1)) * (c(0) - a(0));
        };
        for (std::size_t i = 0; i + 1 < arc.size(); ++i)
            for (std::size_t j = i + 2; j + 1 < arc.size(); ++j) {
                if (i == 0 && j + 2 == arc.size() && (arc.front() - arc.back()).norm() == 0.0) continue;
                const Point &a = arc[i], &b = arc[i + 1], &c = arc[j], &d = arc[j + 1];
                const double d1 = cross(c, d, a), d2 = cross(c, d, b), d3 = cross(a, b, c), d4 = cross(a, b, d);
                if (((d1 > 0) != (d2 > 0)) && ((d3 > 0) != (d4 > 0)) && d1 != 0 && d2 != 0 && d3 != 0 && d4 != 0)
                    throw DomainError("chain_of_balls: arc is self-intersecting");
            }
    }
    const double step = 2.0 * rho_bar;
    std::vector<Point> centres{arc.front()};
    // Position along the arc of the current centre (segment index, parameter).
    std::size_t seg = 0;
    double par = 0.0;
    while ((centres.back() - target).norm() > step * (1.0 + 1e-12)) {
        const Point x = centres.back();
        bool hit = false;
        // Last parameter on the arc at distance exactly `step` from x.
        for (std::size_t s = arc.size() - 1; s-- > seg && !hit;) {
            const Point a = arc[s], d = arc[s + 1] - arc[s];
            const double A = d.squaredNorm(), B = 2.0 * d.dot(a - x), C = (a - x).squaredNorm() - step * step;
            const double disc = B * B - 4.0 * A * C;
            if (A == 0.0 || disc < 0.0) continue;
            const double u = (-B + std::sqrt(disc)) / (2.0 * A);
            const double lo = s == seg ? par : 0.0;
            if (u >= lo - 1e-15 && u <= 1.0 + 1e-15) {
                const Point next = a + std::clamp(u, 0.0, 1.0) * d;
                centres.push_back(x + (next - x) * (step / (next - x).norm()));
                seg = s;
                par = std::clamp(u, 0.0, 1.0);
                hit = true;
            }
        }
        if (!hit) break;
    }
    if ((centres.back() - target).norm() > 0.0) centres.push_back(target);
    return centres;
}

} // namespace parprobe
