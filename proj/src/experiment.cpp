#include "parprobe/experiment.hpp"

#include "parprobe/analysis.hpp"
#include "parprobe/geometry.hpp"
#include "parprobe/kernels.hpp"
#include "parprobe/probe.hpp"
#include "parprobe/solver.hpp"

#include <boost/crc.hpp>
#include <boost/math/quadrature/gauss.hpp>
#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <mutex>
#include <random>
#include <sstream>
#include <variant>

namespace fs = std::filesystem;

namespace parprobe {

namespace {

enum class Kind { text, number, integer, list, choice };

struct KeySpec {
    Kind kind;
    std::string fallback;
    std::vector<std::string> choices = {};
};

using Schema = std::map<std::string, std::map<std::string, KeySpec>>;

const std::vector<std::string>& all_pipelines() {
    static const std::vector<std::string> p = {
        "convergence", "identity", "dtn",      "kernel_jumps", "scaling",       "calibrate", "blowup",    "detect",
        "convolution", "geometry", "two_sphere", "interpolation", "cylinder", "asymptotic", "determinism"};
    return p;
}

const Schema& schema() {
    static const Schema s = {
        {"experiment",
         {{"id", {Kind::text, ""}},
          {"pipeline", {Kind::choice, "", all_pipelines()}},
          {"seed", {Kind::integer, "1"}},
          {"output", {Kind::text, ""}},
          {"description", {Kind::text, ""}}}},
        {"material", {{"k", {Kind::list, "4"}}}},
        {"geometry",
         {{"n", {Kind::integer, "2"}},
          {"rho0", {Kind::number, "0.1"}},
          {"E", {Kind::number, "1"}},
          {"M", {Kind::number, "100"}}}},
        {"grid",
         {{"lo", {Kind::list, "0,0"}},
          {"hi", {Kind::list, "1,1"}},
          {"cells", {Kind::integer, "64"}},
          {"T", {Kind::number, "0.1"}},
          {"steps", {Kind::integer, "64"}},
          {"collar", {Kind::number, "0.25"}},
          {"theta", {Kind::number, "1"}},
          {"subsamples", {Kind::integer, "4"}},
          {"flux", {Kind::choice, "conservative", {"conservative", "second_order", "both"}}},
          {"levels", {Kind::integer, "3"}}}},
        {"inclusion1", {{"shape", {Kind::text, ""}}, {"raw", {Kind::text, ""}}}},
        {"inclusion2", {{"shape", {Kind::text, ""}}, {"raw", {Kind::text, ""}}}},
        {"probe",
         {{"lambdas", {Kind::text, "calibrate"}},
          {"t_bar", {Kind::number, "0.05"}},
          {"delta", {Kind::number, "0.1"}},
          {"scales", {Kind::integer, "6"}},
          {"cells_per_h", {Kind::integer, "16"}},
          {"halfwidth", {Kind::number, "8"}},
          {"steps", {Kind::integer, "64"}},
          {"source", {Kind::list, "1.05,0.5"}},
          {"source_time", {Kind::number, "0"}},
          {"observer", {Kind::list, "1.05,0.55"}},
          {"observer_time", {Kind::number, "-1"}}}},
        {"sweep", {{"h", {Kind::list, ""}}, {"noise", {Kind::list, "0"}}}},
        {"detect",
         {{"directions", {Kind::text, "1,0;-1,0;0,1;0,-1"}},
          {"lags", {Kind::integer, "6"}},
          {"gap_cells", {Kind::number, "2"}},
          {"band_cells", {Kind::number, "1"}},
          {"threshold_factor", {Kind::number, "5"}}}},
        {"kernel",
         {{"samples", {Kind::integer, "20"}},
          {"pole", {Kind::list, "0,-0.2"}},
          {"t_lo", {Kind::number, "0.02"}},
          {"t_hi", {Kind::number, "0.2"}},
          {"tangential", {Kind::number, "0.3"}},
          {"mass_times", {Kind::list, "0.05,0.2"}}}},
        {"verify",
         {{"alpha", {Kind::list, "0,0.5,1"}},
          {"beta", {Kind::list, "0,0.5,0.25"}},
          {"a", {Kind::number, "1"}},
          {"pairs", {Kind::integer, "10"}},
          {"r1", {Kind::number, "0.1"}},
          {"r2", {Kind::number, "0.25"}},
          {"R", {Kind::number, "1"}},
          {"eta1", {Kind::number, "0.25"}},
          {"delta1", {Kind::number, "0.25"}},
          {"radius", {Kind::number, "1"}},
          {"shape_pairs", {Kind::integer, "50"}},
          {"scales", {Kind::integer, "8"}},
          {"first_scale", {Kind::number, "0.4"}},
          {"scale_ratio", {Kind::number, "0.7071067811865476"}},
          {"sample", {Kind::list, "0.25,0.5"}},
          {"pole_depth", {Kind::number, "0.5"}},
          {"amplitude", {Kind::number, "1"}},
          {"chart_rho0", {Kind::number, "1"}},
          {"cone_C", {Kind::number, "4"}},
          {"box_halfwidth", {Kind::number, "6"}},
          {"box_cells", {Kind::integer, "192"}},
          {"box_steps", {Kind::integer, "128"}}}},
        {"determinism", {{"configs", {Kind::text, ""}}}},
        {"tolerance",
         {{"lo", {Kind::number, "0.999"}},
          {"hi", {Kind::number, "1.001"}},
          {"rel", {Kind::number, "0.05"}},
          {"jump", {Kind::number, "1e-4"}},
          {"spread", {Kind::number, "1e-3"}},
          {"slope_lo", {Kind::number, "-2.3"}},
          {"slope_hi", {Kind::number, "-1.7"}},
          {"r2_min", {Kind::number, "0.98"}},
          {"min_points", {Kind::integer, "6"}},
          {"constant_max", {Kind::number, "10"}},
          {"min_slope", {Kind::number, "0.8"}},
          {"order_min", {Kind::number, "1.8"}},
          {"steady", {Kind::number, "1e-12"}}}},
    };
    return s;
}

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::string cur;
    std::istringstream is(s);
    while (std::getline(is, cur, sep)) out.push_back(trim(cur));
    return out;
}

double parse_number(const std::string& s, const std::string& where) {
    try {
        std::size_t used = 0;
        const double v = std::stod(s, &used);
        if (trim(s.substr(used)).empty() && std::isfinite(v)) return v;
    } catch (const std::exception&) {
    }
    throw ConfigError(where + ": '" + s + "' is not a number");
}

long long parse_integer(const std::string& s, const std::string& where) {
    try {
        std::size_t used = 0;
        const long long v = std::stoll(s, &used);
        if (trim(s.substr(used)).empty()) return v;
    } catch (const std::exception&) {
    }
    throw ConfigError(where + ": '" + s + "' is not an integer");
}

std::vector<double> parse_list(const std::string& s, const std::string& where) {
    std::vector<double> out;
    if (trim(s).empty()) return out;
    for (const auto& tok : split(s, ',')) out.push_back(parse_number(tok, where));
    return out;
}

void check_value(const KeySpec& spec, const std::string& v, const std::string& where) {
    switch (spec.kind) {
    case Kind::text: break;
    case Kind::number: parse_number(v, where); break;
    case Kind::integer: parse_integer(v, where); break;
    case Kind::list: parse_list(v, where); break;
    case Kind::choice:
        if (std::find(spec.choices.begin(), spec.choices.end(), v) == spec.choices.end()) {
            std::string opts;
            for (const auto& c : spec.choices) opts += (opts.empty() ? "" : ", ") + c;
            throw ConfigError(where + ": '" + v + "' is not one of {" + opts + "}");
        }
        break;
    }
}

std::string upper(std::string s) {
    for (auto& c : s) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
    return s;
}

} // namespace

// ---------------------------------------------------------------- configuration

ExperimentConfig ExperimentConfig::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config '" + path + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    ExperimentConfig cfg = parse(ss.str(), path);
    const fs::path parent = fs::path(path).parent_path();
    cfg.base_dir_ = parent.empty() ? "." : parent.string();
    return cfg;
}

ExperimentConfig ExperimentConfig::parse(const std::string& text, const std::string& origin) {
    boost::property_tree::ptree tree;
    std::istringstream is(text);
    try {
        boost::property_tree::ini_parser::read_ini(is, tree);
    } catch (const boost::property_tree::ini_parser_error& e) {
        throw ConfigError(origin + ": " + e.message() + " (line " + std::to_string(e.line()) + ")");
    }
    ExperimentConfig cfg;
    const Schema& sc = schema();
    for (const auto& [section, body] : tree) {
        const auto sit = sc.find(section);
        if (sit == sc.end() || body.empty())
            throw ConfigError(origin + ": unknown section or top-level key '" + section + "'");
        for (const auto& [key, node] : body) {
            const auto kit = sit->second.find(key);
            if (kit == sit->second.end()) throw ConfigError(origin + ": unknown key '" + key + "' in [" + section + "]");
            cfg.values_[section][key] = trim(node.data());
        }
    }
    for (const auto& [section, keys] : sc)
        for (const auto& [key, spec] : keys) {
            const std::string env = "PARPROBE_" + upper(section) + "_" + upper(key);
            if (const char* v = std::getenv(env.c_str())) cfg.values_[section][key] = trim(v);
            const auto sit = cfg.values_.find(section);
            if (sit != cfg.values_.end()) {
                const auto kit = sit->second.find(key);
                if (kit != sit->second.end()) check_value(spec, kit->second, origin + " [" + section + "] " + key);
            }
        }
    if (!cfg.given("experiment", "pipeline")) throw ConfigError(origin + ": [experiment] pipeline is required");
    cfg.pipeline_ = cfg.text("experiment", "pipeline");
    cfg.id_ = cfg.given("experiment", "id") ? cfg.text("experiment", "id") : cfg.pipeline_;
    if (cfg.id_.empty() || cfg.id_.find_first_of("/\\ ") != std::string::npos)
        throw ConfigError(origin + ": experiment id must be a non-empty name without spaces or slashes");
    const long long seed = parse_integer(cfg.text("experiment", "seed"), origin + " seed");
    if (seed < 0) throw ConfigError(origin + ": seed must be non-negative");
    cfg.seed_ = static_cast<std::uint64_t>(seed);
    for (const char* key : {"rel", "jump", "spread", "steady"})
        if (!(cfg.number("tolerance", key) > 0.0)) throw ConfigError(origin + ": tolerance " + key + " must be positive");
    return cfg;
}

bool ExperimentConfig::given(const std::string& section, const std::string& key) const {
    const auto sit = values_.find(section);
    return sit != values_.end() && sit->second.count(key) > 0;
}

std::string ExperimentConfig::text(const std::string& section, const std::string& key) const {
    const auto sit = values_.find(section);
    if (sit != values_.end()) {
        const auto kit = sit->second.find(key);
        if (kit != sit->second.end()) return kit->second;
    }
    const auto& sc = schema();
    const auto s = sc.find(section);
    if (s == sc.end() || !s->second.count(key)) throw ConfigError("no schema entry [" + section + "] " + key);
    return s->second.at(key).fallback;
}

double ExperimentConfig::number(const std::string& section, const std::string& key) const {
    return parse_number(text(section, key), "[" + section + "] " + key);
}

int ExperimentConfig::integer(const std::string& section, const std::string& key) const {
    return static_cast<int>(parse_integer(text(section, key), "[" + section + "] " + key));
}

std::vector<double> ExperimentConfig::list(const std::string& section, const std::string& key) const {
    return parse_list(text(section, key), "[" + section + "] " + key);
}

std::map<std::string, std::string> ExperimentConfig::echo() const {
    std::map<std::string, std::string> out;
    for (const auto& [section, keys] : schema())
        for (const auto& [key, spec] : keys) out[section + "." + key] = text(section, key);
    out["experiment.seed"] = std::to_string(seed_);
    return out;
}

std::vector<std::string> pipelines_for(const std::string& sub) {
    static const std::map<std::string, std::vector<std::string>> m = {
        {"solve", {"convergence"}},
        {"dtn", {"identity", "dtn"}},
        {"kernel", {"kernel_jumps"}},
        {"calibrate", {"scaling", "calibrate"}},
        {"probe", {"blowup"}},
        {"detect", {"detect"}},
        {"verify", {"convolution", "geometry", "two_sphere", "interpolation", "cylinder", "asymptotic"}},
        {"report", {"determinism"}},
    };
    const auto it = m.find(sub);
    if (it == m.end()) throw ConfigError("unknown subcommand '" + sub + "'");
    return it->second;
}

// ---------------------------------------------------------------- output helpers

std::string format_number(double v) {
    if (std::isnan(v)) return "nan";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::uint32_t crc32_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot read '" + path + "'");
    boost::crc_32_type crc;
    char buf[1 << 14];
    while (in) {
        in.read(buf, sizeof buf);
        crc.process_bytes(buf, static_cast<std::size_t>(in.gcount()));
    }
    return crc.checksum();
}

bool ExperimentReport::pass() const {
    return std::all_of(acceptance.begin(), acceptance.end(), [](const AcceptanceEntry& e) { return e.pass; });
}

nlohmann::ordered_json ExperimentReport::to_json() const {
    nlohmann::ordered_json j;
    j["id"] = id;
    j["pipeline"] = pipeline;
    j["seed"] = seed;
    j["pass"] = pass();
    j["config"] = config;
    j["csv"] = csv_files;
    j["results"] = results;
    auto& acc = j["acceptance"] = nlohmann::ordered_json::array();
    for (const auto& e : acceptance) {
        nlohmann::ordered_json a;
        a["criterion"] = e.criterion;
        a["invariant"] = e.invariant;
        a["value"] = format_number(e.value);
        a["comparison"] = e.comparison;
        a["threshold"] = format_number(e.threshold);
        if (e.comparison == "in") a["threshold_hi"] = format_number(e.threshold_hi);
        a["pass"] = e.pass;
        acc.push_back(a);
    }
    j["wall_seconds"] = wall_seconds;
    return j;
}

namespace {

class Csv {
public:
    Csv(const std::string& path, const std::vector<std::string>& header) : out_(path) {
        if (!out_) throw ConfigError("cannot write '" + path + "'");
        row_text(header);
    }
    using Cell = std::variant<double, std::string>;
    void row(const std::vector<Cell>& cells) {
        std::string line;
        for (std::size_t i = 0; i < cells.size(); ++i) {
            if (i) line += ',';
            if (std::holds_alternative<double>(cells[i])) line += format_number(std::get<double>(cells[i]));
            else line += quote(std::get<std::string>(cells[i]));
        }
        out_ << line << '\n';
    }

private:
    static std::string quote(const std::string& s) {
        if (s.find_first_of(",\"\n") == std::string::npos) return s;
        std::string q = "\"";
        for (char c : s) q += c == '"' ? std::string("\"\"") : std::string(1, c);
        return q + "\"";
    }
    void row_text(const std::vector<std::string>& cells) {
        std::vector<Cell> c(cells.begin(), cells.end());
        row(c);
    }
    std::ofstream out_;
};

// Header of two little-endian int64 (rows, cols), then row-major float64.
void write_matrix_bin(const std::string& path, const Eigen::MatrixXd& m) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConfigError("cannot write '" + path + "'");
    const std::int64_t dims[2] = {m.rows(), m.cols()};
    out.write(reinterpret_cast<const char*>(dims), sizeof dims);
    const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm = m;
    out.write(reinterpret_cast<const char*>(rm.data()), static_cast<std::streamsize>(sizeof(double) * rm.size()));
}

struct Context {
    const ExperimentConfig& cfg;
    ExperimentReport& report;
    std::string dir;
    std::uint64_t seed;
    std::ostream* log;

    Csv csv(const std::string& name, const std::vector<std::string>& header) {
        report.csv_files.push_back(name);
        return Csv((fs::path(dir) / name).string(), header);
    }
    std::string binary(const std::string& name, const Eigen::MatrixXd& m) {
        write_matrix_bin((fs::path(dir) / name).string(), m);
        report.results["binary"].push_back(name);
        return name;
    }
    void say(const std::string& msg) const {
        static std::mutex lock;
        if (!log) return;
        std::lock_guard<std::mutex> g(lock);
        *log << "[" << cfg.id() << "] " << msg << std::endl;
    }
    void accept(std::string criterion, std::string invariant, double value, const std::string& cmp, double thr,
                double thr_hi = 0.0) {
        AcceptanceEntry e{std::move(criterion), std::move(invariant), value, thr, cmp, thr_hi, false};
        if (cmp == "<=") e.pass = value <= thr;
        else if (cmp == ">=") e.pass = value >= thr;
        else if (cmp == "<") e.pass = value < thr;
        else if (cmp == "in") e.pass = value >= thr && value <= thr_hi;
        else if (cmp == "==") e.pass = value == thr;
        say(e.criterion + ": " + format_number(value) + (e.pass ? " pass" : " FAIL"));
        report.acceptance.push_back(e);
    }
};

// ---------------------------------------------------------------- config to objects

Box domain_box(const ExperimentConfig& c) {
    const int n = c.integer("geometry", "n");
    if (n != 1 && n != 2) throw ConfigError("[geometry] n must be 1 or 2");
    auto lo = c.list("grid", "lo"), hi = c.list("grid", "hi");
    if (n == 1 && c.text("grid", "lo") == "0,0") lo = {0.0};
    if (n == 1 && c.text("grid", "hi") == "1,1") hi = {1.0};
    if (static_cast<int>(lo.size()) != n || static_cast<int>(hi.size()) != n)
        throw ConfigError("[grid] lo/hi must have n entries");
    Box b{Point(n), Point(n)};
    for (int i = 0; i < n; ++i) {
        b.lo(i) = lo[i];
        b.hi(i) = hi[i];
        if (!(hi[i] > lo[i])) throw ConfigError("[grid] hi must exceed lo");
    }
    return b;
}

Grid make_grid(const ExperimentConfig& c, int cells = 0, int steps = 0) {
    const Box b = domain_box(c);
    const int nc = cells > 0 ? cells : c.integer("grid", "cells");
    if (nc < 2) throw ConfigError("[grid] cells must be >= 2");
    return Grid::make(b, (b.hi(0) - b.lo(0)) / nc, c.number("grid", "T"), steps > 0 ? steps : c.integer("grid", "steps"),
                      c.number("grid", "collar"));
}

SolverOptions solver_options(const ExperimentConfig& c) {
    SolverOptions o;
    o.theta = c.number("grid", "theta");
    o.subsamples = c.integer("grid", "subsamples");
    if (!(o.theta >= 0.5 && o.theta <= 1.0)) throw ConfigError("[grid] theta must lie in [0.5, 1]");
    return o;
}

std::vector<Material> materials(const ExperimentConfig& c) {
    std::vector<Material> out;
    for (double k : c.list("material", "k")) {
        try {
            out.emplace_back(k);
        } catch (const DomainError& e) {
            throw ConfigError(std::string("[material] k: ") + e.what());
        }
    }
    if (out.empty()) throw ConfigError("[material] k is empty");
    return out;
}

InclusionFamily family(const ExperimentConfig& c, const std::string& section) {
    const Box b = domain_box(c);
    const int n = b.dim();
    const std::string raw = c.text(section, "raw"), shape = c.text(section, "shape");
    if (!raw.empty() && !shape.empty()) throw ConfigError("[" + section + "] give shape or raw, not both");
    if (!raw.empty()) {
        fs::path p(raw);
        if (p.is_relative()) p = fs::path(c.base_dir()) / p;
        return InclusionFamily::from_raw(read_raw_grid(p.string()), b);
    }
    std::vector<Shape> shapes;
    for (const auto& s : split(shape, '|'))
        if (!s.empty()) shapes.push_back(Shape::parse(s, n));
    return InclusionFamily(n, b, std::move(shapes));
}

GeometryConfig geometry_config(const ExperimentConfig& c) {
    GeometryConfig g;
    g.n = c.integer("geometry", "n");
    g.rho0 = c.number("geometry", "rho0");
    g.E = c.number("geometry", "E");
    g.M = c.number("geometry", "M");
    try {
        g.validate();
    } catch (const std::exception& e) {
        throw ConfigError(std::string("[geometry] ") + e.what());
    }
    return g;
}

Point point_of(const std::vector<double>& v, int n, const std::string& where) {
    if (static_cast<int>(v.size()) != n) throw ConfigError(where + " must have " + std::to_string(n) + " entries");
    Point p(n);
    for (int i = 0; i < n; ++i) p(i) = v[i];
    return p;
}

std::vector<TransmissionSolver::FluxKind> flux_kinds(const ExperimentConfig& c) {
    const std::string f = c.text("grid", "flux");
    if (f == "both") return {TransmissionSolver::FluxKind::conservative, TransmissionSolver::FluxKind::second_order};
    if (f == "second_order") return {TransmissionSolver::FluxKind::second_order};
    return {TransmissionSolver::FluxKind::conservative};
}

std::string flux_name(TransmissionSolver::FluxKind k) {
    return k == TransmissionSolver::FluxKind::conservative ? "conservative" : "second_order";
}

Lambdas lambdas_for(const ExperimentConfig& c, const Material& mat, int n, Calibration* cal = nullptr) {
    const std::string l = c.text("probe", "lambdas");
    if (l == "calibrate") {
        Calibration k = calibrate_lambdas(mat, n);
        if (cal) *cal = k;
        return k.lambdas;
    }
    const auto v = parse_list(l, "[probe] lambdas");
    if (v.size() != 3 || *std::min_element(v.begin(), v.end()) <= 0.0)
        throw ConfigError("[probe] lambdas must be 'calibrate' or three positive numbers");
    return Lambdas{v[0], v[1], v[2]};
}

double worst(const std::vector<double>& v) { return v.empty() ? 0.0 : *std::max_element(v.begin(), v.end()); }

std::string label_k(const Material& m) { return "k=" + format_number(m.k); }

// ---------------------------------------------------------------- pipelines

void run_convergence(Context& ctx) {
    const auto& c = ctx.cfg;
    const Material mat = materials(c).front();
    const int levels = c.integer("grid", "levels");
    if (levels < 2) throw ConfigError("[grid] levels must be >= 2");
    const Box box = domain_box(c);
    const int n = box.dim();
    // Free-space kernel with its pole outside the box: zero initial data,
    // smooth Dirichlet data, exact interior values.
    Point pole = box.lo;
    pole(0) -= 0.25 * (box.hi(0) - box.lo(0));
    if (n == 2) pole(1) = 0.5 * (box.lo(1) + box.hi(1));
    auto csv = ctx.csv("convergence.csv", {"cells", "spacing", "steps", "max_error", "order"});
    std::vector<double> errs, hs;
    SolverOptions opts = solver_options(c);
    const int base = c.integer("grid", "cells");
    for (int l = 0; l < levels; ++l) {
        const int cells = base << l;
        const Grid g = Grid::make(box, (box.hi(0) - box.lo(0)) / cells, c.number("grid", "T"),
                                  c.integer("grid", "steps") << l, 0.0);
        const TransmissionSolver solver(g, InclusionFamily::empty(n, box), mat, opts);
        const auto faces = boundary_faces(g);
        BoundaryData bd = BoundaryData::zeros(g);
        for (int m = 1; m <= g.steps; ++m)
            for (std::size_t f = 0; f < faces.size(); ++f)
                bd.values(m, static_cast<Eigen::Index>(f)) = gamma0(faces[f].centre, g.time(m), pole, 0.0).value;
        const FieldHistory u = solver.solve(bd);
        if (l == levels - 1) {
            Eigen::MatrixXd snap(g.cells[1], g.cells[0]);
            for (int j = 0; j < g.cells[1]; ++j)
                for (int i = 0; i < g.cells[0]; ++i) snap(j, i) = u.levels[g.steps](static_cast<Eigen::Index>(g.index(i, j)));
            ctx.binary("field_final.bin", snap);
        }
        double e = 0.0;
        for (std::size_t cell = 0; cell < g.size(); ++cell)
            e = std::max(e, std::abs(u.levels[g.steps](static_cast<Eigen::Index>(cell)) -
                                     gamma0(g.centre(cell), g.T(), pole, 0.0).value));
        const double order = errs.empty() ? std::nan("") : std::log2(errs.back() / e);
        errs.push_back(e);
        hs.push_back(g.spacing);
        csv.row({double(cells), g.spacing, double(g.steps), e, order});
        ctx.say("cells " + std::to_string(cells) + " error " + format_number(e));
    }
    double min_order = std::numeric_limits<double>::infinity();
    for (std::size_t i = 1; i < errs.size(); ++i) min_order = std::min(min_order, std::log2(errs[i - 1] / errs[i]));
    std::vector<double> lh, le;
    PlotSeries plot{"convergence", "log spacing", "log max error", "refinement of the constant-coefficient oracle",
                    {"log_h", "log_error"}, {}, 2.0};
    for (std::size_t i = 0; i < errs.size(); ++i) {
        lh.push_back(std::log(hs[i]));
        le.push_back(std::log(errs[i]));
        plot.rows.push_back({lh.back(), le.back()});
    }
    ctx.report.plots.push_back(plot);
    const LineFit fit = fit_line(lh, le);
    ctx.report.results["fitted_order"] = fit.slope;
    ctx.report.results["min_pairwise_order"] = min_order;
    ctx.accept("spatial order (smallest pairwise over " + std::to_string(levels) + " levels)",
               "observed order of the cell-centred scheme on the analytic oracle", min_order, ">=",
               c.number("tolerance", "order_min"));

    // One-dimensional two-phase steady state: interval inclusion with faces on the lattice.
    const Box line{make_point(0.0), make_point(1.0)};
    const double lo = 0.25, hi = 0.5;
    const Grid g1 = Grid::make(line, 1.0 / 32, 10.0, 320, 0.0);
    const InclusionFamily strip(1, line, {Shape::parse("interval lo=0.25 hi=0.5", 1)});
    SolverOptions o1;
    o1.theta = 1.0;
    const TransmissionSolver s1(g1, strip, mat, o1);
    BoundaryData bd = BoundaryData::zeros(g1);
    const auto faces = boundary_faces(g1);
    for (int m = 0; m <= g1.steps; ++m)
        for (std::size_t f = 0; f < faces.size(); ++f)
            bd.values(m, static_cast<Eigen::Index>(f)) = faces[f].outward > 0 ? 1.0 : 0.0;
    const FieldHistory u = s1.solve(bd);
    const double q = 1.0 / (lo + (hi - lo) / mat.k + (1.0 - hi));
    auto exact = [&](double x) {
        if (x < lo) return q * x;
        if (x < hi) return q * (lo + (x - lo) / mat.k);
        return q * (lo + (hi - lo) / mat.k + (x - hi));
    };
    double steady = 0.0;
    auto s_csv = ctx.csv("steady_state.csv", {"x", "computed", "exact"});
    for (std::size_t cell = 0; cell < g1.size(); ++cell) {
        const double x = g1.centre(cell)(0), v = u.levels[g1.steps](static_cast<Eigen::Index>(cell));
        steady = std::max(steady, std::abs(v - exact(x)));
        s_csv.row({x, v, exact(x)});
    }
    ctx.report.results["steady_state_error"] = steady;
    ctx.accept("1-D two-phase steady state", "piecewise-linear steady state reproduced exactly", steady, "<=",
               c.number("tolerance", "steady"));
}

void run_identity(Context& ctx) {
    const auto& c = ctx.cfg;
    const Grid g = make_grid(c);
    const InclusionFamily d1 = family(c, "inclusion1"), d2 = family(c, "inclusion2");
    const int n = g.dim();
    Poles poles;
    poles.y = point_of(c.list("probe", "source"), n, "[probe] source");
    poles.s = c.number("probe", "source_time");
    poles.xi = point_of(c.list("probe", "observer"), n, "[probe] observer");
    poles.tau = c.number("probe", "observer_time") < 0.0 ? g.T() : c.number("probe", "observer_time");
    const SolverOptions opts = solver_options(c);
    auto csv = ctx.csv("identity.csv", {"k", "flux", "u_dtn", "dtn_error", "s1", "s2", "u_volume", "volume_error",
                                        "discrepancy", "allowed"});
    for (const Material& mat : materials(c)) {
        const VolumeResult vol = volume_functionals(poles, d1, d2, mat, g, VolumeQuadrature::midpoint, opts);
        for (auto flux : flux_kinds(c)) {
            const auto l1 = DiscreteDtN::matrix_free(d1, mat, g, flux, opts);
            const auto l2 = DiscreteDtN::matrix_free(d2, mat, g, flux, opts);
            const GapFunctional gd = gap_functional_dtn(poles, l1, l2);
            const double disc = std::abs(gd.value - vol.u());
            const double allowed =
                std::max(c.number("tolerance", "rel") * std::abs(vol.u()), gd.estimated_error + vol.error());
            csv.row({mat.k, flux_name(flux), gd.value, gd.estimated_error, vol.s1, vol.s2, vol.u(), vol.error(), disc,
                     allowed});
            ctx.accept("|U_dtn - (S1 - S2)| " + label_k(mat) + " flux=" + flux_name(flux),
                       "boundary pairing equals the volume form of the gap functional", disc / allowed, "<=", 1.0);
        }
    }
}

void run_dtn(Context& ctx) {
    const auto& c = ctx.cfg;
    const Grid g = make_grid(c);
    const InclusionFamily d1 = family(c, "inclusion1"), d2 = family(c, "inclusion2");
    const SolverOptions opts = solver_options(c);
    auto csv = ctx.csv("dtn.csv", {"k", "flux", "dimension", "distance", "norm1", "norm2"});
    for (const Material& mat : materials(c))
        for (auto flux : flux_kinds(c)) {
            const auto l1 = DiscreteDtN::assemble(d1, mat, g, flux, opts);
            const auto l2 = DiscreteDtN::assemble(d2, mat, g, flux, opts);
            const std::string tag = "k" + format_number(mat.k) + "_" + flux_name(flux);
            ctx.binary("dtn1_" + tag + ".bin", l1.matrix());
            ctx.binary("dtn2_" + tag + ".bin", l2.matrix());
            const double dist = DiscreteDtN::operator_distance(l1, l2);
            const auto zero = DiscreteDtN::assemble(InclusionFamily::empty(g.dim(), g.omega), mat, g, flux, opts);
            const double n1 = DiscreteDtN::operator_distance(l1, zero), n2 = DiscreteDtN::operator_distance(l2, zero);
            csv.row({mat.k, flux_name(flux), double(l1.dimension()), dist, n1, n2});
            ctx.accept("operator distance " + label_k(mat) + " flux=" + flux_name(flux),
                       "distance between the maps is bounded by the sum of their distances to the background",
                       dist - (n1 + n2), "<=", 1e-12 * (1.0 + n1 + n2));
        }
}

void run_kernel_jumps(Context& ctx) {
    const auto& c = ctx.cfg;
    const int samples = c.integer("kernel", "samples");
    const Point y = point_of(c.list("kernel", "pole"), 2, "[kernel] pole");
    const double t_lo = c.number("kernel", "t_lo"), t_hi = c.number("kernel", "t_hi"), tan = c.number("kernel", "tangential");
    const double tol = c.number("tolerance", "jump");
    auto jumps = ctx.csv("kernel_jumps.csv", {"k", "x1", "t", "value_plus", "value_minus", "value_jump", "flux_plus",
                                              "flux_minus", "flux_jump"});
    auto mass_csv = ctx.csv("kernel_mass.csv", {"k", "t", "mass"});
    for (const Material& mat : materials(c)) {
        std::mt19937_64 rng(ctx.seed);
        std::uniform_real_distribution<double> ux(-tan, tan), ut(t_lo, t_hi);
        std::vector<double> vj, fj;
        for (int i = 0; i < samples; ++i) {
            const double x1 = ux(rng), t = ut(rng);
            const Point x = make_point(x1, 0.0);
            const KernelEval p = gamma_plus_side(x, t, y, 0.0, mat, +1), m = gamma_plus_side(x, t, y, 0.0, mat, -1);
            const double v = std::abs(p.value - m.value) / std::max(std::abs(p.value), std::abs(m.value));
            const double fp = mat.k * p.gradient(1), fm = m.gradient(1);
            const double f = std::abs(fp - fm) / std::max(std::abs(fp), std::abs(fm));
            vj.push_back(v);
            fj.push_back(f);
            jumps.row({mat.k, x1, t, p.value, m.value, v, fp, fm, f});
        }
        ctx.accept("value jump " + label_k(mat), "kernel is continuous across the interface", worst(vj), "<", tol);
        ctx.accept("flux jump " + label_k(mat), "conormal derivative is continuous across the interface", worst(fj), "<",
                   tol);
        for (double t : c.list("kernel", "mass_times")) {
            // Tensor Gauss-Legendre over a box holding the Gaussian tails, split at the interface.
            const double reach = 10.0 * std::sqrt(std::max(mat.k, 1.0) * t);
            using G = boost::math::quadrature::gauss<double, 20>;
            auto nodes = [](double a, double b, int panels) {
                std::vector<std::pair<double, double>> out;
                const auto& ab = G::abscissa();
                const auto& wt = G::weights();
                const double len = (b - a) / panels;
                for (int p = 0; p < panels; ++p) {
                    const double cc = a + (p + 0.5) * len, r = 0.5 * len;
                    for (std::size_t i = 0; i < ab.size(); ++i) {
                        out.push_back({cc - r * ab[i], r * wt[i]});
                        out.push_back({cc + r * ab[i], r * wt[i]});
                    }
                }
                return out;
            };
            auto xs = nodes(y(0) - reach, y(0) + reach, 4);
            auto below = nodes(std::min(y(1), 0.0) - reach, 0.0, 4), above = nodes(0.0, reach, 4);
            below.insert(below.end(), above.begin(), above.end());
            double mass = 0.0;
            for (const auto& [xn, wn] : below)
                for (const auto& [x1, w1] : xs) mass += wn * w1 * gamma_plus(make_point(x1, xn), t, y, 0.0, mat).value;
            mass_csv.row({mat.k, t, mass});
            ctx.accept("mass at t=" + format_number(t) + " " + label_k(mat), "kernel conserves unit mass", mass, "in",
                       c.number("tolerance", "lo"), c.number("tolerance", "hi"));
        }
    }
}

void run_scaling(Context& ctx) {
    const auto& c = ctx.cfg;
    const int n = c.integer("geometry", "n");
    std::vector<double> hs = c.list("sweep", "h");
    if (hs.empty()) hs = {0.25, 0.5, 2.0, 4.0};
    auto csv = ctx.csv("scaling.csv", {"k", "h", "i_h", "i_1", "ratio", "error_h"});
    for (const Material& mat : materials(c)) {
        const Lambdas lam = lambdas_for(c, mat, n);
        const IhResult one = ih_integral(1.0, lam, mat, n);
        PlotSeries plot{"scaling_" + label_k(mat), "log h", "log |I(h)|", "half-space probe integral against h",
                        {"log_h", "log_i"}, {{0.0, std::log(one.value)}}, -double(n)};
        for (double h : hs) {
            const IhResult ih = ih_integral(h, lam, mat, n);
            const double ratio = ih.value * std::pow(h, n) / one.value;
            csv.row({mat.k, h, ih.value, one.value, ratio, ih.error});
            plot.rows.push_back({std::log(h), std::log(ih.value)});
            ctx.accept("I(h) h^n / I(1) " + label_k(mat) + " h=" + format_number(h), "exact h^-n scaling", ratio, "in",
                       c.number("tolerance", "lo"), c.number("tolerance", "hi"));
        }
        std::sort(plot.rows.begin(), plot.rows.end());
        ctx.report.plots.push_back(plot);
    }
}

void run_calibrate(Context& ctx) {
    const auto& c = ctx.cfg;
    const int n = c.integer("geometry", "n");
    auto csv = ctx.csv("calibrate.csv", {"k", "lambda1", "lambda2", "lambda3", "i1", "error", "score", "refined_change"});
    for (const Material& mat : materials(c)) {
        const Calibration cal = calibrate_lambdas(mat, n);
        csv.row({mat.k, cal.lambdas.l1, cal.lambdas.l2, cal.lambdas.l3, cal.i1, cal.error, cal.score, cal.refined_change});
        ctx.accept("I(1) resolved " + label_k(mat), "calibrated integral exceeds ten times its error estimate",
                   cal.i1 / std::max(cal.error, 1e-300), ">=", 10.0);
    }
}

void run_blowup(Context& ctx) {
    const auto& c = ctx.cfg;
    const int n = c.integer("geometry", "n");
    const InclusionFamily d1 = family(c, "inclusion1"), d2 = family(c, "inclusion2");
    const GeometryConfig gcfg = geometry_config(c);
    const double t_bar = c.number("probe", "t_bar");
    const int scales = c.integer("probe", "scales");
    LocalGridSpec spec;
    spec.cells_per_h = c.integer("probe", "cells_per_h");
    spec.halfwidth = c.number("probe", "halfwidth");
    spec.steps = c.integer("probe", "steps");
    spec.subsamples = c.integer("grid", "subsamples");
    spec.theta = c.number("grid", "theta");
    auto csv = ctx.csv("blowup.csv", {"k", "h", "u", "u_alt", "error", "ih_reference", "u_h2"});
    for (const Material& mat : materials(c)) {
        Calibration cal;
        const Lambdas lam = lambdas_for(c, mat, n, &cal);
        const ModifiedDistance md = modified_distance(d1, d2, t_bar);
        std::vector<double> hs = c.list("sweep", "h");
        double delta = c.number("probe", "delta");
        if (hs.empty()) {
            delta = find_admissible_delta(d1, d2, t_bar, lam, gcfg, delta, {1.0, std::pow(0.5, scales - 1)});
            const double hmax = delta * std::min({md.value, gcfg.rho0, std::sqrt(t_bar)});
            for (int i = 0; i < scales; ++i) hs.push_back(hmax * std::pow(0.5, i));
        }
        ctx.say(label_k(mat) + " d_mu " + format_number(md.value) + " delta " + format_number(delta));
        const BlowupSweep sw = blowup_sweep(d1, d2, t_bar, lam, mat, gcfg, hs, delta, spec);
        PlotSeries plot{"blowup_" + label_k(mat), "log h", "log |U|", "gap functional against probe scale",
                        {"log_h", "log_u", "fit", "residual"}, {}, -double(n)};
        for (const auto& p : sw.points) {
            csv.row({mat.k, p.h, p.u, p.u_alt, p.error, p.ih_reference, p.u * std::pow(p.h, n)});
            const double fit = sw.intercept + sw.fitted_slope * std::log(p.h);
            plot.rows.push_back({std::log(p.h), std::log(p.u), fit, std::log(p.u) - fit});
        }
        ctx.report.plots.push_back(plot);
        auto& r = ctx.report.results[label_k(mat)];
        r["lambdas"] = {lam.l1, lam.l2, lam.l3};
        r["d_mu"] = md.value;
        r["delta"] = delta;
        r["slope"] = sw.fitted_slope;
        r["r_squared"] = sw.r_squared;
        ctx.accept("blow-up slope " + label_k(mat), "|U| grows like h^-n", sw.fitted_slope, "in",
                   c.number("tolerance", "slope_lo"), c.number("tolerance", "slope_hi"));
        ctx.accept("blow-up fit R^2 " + label_k(mat), "log-log fit is tight", sw.r_squared, ">=",
                   c.number("tolerance", "r2_min"));
        ctx.accept("admissible scales " + label_k(mat), "enough probe scales pass the separation checks",
                   double(sw.points.size()), ">=", double(c.integer("tolerance", "min_points")));
    }
}

void run_detect(Context& ctx) {
    const auto& c = ctx.cfg;
    const Grid g = make_grid(c);
    const int n = g.dim();
    const InclusionFamily d1 = family(c, "inclusion1"), d2 = family(c, "inclusion2");
    const SolverOptions opts = solver_options(c);
    std::vector<Point> dirs;
    for (const auto& d : split(c.text("detect", "directions"), ';'))
        if (!d.empty()) dirs.push_back(point_of(parse_list(d, "[detect] directions"), n, "[detect] direction"));
    DetectOptions dopt;
    dopt.lags = c.integer("detect", "lags");
    dopt.gap_cells = c.number("detect", "gap_cells");
    dopt.band_cells = c.number("detect", "band_cells");
    dopt.threshold_factor = c.number("detect", "threshold_factor");
    dopt.seed = ctx.seed;
    const double t_bar = c.number("probe", "t_bar");
    auto csv = ctx.csv("detect.csv", {"k", "noise", "estimate", "true_d_mu", "distinguishable", "threshold", "noise_floor"});
    for (const Material& mat : materials(c)) {
        const auto flux = flux_kinds(c).front();
        const auto l1 = DiscreteDtN::matrix_free(d1, mat, g, flux, opts);
        const auto l2 = DiscreteDtN::matrix_free(d2, mat, g, flux, opts);
        PlotSeries plot{"noise_" + label_k(mat), "noise level", "estimated d_mu", "detection against noise",
                        {"noise", "estimate", "true_d_mu"}, {}, std::nullopt};
        for (double eps : c.list("sweep", "noise")) {
            const DetectResult r = detect_boundary(eps > 0.0 ? l1.with_noise(eps, ctx.seed) : l1, l2, t_bar, dirs, dopt);
            csv.row({mat.k, eps, r.estimate, r.true_d_mu, r.distinguishable ? 1.0 : 0.0, r.threshold, r.noise_floor});
            plot.rows.push_back({eps, r.estimate, r.true_d_mu});
            ctx.say("noise " + format_number(eps) + " " + r.status + " estimate " + format_number(r.estimate));
            if (eps == 0.0)
                ctx.accept("noise-free detection " + label_k(mat), "distinct inclusions are flagged without noise",
                           r.distinguishable == (r.true_d_mu > 0.0) ? 1.0 : 0.0, "==", 1.0);
        }
        ctx.report.plots.push_back(plot);
    }
}

void run_convolution(Context& ctx) {
    const auto& c = ctx.cfg;
    const auto al = c.list("verify", "alpha"), be = c.list("verify", "beta");
    if (al.size() != be.size() || al.empty()) throw ConfigError("[verify] alpha and beta must pair up");
    const int n = c.integer("geometry", "n");
    const auto pairs = random_convolution_pairs(n, c.integer("verify", "pairs"), ctx.seed);
    auto csv = ctx.csv("convolution.csv", {"alpha", "beta", "pair", "s", "t", "quadrature", "error", "ratio"});
    for (std::size_t i = 0; i < al.size(); ++i) {
        ConvolutionParams p{al[i], be[i], c.number("verify", "a"), n};
        const InequalityReport r = check_convolution(p, pairs, c.number("tolerance", "spread"));
        for (std::size_t j = 0; j < r.entries.size(); ++j)
            csv.row({p.alpha, p.beta, double(j), pairs[j].s, pairs[j].t, r.entries[j].lhs, r.entries[j].error,
                     r.entries[j].fitted_constant});
        ctx.report.results["alpha=" + format_number(p.alpha) + " beta=" + format_number(p.beta)] = {
            {"mean_ratio", r.fitted_constant}, {"closed_form", r.reference_constant}, {"spread", r.statistic}};
        ctx.accept("ratio spread alpha=" + format_number(p.alpha) + " beta=" + format_number(p.beta),
                   "quadrature over closed form is constant", r.statistic, "<", c.number("tolerance", "spread"));
    }
}

Shape random_star(std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    Shape s;
    s.kind = Shape::Kind::star;
    s.cx = TimeFn::constant(0.4 + 0.2 * u(rng));
    s.cy = TimeFn::constant(0.4 + 0.2 * u(rng));
    s.r = TimeFn::constant(0.15 + 0.1 * u(rng));
    for (int m = 2; m <= 4; ++m) {
        s.cos_terms.push_back({m, TimeFn::constant(0.03 * (2.0 * u(rng) - 1.0))});
        s.sin_terms.push_back({m, TimeFn::constant(0.03 * (2.0 * u(rng) - 1.0))});
    }
    return s;
}

void run_geometry(Context& ctx) {
    const auto& c = ctx.cfg;
    const Box box = domain_box(c);
    if (box.dim() != 2) throw ConfigError("geometry pipeline needs n = 2");
    std::mt19937_64 rng(ctx.seed);
    auto csv = ctx.csv("geometry.csv", {"pair", "shape1", "shape2", "d_mu", "dh_closures", "dh_boundaries"});
    int violations = 0;
    double c_boundary = 0.0, c_closure = 0.0;
    const int pairs = c.integer("verify", "shape_pairs");
    for (int i = 0; i < pairs; ++i) {
        const Shape a = random_star(rng), b = random_star(rng);
        const InclusionFamily f1(2, box, {a}), f2(2, box, {b});
        const ModifiedDistance md = modified_distance(f1, f2, 0.0);
        violations += md.value > md.hausdorff_closures;
        c_boundary = std::max(c_boundary, md.hausdorff_boundaries / md.value);
        c_closure = std::max(c_closure, md.hausdorff_closures / md.hausdorff_boundaries);
        csv.row({double(i), a.describe(), b.describe(), md.value, md.hausdorff_closures, md.hausdorff_boundaries});
    }
    ctx.accept("pairs with d_mu > d_H(closures)", "modified distance never exceeds the Hausdorff distance",
               double(violations), "==", 0.0);
    ctx.accept("fitted C in d_H(boundaries) <= C d_mu", "boundary distance is controlled by the modified distance",
               c_boundary, "<=", c.number("tolerance", "constant_max"));
    ctx.accept("fitted C in d_H(closures) <= C d_H(boundaries)", "closure distance is controlled by the boundary distance",
               c_closure, "<=", c.number("tolerance", "constant_max"));
}

void write_inequality(Context& ctx, const std::string& file, const InequalityReport& r) {
    auto csv = ctx.csv(file, {"instance", "lhs", "rhs", "slack", "own_constant"});
    for (const auto& e : r.entries) csv.row({e.descriptor, e.lhs, e.rhs, e.slack, e.fitted_constant});
    ctx.report.results[r.check] = {{"fitted_constant", r.fitted_constant}, {"statistic", r.statistic}, {"detail", r.detail}};
}

double min_slack(const InequalityReport& r) {
    double s = std::numeric_limits<double>::infinity();
    for (const auto& e : r.entries) s = std::min(s, e.slack);
    return s;
}

void run_two_sphere(Context& ctx) {
    const auto& c = ctx.cfg;
    const int n = c.integer("geometry", "n");
    const InequalityReport r = check_two_sphere_one_cylinder(caloric_suite(n, ctx.seed), c.number("verify", "r1"),
                                                             c.number("verify", "r2"), c.number("verify", "R"), n,
                                                             c.number("verify", "eta1"));
    write_inequality(ctx, "two_sphere.csv", r);
    ctx.accept("smallest slack at the global constant", "one fitted constant covers the whole caloric suite",
               min_slack(r), ">=", 0.0);
    ctx.accept("global constant finite", "the fit converged", std::isfinite(r.fitted_constant) ? 1.0 : 0.0, "==", 1.0);
}

void run_interpolation(Context& ctx) {
    const auto& c = ctx.cfg;
    const int n = c.integer("geometry", "n");
    const InequalityReport r = check_interpolation(interpolation_suite(n, ctx.seed), c.number("verify", "radius"), n);
    write_inequality(ctx, "interpolation.csv", r);
    ctx.accept("smallest slack at the global constant", "one constant covers the suite", min_slack(r), ">=", 0.0);
    ctx.accept("fitted constant", "constant stays moderate", r.fitted_constant, "<=", c.number("tolerance", "constant_max"));
}

void run_cylinder(Context& ctx) {
    const auto& c = ctx.cfg;
    const Grid g = make_grid(c);
    const int n = g.dim();
    const InclusionFamily q = family(c, "inclusion1");
    const Point xi = point_of(c.list("probe", "source"), n, "[probe] source");
    std::vector<CylinderInstance> inst;
    for (double d : {0.05, 0.1, 0.2, 0.3})
        for (double span : {2.0 * g.dt, 0.25 * g.T(), 0.5 * g.T(), g.T()}) {
            Point x0 = xi;
            x0(0) += d;
            const int m = std::max(1, static_cast<int>(std::lround(span / g.dt)));
            inst.push_back({xi, 0.0, x0, g.time(m)});
        }
    CylinderOptions opts;
    opts.delta1 = c.number("verify", "delta1");
    opts.solver = solver_options(c);
    const Material mat = materials(c).front();
    const InequalityReport r = check_cylinder_bound(q, mat, g, inst, opts);
    write_inequality(ctx, "cylinder.csv", r);
    ctx.accept("smallest slack at the global constant", "cylinder L2 bound holds with one constant in both cases",
               min_slack(r), ">=", 0.0);
}

void run_asymptotic(Context& ctx) {
    const auto& c = ctx.cfg;
    const Material mat = materials(c).front();
    const double rho0 = c.number("verify", "chart_rho0"), amp = c.number("verify", "amplitude");
    const auto xs = c.list("verify", "sample");
    const int n = static_cast<int>(xs.size());
    const Point xhat = point_of(xs, n, "[verify] sample");
    std::vector<AsymptoticSample> samples;
    double s = c.number("verify", "first_scale");
    for (int i = 0; i < c.integer("verify", "scales"); ++i, s *= c.number("verify", "scale_ratio"))
        samples.push_back({Point(xhat * s), s * s, -c.number("verify", "pole_depth") * s});
    AsymptoticOptions opts;
    opts.rho0 = rho0;
    opts.cone_C = c.number("verify", "cone_C");
    opts.halfwidth = c.number("verify", "box_halfwidth");
    opts.cells = c.integer("verify", "box_cells");
    opts.steps = c.integer("verify", "box_steps");
    opts.subsamples = c.integer("grid", "subsamples");
    opts.theta = c.number("grid", "theta");
    opts.min_slope = c.number("tolerance", "min_slope");
    const AsymptoticReport r = check_asymptotic_estimate(
        [amp, rho0](const Point& xp, double) { return amp * xp.squaredNorm() / (10.0 * rho0); }, mat, samples, opts);
    auto csv = ctx.csv("asymptotic.csv", {"scale", "distance", "value_diff", "gradient_diff", "kernel_gap", "bound"});
    PlotSeries plot{"asymptotic", "parabolic distance", "t^{n/2} |Gamma - Gamma_+|",
                    "curved against flat interface kernel", {"distance", "value_diff", "bound"}, {}, 1.0};
    for (std::size_t i = 0; i < r.points.size(); ++i) {
        const auto& p = r.points[i];
        csv.row({p.scale, p.distance, p.value_diff, p.gradient_diff, p.kernel_gap, r.value.entries[i].rhs});
        plot.rows.push_back({p.distance, p.value_diff, r.value.entries[i].rhs});
    }
    ctx.report.plots.push_back(plot);
    ctx.report.results["value_slope"] = r.value_fit.slope;
    ctx.report.results["value_r_squared"] = r.value_fit.r_squared;
    ctx.report.results["gradient_slope"] = r.gradient_fit.slope;
    ctx.report.results["beta"] = r.beta;
    ctx.report.results["value_constant"] = r.value.fitted_constant;
    ctx.report.results["gradient_constant"] = r.gradient.fitted_constant;
    ctx.report.results["discretization_floor"] = r.discretization_floor;
    ctx.accept("value-difference slope", "difference decays linearly in the parabolic distance", r.value_fit.slope, ">=",
               opts.min_slope);
    ctx.accept("smallest value slack", "value bound holds with one constant", min_slack(r.value), ">=", 0.0);
    ctx.accept("smallest gradient slack", "gradient bound holds with one constant and the fitted exponent",
               min_slack(r.gradient), ">=", 0.0);
}

void run_determinism(Context& ctx, const RunOptions& parent) {
    const auto& c = ctx.cfg;
    auto csv = ctx.csv("determinism.csv", {"config", "file", "crc_a", "crc_b", "match"});
    int mismatches = 0, files = 0;
    for (const auto& rel : split(c.text("determinism", "configs"), ',')) {
        if (rel.empty()) continue;
        fs::path p(rel);
        if (p.is_relative()) p = fs::path(c.base_dir()) / p;
        const ExperimentConfig sub = ExperimentConfig::load(p.string());
        if (sub.pipeline() == "determinism") throw ConfigError("determinism configs cannot nest");
        std::map<std::string, std::uint32_t> crc[2];
        for (int run = 0; run < 2; ++run) {
            RunOptions o;
            o.out_dir = (fs::path(ctx.dir) / (run == 0 ? "run_a" : "run_b") / sub.id()).string();
            o.log = parent.log;
            const ExperimentReport r = run_experiment(sub, o);
            for (const auto& f : r.csv_files) crc[run][f] = crc32_file((fs::path(o.out_dir) / f).string());
        }
        for (const auto& [f, a] : crc[0]) {
            const auto it = crc[1].find(f);
            const std::uint32_t b = it == crc[1].end() ? 0u : it->second;
            const bool same = it != crc[1].end() && a == b;
            mismatches += !same;
            ++files;
            char ha[16], hb[16];
            std::snprintf(ha, sizeof ha, "%08x", a);
            std::snprintf(hb, sizeof hb, "%08x", b);
            csv.row({sub.id(), f, std::string(ha), std::string(hb), same ? 1.0 : 0.0});
        }
    }
    ctx.report.results["files_compared"] = files;
    ctx.accept("CSV files compared", "determinism check covers output", double(files), ">=", 1.0);
    ctx.accept("hash mismatches", "same config and seed give identical CSVs", double(mismatches), "==", 0.0);
}

} // namespace

std::vector<std::string> emit_plotdata(const ExperimentReport& report, const std::string& dir) {
    std::vector<std::string> out;
    for (const auto& p : report.plots) {
        std::string name = "plot_" + p.name;
        for (auto& ch : name)
            if (!std::isalnum(static_cast<unsigned char>(ch)) && ch != '_' && ch != '.') ch = '_';
        {
            Csv csv((fs::path(dir) / (name + ".csv")).string(), p.columns);
            for (const auto& row : p.rows) csv.row(std::vector<Csv::Cell>(row.begin(), row.end()));
        }
        nlohmann::ordered_json side;
        side["data"] = name + ".csv";
        side["description"] = p.description;
        side["x_axis"] = p.x_axis;
        side["y_axis"] = p.y_axis;
        side["columns"] = p.columns;
        if (p.expected_slope) side["expected_slope"] = *p.expected_slope;
        std::ofstream((fs::path(dir) / (name + ".json")).string()) << side.dump(2) << '\n';
        out.push_back(name + ".csv");
    }
    return out;
}

std::string output_dir(const ExperimentConfig& cfg, const RunOptions& opts) {
    if (!opts.out_dir.empty()) return opts.out_dir;
    const std::string o = cfg.text("experiment", "output");
    if (o.empty()) return (fs::path("out") / cfg.id()).string();
    return o;
}

ExperimentReport run_experiment(const ExperimentConfig& cfg, const RunOptions& opts) {
    const auto start = std::chrono::steady_clock::now();
    ExperimentReport report;
    report.id = cfg.id();
    report.pipeline = cfg.pipeline();
    report.seed = opts.seed ? *opts.seed : cfg.seed();
    report.config = cfg.echo();
    report.config["experiment.seed"] = std::to_string(report.seed);
    const std::string dir = output_dir(cfg, opts);
    fs::create_directories(dir);
    Context ctx{cfg, report, dir, report.seed, opts.log};
    ctx.say("pipeline " + cfg.pipeline() + ", seed " + std::to_string(report.seed) + ", output " + dir);
    static const std::map<std::string, std::function<void(Context&)>> table = {
        {"convergence", run_convergence},
        {"identity", run_identity},
        {"dtn", run_dtn},
        {"kernel_jumps", run_kernel_jumps},
        {"scaling", run_scaling},
        {"calibrate", run_calibrate},
        {"blowup", run_blowup},
        {"detect", run_detect},
        {"convolution", run_convolution},
        {"geometry", run_geometry},
        {"two_sphere", run_two_sphere},
        {"interpolation", run_interpolation},
        {"cylinder", run_cylinder},
        {"asymptotic", run_asymptotic},
    };
    if (cfg.pipeline() == "determinism") {
        run_determinism(ctx, opts);
    } else {
        const auto it = table.find(cfg.pipeline());
        if (it == table.end()) throw ConfigError("unknown pipeline '" + cfg.pipeline() + "'");
        it->second(ctx);
    }
    for (const auto& f : emit_plotdata(report, dir)) report.csv_files.push_back(f);
    report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::ofstream((fs::path(dir) / "report.json").string()) << report.to_json().dump(2) << '\n';
    ctx.say(std::string(report.pass() ? "PASS" : "FAIL") + " in " + format_number(report.wall_seconds) + " s");
    return report;
}

} // namespace parprobe
