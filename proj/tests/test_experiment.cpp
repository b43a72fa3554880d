#include "parprobe/experiment.hpp"

#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

using namespace parprobe;
namespace fs = std::filesystem;

namespace {

const char* kConvolution = R"(
[experiment]
id = convolution_small
pipeline = convolution
seed = 4
[verify]
alpha = 0, 0.5
beta = 0, 0.5
pairs = 3
)";

std::string scratch(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("parprobe_test_" + name);
    fs::remove_all(p);
    return p.string();
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

} // namespace

TEST_CASE("config parsing and defaults") {
    const ExperimentConfig c = ExperimentConfig::parse(kConvolution);
    CHECK(c.id() == "convolution_small");
    CHECK(c.pipeline() == "convolution");
    CHECK(c.seed() == 4u);
    CHECK(c.list("verify", "alpha") == std::vector<double>{0, 0.5});
    CHECK(c.integer("verify", "pairs") == 3);
    CHECK(c.number("tolerance", "spread") == 1e-3);
    CHECK_FALSE(c.given("grid", "cells"));
    CHECK(c.echo().at("experiment.seed") == "4");
}

TEST_CASE("config schema violations") {
    CHECK_THROWS_AS(ExperimentConfig::parse("[experiment]\npipeline = convolution\n[bogus]\nx = 1\n"), ConfigError);
    CHECK_THROWS_AS(ExperimentConfig::parse("[experiment]\npipeline = convolution\nmystery = 1\n"), ConfigError);
    CHECK_THROWS_AS(ExperimentConfig::parse("[experiment]\npipeline = teleport\n"), ConfigError);
    CHECK_THROWS_AS(ExperimentConfig::parse("[experiment]\nid = x\n"), ConfigError);
    CHECK_THROWS_AS(ExperimentConfig::parse("[experiment]\npipeline = convolution\nseed = -3\n"), ConfigError);
    CHECK_THROWS_AS(ExperimentConfig::parse("[experiment]\npipeline = convolution\n[grid]\ncells = many\n"), ConfigError);
    CHECK_THROWS_AS(ExperimentConfig::parse("[experiment]\npipeline = convolution\n[grid]\nflux = upwind\n"), ConfigError);
    CHECK_THROWS_AS(ExperimentConfig::parse("[experiment]\npipeline = convolution\n[tolerance]\nrel = 0\n"), ConfigError);
    CHECK_THROWS_AS(ExperimentConfig::parse("[experiment]\npipeline = convolution\nid = a b\n"), ConfigError);
    CHECK_THROWS_AS(ExperimentConfig::load("/nonexistent/parprobe.cfg"), ConfigError);
}

TEST_CASE("environment overrides") {
    ::setenv("PARPROBE_VERIFY_PAIRS", "7", 1);
    const ExperimentConfig c = ExperimentConfig::parse(kConvolution);
    ::unsetenv("PARPROBE_VERIFY_PAIRS");
    CHECK(c.integer("verify", "pairs") == 7);
    ::setenv("PARPROBE_GRID_CELLS", "lots", 1);
    CHECK_THROWS_AS(ExperimentConfig::parse(kConvolution), ConfigError);
    ::unsetenv("PARPROBE_GRID_CELLS");
}

TEST_CASE("subcommand routing") {
    CHECK(pipelines_for("solve") == std::vector<std::string>{"convergence"});
    CHECK(pipelines_for("report") == std::vector<std::string>{"determinism"});
    CHECK_THROWS_AS(pipelines_for("launch"), ConfigError);
}

TEST_CASE("number formatting keeps 17 significant digits") {
    for (double v : {0.1, 1.0 / 3.0, 6.02214076e23, -2.5e-300}) CHECK(std::stod(format_number(v)) == v);
    CHECK(format_number(0.1) == "0.10000000000000001");
    CHECK(format_number(std::nan("")) == "nan");
}

TEST_CASE("crc32 of the standard check string") {
    const fs::path p = fs::temp_directory_path() / "parprobe_crc_check.txt";
    std::ofstream(p, std::ios::binary) << "123456789";
    CHECK(crc32_file(p.string()) == 0xCBF43926u);
    fs::remove(p);
}

TEST_CASE("a run writes CSVs and a report, and reruns are byte-identical") {
    const ExperimentConfig c = ExperimentConfig::parse(kConvolution);
    RunOptions a, b;
    a.out_dir = scratch("run_a");
    b.out_dir = scratch("run_b");
    const ExperimentReport ra = run_experiment(c, a), rb = run_experiment(c, b);
    CHECK(ra.pass());
    CHECK(ra.acceptance.size() == 2u);
    for (const auto& e : ra.acceptance) CHECK_FALSE(e.invariant.empty());
    REQUIRE(ra.csv_files == rb.csv_files);
    for (const auto& f : ra.csv_files) {
        CHECK(slurp(fs::path(a.out_dir) / f) == slurp(fs::path(b.out_dir) / f));
        CHECK(crc32_file((fs::path(a.out_dir) / f).string()) == crc32_file((fs::path(b.out_dir) / f).string()));
    }
    const auto report = nlohmann::json::parse(slurp(fs::path(a.out_dir) / "report.json"));
    CHECK(report["seed"] == 4);
    CHECK(report["pass"] == true);
    CHECK(report["config"]["verify.pairs"] == "3");
    RunOptions c2 = a;
    c2.seed = 99;
    CHECK(run_experiment(c, c2).seed == 99u);
}

TEST_CASE("an empty sweep gives an empty, passing report") {
    const ExperimentConfig c = ExperimentConfig::parse(R"(
[experiment]
id = empty_sweep
pipeline = detect
[grid]
cells = 8
steps = 4
[inclusion1]
shape = disk cx=0.5 cy=0.5 r=0.2
[inclusion2]
shape = disk cx=0.5 cy=0.5 r=0.2
[sweep]
noise =
)");
    RunOptions o;
    o.out_dir = scratch("empty_sweep");
    const ExperimentReport r = run_experiment(c, o);
    CHECK(r.pass());
    CHECK(r.acceptance.empty());
    REQUIRE(r.plots.size() == 1u);
    CHECK(r.plots[0].rows.empty());
}

TEST_CASE("plot data carries a sidecar with axes and slope") {
    ExperimentReport r;
    r.plots.push_back({"demo", "log h", "log u", "demo series", {"log_h", "log_u"}, {{0.0, 1.0}, {1.0, -1.0}}, -2.0});
    const std::string dir = scratch("plot");
    fs::create_directories(dir);
    const auto files = emit_plotdata(r, dir);
    REQUIRE(files.size() == 1u);
    CHECK(slurp(fs::path(dir) / "plot_demo.csv") == "log_h,log_u\n0,1\n1,-1\n");
    const auto side = nlohmann::json::parse(slurp(fs::path(dir) / "plot_demo.json"));
    CHECK(side["expected_slope"] == -2.0);
    CHECK(side["x_axis"] == "log h");
}

TEST_CASE("bad geometry in a config is a config error") {
    const ExperimentConfig c = ExperimentConfig::parse(R"(
[experiment]
pipeline = identity
[material]
k = 1
[inclusion1]
shape = disk cx=0.5 cy=0.5 r=0.2
[inclusion2]
shape = disk cx=0.5 cy=0.5 r=0.2
)");
    RunOptions o;
    o.out_dir = scratch("bad_k");
    CHECK_THROWS_AS(run_experiment(c, o), ConfigError);
}
