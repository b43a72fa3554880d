#ifndef PARPROBE_EXPERIMENT_HPP
#define PARPROBE_EXPERIMENT_HPP

#include "parprobe/types.hpp"

#include <json.hpp>

#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace parprobe {

// INI-style experiment description validated against a fixed schema. Values
// may be overridden by environment variables PARPROBE_<SECTION>_<KEY>.
class ExperimentConfig {
public:
    static ExperimentConfig load(const std::string& path);
    static ExperimentConfig parse(const std::string& text, const std::string& origin = "<string>");

    const std::string& id() const { return id_; }
    const std::string& pipeline() const { return pipeline_; }
    std::uint64_t seed() const { return seed_; }
    void set_seed(std::uint64_t s) { seed_ = s; }
    // Directory of the config file; relative paths inside it resolve from here.
    const std::string& base_dir() const { return base_dir_; }

    bool given(const std::string& section, const std::string& key) const;
    std::string text(const std::string& section, const std::string& key) const;
    double number(const std::string& section, const std::string& key) const;
    int integer(const std::string& section, const std::string& key) const;
    std::vector<double> list(const std::string& section, const std::string& key) const;

    // Every schema key with its effective value.
    std::map<std::string, std::string> echo() const;

private:
    std::map<std::string, std::map<std::string, std::string>> values_;
    std::string id_, pipeline_, base_dir_ = ".";
    std::uint64_t seed_ = 1;
};

// Names of the pipelines a subcommand may run.
std::vector<std::string> pipelines_for(const std::string& subcommand);

struct AcceptanceEntry {
    std::string criterion; // what is checked
    std::string invariant; // the property it checks
    double value = 0.0;
    double threshold = 0.0;
    std::string comparison; // "<=", ">=", "in"
    double threshold_hi = 0.0;
    bool pass = false;
};

// One figure's data: columns of numbers plus axis metadata for the sidecar.
struct PlotSeries {
    std::string name;
    std::string x_axis, y_axis, description;
    std::vector<std::string> columns;
    std::vector<std::vector<double>> rows;
    std::optional<double> expected_slope;
};

struct ExperimentReport {
    std::string id, pipeline;
    std::uint64_t seed = 0;
    std::map<std::string, std::string> config;
    std::vector<std::string> csv_files; // relative to the output directory
    nlohmann::ordered_json results = nlohmann::ordered_json::object();
    std::vector<AcceptanceEntry> acceptance;
    std::vector<PlotSeries> plots;
    double wall_seconds = 0.0;
    bool pass() const;
    nlohmann::ordered_json to_json() const;
};

struct RunOptions {
    std::string out_dir;                 // overrides the config's output directory
    std::optional<std::uint64_t> seed;   // overrides the config's seed
    std::ostream* log = nullptr;
};

// Runs the configured pipeline, writes CSVs, plot data and report.json into
// the output directory and returns the report.
ExperimentReport run_experiment(const ExperimentConfig& cfg, const RunOptions& opts = {});

// plot_<name>.csv and plot_<name>.json per series; returns the CSV names.
std::vector<std::string> emit_plotdata(const ExperimentReport& report, const std::string& dir);

// Output directory that run_experiment would use.
std::string output_dir(const ExperimentConfig& cfg, const RunOptions& opts);

// Shortest round-trip decimal form with 17 significant digits.
std::string format_number(double v);

std::uint32_t crc32_file(const std::string& path);

} // namespace parprobe

#endif
