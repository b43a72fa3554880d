#include "parprobe/experiment.hpp"

#include <CLI11.hpp>
#include <tbb/global_control.h>
#include <tbb/task_group.h>

#include <algorithm>
#include <exception>
#include <filesystem>
#include <iostream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

using namespace parprobe;

namespace {

constexpr int kPass = 0, kFail = 1, kConfig = 2;

struct Outcome {
    int code = kPass;
    std::string message;
    std::optional<ExperimentReport> report;
};

Outcome run_one(const ExperimentConfig& cfg, const RunOptions& base, bool several) {
    Outcome o;
    RunOptions opts = base;
    if (several && !opts.out_dir.empty()) opts.out_dir = (std::filesystem::path(opts.out_dir) / cfg.id()).string();
    try {
        o.report = run_experiment(cfg, opts);
        o.code = o.report->pass() ? kPass : kFail;
    } catch (const ConfigError& e) {
        o.code = kConfig;
        o.message = cfg.id() + ": configuration error: " + e.what();
    } catch (const std::exception& e) {
        o.code = kFail;
        o.message = cfg.id() + ": " + e.what();
    }
    return o;
}

void summarize(const Outcome& o) {
    if (!o.message.empty()) std::cerr << o.message << '\n';
    if (!o.report) return;
    for (const auto& e : o.report->acceptance)
        std::cout << (e.pass ? "PASS " : "FAIL ") << o.report->id << " | " << e.criterion << " = "
                  << format_number(e.value) << '\n';
    std::cout << o.report->id << ": " << (o.report->pass() ? "pass" : "FAIL") << " ("
              << o.report->acceptance.size() << " checks)\n";
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Parabolic transmission problems, DtN maps and singular probes"};
    app.require_subcommand(1);

    std::vector<std::string> configs;
    int jobs = 0;
    std::optional<std::uint64_t> seed;
    std::string out;
    bool quiet = false;

    const std::vector<std::pair<std::string, std::string>> subs = {
        {"solve", "forward solver refinement study"},
        {"dtn", "discrete DtN maps and the gap identity"},
        {"kernel", "flat-interface kernel checks"},
        {"probe", "blow-up sweep of the gap functional"},
        {"detect", "noisy detection sweep"},
        {"calibrate", "probe parameter calibration and scaling"},
        {"verify", "inequality harnesses"},
        {"report", "determinism check over other configs"},
    };
    for (const auto& [name, help] : subs) {
        auto* s = app.add_subcommand(name, help);
        s->add_option("--config", configs, "experiment config (repeatable)")->required()->check(CLI::ExistingFile);
        s->add_option("--jobs", jobs, "worker threads (0: all cores)")->check(CLI::NonNegativeNumber);
        s->add_option("--seed", seed, "override the config seed");
        s->add_option("--out", out, "output directory");
        s->add_flag("--quiet", quiet, "no progress log");
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? kPass : kConfig;
    }

    const std::string sub = app.get_subcommands().front()->get_name();
    std::unique_ptr<tbb::global_control> limit;
    if (jobs > 0) limit = std::make_unique<tbb::global_control>(tbb::global_control::max_allowed_parallelism, jobs);

    std::vector<ExperimentConfig> loaded;
    try {
        const auto allowed = pipelines_for(sub);
        for (const auto& path : configs) {
            ExperimentConfig cfg = ExperimentConfig::load(path);
            if (std::find(allowed.begin(), allowed.end(), cfg.pipeline()) == allowed.end()) {
                std::string list;
                for (const auto& a : allowed) list += (list.empty() ? "" : ", ") + a;
                throw ConfigError(path + ": pipeline '" + cfg.pipeline() + "' is not run by '" + sub +
                                  "' (expected one of: " + list + ")");
            }
            loaded.push_back(std::move(cfg));
        }
    } catch (const ConfigError& e) {
        std::cerr << "configuration error: " << e.what() << '\n';
        return kConfig;
    }

    RunOptions base;
    base.out_dir = out;
    base.seed = seed;
    base.log = quiet ? nullptr : &std::cerr;

    std::vector<Outcome> outcomes(loaded.size());
    const bool several = loaded.size() > 1;
    tbb::task_group tasks;
    for (std::size_t i = 0; i < loaded.size(); ++i)
        tasks.run([&, i] { outcomes[i] = run_one(loaded[i], base, several); });
    tasks.wait();

    int code = kPass;
    for (const auto& o : outcomes) {
        summarize(o);
        code = std::max(code, o.code);
    }
    return code;
}
