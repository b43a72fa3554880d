// Runs the shipped acceptance configs and prints one line per criterion.
#include "parprobe/experiment.hpp"

#include <chrono>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <string>

using namespace parprobe;

int main(int argc, char** argv) {
    const std::filesystem::path cfg_dir = PARPROBE_EXPERIMENTS_DIR;
    const std::filesystem::path out = argc > 1 ? argv[1] : "acceptance_out";
    const char* files[] = {"ac1_scaling.cfg",   "ac2_convolution.cfg", "ac3_kernel.cfg",      "ac4_identity.cfg",
                           "ac5_blowup.cfg",    "ac6_geometry.cfg",   "ac7_two_sphere.cfg",  "ac8_asymptotic.cfg",
                           "ac9_convergence.cfg", "ac10_determinism.cfg"};
    int failures = 0;
    for (int i = 0; i < 10; ++i) {
        const auto start = std::chrono::steady_clock::now();
        bool pass = false;
        std::string note;
        try {
            const ExperimentConfig cfg = ExperimentConfig::load((cfg_dir / files[i]).string());
            RunOptions o;
            o.out_dir = (out / cfg.id()).string();
            const ExperimentReport r = run_experiment(cfg, o);
            pass = r.pass();
            int ok = 0;
            for (const auto& e : r.acceptance) {
                ok += e.pass;
                if (!e.pass) note += " [failed: " + e.criterion + " = " + format_number(e.value) + "]";
            }
            note = std::to_string(ok) + "/" + std::to_string(r.acceptance.size()) + " checks" + note;
        } catch (const std::exception& e) {
            note = std::string("error: ") + e.what();
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        std::printf("AC%-2d %s  %-22s %s (%.1f s)\n", i + 1, pass ? "PASS" : "FAIL", files[i], note.c_str(), secs);
        std::fflush(stdout);
        failures += !pass;
    }
    return failures == 0 ? 0 : 1;
}
