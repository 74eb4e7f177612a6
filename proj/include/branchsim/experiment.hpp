#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "branchsim/hjb.hpp"
#include "branchsim/riccati.hpp"
#include "branchsim/simulator.hpp"

namespace branchsim {

// ---------------------------------------------------------------------------
// Content hashing (SHA-256, hex-encoded) for reproducibility manifests.
// ---------------------------------------------------------------------------
std::string sha256_hex(const void* data, std::size_t bytes);
std::string sha256_hex(const std::string& text);
std::string sha256_file(const std::string& path);

// Writes <dir>/manifest.json listing each named file (relative to dir) with
// its content hash plus the given metadata pairs.  Keys are emitted sorted
// and nothing time- or path-dependent is included, so re-running a
// deterministic experiment yields a byte-identical manifest.
void write_manifest(const std::string& dir, const std::vector<std::string>& file_names,
                    const std::vector<std::pair<std::string, std::string>>& meta);

// ---------------------------------------------------------------------------
// Experiment configuration: one JSON document per run.  Unknown keys anywhere
// in the document are rejected so typos cannot silently disable options.
// ---------------------------------------------------------------------------

struct KineticRun {
    double x_lo = -4.0;
    double x_hi = 4.0;
    int n_x = 161;
    double T = 1.0;
    int n_t = 0;                    // 0 = smallest stable step count
    std::string terminal = "quad";  // quad | abs | zero
};

struct HJBRun {
    HJBGeometry geometry;
    int n_t = 0;  // 0 = auto from the stability bounds
    double a_lo = -1.0;
    double a_hi = 1.0;
    int a_count = 21;
};

struct ReportToggles {
    bool moments = false;    // population moment bounds (simulate)
    bool residuals = false;  // value-function compensator drift (estimate)
    bool growth = false;     // value-envelope fit (hjb)
    bool symmetry = false;   // policy exchangeability audit (simulate/estimate)
};

struct ExperimentConfig {
    std::string task;  // simulate | estimate | riccati | kinetic | hjb | verify
    std::uint64_t seed = 0;
    bool has_seed = false;  // seeds are mandatory for stochastic tasks

    std::string preset = "lq";
    std::vector<std::vector<double>> initial = {{0.0}};  // atom positions

    double t0 = 0.0;
    double T = 1.0;
    double dt = 1e-3;
    std::uint64_t max_population = 100000;
    std::uint64_t max_events = 1000000;

    std::string policy = "zero";  // zero | constant | riccati | kinetic | grid
    std::vector<double> action = {0.0};  // the constant policy's action
    std::string grid_dir;                // the grid policy's saved solution

    int replicates = 1000;
    int threads = 1;

    int riccati_steps = 1000;
    std::string lq_spec_file;  // optional constant-coefficient spec document

    KineticRun kinetic;
    HJBRun hjb;

    std::string suite;  // verify task: moments | lq | kinetic | hjb | symmetry | all
    std::string out;    // output directory (or single file for 1-file tasks)
    ReportToggles reports;

    // Original document text when parsed from JSON; echoed verbatim into the
    // output directory.  Empty for flag-built configs (the canonical dump is
    // echoed instead).
    std::string source_text;

    static ExperimentConfig from_json_text(const std::string& text);
    std::string to_json() const;
    void validate() const;  // throws std::invalid_argument on bad combinations
    SimConfig sim_config() const;
};

// Constant-coefficient linear-quadratic spec from JSON (matrices as nested
// arrays; every callable of the resulting spec is frozen to the document's
// constants).  Unknown keys are rejected.
LQSpec lq_spec_from_json_text(const std::string& text);

// ---------------------------------------------------------------------------
// Runner.  Exit codes: 0 = pass, 1 = an enabled check failed, 2 = bad
// configuration or usage, 3 = a simulation cap was exceeded.
// ---------------------------------------------------------------------------
struct RunResult {
    int exit_code = 0;
    std::string message;                 // human-readable outcome (one line per check)
    std::vector<std::string> artifacts;  // files written, relative to the out dir
};
RunResult run_experiment(const ExperimentConfig& cfg);

// ---------------------------------------------------------------------------
// Verification suites: pinned-seed acceptance bundles.
// ---------------------------------------------------------------------------
struct VerifyCheck {
    std::string name;
    bool pass = false;
    std::string detail;
};

struct VerifyReport {
    std::string suite;
    std::uint64_t seed = 0;
    std::vector<VerifyCheck> checks;

    bool pass() const;
    std::string text() const;     // one verdict line per check
    std::string to_json() const;  // deterministic serialization
};

std::vector<std::string> verify_suite_names();

// Runs the named bundle with its pinned seed.  If out_dir is non-empty the
// suite writes results.json plus a manifest; identical reruns produce
// byte-identical files.
VerifyReport verify_suite(const std::string& name, const std::string& out_dir);

}  // namespace branchsim
