#include <doctest.h>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <sstream>
#include <stdexcept>
#include <string>

#include "branchsim/experiment.hpp"
#include "branchsim/hjb.hpp"
#include "branchsim/util.hpp"

using namespace branchsim;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    REQUIRE(in.good());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

// Fresh scratch directory per test case; wiped on entry so reruns are clean.
fs::path scratch(const std::string& leaf) {
    const fs::path root = fs::temp_directory_path() / "branchsim_experiment_tests";
    const fs::path dir = root / leaf;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

}  // namespace

TEST_SUITE("experiment") {

TEST_CASE("configurations round-trip through their canonical serialization") {
    const std::string text = R"({
        "task": "estimate",
        "seed": 42,
        "preset": "lq",
        "initial": [[-0.5], [0.3]],
        "sim": {"t0": 0.0, "T": 1.0, "dt": 0.015625, "max_population": 5000, "max_events": 20000},
        "policy": {"kind": "riccati"},
        "replicates": 128,
        "threads": 2,
        "riccati": {"steps": 500},
        "reports": {"residuals": true},
        "out": "somewhere"
    })";
    const ExperimentConfig a = ExperimentConfig::from_json_text(text);
    CHECK(a.task == "estimate");
    CHECK(a.has_seed);
    CHECK(a.seed == 42);
    CHECK(a.preset == "lq");
    CHECK(a.initial.size() == 2);
    CHECK(a.initial[1][0] == 0.3);
    CHECK(a.dt == 0.015625);
    CHECK(a.max_population == 5000);
    CHECK(a.policy == "riccati");
    CHECK(a.replicates == 128);
    CHECK(a.threads == 2);
    CHECK(a.riccati_steps == 500);
    CHECK(a.reports.residuals);
    CHECK_FALSE(a.reports.moments);
    CHECK(a.source_text == text);
    CHECK_NOTHROW(a.validate());

    const ExperimentConfig b = ExperimentConfig::from_json_text(a.to_json());
    CHECK(b.task == a.task);
    CHECK(b.seed == a.seed);
    CHECK(b.has_seed);
    CHECK(b.initial == a.initial);
    CHECK(b.dt == a.dt);
    CHECK(b.policy == a.policy);
    CHECK(b.replicates == a.replicates);
    CHECK(b.riccati_steps == a.riccati_steps);
    CHECK(b.reports.residuals == a.reports.residuals);
    CHECK(b.out == a.out);
}

TEST_CASE("unknown keys are rejected at every nesting level") {
    CHECK_THROWS_WITH_AS(
        (void)ExperimentConfig::from_json_text(R"({"task":"riccati","out":"x.csv","bogus":1})"),
        doctest::Contains("unknown key 'bogus'"), std::invalid_argument);
    CHECK_THROWS_WITH_AS((void)ExperimentConfig::from_json_text(
                             R"({"task":"simulate","sim":{"dt":0.1,"step":0.1},"out":"d"})"),
                         doctest::Contains("unknown key 'step'"), std::invalid_argument);
    CHECK_THROWS_WITH_AS((void)ExperimentConfig::from_json_text(
                             R"({"task":"estimate","policy":{"kind":"zero","delta":2},"out":"d"})"),
                         doctest::Contains("unknown key 'delta'"), std::invalid_argument);
    CHECK_THROWS_WITH_AS((void)ExperimentConfig::from_json_text(
                             R"({"task":"hjb","reports":{"growht":true},"out":"d"})"),
                         doctest::Contains("unknown key 'growht'"), std::invalid_argument);
    CHECK_THROWS_AS((void)ExperimentConfig::from_json_text("not json at all"),
                    std::invalid_argument);
}

TEST_CASE("stochastic tasks refuse to run without an explicit seed") {
    ExperimentConfig c = ExperimentConfig::from_json_text(
        R"({"task":"estimate","preset":"lq","out":"d","replicates":16})");
    CHECK_FALSE(c.has_seed);
    CHECK_THROWS_WITH_AS(c.validate(), doctest::Contains("seed"), std::invalid_argument);
    const RunResult rr = run_experiment(c);
    CHECK(rr.exit_code == 2);

    // deterministic tasks are fine without one
    ExperimentConfig k = ExperimentConfig::from_json_text(
        R"({"task":"kinetic","kinetic":{"n_x":41,"terminal":"quad"},"out":"h.csv"})");
    CHECK_NOTHROW(k.validate());
}

TEST_CASE("misconfigured runs are reported as usage errors, not crashes") {
    auto code_of = [](const std::string& text) {
        return run_experiment(ExperimentConfig::from_json_text(text)).exit_code;
    };
    CHECK(code_of(R"({"task":"launch","out":"d"})") == 2);                      // unknown task
    CHECK(code_of(R"({"task":"riccati"})") == 2);                              // missing out
    CHECK(code_of(R"({"task":"verify","suite":"everything"})") == 2);          // unknown suite
    CHECK(code_of(R"({"task":"simulate","seed":1,"preset":"nope","out":"d"})") == 2);
    CHECK(code_of(R"({"task":"estimate","seed":1,"replicates":1,"out":"d"})") == 2);
    CHECK(code_of(
              R"({"task":"simulate","seed":1,"sim":{"dt":-0.5},"out":"d"})") == 2);
    CHECK(code_of(
              R"({"task":"estimate","seed":1,"policy":{"kind":"grid"},"out":"d"})") == 2);
    // hjb writes a directory of artifacts, never a single file
    CHECK(code_of(R"({"task":"hjb","preset":"pure-death","out":"grid.csv"})") == 2);
    // residual reports need the quadratic feedback they are checked against
    CHECK(code_of(
              R"({"task":"estimate","seed":1,"reports":{"residuals":true},"out":"d"})") == 2);
}

TEST_CASE("quadratic spec documents parse with defaults and strict keys") {
    const LQSpec s = lq_spec_from_json_text(
        R"({"d":1,"q":1,"B":[[0.5]],"sigma":2.0,"gamma":0.3,"offspring":[0,0,1],
            "Cbar":[[0.25]],"H":[[2.0]],"h":0.1,"T":2.0})");
    CHECK(s.d == 1);
    CHECK(s.q == 1);
    CHECK(s.B(0.7)(0, 0) == 0.5);
    CHECK(s.Bbar(0.0)(0, 0) == 1.0);  // defaulted
    CHECK(s.sigma(0.3) == 2.0);
    CHECK(s.gamma(0.9) == 0.3);
    CHECK(s.offspring.p.size() == 3);
    CHECK(s.offspring.mean() == 2.0);
    CHECK(s.Cbar(0.0)(0, 0) == 0.25);
    CHECK(s.C(0.0)(0, 0) == 0.0);  // defaulted
    CHECK(s.H(0, 0) == 2.0);
    CHECK(s.h == 0.1);
    CHECK(s.T == 2.0);

    CHECK_THROWS_WITH_AS((void)lq_spec_from_json_text(R"({"Q":[[1.0]]})"),
                         doctest::Contains("unknown key 'Q'"), std::invalid_argument);
    CHECK_THROWS_AS((void)lq_spec_from_json_text(R"({"d":2,"B":[[1,0]]})"),
                    std::invalid_argument);  // wrong shape
    CHECK_THROWS_AS((void)lq_spec_from_json_text(R"({"offspring":[0.4,0.4]})"),
                    std::invalid_argument);  // law does not sum to one
    CHECK_THROWS_AS((void)lq_spec_from_json_text(R"({"gamma":-1.0})"), std::invalid_argument);
}

TEST_CASE("content hashes match the published test vectors") {
    CHECK(sha256_hex(std::string()) ==
          "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
    CHECK(sha256_hex(std::string("abc")) ==
          "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    const fs::path dir = scratch("sha");
    std::ofstream(dir / "v.txt", std::ios::binary) << "abc";
    CHECK(sha256_file((dir / "v.txt").string()) == sha256_hex(std::string("abc")));
    CHECK_THROWS_AS((void)sha256_file((dir / "absent.txt").string()), std::runtime_error);
}

TEST_CASE("manifests are deterministic and list every artifact hash") {
    const fs::path dir = scratch("manifest");
    std::ofstream(dir / "a.csv", std::ios::binary) << "x,y\n1,2\n";
    std::ofstream(dir / "b.json", std::ios::binary) << "{}\n";
    write_manifest(dir.string(), {"a.csv", "b.json"}, {{"format", "demo-v1"}});
    const std::string first = slurp(dir / "manifest.json");
    write_manifest(dir.string(), {"b.json", "a.csv"}, {{"format", "demo-v1"}});
    CHECK(slurp(dir / "manifest.json") == first);  // order-independent and byte-stable

    const json j = json::parse(first);
    CHECK(j.at("format") == "demo-v1");
    CHECK(j.at("files").size() == 2);
    CHECK(j.at("files").at("a.csv") == sha256_hex(std::string("x,y\n1,2\n")));
}

TEST_CASE("a cost estimate run writes a self-describing directory") {
    const fs::path dir = scratch("estimate");
    const std::string text = std::string(R"({
        "task": "estimate", "seed": 11, "preset": "lq",
        "initial": [[0.0]],
        "sim": {"T": 0.5, "dt": 0.03125, "max_population": 4000},
        "policy": {"kind": "zero"},
        "replicates": 64,
        "out": ")") + dir.string() + R"("})";
    const ExperimentConfig cfg = ExperimentConfig::from_json_text(text);
    const RunResult rr = run_experiment(cfg);
    CHECK(rr.exit_code == 0);
    CHECK(fs::exists(dir / "cost.json"));
    CHECK(fs::exists(dir / "config.json"));
    CHECK(fs::exists(dir / "result.json"));
    CHECK(fs::exists(dir / "manifest.json"));

    CHECK(slurp(dir / "config.json") == text);  // echoed verbatim
    const json cost = json::parse(slurp(dir / "cost.json"));
    CHECK(std::isfinite(cost.at("mean").get<double>()));
    CHECK(cost.at("replicates").get<int>() == 64);
    const json manifest = json::parse(slurp(dir / "manifest.json"));
    CHECK(manifest.at("files").contains("cost.json"));
    CHECK(manifest.at("seed") == "11");

    // an identical rerun reproduces every artifact bit-for-bit
    const std::string before = slurp(dir / "manifest.json");
    const RunResult rr2 = run_experiment(cfg);
    CHECK(rr2.exit_code == 0);
    CHECK(slurp(dir / "manifest.json") == before);
}

TEST_CASE("single-file outputs keep only the primary artifact") {
    const fs::path dir = scratch("singlefile");
    const fs::path out = dir / "cost.json";
    ExperimentConfig cfg = ExperimentConfig::from_json_text(std::string(R"({
        "task": "estimate", "seed": 3, "preset": "kinetic",
        "sim": {"T": 0.25, "dt": 0.03125},
        "policy": {"kind": "constant", "action": [0.5]},
        "replicates": 32,
        "out": ")") + out.string() + R"("})");
    const RunResult rr = run_experiment(cfg);
    CHECK(rr.exit_code == 0);
    CHECK(fs::exists(out));
    CHECK_FALSE(fs::exists(dir / "config.json"));
    CHECK_FALSE(fs::exists(dir / "manifest.json"));
    CHECK(std::isfinite(json::parse(slurp(out)).at("mean").get<double>()));
}

TEST_CASE("population caps surface as the dedicated exit status") {
    const fs::path dir = scratch("caps");
    // a supercritical population with a cap of two particles must overflow
    const ExperimentConfig cfg = ExperimentConfig::from_json_text(std::string(R"({
        "task": "simulate", "seed": 5, "preset": "yule",
        "sim": {"T": 20.0, "dt": 0.5, "max_population": 2},
        "out": ")") + dir.string() + R"("})");
    const RunResult rr = run_experiment(cfg);
    CHECK(rr.exit_code == 3);
    CHECK(fs::exists(dir / "error.json"));
    const json err = json::parse(slurp(dir / "error.json"));
    CHECK(err.at("exit_code").get<int>() == 3);
}

TEST_CASE("a moment-bound run checks the declared envelopes and passes") {
    const fs::path dir = scratch("moments");
    const ExperimentConfig cfg = ExperimentConfig::from_json_text(std::string(R"({
        "task": "simulate", "seed": 7, "preset": "yule",
        "sim": {"T": 1.0, "dt": 0.05},
        "replicates": 400,
        "reports": {"moments": true},
        "out": ")") + dir.string() + R"("})");
    const RunResult rr = run_experiment(cfg);
    CHECK(rr.exit_code == 0);
    CHECK(fs::exists(dir / "moments.csv"));
    const json res = json::parse(slurp(dir / "result.json"));
    CHECK(res.at("pass").get<bool>());
    REQUIRE(res.at("checks").size() == 2);
    for (const json& c : res.at("checks")) CHECK(c.at("pass").get<bool>());
}

TEST_CASE("the quadratic feedback estimate passes its compensator audit") {
    const fs::path dir = scratch("residuals");
    const ExperimentConfig cfg = ExperimentConfig::from_json_text(std::string(R"({
        "task": "estimate", "seed": 13, "preset": "lq",
        "initial": [[0.4]],
        "sim": {"T": 1.0, "dt": 0.015625},
        "policy": {"kind": "riccati"},
        "replicates": 300,
        "reports": {"residuals": true},
        "out": ")") + dir.string() + R"("})");
    const RunResult rr = run_experiment(cfg);
    CHECK(rr.exit_code == 0);
    CHECK(fs::exists(dir / "residuals.csv"));
    const json res = json::parse(slurp(dir / "result.json"));
    REQUIRE(res.at("checks").size() == 1);
    CHECK(res.at("checks")[0].at("name") == "value-compensator-martingale");
    CHECK(res.at("checks")[0].at("pass").get<bool>());
}

TEST_CASE("a solved value grid feeds the grid policy back into estimation") {
    const fs::path dir = scratch("hjbrun");
    const ExperimentConfig solve = ExperimentConfig::from_json_text(std::string(R"({
        "task": "hjb", "preset": "pure-death",
        "hjb": {"x_lo": -1.0, "x_hi": 1.0, "n_x": 9, "T": 0.25, "n_max": 2,
                 "a_lo": 0.0, "a_hi": 0.0, "a_count": 1},
        "reports": {"growth": true},
        "out": ")") + dir.string() + R"("})");
    const RunResult rr = run_experiment(solve);
    CHECK(rr.exit_code == 0);
    for (const char* name : {"meta.json", "values.bin", "policy.bin", "growth.json",
                             "config.json", "result.json", "manifest.json"})
        CHECK(fs::exists(dir / name));

    const HJBSolution sol = load_value_grid(dir.string());
    CHECK(sol.grid.n_x == 9);
    CHECK(sol.grid.n_max == 2);

    const std::string manifest = slurp(dir / "manifest.json");
    CHECK(run_experiment(solve).exit_code == 0);
    CHECK(slurp(dir / "manifest.json") == manifest);  // deterministic rerun

    const fs::path est = scratch("hjbrun_estimate");
    const ExperimentConfig use = ExperimentConfig::from_json_text(std::string(R"({
        "task": "estimate", "seed": 21, "preset": "pure-death",
        "initial": [[0.25]],
        "sim": {"T": 0.25, "dt": 0.015625},
        "policy": {"kind": "grid", "grid_dir": ")") + dir.string() + R"("},
        "replicates": 40,
        "out": ")" + est.string() + R"("})");
    CHECK(run_experiment(use).exit_code == 0);
    CHECK(fs::exists(est / "cost.json"));
}

TEST_CASE("verification suites are reproducible down to the manifest bytes") {
    const fs::path a = scratch("verify_a");
    const fs::path b = scratch("verify_b");
    const VerifyReport ra = verify_suite("kinetic", a.string());
    const VerifyReport rb = verify_suite("kinetic", b.string());
    CHECK(ra.pass());
    CHECK(rb.pass());
    CHECK(ra.checks.size() == rb.checks.size());
    CHECK(slurp(a / "results.json") == slurp(b / "results.json"));
    CHECK(slurp(a / "manifest.json") == slurp(b / "manifest.json"));
    const json res = json::parse(slurp(a / "results.json"));
    CHECK(res.at("suite") == "kinetic");
    CHECK(res.at("pass").get<bool>());

    CHECK_THROWS_AS((void)verify_suite("nonsense", ""), std::invalid_argument);
}

TEST_CASE("the verify task aggregates suite verdicts into one exit status") {
    const ExperimentConfig cfg =
        ExperimentConfig::from_json_text(R"({"task":"verify","suite":"kinetic"})");
    const RunResult rr = run_experiment(cfg);
    CHECK(rr.exit_code == 0);
    CHECK(rr.message.find("kinetic/") != std::string::npos);
    CHECK(rr.message.find("[FAIL]") == std::string::npos);
}

}  // TEST_SUITE
