// branchctl: command-line front end for the branching-diffusion toolkit.
//
// Subcommands map onto the experiment runner's tasks; every run is a pure
// function of its configuration and seed, writes self-describing artifacts
// (config echo + content-hash manifest), and reports through its exit status:
//   0  success, all enabled checks passed
//   1  a check failed (or an unexpected runtime failure)
//   2  usage or configuration error
//   3  a simulation cap was exceeded

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "branchsim/coefficients.hpp"
#include "branchsim/experiment.hpp"

namespace {

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::invalid_argument("cannot read file: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

int step_count(const std::string& s, const char* flag) {  // "auto" -> 0
    if (s == "auto") return 0;
    try {
        std::size_t used = 0;
        const int v = std::stoi(s, &used);
        if (used == s.size() && v >= 0) return v;
    } catch (...) {
    }
    throw std::invalid_argument(std::string(flag) + " expects a nonnegative integer or 'auto'");
}

}  // namespace

int main(int argc, char** argv) {
    using namespace branchsim;

    CLI::App app{"simulation and numerical control toolkit for branching particle systems"};
    app.fallthrough();
    app.require_subcommand(1);

    std::string config_file;
    std::uint64_t seed = 0;
    int threads = 1;
    std::string out;
    auto* o_config =
        app.add_option("--config", config_file, "JSON experiment configuration to start from");
    auto* o_seed = app.add_option("--seed", seed, "base seed (mandatory for stochastic tasks)");
    auto* o_threads = app.add_option("--threads", threads, "worker threads for replicate batches");
    auto* o_out = app.add_option("--out", out, "output directory, or a single .json/.csv file");

    // shared simulation / policy flags (simulate + estimate)
    std::string preset = "lq";
    std::vector<double> initial;
    double t0 = 0.0, T = 1.0, dt = 1e-3;
    std::uint64_t max_population = 0, max_events = 0;
    int replicates = 0;
    std::string policy;
    std::vector<double> action;
    std::string grid_dir, spec_file;
    int ric_steps = 0;
    bool f_moments = false, f_residuals = false, f_symmetry = false, f_growth = false;

    struct SimOpts {
        CLI::Option *preset, *initial, *t0, *T, *dt, *maxpop, *maxev, *reps, *policy, *action,
            *grid, *spec, *steps;
    };
    const auto add_sim_flags = [&](CLI::App* c) {
        SimOpts o;
        o.preset = c->add_option("--preset", preset, "model preset name");
        o.initial = c->add_option("--initial", initial,
                                  "initial particle positions (one per particle, 1-d models)");
        o.t0 = c->add_option("--t0", t0, "start time");
        o.T = c->add_option("--T", T, "horizon");
        o.dt = c->add_option("--dt", dt, "Euler step");
        o.maxpop = c->add_option("--max-population", max_population, "population cap");
        o.maxev = c->add_option("--max-events", max_events, "event cap");
        o.reps = c->add_option("--replicates", replicates, "number of replicates");
        o.policy = c->add_option("--policy", policy,
                                 "control policy: zero, constant, riccati, kinetic, grid");
        o.action = c->add_option("--action", action, "action vector for --policy constant");
        o.grid = c->add_option("--grid-dir", grid_dir,
                               "saved value-grid directory for --policy grid");
        o.spec =
            c->add_option("--spec", spec_file, "quadratic spec document for --policy riccati");
        o.steps = c->add_option("--steps", ric_steps, "backward sweep steps for the feedback");
        return o;
    };

    auto* c_sim = app.add_subcommand(
        "simulate", "run one trajectory, or a replicate batch of moment statistics");
    const SimOpts sim_opts = add_sim_flags(c_sim);
    c_sim->add_flag("--moments", f_moments, "replicate batch with population moment bounds");
    auto* sim_sym =
        c_sim->add_flag("--symmetry", f_symmetry, "audit the policy for exchangeability");

    auto* c_est = app.add_subcommand("estimate", "Monte Carlo estimate of the expected cost");
    const SimOpts est_opts = add_sim_flags(c_est);
    auto* est_res = c_est->add_flag("--residuals", f_residuals,
                                    "audit the value compensator for the martingale property");
    auto* est_sym =
        c_est->add_flag("--symmetry", f_symmetry, "audit the policy for exchangeability");

    std::string r_spec;
    int r_steps = 1000;
    auto* c_ric = app.add_subcommand("riccati", "backward sweep of the quadratic value coefficients");
    auto* o_rspec = c_ric->add_option("--spec", r_spec, "quadratic spec document (JSON)");
    auto* o_rsteps = c_ric->add_option("--steps", r_steps, "number of backward steps");

    std::string k_terminal = "quad", k_nt = "auto";
    double k_xlo = -4.0, k_xhi = 4.0;
    double k_T = 1.0;
    int k_nx = 161;
    auto* c_kin = app.add_subcommand("kinetic", "per-particle value of the one-body control problem");
    auto* o_kterm = c_kin->add_option("--terminal", k_terminal, "terminal data: quad, abs or zero");
    auto* o_kxlo = c_kin->add_option("--xlo", k_xlo, "left end of the spatial box");
    auto* o_kxhi = c_kin->add_option("--xhi", k_xhi, "right end of the spatial box");
    auto* o_knx = c_kin->add_option("--nx", k_nx, "spatial nodes");
    auto* o_kT = c_kin->add_option("--T", k_T, "horizon");
    auto* o_knt = c_kin->add_option("--nt", k_nt, "time steps, or 'auto' for the stability bound");

    std::string h_nt = "auto";
    double h_xlo = -4.0, h_xhi = 4.0, h_T = 1.0, h_alo = -1.0, h_ahi = 1.0;
    int h_nx = 41, h_nmax = 2, h_acount = 21, h_stride = 0;
    auto* c_hjb = app.add_subcommand("hjb", "value grid on the truncated population hierarchy");
    auto* o_hpreset = c_hjb->add_option("--preset", preset, "model preset name");
    auto* o_hnmax = c_hjb->add_option("--nmax", h_nmax, "largest stored population size");
    auto* o_hxlo = c_hjb->add_option("--xlo", h_xlo, "left end of the spatial box");
    auto* o_hxhi = c_hjb->add_option("--xhi", h_xhi, "right end of the spatial box");
    auto* o_hnx = c_hjb->add_option("--nx", h_nx, "spatial nodes per particle");
    auto* o_hT = c_hjb->add_option("--T", h_T, "horizon");
    auto* o_hnt = c_hjb->add_option("--nt", h_nt, "time steps, or 'auto' for the stability bound");
    auto* o_hstride = c_hjb->add_option("--stride", h_stride, "keep every k-th time slice");
    auto* o_halo = c_hjb->add_option("--alo", h_alo, "smallest action");
    auto* o_hahi = c_hjb->add_option("--ahi", h_ahi, "largest action");
    auto* o_hacount = c_hjb->add_option("--acount", h_acount, "action grid size");
    auto* hjb_growth =
        c_hjb->add_flag("--growth", f_growth, "fit polynomial growth envelopes to the values");
    auto* hjb_sym = c_hjb->add_flag("--symmetry", f_symmetry,
                                    "audit the stored values for permutation invariance");

    std::string suite;
    auto* c_ver = app.add_subcommand("verify", "run a pinned-seed verification suite");
    c_ver->add_option("suite", suite, "moments, lq, kinetic, hjb, symmetry or all")->required();

    std::string v_preset = "lq";
    int v_probes = 400;
    auto* c_val = app.add_subcommand("validate-assumptions",
                                     "probe a preset's declared coefficient bounds");
    c_val->add_option("--preset", v_preset, "model preset name");
    c_val->add_option("--probes", v_probes, "number of random probes");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (c_val->parsed()) {
            const Preset pre = make_preset(v_preset);
            ProbeConfig pc;
            pc.n_probes = v_probes;
            if (o_seed->count()) pc.seed = seed;
            const AssumptionReport rep = validate_assumptions(pre.model, &pre.cost, pc);
            std::fputs((rep.summary() + "\n").c_str(), stdout);
            return rep.pass ? 0 : 1;
        }

        ExperimentConfig cfg;
        if (o_config->count()) cfg = ExperimentConfig::from_json_text(slurp(config_file));
        if (o_seed->count()) {
            cfg.seed = seed;
            cfg.has_seed = true;
        }
        if (o_threads->count()) cfg.threads = threads;
        if (o_out->count()) cfg.out = out;

        if (c_sim->parsed() || c_est->parsed()) {
            cfg.task = c_sim->parsed() ? "simulate" : "estimate";
            const SimOpts& o = c_sim->parsed() ? sim_opts : est_opts;
            if (o.preset->count()) cfg.preset = preset;
            if (o.initial->count()) {
                cfg.initial.clear();
                for (double x : initial) cfg.initial.push_back({x});
            }
            if (o.t0->count()) cfg.t0 = t0;
            if (o.T->count()) cfg.T = T;
            if (o.dt->count()) cfg.dt = dt;
            if (o.maxpop->count()) cfg.max_population = max_population;
            if (o.maxev->count()) cfg.max_events = max_events;
            if (o.reps->count()) cfg.replicates = replicates;
            if (o.policy->count()) cfg.policy = policy;
            if (o.action->count()) {
                cfg.action = action;
                if (!o.policy->count() && cfg.policy == "zero") cfg.policy = "constant";
            }
            if (o.grid->count()) cfg.grid_dir = grid_dir;
            if (o.spec->count()) cfg.lq_spec_file = spec_file;
            if (o.steps->count()) cfg.riccati_steps = ric_steps;
            if (f_moments) cfg.reports.moments = true;
            if (est_res->count() && f_residuals) cfg.reports.residuals = true;
            if ((sim_sym->count() || est_sym->count()) && f_symmetry)
                cfg.reports.symmetry = true;
        } else if (c_ric->parsed()) {
            cfg.task = "riccati";
            if (o_rspec->count()) cfg.lq_spec_file = r_spec;
            if (o_rsteps->count()) cfg.riccati_steps = r_steps;
        } else if (c_kin->parsed()) {
            cfg.task = "kinetic";
            if (o_kterm->count()) cfg.kinetic.terminal = k_terminal;
            if (o_kxlo->count()) cfg.kinetic.x_lo = k_xlo;
            if (o_kxhi->count()) cfg.kinetic.x_hi = k_xhi;
            if (o_knx->count()) cfg.kinetic.n_x = k_nx;
            if (o_kT->count()) cfg.kinetic.T = k_T;
            if (o_knt->count()) cfg.kinetic.n_t = step_count(k_nt, "--nt");
        } else if (c_hjb->parsed()) {
            cfg.task = "hjb";
            if (o_hpreset->count()) cfg.preset = preset;
            if (o_hnmax->count()) cfg.hjb.geometry.n_max = h_nmax;
            if (o_hxlo->count()) cfg.hjb.geometry.x_lo = h_xlo;
            if (o_hxhi->count()) cfg.hjb.geometry.x_hi = h_xhi;
            if (o_hnx->count()) cfg.hjb.geometry.n_x = h_nx;
            if (o_hT->count()) cfg.hjb.geometry.T = h_T;
            if (o_hnt->count()) cfg.hjb.n_t = step_count(h_nt, "--nt");
            if (o_hstride->count()) cfg.hjb.geometry.store_stride = h_stride;
            if (o_halo->count()) cfg.hjb.a_lo = h_alo;
            if (o_hahi->count()) cfg.hjb.a_hi = h_ahi;
            if (o_hacount->count()) cfg.hjb.a_count = h_acount;
            if (hjb_growth->count() && f_growth) cfg.reports.growth = true;
            if (hjb_sym->count() && f_symmetry) cfg.reports.symmetry = true;
        } else if (c_ver->parsed()) {
            cfg.task = "verify";
            cfg.suite = suite;
        }

        const RunResult rr = run_experiment(cfg);
        if (!rr.message.empty()) {
            std::fputs(rr.message.c_str(), stdout);
            if (rr.message.back() != '\n') std::fputc('\n', stdout);
        }
        if (rr.exit_code != 0) {
            nlohmann::json err;
            err["exit_code"] = rr.exit_code;
            err["error"] = rr.message;
            std::fprintf(stderr, "%s\n", err.dump().c_str());
        }
        return rr.exit_code;
    } catch (const std::invalid_argument& e) {
        std::fprintf(stderr, "{\"exit_code\": 2, \"error\": %s}\n",
                     nlohmann::json(std::string(e.what())).dump().c_str());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "{\"exit_code\": 1, \"error\": %s}\n",
                     nlohmann::json(std::string(e.what())).dump().c_str());
        return 1;
    }
}
