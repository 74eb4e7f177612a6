#include "branchsim/experiment.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <limits>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "branchsim/cost.hpp"
#include "branchsim/kinetic.hpp"
#include "branchsim/rng.hpp"
#include "branchsim/util.hpp"

namespace branchsim {
namespace {

using nlohmann::json;
namespace fs = std::filesystem;

Eigen::VectorXd v1(double x) {
    Eigen::VectorXd v(1);
    v[0] = x;
    return v;
}

[[noreturn]] void bad(const std::string& msg) { throw std::invalid_argument("config: " + msg); }

// ---------------------------------------------------------------------------
// Files.
// ---------------------------------------------------------------------------

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) bad("cannot read file: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file(const std::string& path, const std::string& content) {
    const fs::path p(path);
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    out << content;
    out.flush();
    if (!out) throw std::runtime_error("write failed: " + path);
}

// ---------------------------------------------------------------------------
// Strict JSON field access: unknown keys and wrong types are configuration
// errors, never silent defaults.
// ---------------------------------------------------------------------------

void require_keys(const json& obj, const std::string& where,
                  std::initializer_list<const char*> allowed) {
    for (auto it = obj.begin(); it != obj.end(); ++it) {
        bool known = false;
        for (const char* k : allowed) known = known || it.key() == k;
        if (!known) bad("unknown key '" + it.key() + "' in " + where);
    }
}

const json& object_field(const json& o, const char* key) {
    const json& v = o.at(key);
    if (!v.is_object()) bad(std::string("'") + key + "' must be an object");
    return v;
}

double num_or(const json& o, const char* key, double dflt) {
    if (!o.contains(key)) return dflt;
    const json& v = o.at(key);
    if (!v.is_number()) bad(std::string("'") + key + "' must be a number");
    return v.get<double>();
}

int int_or(const json& o, const char* key, int dflt) {
    if (!o.contains(key)) return dflt;
    const json& v = o.at(key);
    if (!v.is_number_integer() && !v.is_number_unsigned())
        bad(std::string("'") + key + "' must be an integer");
    return v.get<int>();
}

std::uint64_t u64_or(const json& o, const char* key, std::uint64_t dflt) {
    if (!o.contains(key)) return dflt;
    const json& v = o.at(key);
    if (v.is_number_unsigned()) return v.get<std::uint64_t>();
    if (v.is_number_integer() && v.get<std::int64_t>() >= 0) return v.get<std::uint64_t>();
    bad(std::string("'") + key + "' must be a nonnegative integer");
}

bool bool_or(const json& o, const char* key, bool dflt) {
    if (!o.contains(key)) return dflt;
    const json& v = o.at(key);
    if (!v.is_boolean()) bad(std::string("'") + key + "' must be a boolean");
    return v.get<bool>();
}

std::string str_or(const json& o, const char* key, const std::string& dflt) {
    if (!o.contains(key)) return dflt;
    const json& v = o.at(key);
    if (!v.is_string()) bad(std::string("'") + key + "' must be a string");
    return v.get<std::string>();
}

std::vector<double> number_list(const json& v, const char* what) {
    std::vector<double> out;
    if (v.is_number()) {
        out.push_back(v.get<double>());
        return out;
    }
    if (!v.is_array()) bad(std::string(what) + " must be a number or an array of numbers");
    for (const json& e : v) {
        if (!e.is_number()) bad(std::string(what) + " must contain only numbers");
        out.push_back(e.get<double>());
    }
    return out;
}

Eigen::MatrixXd matrix_or(const json& o, const char* key, int rows, int cols,
                          const Eigen::MatrixXd& dflt) {
    if (!o.contains(key)) return dflt;
    const json& m = o.at(key);
    const std::string shape =
        std::string("'") + key + "' must be a " + std::to_string(rows) + "x" +
        std::to_string(cols) + " matrix (array of rows)";
    if (m.is_number()) {
        if (rows != 1 || cols != 1) bad(shape);
        Eigen::MatrixXd r(1, 1);
        r(0, 0) = m.get<double>();
        return r;
    }
    if (!m.is_array() || static_cast<int>(m.size()) != rows) bad(shape);
    Eigen::MatrixXd r(rows, cols);
    for (int i = 0; i < rows; ++i) {
        const json& row = m.at(static_cast<std::size_t>(i));
        if (!row.is_array() || static_cast<int>(row.size()) != cols) bad(shape);
        for (int j = 0; j < cols; ++j) {
            const json& e = row.at(static_cast<std::size_t>(j));
            if (!e.is_number()) bad(shape);
            r(i, j) = e.get<double>();
        }
    }
    return r;
}

json parse_json(const std::string& text, const char* what) {
    try {
        return json::parse(text);
    } catch (const json::exception& e) {
        bad(std::string(what) + " is not valid JSON: " + e.what());
    }
}

// ---------------------------------------------------------------------------
// Output sink: a directory that collects named artifacts, or a single file
// (when `out` ends in .json/.csv) that receives only the primary artifact.
// ---------------------------------------------------------------------------

struct Sink {
    bool file_mode = false;
    std::string dir;
    std::string file;
    std::vector<std::string> names;  // artifacts written so far, relative to dir

    void primary(const std::string& name, const std::string& content) {
        if (file_mode) {
            write_file(file, content);
        } else {
            write_file(dir + "/" + name, content);
            names.push_back(name);
        }
    }
    void aux(const std::string& name, const std::string& content) {
        if (file_mode) return;  // single-file runs keep only the primary artifact
        write_file(dir + "/" + name, content);
        names.push_back(name);
    }
};

VerifyCheck mk(std::string name, bool pass, std::string detail) {
    VerifyCheck c;
    c.name = std::move(name);
    c.pass = pass;
    c.detail = std::move(detail);
    return c;
}

std::string render_checks(const std::string& prefix, const std::vector<VerifyCheck>& checks) {
    std::ostringstream os;
    for (const VerifyCheck& c : checks)
        os << (c.pass ? "[ ok ] " : "[FAIL] ") << prefix << c.name << ": " << c.detail << "\n";
    return os.str();
}

// ---------------------------------------------------------------------------
// Problem assembly shared by the simulate / estimate tasks.
// ---------------------------------------------------------------------------

KineticSpec kinetic_spec_from(const KineticRun& k) {
    KineticSpec s = kinetic_benchmark_spec(k.x_lo, k.x_hi, k.n_x, k.T);
    if (k.terminal == "abs") {
        s.terminal = [](double x) { return std::abs(x); };
    } else if (k.terminal == "zero") {
        s.terminal = [](double) { return 0.0; };
    } else if (k.terminal != "quad") {
        bad("'kinetic.terminal' must be quad, abs or zero");
    }
    return s;
}

int kinetic_steps(const KineticRun& k) {
    if (k.n_t > 0) return k.n_t;
    const double dx = (k.x_hi - k.x_lo) / (k.n_x - 1);
    return std::max(1, static_cast<int>(std::ceil(k.T / (dx * dx) - 1e-9)));
}

struct Problem {
    ModelCoefficients model;
    CostSpec cost;
    ControlPolicy policy;
    std::optional<LQSpec> spec;
    std::optional<RiccatiSolution> ric;
};

Problem resolve_problem(const ExperimentConfig& cfg) {
    Problem p;
    if (cfg.policy == "riccati") {
        if (cfg.lq_spec_file.empty() && cfg.preset != "lq")
            bad("policy 'riccati' needs preset \"lq\" or an explicit 'riccati.spec' document");
        LQSpec spec = cfg.lq_spec_file.empty()
                          ? lq_canonical_scalar(1.0, 0.2)
                          : lq_spec_from_json_text(read_file(cfg.lq_spec_file));
        RiccatiSolution sol = solve_riccati(spec, cfg.riccati_steps);
        if (sol.blew_up)
            throw std::runtime_error(
                "the quadratic coefficient sweep diverged before t = 0; refine 'riccati.steps' "
                "or shorten the horizon");
        p.model = lq_model(spec);
        p.cost = lq_cost(spec);
        p.policy = lq_feedback(sol, spec);
        p.spec = std::move(spec);
        p.ric = std::move(sol);
    } else if (cfg.policy == "kinetic") {
        const KineticSpec spec = kinetic_spec_from(cfg.kinetic);
        const HSolution h = solve_h(spec, kinetic_steps(cfg.kinetic));
        p.model = kinetic_model(spec);
        p.cost = kinetic_cost(spec);
        p.policy = kinetic_feedback(h);
    } else {
        Preset pre = make_preset(cfg.preset);
        p.model = std::move(pre.model);
        p.cost = std::move(pre.cost);
        if (cfg.policy == "zero") {
            p.policy = constant_policy(Eigen::VectorXd::Zero(p.model.adim));
        } else if (cfg.policy == "constant") {
            if (static_cast<int>(cfg.action.size()) != p.model.adim)
                bad("'policy.action' must have " + std::to_string(p.model.adim) +
                    " entries for this model");
            Eigen::VectorXd a(p.model.adim);
            for (int i = 0; i < p.model.adim; ++i) a[i] = cfg.action[static_cast<std::size_t>(i)];
            p.policy = constant_policy(a);
        } else {  // grid
            if (!fs::exists(fs::path(cfg.grid_dir) / "meta.json"))
                bad("'policy.grid_dir' does not contain a saved value grid: " + cfg.grid_dir);
            const HJBSolution sol = load_value_grid(cfg.grid_dir);
            p.policy = sol.policy.policy();
        }
    }
    return p;
}

Configuration initial_population(const ExperimentConfig& cfg, int dim) {
    std::vector<Atom> atoms;
    atoms.reserve(cfg.initial.size());
    for (std::size_t i = 0; i < cfg.initial.size(); ++i) {
        const std::vector<double>& row = cfg.initial[i];
        if (static_cast<int>(row.size()) != dim)
            bad("'initial' particle " + std::to_string(i) + " has " + std::to_string(row.size()) +
                " coordinates but the model state dimension is " + std::to_string(dim));
        Eigen::VectorXd x(dim);
        for (int j = 0; j < dim; ++j) x[j] = row[static_cast<std::size_t>(j)];
        atoms.push_back(Atom{Label::root().child(static_cast<std::uint32_t>(i)), std::move(x)});
    }
    return Configuration(dim, std::move(atoms));
}

// ---------------------------------------------------------------------------
// Task bodies.  Each may add pass/fail checks and writes its artifacts
// through the sink; exceptions are classified by the caller.
// ---------------------------------------------------------------------------

void run_simulate(const ExperimentConfig& cfg, Sink& sink, std::vector<VerifyCheck>& checks,
                  std::ostringstream& note) {
    const Problem prob = resolve_problem(cfg);
    const Configuration init = initial_population(cfg, prob.model.dim);
    const SimConfig sc = cfg.sim_config();

    if (cfg.reports.moments && cfg.replicates > 1) {
        std::vector<double> sup, supsq, fin;
        sup.reserve(static_cast<std::size_t>(cfg.replicates));
        supsq.reserve(static_cast<std::size_t>(cfg.replicates));
        fin.reserve(static_cast<std::size_t>(cfg.replicates));
        std::ostringstream csv;
        csv << "replicate,final_size,sup_size,sup_size_sq,extinct\n";
        int lost = 0;
        for (int r = 0; r < cfg.replicates; ++r) {
            SimConfig rc = sc;
            rc.seed = derive_seed(cfg.seed, static_cast<std::uint64_t>(r));
            rc.record_frames = false;
            PopulationStats st;
            try {
                st = population_stats(simulate(init, prob.policy, prob.model, rc));
            } catch (const CapExceeded&) {
                if (100 * (++lost) > cfg.replicates) throw;
                continue;
            }
            sup.push_back(st.sup_size);
            supsq.push_back(st.sup_size_sq);
            fin.push_back(st.final_size);
            csv << r << ',' << format_double(st.final_size) << ',' << format_double(st.sup_size)
                << ',' << format_double(st.sup_size_sq) << ',' << (st.extinct ? 1 : 0) << '\n';
        }
        const MeanSE msup = mean_se(sup);
        const MeanSE msq = mean_se(supsq);
        const MeanSE mfin = mean_se(fin);
        const CoefficientBounds& b = prob.model.bounds;
        const double span = cfg.T - cfg.t0;
        const double m0 = init.mass();
        const double b1 = m0 * std::exp(b.rate_cap * b.offspring_mean_cap * span);
        const double b2 =
            m0 * m0 *
            std::exp(b.rate_cap * (b.offspring_mean_cap + b.offspring_factorial2_cap) * span);
        checks.push_back(mk("sup-mass-mean-bound", msup.mean <= b1 + 3 * msup.se,
                            "mean sup mass " + format_double(msup.mean) + " <= " +
                                format_double(b1) + " + 3 s.e. (" + format_double(3 * msup.se) +
                                ")"));
        checks.push_back(mk("sup-mass-square-bound", msq.mean <= b2 + 3 * msq.se,
                            "mean sup mass^2 " + format_double(msq.mean) + " <= " +
                                format_double(b2) + " + 3 s.e. (" + format_double(3 * msq.se) +
                                ")"));
        sink.primary("moments.csv", csv.str());
        note << "final mass " << format_double(mfin.mean) << " +- " << format_double(mfin.se)
             << " over " << sup.size() << " replicates (" << lost << " lost to caps)\n";
    } else {
        const Trajectory tr = simulate(init, prob.policy, prob.model, sc);
        std::ostringstream frames;
        frames << "t,size,sum_norm1,sum_sq\n";
        for (const auto& [t, state] : tr.frames)
            frames << format_double(t) << ',' << state.size() << ','
                   << format_double(state.sum_norm1()) << ',' << format_double(state.sum_sq())
                   << '\n';
        std::ostringstream events;
        events << "time,kind,parent,k,size_after\n";
        for (const Event& ev : tr.events)
            events << format_double(ev.time) << ','
                   << (ev.kind == Event::Kind::Branch ? "branch" : "horizon") << ','
                   << ev.parent.str() << ',' << ev.k << ',' << ev.after.size() << '\n';
        json fin;
        fin["extinct"] = tr.extinct;
        fin["extinction_time"] = tr.extinct ? json(tr.extinction_time) : json();
        fin["final_size"] = tr.final_state.size();
        fin["final_state"] = json::parse(tr.final_state.to_json());
        sink.primary("frames.csv", frames.str());
        sink.aux("events.csv", events.str());
        sink.aux("final.json", fin.dump(2) + "\n");
        note << "recorded " << tr.frames.size() << " frames and " << tr.events.size()
             << " events; final size " << tr.final_state.size() << "\n";
    }

    if (cfg.reports.symmetry) {
        const SymmetryReport sr = check_symmetric(prob.policy, derive_seed(cfg.seed, 0x53594D),
                                                  prob.model.dim, 200, cfg.t0, cfg.T);
        checks.push_back(mk("action-exchangeability", sr.pass,
                            sr.pass ? "worst action gap " + format_double(sr.worst)
                                    : sr.witness));
    }
}

void run_estimate(const ExperimentConfig& cfg, Sink& sink, std::vector<VerifyCheck>& checks,
                  std::ostringstream& note) {
    const Problem prob = resolve_problem(cfg);
    const Configuration init = initial_population(cfg, prob.model.dim);
    const SimConfig sc = cfg.sim_config();

    const CostEstimate est =
        estimate_J(init, prob.policy, prob.model, prob.cost, sc, cfg.replicates, cfg.threads);
    json cj;
    cj["mean"] = est.mean;
    cj["std_error"] = est.std_error;
    cj["replicates"] = est.replicates;
    cj["discarded"] = est.discarded;
    cj["min"] = est.min;
    cj["max"] = est.max;
    sink.primary("cost.json", cj.dump(2) + "\n");
    note << "cost estimate " << format_double(est.mean) << " +- " << format_double(est.std_error)
         << " from " << est.replicates << " replicates\n";
    if (prob.ric) {
        note << "quadratic value at the start: "
             << format_double(lq_value(*prob.ric, cfg.t0, init)) << "\n";
    }

    if (cfg.reports.residuals) {
        const RiccatiSolution& ric = *prob.ric;  // guaranteed by validate()
        const ValueFunction w = [&ric](double t, const Configuration& lam) {
            return lq_value(ric, t, lam);
        };
        const ResidualReport rep = verification_residual(w, init, prob.policy, prob.model,
                                                         prob.cost, sc, cfg.replicates, 8);
        checks.push_back(mk("value-compensator-martingale", rep.martingale_ok, rep.summary()));
        sink.aux("residuals.csv", rep.to_csv());
    }
    if (cfg.reports.symmetry) {
        const SymmetryReport sr = check_symmetric(prob.policy, derive_seed(cfg.seed, 0x53594D),
                                                  prob.model.dim, 200, cfg.t0, cfg.T);
        checks.push_back(mk("action-exchangeability", sr.pass,
                            sr.pass ? "worst action gap " + format_double(sr.worst)
                                    : sr.witness));
    }
}

void run_riccati(const ExperimentConfig& cfg, Sink& sink, std::vector<VerifyCheck>& checks,
                 std::ostringstream& note) {
    const LQSpec spec = cfg.lq_spec_file.empty()
                            ? lq_canonical_scalar(1.0, 0.2)
                            : lq_spec_from_json_text(read_file(cfg.lq_spec_file));
    const RiccatiSolution sol = solve_riccati(spec, cfg.riccati_steps);
    sink.primary("ric.csv", sol.to_csv());
    checks.push_back(mk("coefficients-stay-positive", sol.psd_ok,
                        sol.psd_ok ? "quadratic coefficient positive semidefinite at all " +
                                         std::to_string(sol.ts.size()) + " nodes"
                                   : "positivity lost at node " +
                                         std::to_string(sol.first_non_psd)));
    checks.push_back(mk("sweep-stays-finite", !sol.blew_up,
                        sol.blew_up ? "diverged; usable only on [" +
                                          format_double(sol.valid_from) + ", " +
                                          format_double(spec.T) + "]"
                                    : "finite on the whole horizon"));
    note << "backward sweep over " << sol.ts.size() << " nodes\n";
}

void run_kinetic(const ExperimentConfig& cfg, Sink& sink, std::vector<VerifyCheck>&,
                 std::ostringstream& note) {
    const KineticSpec spec = kinetic_spec_from(cfg.kinetic);
    const int n_t = kinetic_steps(cfg.kinetic);
    const HSolution sol = solve_h(spec, n_t);
    sink.primary("h.csv", sol.to_csv());
    sink.aux("meta.json", sol.meta_json() + "\n");
    note << "per-particle value on " << cfg.kinetic.n_x << " nodes x " << n_t
         << " steps, terminal '" << cfg.kinetic.terminal << "'\n";
}

void run_hjb(const ExperimentConfig& cfg, Sink& sink, std::vector<VerifyCheck>& checks,
             std::ostringstream& note) {
    if (sink.file_mode)
        bad("task 'hjb' writes a directory of artifacts; 'out' must not end in .json/.csv");
    const Preset pre = make_preset(cfg.preset);
    if (!pre.mean_field)
        bad("preset '" + cfg.preset + "' has no exchangeable coefficient form");
    const ActionGrid A = ActionGrid::equispaced(cfg.hjb.a_lo, cfg.hjb.a_hi, cfg.hjb.a_count);
    const HJBGeometry& geo = cfg.hjb.geometry;
    const int n_t = cfg.hjb.n_t > 0 ? cfg.hjb.n_t : hjb_auto_steps(*pre.mean_field, geo, A);
    const HJBSolution sol = hjb_solve(*pre.mean_field, pre.cost, geo, A, n_t);
    save_value_grid(sol, sink.dir);
    sink.names.push_back("meta.json");
    sink.names.push_back("values.bin");
    sink.names.push_back("policy.bin");
    note << "solved levels 0.." << geo.n_max << " on " << geo.n_x << " nodes with " << n_t
         << " time steps (" << sol.grid.stored_ts.size() << " stored slices)\n";

    if (cfg.reports.growth) {
        std::vector<std::pair<Configuration, double>> samples;
        const ValueGrid& g = sol.grid;
        for (int n = 0; n <= g.n_max; ++n) {
            const std::size_t count = g.level_count(n);
            const std::size_t step = std::max<std::size_t>(1, count / 40);
            for (std::size_t rk = 0; rk < count; rk += step) {
                const std::vector<int> idx = g.unrank(n, rk);
                std::vector<Atom> atoms;
                for (int j = 0; j < n; ++j)
                    atoms.push_back(
                        Atom{Label::root().child(static_cast<std::uint32_t>(j)),
                             v1(g.xs[static_cast<std::size_t>(idx[static_cast<std::size_t>(j)])])});
                Configuration lam(1, std::move(atoms));
                const double w = g.value_at(0.0, lam);
                samples.emplace_back(std::move(lam), w);
            }
        }
        if (samples.size() < 10) {
            checks.push_back(mk("value-growth-envelope", true,
                                "skipped: the grid exposes too few nodes to fit an envelope"));
        } else {
            const GrowthReport rep = growth_report(samples);
            checks.push_back(mk("value-growth-envelope", !rep.violation, rep.summary()));
            json g2;
            g2["c_lower"] = rep.c_lower;
            g2["c_upper"] = rep.c_upper;
            g2["c"] = rep.c;
            g2["violation"] = rep.violation;
            g2["witness"] = rep.witness;
            sink.aux("growth.json", g2.dump(2) + "\n");
        }
    }
    if (cfg.reports.symmetry) {
        const PermutationReport rep =
            permutation_invariance_check(sol, 200, cfg.has_seed ? cfg.seed : 2026);
        checks.push_back(mk("exchangeable-value-invariance", rep.pass, rep.summary()));
    }
}

RunResult fail_report(const ExperimentConfig& cfg, Sink& sink, int code,
                      const std::string& what) {
    RunResult rr;
    rr.exit_code = code;
    rr.message = what;
    if (!sink.file_mode && !sink.dir.empty()) {
        try {
            json e;
            e["task"] = cfg.task;
            e["exit_code"] = code;
            e["error"] = what;
            sink.aux("error.json", e.dump(2) + "\n");
        } catch (...) {
        }
        rr.artifacts = sink.names;
    }
    return rr;
}

RunResult run_verify(const ExperimentConfig& cfg) {
    RunResult rr;
    std::vector<std::string> names;
    if (cfg.suite == "all")
        names = verify_suite_names();
    else
        names.push_back(cfg.suite);
    std::ostringstream msg;
    bool all = true;
    for (const std::string& name : names) {
        std::string dir;
        if (!cfg.out.empty()) dir = names.size() == 1 ? cfg.out : cfg.out + "/" + name;
        const VerifyReport rep = verify_suite(name, dir);
        msg << rep.text();
        all = all && rep.pass();
        if (!dir.empty()) {
            rr.artifacts.push_back(dir + "/results.json");
            rr.artifacts.push_back(dir + "/manifest.json");
        }
    }
    rr.exit_code = all ? 0 : 1;
    rr.message = msg.str();
    return rr;
}

// ---------------------------------------------------------------------------
// Verification suites.
// ---------------------------------------------------------------------------

Configuration single_at(double x) { return Configuration::single(1, Label::root(), v1(x)); }

CostSpec effort_terminal(std::function<double(const Configuration&)> terminal) {
    CostSpec c;
    c.running = [](const Label&, const Eigen::VectorXd&, const Configuration&,
                   const Eigen::VectorXd& a) { return 0.5 * a.squaredNorm(); };
    c.terminal = std::move(terminal);
    return c;
}

void suite_moments(VerifyReport& rep) {
    const std::uint64_t S = rep.seed;
    const int reps = 6000;
    int idx = 0;
    for (const char* preset : {"yule", "logistic-mf"}) {
        const Preset pre = make_preset(preset);
        const ControlPolicy idle = constant_policy(Eigen::VectorXd::Zero(pre.model.adim));
        const Configuration init = single_at(0.0);
        SimConfig sc;
        sc.T = 1.0;
        sc.dt = 0.05;  // branch times are drawn in continuous time, so mass
                       // moments carry no step bias
        sc.record_frames = false;
        std::vector<double> fin, sup, supsq;
        fin.reserve(reps);
        sup.reserve(reps);
        supsq.reserve(reps);
        const std::uint64_t base = derive_seed(S, static_cast<std::uint64_t>(idx));
        for (int r = 0; r < reps; ++r) {
            sc.seed = derive_seed(base, static_cast<std::uint64_t>(r));
            const PopulationStats st = population_stats(simulate(init, idle, pre.model, sc));
            fin.push_back(st.final_size);
            sup.push_back(st.sup_size);
            supsq.push_back(st.sup_size_sq);
        }
        const MeanSE mfin = mean_se(fin);
        const MeanSE msup = mean_se(sup);
        const MeanSE msq = mean_se(supsq);
        const CoefficientBounds& b = pre.model.bounds;
        const double b1 = std::exp(b.rate_cap * b.offspring_mean_cap);
        const double b2 =
            std::exp(b.rate_cap * (b.offspring_mean_cap + b.offspring_factorial2_cap));
        if (idx == 0) {
            const double want = std::exp(0.5);
            rep.checks.push_back(mk(
                "yule-mean-final-mass", std::abs(mfin.mean - want) <= 3 * mfin.se,
                "mean " + format_double(mfin.mean) + " vs exp(1/2) = " + format_double(want) +
                    " within 3 s.e. (" + format_double(3 * mfin.se) + ")"));
        }
        rep.checks.push_back(mk(std::string(preset) + "-sup-mass-bound",
                                msup.mean <= b1 + 3 * msup.se,
                                "mean sup mass " + format_double(msup.mean) + " <= " +
                                    format_double(b1) + " + 3 s.e. (" +
                                    format_double(3 * msup.se) + ")"));
        rep.checks.push_back(mk(std::string(preset) + "-sup-mass-square-bound",
                                msq.mean <= b2 + 3 * msq.se,
                                "mean sup mass^2 " + format_double(msq.mean) + " <= " +
                                    format_double(b2) + " + 3 s.e. (" +
                                    format_double(3 * msq.se) + ")"));
        ++idx;
    }
}

void suite_lq(VerifyReport& rep) {
    const std::uint64_t S = rep.seed;
    {
        const LQSpec spec0 = lq_canonical_scalar(1.0, 0.0);
        const RiccatiSolution sol = solve_riccati(spec0, 1000);
        double worst = 0.0;
        for (std::size_t j = 0; j < sol.ts.size(); ++j) {
            const double t = sol.ts[j];
            worst = std::max(worst, std::abs(sol.Q[j](0, 0) - 1.0 / (1.0 + 2.0 * (1.0 - t))));
        }
        rep.checks.push_back(mk("quadratic-coefficient-closed-form", worst <= 1e-8,
                                "max deviation " + format_double(worst) + " <= 1e-8 over " +
                                    std::to_string(sol.ts.size()) + " nodes"));
    }
    {
        const LQSpec spec = lq_canonical_scalar(1.0, 0.2);
        const RiccatiSolution sol = solve_riccati(spec, 1000);
        const ControlPolicy pol = lq_feedback(sol, spec);
        const ModelCoefficients model = lq_model(spec);
        const CostSpec cost = lq_cost(spec);
        const Configuration init(1, {Atom{Label::root().child(0), v1(-0.5)},
                                     Atom{Label::root().child(1), v1(0.3)}});
        SimConfig sc;
        sc.T = 1.0;
        sc.dt = 1.0 / 64;
        sc.seed = derive_seed(S, 1);
        const CostEstimate est = estimate_J(init, pol, model, cost, sc, 4000, 1);
        const double w0 = lq_value(sol, 0.0, init);
        const double tol = std::max(3 * est.std_error, 0.02 * std::abs(w0));
        rep.checks.push_back(mk("feedback-cost-matches-value",
                                std::abs(est.mean - w0) <= tol,
                                "estimate " + format_double(est.mean) + " vs value " +
                                    format_double(w0) + ", tolerance " + format_double(tol)));
        const LQSelfCheck chk = lq_selfcheck(sol, spec, 200, derive_seed(S, 2));
        rep.checks.push_back(mk("generator-drift-identity", chk.pass, chk.summary()));
    }
}

void suite_kinetic(VerifyReport& rep) {
    const std::uint64_t S = rep.seed;
    {
        KineticSpec zero = kinetic_benchmark_spec();
        zero.terminal = [](double) { return 0.0; };
        const HSolution sol = solve_h(zero, 480);
        double worst = 0.0;
        for (const auto& slice : sol.h)
            for (double v : slice) worst = std::max(worst, std::abs(v));
        rep.checks.push_back(mk("zero-data-zero-solution", worst == 0.0,
                                "sup |h| = " + format_double(worst) + " (must be exactly 0)"));
    }
    {
        const double dev = hopf_cole_check(kinetic_benchmark_spec(), 3840);
        rep.checks.push_back(mk("log-transform-agreement", dev <= 1e-3,
                                "sup gap " + format_double(dev) + " <= 1e-3"));
    }
    const KineticSpec bench = kinetic_benchmark_spec();
    const HSolution sol = solve_h(bench, 3840);
    {
        double worst = 0.0;
        for (double t : {0.0, 0.25, 0.5, 0.75, 1.0}) {
            for (int i = bench.n_x / 4; i <= 3 * bench.n_x / 4; ++i) {
                const double x = sol.xs[static_cast<std::size_t>(i)];
                const double denom = 1.0 + 2.0 * (1.0 - t);
                const double want = x * x / denom + 0.5 * std::log(denom);
                worst = std::max(worst, std::abs(sol.h_at(t, x) - want));
            }
        }
        rep.checks.push_back(mk("quadratic-closed-form", worst <= 1e-3,
                                "sup error " + format_double(worst) +
                                    " <= 1e-3 on the inner half"));
    }
    {
        const ModelCoefficients model = kinetic_model(bench);
        const CostSpec cost = kinetic_cost(bench);
        const ControlPolicy fb = kinetic_feedback(sol);
        const ControlPolicy idle = constant_policy(Eigen::VectorXd::Zero(1));
        const Configuration init = single_at(1.2);
        SimConfig sc;
        sc.T = 1.0;
        sc.dt = 1.0 / 64;
        sc.seed = derive_seed(S, 3);
        const CostEstimate ea = estimate_J(init, fb, model, cost, sc, 600, 1);
        const CostEstimate eb = estimate_J(init, idle, model, cost, sc, 600, 1);
        bool ok = ea.samples.size() == eb.samples.size();
        std::string detail = "replicate sets diverged";
        if (ok) {
            std::vector<double> diff(ea.samples.size());
            for (std::size_t i = 0; i < diff.size(); ++i) diff[i] = ea.samples[i] - eb.samples[i];
            const MeanSE d = mean_se(diff);
            ok = d.mean + 2 * d.se < 0.0;
            detail = "paired cost gap " + format_double(d.mean) + " +- " + format_double(d.se) +
                     " (must clear 0 by 2 s.e.)";
        }
        rep.checks.push_back(mk("feedback-beats-idling", ok, detail));
    }
}

void suite_hjb(VerifyReport& rep) {
    {
        const Preset pre = make_preset("kinetic");  // controlled drift, unit diffusion
        HJBGeometry geo;
        geo.x_lo = -4.0;
        geo.x_hi = 4.0;
        geo.n_x = 201;
        geo.T = 1.0;
        geo.n_max = 1;
        const ActionGrid A = ActionGrid::equispaced(-3.0, 3.0, 41);
        const int n_t = hjb_auto_steps(*pre.mean_field, geo, A);
        const HJBSolution sol = hjb_solve(*pre.mean_field, pre.cost, geo, A, n_t);
        const RiccatiSolution ric = solve_riccati(lq_canonical_scalar(1.0, 0.0), 4000);
        double worst_rel = 0.0;
        for (double t : {0.0, 0.25, 0.5, 0.75}) {
            for (int i = 50; i <= 150; i += 5) {
                const double x = sol.grid.xs[static_cast<std::size_t>(i)];
                const Configuration lam = single_at(x);
                const double got = sol.grid.value_at(t, lam);
                const double want = lq_value(ric, t, lam);
                worst_rel = std::max(worst_rel,
                                     std::abs(got - want) / std::max(1e-12, std::abs(want)));
            }
        }
        rep.checks.push_back(mk("single-particle-quadratic-benchmark", worst_rel <= 0.02,
                                "worst relative error " + format_double(worst_rel) +
                                    " <= 0.02 on the inner half (" + std::to_string(n_t) +
                                    " auto steps)"));
    }
    {
        const Preset p = make_preset("pure-death");
        CostSpec cost;
        cost.running = [](const Label&, const Eigen::VectorXd&, const Configuration&,
                          const Eigen::VectorXd&) { return 0.0; };
        cost.terminal = [](const Configuration& lam) { return lam.mass(); };
        HJBGeometry geo;
        geo.x_lo = -2.0;
        geo.x_hi = 2.0;
        geo.n_x = 21;
        geo.T = 1.0;
        geo.n_max = 3;
        const ActionGrid A = ActionGrid::equispaced(-1.0, 1.0, 5);
        const HJBSolution sol = hjb_solve(*p.mean_field, cost, geo, A, 200);
        double worst = 0.0;
        for (double t : {0.0, 0.3, 0.6, 0.9}) {
            const double unit = std::exp(-(1.0 - t));
            const Configuration one = single_at(0.4);
            const Configuration two(1, {Atom{Label::root().child(0), v1(-1.0)},
                                        Atom{Label::root().child(1), v1(0.5)}});
            const Configuration three(1, {Atom{Label::root().child(0), v1(-0.5)},
                                          Atom{Label::root().child(1), v1(0.1)},
                                          Atom{Label::root().child(2), v1(1.2)}});
            worst = std::max(worst, std::abs(sol.grid.value_at(t, one) - unit));
            worst = std::max(worst, std::abs(sol.grid.value_at(t, two) - 2 * unit));
            worst = std::max(worst, std::abs(sol.grid.value_at(t, three) - 3 * unit));
        }
        rep.checks.push_back(mk("independent-decay-closed-form", worst <= 1e-2,
                                "worst deviation " + format_double(worst) +
                                    " <= 1e-2 for 1, 2 and 3 particles"));
    }
    {
        const Preset pre = make_preset("kinetic");
        MeanFieldCoefficients mf = *pre.mean_field;
        mf.branch_rate = [](const Eigen::VectorXd&, const UnlabeledMeasure&,
                            const Eigen::VectorXd&) { return 0.3; };
        mf.offspring = [](const Eigen::VectorXd&, const UnlabeledMeasure&,
                          const Eigen::VectorXd&) { return OffspringLaw{{0.5, 0.0, 0.5}}; };
        mf.bounds.rate_cap = 0.3;
        mf.bounds.offspring_mean_cap = 1.0;
        mf.bounds.offspring_factorial2_cap = 1.0;
        const CostSpec lo_cost =
            effort_terminal([](const Configuration& lam) { return lam.sum_sq(); });
        const CostSpec hi_cost = effort_terminal([](const Configuration& lam) {
            double s = 0.0;
            for (const Atom& a : lam.atoms()) s += a.pos[0];
            return lam.sum_sq() + 0.3 + 0.1 * std::sin(s);
        });
        HJBGeometry geo;
        geo.x_lo = -2.0;
        geo.x_hi = 2.0;
        geo.n_x = 21;
        geo.T = 0.5;
        geo.n_max = 2;
        const ActionGrid A = ActionGrid::equispaced(-2.0, 2.0, 9);
        const int n_t = hjb_auto_steps(mf, geo, A);
        const HJBSolution lo = hjb_solve(mf, lo_cost, geo, A, n_t);
        const HJBSolution hi = hjb_solve(mf, hi_cost, geo, A, n_t);
        double min_gap = std::numeric_limits<double>::infinity();
        double max_gap = -std::numeric_limits<double>::infinity();
        for (std::size_t s = 0; s < lo.grid.stored_ts.size(); ++s) {
            for (int n = 0; n <= geo.n_max; ++n) {
                const auto& a = lo.grid.values[s][static_cast<std::size_t>(n)];
                const auto& b = hi.grid.values[s][static_cast<std::size_t>(n)];
                for (std::size_t rk = 0; rk < a.size(); ++rk) {
                    min_gap = std::min(min_gap, b[rk] - a[rk]);
                    max_gap = std::max(max_gap, b[rk] - a[rk]);
                }
            }
        }
        rep.checks.push_back(mk("ordered-data-ordered-values",
                                min_gap >= 0.0 && max_gap > 0.1,
                                "value gap in [" + format_double(min_gap) + ", " +
                                    format_double(max_gap) +
                                    "] for terminal data raised by 0.3 +- 0.1"));
    }
}

void suite_symmetry(VerifyReport& rep) {
    const std::uint64_t S = rep.seed;
    {
        const Preset lm = make_preset("logistic-mf");
        ControlPolicy pull;
        pull.adim = 1;
        pull.symmetric = true;
        pull.act = [](double, const Label&, const Eigen::VectorXd& x, const Configuration&) {
            return Eigen::VectorXd(-0.2 * x);
        };
        int bad_pairs = 0;
        int nontrivial = 0;
        for (std::uint64_t p = 0; p < 50; ++p) {
            const Configuration lam0 = random_admissible_population(derive_seed(S, p), 1, 5);
            std::vector<Label> labels;
            for (const Atom& at : lam0.atoms()) labels.push_back(at.label);
            const LabelPermutation s = LabelPermutation::shuffle_of(labels, derive_seed(S, 1000 + p));
            const LabelPermutation sinv = s.inverse();
            bool identity = true;
            for (const auto& pr : s.pairs()) identity = identity && pr.first == pr.second;
            if (!identity) ++nontrivial;

            SimConfig sc;
            sc.T = 0.5;
            sc.dt = 0.02;
            sc.seed = derive_seed(S, 2000 + p);
            const Trajectory run1 = simulate(lam0, pull, lm.model, sc);
            SimConfig sc2 = sc;
            sc2.noise_label_map = [&sinv](const Label& l) { return sinv.apply_extended(l); };
            const Trajectory run2 = simulate(lam0.relabeled(s), pull, lm.model, sc2);

            bool ok = run1.frames.size() == run2.frames.size();
            if (ok) {
                for (std::size_t i = 0; i < run1.frames.size(); ++i)
                    ok = ok && run1.frames[i].first == run2.frames[i].first &&
                         run1.frames[i].second.relabeled(s) == run2.frames[i].second;
            }
            ok = ok && run1.final_state.relabeled(s) == run2.final_state;
            if (!ok) ++bad_pairs;
        }
        rep.checks.push_back(mk("relabeled-runs-reproduce-bitwise",
                                bad_pairs == 0 && nontrivial >= 10,
                                std::to_string(50) + " shuffled pairs (" +
                                    std::to_string(nontrivial) + " nontrivial), " +
                                    std::to_string(bad_pairs) + " mismatches"));
    }
    {
        const Preset pre = make_preset("lq");
        HJBGeometry geo;
        geo.x_lo = -2.0;
        geo.x_hi = 2.0;
        geo.n_x = 11;
        geo.T = 0.5;
        geo.n_max = 3;
        const ActionGrid A = ActionGrid::equispaced(-1.0, 1.0, 5);
        const int n_t = hjb_auto_steps(*pre.mean_field, geo, A);
        const HJBSolution sol = hjb_solve(*pre.mean_field, pre.cost, geo, A, n_t);
        const PermutationReport pr = permutation_invariance_check(sol, 200, derive_seed(S, 1));
        rep.checks.push_back(mk("exchangeable-value-invariance", pr.pass, pr.summary()));
    }
    {
        const Preset p = make_preset("kinetic");
        ModelCoefficients model = p.model;
        model.drift = [](const Label& who, const Eigen::VectorXd&, const Configuration&,
                         const Eigen::VectorXd& a) {
            const double gain = (who.depth() > 0 && who.digits().back() % 2 == 1) ? 1.5 : 0.5;
            return (gain * a).eval();
        };
        model.bounds.drift_growth = 5.0;
        const CostSpec cost =
            effort_terminal([](const Configuration& lam) { return lam.sum_sq(); });
        HJBGeometry geo;
        geo.x_lo = -2.0;
        geo.x_hi = 2.0;
        geo.n_x = 21;
        geo.T = 0.5;
        geo.n_max = 2;
        const ActionGrid A = ActionGrid::equispaced(-2.0, 2.0, 9);
        const HJBSolution sol = hjb_solve_labeled(model, cost, geo, A, 200);
        const PermutationReport pr = permutation_invariance_check(sol, 60, derive_seed(S, 2));
        rep.checks.push_back(mk("label-dependence-is-flagged",
                                !pr.pass && pr.value_mismatches > 0, pr.summary()));
    }
}

}  // namespace

// ---------------------------------------------------------------------------
// Manifest.
// ---------------------------------------------------------------------------

void write_manifest(const std::string& dir, const std::vector<std::string>& file_names,
                    const std::vector<std::pair<std::string, std::string>>& meta) {
    std::vector<std::string> names = file_names;
    std::sort(names.begin(), names.end());
    names.erase(std::unique(names.begin(), names.end()), names.end());
    json files = json::object();
    for (const std::string& name : names) files[name] = sha256_file(dir + "/" + name);
    json j;
    j["files"] = files;
    for (const auto& kv : meta) j[kv.first] = kv.second;
    write_file(dir + "/manifest.json", j.dump(2) + "\n");
}

// ---------------------------------------------------------------------------
// ExperimentConfig.
// ---------------------------------------------------------------------------

ExperimentConfig ExperimentConfig::from_json_text(const std::string& text) {
    const json j = parse_json(text, "the configuration document");
    if (!j.is_object()) bad("the document root must be an object");
    require_keys(j, "the document root",
                 {"task", "seed", "preset", "initial", "sim", "policy", "replicates", "threads",
                  "riccati", "kinetic", "hjb", "suite", "out", "reports"});
    ExperimentConfig c;
    c.source_text = text;
    c.task = str_or(j, "task", "");
    if (j.contains("seed")) {
        c.seed = u64_or(j, "seed", 0);
        c.has_seed = true;
    }
    c.preset = str_or(j, "preset", c.preset);
    if (j.contains("initial")) {
        const json& arr = j.at("initial");
        if (!arr.is_array() || arr.empty())
            bad("'initial' must be a non-empty array of particle positions");
        c.initial.clear();
        for (const json& row : arr) c.initial.push_back(number_list(row, "each 'initial' entry"));
    }
    if (j.contains("sim")) {
        const json& s = object_field(j, "sim");
        require_keys(s, "'sim'", {"t0", "T", "dt", "max_population", "max_events"});
        c.t0 = num_or(s, "t0", c.t0);
        c.T = num_or(s, "T", c.T);
        c.dt = num_or(s, "dt", c.dt);
        c.max_population = u64_or(s, "max_population", c.max_population);
        c.max_events = u64_or(s, "max_events", c.max_events);
    }
    if (j.contains("policy")) {
        const json& p = object_field(j, "policy");
        require_keys(p, "'policy'", {"kind", "action", "grid_dir"});
        c.policy = str_or(p, "kind", c.policy);
        if (p.contains("action")) c.action = number_list(p.at("action"), "'policy.action'");
        c.grid_dir = str_or(p, "grid_dir", c.grid_dir);
    }
    c.replicates = int_or(j, "replicates", c.replicates);
    c.threads = int_or(j, "threads", c.threads);
    if (j.contains("riccati")) {
        const json& r = object_field(j, "riccati");
        require_keys(r, "'riccati'", {"steps", "spec"});
        c.riccati_steps = int_or(r, "steps", c.riccati_steps);
        c.lq_spec_file = str_or(r, "spec", c.lq_spec_file);
    }
    if (j.contains("kinetic")) {
        const json& k = object_field(j, "kinetic");
        require_keys(k, "'kinetic'", {"x_lo", "x_hi", "n_x", "T", "n_t", "terminal"});
        c.kinetic.x_lo = num_or(k, "x_lo", c.kinetic.x_lo);
        c.kinetic.x_hi = num_or(k, "x_hi", c.kinetic.x_hi);
        c.kinetic.n_x = int_or(k, "n_x", c.kinetic.n_x);
        c.kinetic.T = num_or(k, "T", c.kinetic.T);
        c.kinetic.n_t = int_or(k, "n_t", c.kinetic.n_t);
        c.kinetic.terminal = str_or(k, "terminal", c.kinetic.terminal);
    }
    if (j.contains("hjb")) {
        const json& h = object_field(j, "hjb");
        require_keys(h, "'hjb'",
                     {"x_lo", "x_hi", "n_x", "T", "n_max", "n_t", "store_stride", "a_lo", "a_hi",
                      "a_count"});
        c.hjb.geometry.x_lo = num_or(h, "x_lo", c.hjb.geometry.x_lo);
        c.hjb.geometry.x_hi = num_or(h, "x_hi", c.hjb.geometry.x_hi);
        c.hjb.geometry.n_x = int_or(h, "n_x", c.hjb.geometry.n_x);
        c.hjb.geometry.T = num_or(h, "T", c.hjb.geometry.T);
        c.hjb.geometry.n_max = int_or(h, "n_max", c.hjb.geometry.n_max);
        c.hjb.geometry.store_stride = int_or(h, "store_stride", c.hjb.geometry.store_stride);
        c.hjb.n_t = int_or(h, "n_t", c.hjb.n_t);
        c.hjb.a_lo = num_or(h, "a_lo", c.hjb.a_lo);
        c.hjb.a_hi = num_or(h, "a_hi", c.hjb.a_hi);
        c.hjb.a_count = int_or(h, "a_count", c.hjb.a_count);
    }
    c.suite = str_or(j, "suite", c.suite);
    c.out = str_or(j, "out", c.out);
    if (j.contains("reports")) {
        const json& r = object_field(j, "reports");
        require_keys(r, "'reports'", {"moments", "residuals", "growth", "symmetry"});
        c.reports.moments = bool_or(r, "moments", c.reports.moments);
        c.reports.residuals = bool_or(r, "residuals", c.reports.residuals);
        c.reports.growth = bool_or(r, "growth", c.reports.growth);
        c.reports.symmetry = bool_or(r, "symmetry", c.reports.symmetry);
    }
    return c;
}

std::string ExperimentConfig::to_json() const {
    json j;
    j["task"] = task;
    if (has_seed) j["seed"] = seed;
    j["preset"] = preset;
    json init = json::array();
    for (const auto& row : initial) init.push_back(row);
    j["initial"] = init;
    j["sim"] = json{{"t0", t0},
                    {"T", T},
                    {"dt", dt},
                    {"max_population", max_population},
                    {"max_events", max_events}};
    j["policy"] = json{{"kind", policy}, {"action", action}, {"grid_dir", grid_dir}};
    j["replicates"] = replicates;
    j["threads"] = threads;
    j["riccati"] = json{{"steps", riccati_steps}, {"spec", lq_spec_file}};
    j["kinetic"] = json{{"x_lo", kinetic.x_lo}, {"x_hi", kinetic.x_hi}, {"n_x", kinetic.n_x},
                        {"T", kinetic.T},       {"n_t", kinetic.n_t},   {"terminal", kinetic.terminal}};
    j["hjb"] = json{{"x_lo", hjb.geometry.x_lo},
                    {"x_hi", hjb.geometry.x_hi},
                    {"n_x", hjb.geometry.n_x},
                    {"T", hjb.geometry.T},
                    {"n_max", hjb.geometry.n_max},
                    {"n_t", hjb.n_t},
                    {"store_stride", hjb.geometry.store_stride},
                    {"a_lo", hjb.a_lo},
                    {"a_hi", hjb.a_hi},
                    {"a_count", hjb.a_count}};
    j["suite"] = suite;
    j["out"] = out;
    j["reports"] = json{{"moments", reports.moments},
                        {"residuals", reports.residuals},
                        {"growth", reports.growth},
                        {"symmetry", reports.symmetry}};
    return j.dump(2);
}

void ExperimentConfig::validate() const {
    const std::vector<std::string> tasks{"simulate", "estimate", "riccati",
                                         "kinetic",  "hjb",      "verify"};
    if (std::find(tasks.begin(), tasks.end(), task) == tasks.end())
        bad("'task' must be one of simulate, estimate, riccati, kinetic, hjb, verify" +
            (task.empty() ? std::string() : " (got '" + task + "')"));
    if ((task == "simulate" || task == "estimate") && !has_seed)
        bad("task '" + task + "' draws random numbers and needs an explicit 'seed'");
    if (task != "verify" && out.empty()) bad("'out' is required");
    if (task == "verify") {
        const std::vector<std::string> suites = verify_suite_names();
        if (suite.empty())
            bad("task 'verify' needs 'suite' (moments, lq, kinetic, hjb, symmetry or all)");
        if (suite != "all" && std::find(suites.begin(), suites.end(), suite) == suites.end())
            bad("unknown suite '" + suite + "'; expected moments, lq, kinetic, hjb, symmetry or all");
    }
    if (!(dt > 0.0)) bad("'sim.dt' must be positive");
    if (!(T > t0)) bad("'sim.T' must exceed 'sim.t0'");
    if (threads < 1) bad("'threads' must be at least 1");
    if (riccati_steps < 1) bad("'riccati.steps' must be at least 1");
    if (task == "simulate" || task == "estimate") {
        const std::vector<std::string> kinds{"zero", "constant", "riccati", "kinetic", "grid"};
        if (std::find(kinds.begin(), kinds.end(), policy) == kinds.end())
            bad("'policy.kind' must be one of zero, constant, riccati, kinetic, grid (got '" +
                policy + "')");
        if (policy == "grid" && grid_dir.empty()) bad("policy 'grid' needs 'policy.grid_dir'");
        if (policy == "constant" && action.empty()) bad("policy 'constant' needs 'policy.action'");
        if (initial.empty()) bad("'initial' must list at least one particle");
        const std::size_t d0 = initial.front().size();
        for (const auto& row : initial)
            if (row.empty() || row.size() != d0)
                bad("every 'initial' particle must have the same positive number of coordinates");
        const bool preset_needed =
            !(policy == "kinetic" || (policy == "riccati" && !lq_spec_file.empty()));
        if (preset_needed) {
            const std::vector<std::string> presets = preset_names();
            if (std::find(presets.begin(), presets.end(), preset) == presets.end())
                bad("unknown preset '" + preset + "'");
        }
    }
    if (task == "hjb") {
        const std::vector<std::string> presets = preset_names();
        if (std::find(presets.begin(), presets.end(), preset) == presets.end())
            bad("unknown preset '" + preset + "'");
        if (hjb.a_count < 1) bad("'hjb.a_count' must be at least 1");
        if (hjb.n_t < 0) bad("'hjb.n_t' must be nonnegative (0 picks a stable step count)");
    }
    if (task == "estimate" && replicates < 2) bad("'replicates' must be at least 2");
    if (task == "simulate" && replicates < 1) bad("'replicates' must be at least 1");
    if (task == "kinetic" || policy == "kinetic") {
        if (kinetic.n_x < 3) bad("'kinetic.n_x' must be at least 3");
        if (!(kinetic.x_hi > kinetic.x_lo)) bad("'kinetic.x_hi' must exceed 'kinetic.x_lo'");
        if (!(kinetic.T > 0.0)) bad("'kinetic.T' must be positive");
        if (kinetic.n_t < 0) bad("'kinetic.n_t' must be nonnegative (0 picks a stable step count)");
        if (kinetic.terminal != "quad" && kinetic.terminal != "abs" && kinetic.terminal != "zero")
            bad("'kinetic.terminal' must be quad, abs or zero");
    }
    if (reports.residuals && !(task == "estimate" && policy == "riccati"))
        bad("'reports.residuals' compares against the quadratic value field and needs task "
            "'estimate' with policy 'riccati'");
    if (reports.moments && task != "simulate") bad("'reports.moments' applies to task 'simulate'");
    if (reports.growth && task != "hjb") bad("'reports.growth' applies to task 'hjb'");
}

SimConfig ExperimentConfig::sim_config() const {
    SimConfig sc;
    sc.t0 = t0;
    sc.T = T;
    sc.dt = dt;
    sc.seed = seed;
    sc.max_population = max_population;
    sc.max_events = max_events;
    return sc;
}

LQSpec lq_spec_from_json_text(const std::string& text) {
    const json j = parse_json(text, "the quadratic spec document");
    if (!j.is_object()) bad("the quadratic spec document root must be an object");
    require_keys(j, "the quadratic spec document",
                 {"d", "q", "B", "Bbar", "sigma", "gamma", "offspring", "C", "c", "Cbar", "H",
                  "h", "T"});
    const int d = int_or(j, "d", 1);
    const int q = int_or(j, "q", 1);
    if (d < 1 || q < 1) bad("'d' and 'q' must be positive");
    LQSpec s;
    s.d = d;
    s.q = q;
    const auto freeze = [](Eigen::MatrixXd M) {
        return [M = std::move(M)](double) { return M; };
    };
    s.B = freeze(matrix_or(j, "B", d, d, Eigen::MatrixXd::Zero(d, d)));
    s.Bbar = freeze(matrix_or(j, "Bbar", d, q, Eigen::MatrixXd::Identity(d, q)));
    s.C = freeze(matrix_or(j, "C", d, d, Eigen::MatrixXd::Zero(d, d)));
    s.Cbar = freeze(matrix_or(j, "Cbar", q, q, 0.5 * Eigen::MatrixXd::Identity(q, q)));
    s.H = matrix_or(j, "H", d, d, Eigen::MatrixXd::Identity(d, d));
    const double sg = num_or(j, "sigma", 1.0);
    const double gm = num_or(j, "gamma", 0.0);
    if (gm < 0.0) bad("'gamma' must be nonnegative");
    s.sigma = [sg](double) { return sg; };
    s.gamma = [gm](double) { return gm; };
    const double cc = num_or(j, "c", 0.0);
    if (cc < 0.0) bad("'c' must be nonnegative");
    s.c = [cc](double) { return cc; };
    s.h = num_or(j, "h", 0.0);
    s.T = num_or(j, "T", 1.0);
    if (!(s.T > 0.0)) bad("'T' must be positive");
    if (j.contains("offspring")) {
        s.offspring.p = number_list(j.at("offspring"), "'offspring'");
        s.offspring.validate();
    }
    return s;
}

// ---------------------------------------------------------------------------
// Runner.
// ---------------------------------------------------------------------------

RunResult run_experiment(const ExperimentConfig& cfg) {
    RunResult rr;
    try {
        cfg.validate();
    } catch (const std::invalid_argument& e) {
        rr.exit_code = 2;
        rr.message = e.what();
        return rr;
    }

    if (cfg.task == "verify") {
        try {
            return run_verify(cfg);
        } catch (const std::invalid_argument& e) {
            rr.exit_code = 2;
            rr.message = e.what();
            return rr;
        } catch (const std::exception& e) {
            rr.exit_code = 1;
            rr.message = e.what();
            return rr;
        }
    }

    Sink sink;
    sink.file_mode = cfg.out.ends_with(".json") || cfg.out.ends_with(".csv");
    if (sink.file_mode) {
        sink.file = cfg.out;
    } else {
        sink.dir = cfg.out;
        std::error_code ec;
        fs::create_directories(sink.dir, ec);
        if (ec) {
            rr.exit_code = 2;
            rr.message = "config: cannot create output directory '" + cfg.out + "': " + ec.message();
            return rr;
        }
    }

    std::vector<VerifyCheck> checks;
    std::ostringstream note;
    try {
        if (cfg.task == "simulate")
            run_simulate(cfg, sink, checks, note);
        else if (cfg.task == "estimate")
            run_estimate(cfg, sink, checks, note);
        else if (cfg.task == "riccati")
            run_riccati(cfg, sink, checks, note);
        else if (cfg.task == "kinetic")
            run_kinetic(cfg, sink, checks, note);
        else
            run_hjb(cfg, sink, checks, note);
    } catch (const CapExceeded& e) {
        return fail_report(cfg, sink, 3, e.what());
    } catch (const std::invalid_argument& e) {
        return fail_report(cfg, sink, 2, e.what());
    } catch (const std::exception& e) {
        const bool cap = std::string(e.what()).find("hit a cap") != std::string::npos;
        return fail_report(cfg, sink, cap ? 3 : 1, e.what());
    }

    rr.exit_code = 0;
    for (const VerifyCheck& c : checks)
        if (!c.pass) rr.exit_code = 1;

    if (!sink.file_mode) {
        const std::string echo =
            cfg.source_text.empty() ? cfg.to_json() + "\n" : cfg.source_text;
        sink.aux("config.json", echo);
        json res;
        res["task"] = cfg.task;
        res["exit_code"] = rr.exit_code;
        res["pass"] = rr.exit_code == 0;
        json arr = json::array();
        for (const VerifyCheck& c : checks)
            arr.push_back(json{{"name", c.name}, {"pass", c.pass}, {"detail", c.detail}});
        res["checks"] = arr;
        sink.aux("result.json", res.dump(2) + "\n");
        std::vector<std::pair<std::string, std::string>> meta{{"format", "branchsim-run-v1"},
                                                              {"task", cfg.task}};
        if (cfg.has_seed) meta.emplace_back("seed", std::to_string(cfg.seed));
        write_manifest(sink.dir, sink.names, meta);
        sink.names.push_back("manifest.json");
        rr.artifacts = sink.names;
    } else {
        rr.artifacts.push_back(cfg.out);
    }
    rr.message = note.str() + render_checks("", checks);
    return rr;
}

// ---------------------------------------------------------------------------
// Verification suites.
// ---------------------------------------------------------------------------

bool VerifyReport::pass() const {
    for (const VerifyCheck& c : checks)
        if (!c.pass) return false;
    return true;
}

std::string VerifyReport::text() const { return render_checks(suite + "/", checks); }

std::string VerifyReport::to_json() const {
    json j;
    j["suite"] = suite;
    j["seed"] = seed;
    j["pass"] = pass();
    json arr = json::array();
    for (const VerifyCheck& c : checks)
        arr.push_back(json{{"name", c.name}, {"pass", c.pass}, {"detail", c.detail}});
    j["checks"] = arr;
    return j.dump(2) + "\n";
}

std::vector<std::string> verify_suite_names() {
    return {"moments", "lq", "kinetic", "hjb", "symmetry"};
}

VerifyReport verify_suite(const std::string& name, const std::string& out_dir) {
    VerifyReport rep;
    rep.suite = name;
    if (name == "moments") {
        rep.seed = 20260815;
        suite_moments(rep);
    } else if (name == "lq") {
        rep.seed = 7;
        suite_lq(rep);
    } else if (name == "kinetic") {
        rep.seed = 99;
        suite_kinetic(rep);
    } else if (name == "hjb") {
        rep.seed = 2026;
        suite_hjb(rep);
    } else if (name == "symmetry") {
        rep.seed = 424242;
        suite_symmetry(rep);
    } else {
        throw std::invalid_argument("unknown verification suite '" + name +
                                    "'; expected moments, lq, kinetic, hjb or symmetry");
    }
    if (!out_dir.empty()) {
        write_file(out_dir + "/results.json", rep.to_json());
        write_manifest(out_dir, {"results.json"},
                       {{"format", "verify-suite-v1"},
                        {"suite", name},
                        {"seed", std::to_string(rep.seed)}});
    }
    return rep;
}

}  // namespace branchsim
