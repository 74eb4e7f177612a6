// Acceptance gate: eleven end-to-end checks covering population moments,
// quadratic-control consistency, grid-solver benchmarks, metric and symmetry
// oracles, and artifact determinism.  Prints one line per criterion and exits
// nonzero if any of them fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "branchsim/configuration.hpp"
#include "branchsim/control.hpp"
#include "branchsim/cost.hpp"
#include "branchsim/experiment.hpp"
#include "branchsim/hjb.hpp"
#include "branchsim/kinetic.hpp"
#include "branchsim/riccati.hpp"
#include "branchsim/rng.hpp"
#include "branchsim/simulator.hpp"
#include "branchsim/util.hpp"
#include "test_support.hpp"

namespace {

using namespace branchsim;
namespace fs = std::filesystem;

constexpr std::uint64_t kBaseSeed = 0xACCE55;

Eigen::VectorXd v1(double x) {
    Eigen::VectorXd v(1);
    v[0] = x;
    return v;
}

Configuration single_at(double x) { return Configuration::single(1, Label::root(), v1(x)); }

Configuration pair_at(double x0, double x1) {
    return Configuration(1, {Atom{Label::root().child(0), v1(x0)},
                             Atom{Label::root().child(1), v1(x1)}});
}

std::string fmt(double x) { return format_double(x); }

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

struct Outcome {
    bool pass = false;
    std::string detail;
};

// --- 1: mean and running-max population mass under pure binary branching ---

Outcome criterion_population_mean() {
    const Preset pre = make_preset("yule");
    const ControlPolicy idle = constant_policy(Eigen::VectorXd::Zero(pre.model.adim));
    const Configuration init = single_at(0.0);
    SimConfig sc;
    sc.T = 1.0;
    sc.dt = 1e-3;
    sc.record_frames = false;
    const int reps = 20000;
    std::vector<double> fin, sup;
    fin.reserve(reps);
    sup.reserve(reps);
    const std::uint64_t base = derive_seed(kBaseSeed, 1);
    for (int r = 0; r < reps; ++r) {
        sc.seed = derive_seed(base, static_cast<std::uint64_t>(r));
        const PopulationStats st = population_stats(simulate(init, idle, pre.model, sc));
        fin.push_back(st.final_size);
        sup.push_back(st.sup_size);
    }
    const MeanSE mf = mean_se(fin);
    const MeanSE ms = mean_se(sup);
    const double target = std::exp(0.5);
    const double cap = std::exp(1.0);
    const bool mean_ok = std::abs(mf.mean - target) <= 3.0 * mf.se;
    const bool sup_ok = ms.mean <= cap + 3.0 * ms.se;
    Outcome o;
    o.pass = mean_ok && sup_ok;
    o.detail = "E[final mass] " + fmt(mf.mean) + " vs " + fmt(target) + " (3 s.e. " +
               fmt(3.0 * mf.se) + "); E[sup mass] " + fmt(ms.mean) + " <= " + fmt(cap) +
               " + 3 s.e. over " + std::to_string(reps) + " replicates";
    return o;
}

// --- 2: one-sided second-moment bound from the declared coefficient caps ---

Outcome criterion_second_moment() {
    Outcome o;
    o.pass = true;
    const std::uint64_t base = derive_seed(kBaseSeed, 2);
    int idx = 0;
    for (const char* name : {"yule", "logistic-mf"}) {
        const Preset pre = make_preset(name);
        const ControlPolicy idle = constant_policy(Eigen::VectorXd::Zero(pre.model.adim));
        const Configuration init = single_at(0.0);
        SimConfig sc;
        sc.T = 1.0;
        sc.dt = 0.05;  // branch clocks run in continuous time; mass moments
                       // carry no step bias
        sc.record_frames = false;
        const int reps = 20000;
        std::vector<double> supsq;
        supsq.reserve(reps);
        const std::uint64_t b2 = derive_seed(base, static_cast<std::uint64_t>(idx++));
        for (int r = 0; r < reps; ++r) {
            sc.seed = derive_seed(b2, static_cast<std::uint64_t>(r));
            const PopulationStats st = population_stats(simulate(init, idle, pre.model, sc));
            supsq.push_back(st.sup_size_sq);
        }
        const MeanSE m = mean_se(supsq);
        const CoefficientBounds& cb = pre.model.bounds;
        const double bound =
            std::exp(cb.rate_cap * (cb.offspring_mean_cap + cb.offspring_factorial2_cap));
        const bool ok = m.mean <= bound + 3.0 * m.se;
        o.pass = o.pass && ok;
        if (!o.detail.empty()) o.detail += "; ";
        o.detail += std::string(name) + ": E[sup mass^2] " + fmt(m.mean) + " <= " + fmt(bound) +
                    " + 3 s.e. (" + fmt(3.0 * m.se) + ")";
    }
    return o;
}

// --- 3: backward quadratic sweep vs closed form, and Monte Carlo replay ---

Outcome criterion_quadratic_consistency() {
    Outcome o;
    o.pass = true;
    double worst_cf = 0.0;
    for (double sigma : {0.0, 1.0}) {
        const RiccatiSolution sol = solve_riccati(lq_canonical_scalar(sigma, 0.0), 1000);
        for (std::size_t i = 0; i < sol.ts.size(); ++i) {
            const double want = 1.0 / (1.0 + 2.0 * (1.0 - sol.ts[i]));
            worst_cf = std::max(worst_cf, std::abs(sol.Q[i](0, 0) - want));
        }
    }
    o.pass = worst_cf <= 1e-8;
    o.detail = "closed-form gap " + fmt(worst_cf) + " <= 1e-8";

    const Configuration init = pair_at(-0.5, 0.3);
    int combo = 0;
    for (double sigma : {0.0, 1.0}) {
        for (double gamma : {0.0, 0.2}) {
            const LQSpec spec = lq_canonical_scalar(sigma, gamma);
            const RiccatiSolution sol = solve_riccati(spec, 1000);
            const ControlPolicy fb = lq_feedback(sol, spec);
            SimConfig sc;
            sc.T = spec.T;
            sc.dt = 1.0 / 128;
            sc.seed = derive_seed(derive_seed(kBaseSeed, 3), static_cast<std::uint64_t>(combo++));
            const CostEstimate est =
                estimate_J(init, fb, lq_model(spec), lq_cost(spec), sc, 10000, 1);
            const double want = lq_value(sol, 0.0, init);
            const double tol = std::max(3.0 * est.std_error, 0.02 * std::abs(want));
            const bool ok = std::abs(est.mean - want) <= tol;
            o.pass = o.pass && ok;
            o.detail += "; s=" + fmt(sigma) + " g=" + fmt(gamma) + ": mc " + fmt(est.mean) +
                        " vs " + fmt(want) + " (tol " + fmt(tol) + (ok ? ")" : ") FAIL");
        }
    }
    return o;
}

// --- 4: additive feedback perturbations never beat the feedback itself ---

Outcome criterion_perturbation_optimality() {
    const LQSpec spec = lq_canonical_scalar(1.0, 0.2);
    const RiccatiSolution sol = solve_riccati(spec, 1000);
    const ControlPolicy fb = lq_feedback(sol, spec);
    const ModelCoefficients model = lq_model(spec);
    const CostSpec cost = lq_cost(spec);
    const Configuration init = pair_at(-0.5, 0.3);
    SimConfig sc;
    sc.T = spec.T;
    sc.dt = 1.0 / 64;
    sc.seed = derive_seed(kBaseSeed, 4);
    const int reps = 10000;
    const CostEstimate base = estimate_J(init, fb, model, cost, sc, reps, 1);
    Outcome o;
    o.pass = true;
    for (double delta : {0.25, -0.25, 0.5, -0.5, 1.0}) {
        const CostEstimate pert =
            estimate_J(init, perturb_policy(fb, v1(delta)), model, cost, sc, reps, 1);
        bool ok = pert.samples.size() == base.samples.size();
        std::string piece;
        if (!ok) {
            piece = "replicate sets diverged";
        } else {
            std::vector<double> diff(base.samples.size());
            for (std::size_t i = 0; i < diff.size(); ++i)
                diff[i] = pert.samples[i] - base.samples[i];
            const MeanSE d = mean_se(diff);
            ok = d.mean >= -2.0 * d.se;
            if (std::abs(delta) >= 0.5) ok = ok && d.mean > 2.0 * d.se;
            piece = "offset " + fmt(delta) + ": paired gap " + fmt(d.mean) + " +- " + fmt(d.se);
        }
        o.pass = o.pass && ok;
        if (!o.detail.empty()) o.detail += "; ";
        o.detail += piece + (ok ? "" : " FAIL");
    }
    return o;
}

// --- 5: compensated value process is a martingale at the feedback and a ---
// --- submartingale at constant controls                                 ---

Outcome criterion_compensator_verdicts() {
    const LQSpec spec = lq_canonical_scalar(1.0, 0.2);
    const RiccatiSolution sol = solve_riccati(spec, 2000);
    const ControlPolicy fb = lq_feedback(sol, spec);
    const ModelCoefficients model = lq_model(spec);
    const CostSpec cost = lq_cost(spec);
    const Configuration init = pair_at(-0.5, 0.3);
    const ValueFunction w = [&sol](double t, const Configuration& lam) {
        return lq_value(sol, t, lam);
    };
    Outcome o;
    o.pass = true;
    int marti = 0, sub = 0;
    for (std::uint64_t s = 0; s < 3; ++s) {
        SimConfig sc;
        sc.T = spec.T;
        sc.dt = 1.0 / 64;
        sc.seed = derive_seed(derive_seed(kBaseSeed, 5), s);
        const ResidualReport rf = verification_residual(w, init, fb, model, cost, sc, 10000, 8);
        if (rf.martingale_ok) ++marti;
        o.pass = o.pass && rf.martingale_ok;
        for (double a : {0.0, 0.5, -0.6}) {
            const ResidualReport rc = verification_residual(w, init, constant_policy(v1(a)),
                                                            model, cost, sc, 10000, 8);
            if (rc.submartingale_ok) ++sub;
            o.pass = o.pass && rc.submartingale_ok;
        }
    }
    o.detail = "feedback martingale verdict " + std::to_string(marti) +
               "/3 seeds; constant-control submartingale verdict " + std::to_string(sub) +
               "/9 (3 constants x 3 seeds), 10000 replicates, 8 checkpoints";
    return o;
}

// --- 6: single-particle grid solve vs quadratic value; branchless decay ---

Outcome criterion_grid_benchmarks() {
    Outcome o;
    {
        const Preset pre = make_preset("kinetic");
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
                const Configuration lam = single_at(sol.grid.xs[static_cast<std::size_t>(i)]);
                const double got = sol.grid.value_at(t, lam);
                const double want = lq_value(ric, t, lam);
                worst_rel = std::max(worst_rel,
                                     std::abs(got - want) / std::max(1e-12, std::abs(want)));
            }
        }
        o.pass = worst_rel <= 0.02;
        o.detail = "one-particle relative error " + fmt(worst_rel) + " <= 0.02 (" +
                   std::to_string(n_t) + " auto steps)";
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
        const HJBSolution sol =
            hjb_solve(*p.mean_field, cost, geo, ActionGrid::equispaced(-1.0, 1.0, 5), 200);
        double worst = 0.0;
        for (double t : {0.0, 0.3, 0.6, 0.9}) {
            const double unit = std::exp(-(1.0 - t));
            worst = std::max(worst, std::abs(sol.grid.value_at(t, single_at(0.4)) - unit));
            worst = std::max(worst,
                             std::abs(sol.grid.value_at(t, pair_at(-1.0, 0.5)) - 2 * unit));
            const Configuration three(1, {Atom{Label::root().child(0), v1(-0.5)},
                                          Atom{Label::root().child(1), v1(0.1)},
                                          Atom{Label::root().child(2), v1(1.2)}});
            worst = std::max(worst, std::abs(sol.grid.value_at(t, three) - 3 * unit));
        }
        o.pass = o.pass && worst <= 1e-2;
        o.detail += "; branchless decay error " + fmt(worst) + " <= 1e-2 for 1..3 particles";
    }
    return o;
}

// --- 7: nodewise-ordered terminal data gives nodewise-ordered values ---

struct GapRange {
    double lo = std::numeric_limits<double>::infinity();
    double hi = -std::numeric_limits<double>::infinity();
};

GapRange value_gap(const HJBSolution& a, const HJBSolution& b, int n_max) {
    GapRange g;
    for (std::size_t s = 0; s < a.grid.stored_ts.size(); ++s) {
        for (int n = 0; n <= n_max; ++n) {
            const auto& va = a.grid.values[s][static_cast<std::size_t>(n)];
            const auto& vb = b.grid.values[s][static_cast<std::size_t>(n)];
            for (std::size_t rk = 0; rk < va.size(); ++rk) {
                g.lo = std::min(g.lo, vb[rk] - va[rk]);
                g.hi = std::max(g.hi, vb[rk] - va[rk]);
            }
        }
    }
    return g;
}

CostSpec effort_cost(std::function<double(const Configuration&)> terminal) {
    CostSpec c;
    c.running = [](const Label&, const Eigen::VectorXd&, const Configuration&,
                   const Eigen::VectorXd& a) { return 0.5 * a.squaredNorm(); };
    c.terminal = std::move(terminal);
    return c;
}

Outcome criterion_comparison() {
    Outcome o;
    o.pass = true;
    const auto record = [&o](const char* name, const GapRange& g) {
        const bool ok = g.lo >= 0.0 && g.hi > 0.05;
        o.pass = o.pass && ok;
        if (!o.detail.empty()) o.detail += "; ";
        o.detail += std::string(name) + ": gap in [" + fmt(g.lo) + ", " + fmt(g.hi) + "]" +
                    (ok ? "" : " FAIL");
    };
    {
        // controlled diffusion with mass-neutral branching, raised terminal
        const Preset pre = make_preset("kinetic");
        MeanFieldCoefficients mf = *pre.mean_field;
        mf.branch_rate = [](const Eigen::VectorXd&, const UnlabeledMeasure&,
                            const Eigen::VectorXd&) { return 0.3; };
        mf.offspring = [](const Eigen::VectorXd&, const UnlabeledMeasure&,
                          const Eigen::VectorXd&) { return OffspringLaw{{0.5, 0.0, 0.5}}; };
        mf.bounds.rate_cap = 0.3;
        mf.bounds.offspring_mean_cap = 1.0;
        mf.bounds.offspring_factorial2_cap = 1.0;
        const CostSpec lo = effort_cost([](const Configuration& lam) { return lam.sum_sq(); });
        const CostSpec hi = effort_cost([](const Configuration& lam) {
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
        record("branching", value_gap(hjb_solve(mf, lo, geo, A, n_t),
                                      hjb_solve(mf, hi, geo, A, n_t), geo.n_max));
    }
    {
        // motionless death, per-mass terminal vs the same plus a wavy bonus
        const Preset p = make_preset("pure-death");
        CostSpec lo;
        lo.running = [](const Label&, const Eigen::VectorXd&, const Configuration&,
                        const Eigen::VectorXd&) { return 0.0; };
        lo.terminal = [](const Configuration& lam) { return lam.mass(); };
        CostSpec hi = lo;
        hi.terminal = [](const Configuration& lam) {
            double s = 0.0;
            for (const Atom& a : lam.atoms()) s += a.pos[0];
            return lam.mass() + 0.25 + 0.1 * std::cos(s);
        };
        HJBGeometry geo;
        geo.x_lo = -2.0;
        geo.x_hi = 2.0;
        geo.n_x = 21;
        geo.T = 1.0;
        geo.n_max = 3;
        const ActionGrid A = ActionGrid::equispaced(-1.0, 1.0, 5);
        record("death", value_gap(hjb_solve(*p.mean_field, lo, geo, A, 200),
                                  hjb_solve(*p.mean_field, hi, geo, A, 200), geo.n_max));
    }
    {
        // quadratic-cost preset vs the same data shifted up by a bounded bump
        const Preset pre = make_preset("lq");
        const CostSpec lo = pre.cost;
        CostSpec hi = lo;
        hi.terminal = [base = lo.terminal](const Configuration& lam) {
            double s = 0.0;
            for (const Atom& a : lam.atoms()) s += a.pos[0];
            return base(lam) + 0.2 + 0.05 * std::sin(s);
        };
        HJBGeometry geo;
        geo.x_lo = -2.0;
        geo.x_hi = 2.0;
        geo.n_x = 21;
        geo.T = 0.5;
        geo.n_max = 2;
        const ActionGrid A = ActionGrid::equispaced(-1.0, 1.0, 9);
        const int n_t = hjb_auto_steps(*pre.mean_field, geo, A);
        record("quadratic", value_gap(hjb_solve(*pre.mean_field, lo, geo, A, n_t),
                                      hjb_solve(*pre.mean_field, hi, geo, A, n_t), geo.n_max));
    }
    return o;
}

// --- 8: assignment distance equals the brute-force matching minimum ---

Outcome criterion_distance_oracle() {
    const std::uint64_t base = derive_seed(kBaseSeed, 8);
    int bad = 0;
    double worst = 0.0;
    for (std::uint64_t k = 0; k < 200; ++k) {
        const Configuration a =
            testsupport::snap_dyadic(testsupport::random_population(derive_seed(base, 2 * k), 1, 6));
        const Configuration b = testsupport::snap_dyadic(
            testsupport::random_population(derive_seed(base, 2 * k + 1), 1, 6));
        const double got = population_distance(a, b);
        const double want = testsupport::brute_force_distance(a, b);
        if (got != want) ++bad;
        worst = std::max(worst, std::abs(got - want));
    }
    Outcome o;
    o.pass = bad == 0;
    o.detail = "200 instances (<= 6 atoms each side), " + std::to_string(bad) +
               " mismatches, worst gap " + fmt(worst) + " (must be bitwise equal)";
    return o;
}

// --- 9 / 10: pinned-seed suites covering relabeling symmetry and the ---
// --- one-body reduction                                              ---

Outcome suite_outcome(const std::string& name) {
    const VerifyReport rep = verify_suite(name, "");
    Outcome o;
    o.pass = rep.pass();
    for (const VerifyCheck& c : rep.checks) {
        if (!o.detail.empty()) o.detail += "; ";
        o.detail += c.name + (c.pass ? " ok" : " FAIL");
    }
    return o;
}

// --- 11: pinned-seed suites leave bit-identical artifacts on rerun ---

Outcome criterion_determinism() {
    const fs::path root = fs::temp_directory_path() / "acceptance_rerun_artifacts";
    fs::remove_all(root);
    Outcome o;
    o.pass = true;
    for (const std::string& name : verify_suite_names()) {
        const fs::path a = root / (name + "_a");
        const fs::path b = root / (name + "_b");
        verify_suite(name, a.string());
        verify_suite(name, b.string());
        bool same = true;
        for (const char* f : {"manifest.json", "results.json"})
            same = same && !slurp((a / f).string()).empty() &&
                   slurp((a / f).string()) == slurp((b / f).string());
        o.pass = o.pass && same;
        if (!o.detail.empty()) o.detail += "; ";
        o.detail += name + (same ? " identical" : " DIVERGED");
    }
    fs::remove_all(root);
    return o;
}

}  // namespace

int main() {
    struct Row {
        int id;
        const char* name;
        double limit;  // wall-clock budget in seconds; 0 = none
        std::function<Outcome()> fn;
    };
    const std::vector<Row> rows = {
        {1, "population-mean-growth", 30.0, criterion_population_mean},
        {2, "population-second-moment-bound", 0.0, criterion_second_moment},
        {3, "quadratic-value-consistency", 120.0, criterion_quadratic_consistency},
        {4, "feedback-perturbation-optimality", 0.0, criterion_perturbation_optimality},
        {5, "value-compensator-verdicts", 0.0, criterion_compensator_verdicts},
        {6, "grid-value-benchmarks", 60.0, criterion_grid_benchmarks},
        {7, "ordered-data-comparison", 0.0, criterion_comparison},
        {8, "matching-distance-oracle", 0.0, criterion_distance_oracle},
        {9, "relabeling-symmetry", 0.0, [] { return suite_outcome("symmetry"); }},
        {10, "one-body-reduction", 60.0, [] { return suite_outcome("kinetic"); }},
        {11, "rerun-determinism", 0.0, criterion_determinism},
    };

    int failed = 0;
    for (const Row& row : rows) {
        const auto t0 = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = row.fn();
        } catch (const std::exception& e) {
            o.pass = false;
            o.detail = std::string("exception: ") + e.what();
        }
        const double secs =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        if (row.limit > 0.0 && secs > row.limit) {
            o.pass = false;
            o.detail += "; exceeded the " + fmt(row.limit) + "s budget";
        }
        if (!o.pass) ++failed;
        std::printf("[%s] %2d %-34s %s (%.1fs)\n", o.pass ? "PASS" : "FAIL", row.id, row.name,
                    o.detail.c_str(), secs);
        std::fflush(stdout);
    }
    std::printf("%d/11 criteria passed\n", 11 - failed);
    return failed == 0 ? 0 : 1;
}
