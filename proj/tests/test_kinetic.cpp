#include <doctest.h>

#include <cmath>
#include <string>

#include "branchsim/cost.hpp"
#include "branchsim/kinetic.hpp"
#include "branchsim/util.hpp"
#include "test_support.hpp"

using namespace branchsim;

namespace {

Eigen::VectorXd vec1(double x) {
    Eigen::VectorXd v(1);
    v << x;
    return v;
}

Configuration one_at(double x) { return Configuration::single(1, Label::root(), vec1(x)); }

// Quadratic terminal, no drift, no branching: h solves the plain semilinear
// equation and has the closed form below.
double closed_quadratic(double t, double x, double T) {
    const double tau = T - t;
    return x * x / (1.0 + 2.0 * tau) + 0.5 * std::log(1.0 + 2.0 * tau);
}

// Probabilistic representation of the same value: -log E[exp(-(x + W_tau)^2)]
// evaluated by Simpson quadrature against the standard normal density.
double quadrature_quadratic(double tau, double x) {
    const double lo = -8.0, hi = 8.0;
    const int n = 8000;  // even
    const double step = (hi - lo) / n;
    const double s = std::sqrt(tau);
    auto f = [&](double z) {
        const double y = x + s * z;
        return std::exp(-0.5 * z * z) / std::sqrt(2.0 * M_PI) * std::exp(-y * y);
    };
    double acc = f(lo) + f(hi);
    for (int i = 1; i < n; ++i) acc += (i % 2 == 1 ? 4.0 : 2.0) * f(lo + i * step);
    return -std::log(acc * step / 3.0);
}

// Branching fixture with a genuinely nonzero potential:
// gamma = 0.3, offspring {0.25, 0, 0.75} so phi = 0.3 * (1.5 - 1) = 0.15.
KineticSpec branching_spec(std::function<double(double)> terminal) {
    KineticSpec spec;
    spec.b = [](double, double) { return 0.0; };
    spec.gamma = [](double) { return 0.3; };
    spec.offspring = [](double) { return OffspringLaw{{0.25, 0.0, 0.75}}; };
    spec.terminal = std::move(terminal);
    spec.n_x = 51;
    return spec;
}

double sup_inner_error(const HSolution& sol, double (*truth)(double, double, double)) {
    const std::size_t lo = sol.xs.size() / 4;
    const std::size_t hi = sol.xs.size() - 1 - lo;
    double worst = 0.0;
    for (std::size_t m = 0; m < sol.ts.size(); ++m)
        for (std::size_t i = lo; i <= hi; ++i)
            worst = std::max(worst, std::abs(sol.h[m][i] - truth(sol.ts[m], sol.xs[i], sol.T)));
    return worst;
}

}  // namespace

TEST_SUITE("kinetic") {

TEST_CASE("grid geometry and the terminal slice are exact") {
    KineticSpec spec = kinetic_benchmark_spec();
    HSolution sol = solve_h(spec, 480);

    CHECK(sol.xs.size() == 161);
    CHECK(sol.ts.size() == 481);
    CHECK(sol.h.size() == 481);
    CHECK(sol.dh.size() == 481);
    CHECK(sol.xs.front() == -4.0);
    CHECK(sol.xs.back() == 4.0);
    CHECK(sol.ts.front() == 0.0);
    CHECK(sol.ts.back() == 1.0);

    for (std::size_t i = 0; i < sol.xs.size(); ++i) {
        CHECK(sol.h.back()[i] == spec.terminal(sol.xs[i]));
    }

    // interpolation hits grid nodes exactly and clamps outside the box
    CHECK(sol.h_at(1.0, sol.xs[40]) == sol.h.back()[40]);
    CHECK(sol.h_at(0.0, sol.xs[80]) == sol.h.front()[80]);
    CHECK(sol.h_at(0.5, -9.0) == sol.h_at(0.5, -4.0));
    CHECK(sol.h_at(0.5, 77.0) == sol.h_at(0.5, 4.0));
}

TEST_CASE("zero terminal data stays exactly zero, branching or not") {
    KineticSpec spec = branching_spec([](double) { return 0.0; });
    HSolution sol = solve_h(spec, 400);
    for (const auto& row : sol.h)
        for (double v : row) CHECK(v == 0.0);

    ControlPolicy pol = kinetic_feedback(sol);
    Configuration lam = one_at(0.3);
    CHECK(pol.act(0.37, Label::root(), vec1(0.3), lam)[0] == 0.0);
    CHECK(pol.act(0.9, Label::root(), vec1(-2.6), lam)[0] == 0.0);
}

TEST_CASE("constant terminal data grows by the branching exponential") {
    // Spatially constant h kills every derivative term, leaving dh/dt = -phi h,
    // so h(t) = 0.8 * exp(phi * (T - t)) with phi = 0.15.
    KineticSpec spec = branching_spec([](double) { return 0.8; });
    HSolution sol = solve_h(spec, 400);

    for (const auto& row : sol.h)
        for (double v : row) CHECK(v == row[0]);

    CHECK(sol.h.front()[0] == doctest::Approx(0.8 * std::exp(0.15)).epsilon(1e-4));
    CHECK(sol.h_at(0.5, 1.3) == doctest::Approx(0.8 * std::exp(0.075)).epsilon(1e-4));
}

TEST_CASE("quadratic terminal matches the probabilistic quadrature oracle") {
    const double taus[] = {0.25, 0.5, 1.0};
    const double xs[] = {-2.0, -1.0, -0.5, 0.0, 0.5, 1.0, 2.0};

    // the quadrature and the closed form agree to quadrature accuracy
    for (double tau : taus)
        for (double x : xs)
            CHECK(quadrature_quadratic(tau, x) ==
                  doctest::Approx(closed_quadratic(1.0 - tau, x, 1.0)).epsilon(1e-9));

    HSolution sol = solve_h(kinetic_benchmark_spec(), 3840);
    CHECK(sup_inner_error(sol, closed_quadratic) <= 1e-3);

    for (double tau : taus)
        for (double x : xs)
            CHECK(std::abs(sol.h_at(1.0 - tau, x) - quadrature_quadratic(tau, x)) <= 1e-3);
}

TEST_CASE("constant drift shifts the quadratic closed form") {
    KineticSpec spec = kinetic_benchmark_spec();
    spec.b = [](double, double) { return 0.4; };
    HSolution sol = solve_h(spec, 3840);
    // dX = b dt + dW from x gives h(t,x) = (x + b tau)^2/(1+2tau) + log(1+2tau)/2
    auto truth = [](double t, double x, double T) {
        const double tau = T - t;
        return closed_quadratic(t, x + 0.4 * tau, T);
    };
    const std::size_t lo = sol.xs.size() / 4;
    const std::size_t hi = sol.xs.size() - 1 - lo;
    double worst = 0.0;
    for (std::size_t m = 0; m < sol.ts.size(); ++m)
        for (std::size_t i = lo; i <= hi; ++i)
            worst = std::max(worst, std::abs(sol.h[m][i] - truth(sol.ts[m], sol.xs[i], sol.T)));
    CHECK(worst <= 1e-3);
}

TEST_CASE("even terminal data gives an even solution and an odd feedback") {
    HSolution sol = solve_h(kinetic_benchmark_spec(), 480);
    const std::size_t n = sol.xs.size();
    for (std::size_t m = 0; m < sol.ts.size(); ++m)
        for (std::size_t i = 0; i < n; ++i)
            CHECK(std::abs(sol.h[m][i] - sol.h[m][n - 1 - i]) <= 1e-11);

    ControlPolicy pol = kinetic_feedback(sol);
    Configuration lam = one_at(0.0);
    for (double t : {0.0, 0.31, 0.75, 1.0}) {
        for (double x : {0.35, 1.0, 1.9, 3.2}) {
            const double plus = pol.act(t, Label::root(), vec1(x), lam)[0];
            const double minus = pol.act(t, Label::root(), vec1(-x), lam)[0];
            CHECK(std::abs(plus + minus) <= 1e-10);
        }
    }
    // slope of the closed form: dh/dx(t,x) = 2x/(1+2(T-t))
    CHECK(pol.act(0.0, Label::root(), vec1(1.0), lam)[0] ==
          doctest::Approx(-2.0 / 3.0).epsilon(1e-2));
    CHECK(pol.act(1.0, Label::root(), vec1(1.0), lam)[0] == doctest::Approx(-2.0).epsilon(1e-9));
}

TEST_CASE("transform cross-check vanishes, converges, and rejects a potential") {
    KineticSpec zero = kinetic_benchmark_spec();
    zero.terminal = [](double) { return 0.0; };
    CHECK(hopf_cole_check(zero, 480) == 0.0);

    CHECK(hopf_cole_check(kinetic_benchmark_spec(), 3840) <= 1e-3);

    KineticSpec lvl = kinetic_benchmark_spec();
    lvl.n_x = 51;
    const double d0 = hopf_cole_check(lvl, 40);
    lvl.n_x = 101;
    const double d1 = hopf_cole_check(lvl, 160);
    lvl.n_x = 201;
    const double d2 = hopf_cole_check(lvl, 625);
    CHECK(d0 > d1);
    CHECK(d1 > d2);

    KineticSpec branching = branching_spec([](double x) { return x * x; });
    CHECK_THROWS_AS(hopf_cole_check(branching, 400), std::invalid_argument);
}

TEST_CASE("grid validation and blow-up reporting") {
    KineticSpec spec = kinetic_benchmark_spec();

    SUBCASE("parabolic step bound") {
        try {
            solve_h(spec, 10);  // dt = 0.1 > dx^2 = 0.0025
            FAIL("stability violation accepted");
        } catch (const std::invalid_argument& e) {
            CHECK(std::string(e.what()).find("parabolic") != std::string::npos);
        }
    }
    SUBCASE("degenerate grids") {
        KineticSpec bad = spec;
        bad.n_x = 2;
        CHECK_THROWS_AS(solve_h(bad, 400), std::invalid_argument);
        bad = spec;
        bad.x_hi = bad.x_lo;
        CHECK_THROWS_AS(solve_h(bad, 400), std::invalid_argument);
        bad = spec;
        bad.T = 0.0;
        CHECK_THROWS_AS(solve_h(bad, 400), std::invalid_argument);
        CHECK_THROWS_AS(solve_h(spec, 0), std::invalid_argument);
    }
    SUBCASE("overflowing data names the offending node") {
        KineticSpec steep = spec;
        steep.terminal = [](double x) { return 1e300 * x; };
        try {
            solve_h(steep, 480);
            FAIL("overflow accepted");
        } catch (const std::runtime_error& e) {
            CHECK(std::string(e.what()).find("non-finite") != std::string::npos);
        }
    }
}

TEST_CASE("larger terminal data gives a larger solution nodewise") {
    KineticSpec lo_spec = kinetic_benchmark_spec();
    KineticSpec hi_spec = kinetic_benchmark_spec();
    hi_spec.terminal = [](double x) { return x * x + 0.5 * (1.0 + std::sin(x)); };
    HSolution lo = solve_h(lo_spec, 480);
    HSolution hi = solve_h(hi_spec, 480);
    double min_gap = 1e300, max_gap = -1e300;
    for (std::size_t m = 0; m < lo.ts.size(); ++m) {
        for (std::size_t i = 0; i < lo.xs.size(); ++i) {
            const double g = hi.h[m][i] - lo.h[m][i];
            min_gap = std::min(min_gap, g);
            max_gap = std::max(max_gap, g);
        }
    }
    CHECK(min_gap >= -1e-12);
    CHECK(max_gap > 0.4);
}

TEST_CASE("gradient feedback beats the uncontrolled policy on the quadratic fixture") {
    KineticSpec spec = kinetic_benchmark_spec();
    HSolution sol = solve_h(spec, 960);
    ModelCoefficients model = kinetic_model(spec);
    CostSpec cost = kinetic_cost(spec);

    SimConfig cfg;
    cfg.T = 1.0;
    cfg.dt = 1.0 / 128.0;
    cfg.seed = 20250815;

    CostEstimate fb = estimate_J(one_at(1.0), kinetic_feedback(sol), model, cost, cfg, 600);
    CostEstimate un = estimate_J(one_at(1.0), constant_policy(vec1(0.0)), model, cost, cfg, 600);

    // uncontrolled: X_T = 1 + W_1 exactly, so J = E[(1+W_1)^2] = 2
    CHECK(std::abs(un.mean - 2.0) <= 3.0 * un.std_error);
    // controlled cost approaches the solved value h(0, 1)
    CHECK(std::abs(fb.mean - sol.h_at(0.0, 1.0)) <= std::max(3.0 * fb.std_error, 0.05));

    // paired comparison on shared noise: strictly better by more than 2 SE
    std::vector<double> diff(fb.samples.size());
    for (std::size_t r = 0; r < diff.size(); ++r) diff[r] = fb.samples[r] - un.samples[r];
    MeanSE d = mean_se(diff);
    CHECK(d.mean < 0.0);
    CHECK(d.mean + 2.0 * d.se < 0.0);
}

TEST_CASE("population-integrated value passes the residual verdicts") {
    KineticSpec spec = kinetic_benchmark_spec();
    HSolution sol = solve_h(spec, 960);
    ModelCoefficients model = kinetic_model(spec);
    CostSpec cost = kinetic_cost(spec);

    ValueFunction w = [&sol](double t, const Configuration& lam) {
        double total = 0.0;
        for (const auto& at : lam.atoms()) total += sol.h_at(t, at.pos[0]);
        return total;
    };

    SimConfig cfg;
    cfg.T = 1.0;
    cfg.dt = 0.0125;
    cfg.seed = 424242;

    ResidualReport opt = verification_residual(w, one_at(1.0), kinetic_feedback(sol), model, cost,
                                               cfg, 1200, 8);
    CHECK(opt.gaps.size() == 8);
    CHECK(opt.escaped == 0);
    CHECK(opt.martingale_ok);
    CHECK(opt.submartingale_ok);

    ResidualReport idle = verification_residual(w, one_at(1.0), constant_policy(vec1(0.0)), model,
                                                cost, cfg, 1200, 8);
    CHECK(idle.submartingale_ok);
    CHECK_FALSE(idle.martingale_ok);
    double drift = 0.0;
    for (const auto& g : idle.gaps) drift += g.mean;
    CHECK(drift > 0.0);
}

TEST_CASE("model and cost exports carry the fixture data") {
    KineticSpec spec = branching_spec([](double x) { return x * x; });
    ModelCoefficients model = kinetic_model(spec);
    CHECK(model.dim == 1);
    CHECK(model.adim == 1);
    Configuration lam = one_at(0.7);
    CHECK(model.drift(Label::root(), vec1(0.7), lam, vec1(0.3))[0] == 0.3);
    CHECK(model.diffusion(Label::root(), vec1(0.7), lam, vec1(0.0))(0, 0) == 1.0);
    CHECK(model.branch_rate(Label::root(), vec1(0.7), lam, vec1(0.0)) == 0.3);
    CHECK(model.bounds.rate_cap == 0.3);
    CHECK(model.bounds.offspring_mean_cap == 1.5);
    CHECK(model.bounds.offspring_factorial2_cap == 1.5);

    CostSpec cost = kinetic_cost(spec);
    CHECK(cost.running(Label::root(), vec1(0.7), lam, vec1(0.5)) == 0.125);
    Configuration pair(1, {Atom{Label::root().child(0), vec1(1.5)},
                           Atom{Label::root().child(1), vec1(-2.0)}});
    CHECK(cost.terminal(pair) == 1.5 * 1.5 + 4.0);
    CHECK(cost.coercivity_action == 0.5);
}

TEST_CASE("exports describe the grid") {
    KineticSpec spec = kinetic_benchmark_spec(-2.0, 2.0, 41, 0.5);
    HSolution sol = solve_h(spec, 160);

    std::string csv = sol.to_csv();
    CHECK(csv.rfind("t,-2,", 0) == 0);
    std::size_t lines = 0;
    for (char c : csv)
        if (c == '\n') ++lines;
    CHECK(lines == 162);  // header plus one row per time slice

    std::string meta = sol.meta_json();
    CHECK(meta.find("\"n_x\":41") != std::string::npos);
    CHECK(meta.find("\"n_t\":160") != std::string::npos);
    CHECK(meta.find("\"x_lo\":-2") != std::string::npos);
    CHECK(meta.find("\"T\":0.5") != std::string::npos);
}

}  // TEST_SUITE
