#include "branchsim/kinetic.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <sstream>
#include <stdexcept>

#include "branchsim/util.hpp"

namespace branchsim {

namespace {

struct Grid {
    std::vector<double> xs;
    double dx = 0.0;
    double dt = 0.0;
    int n_t = 0;
};

Grid make_grid(const KineticSpec& spec, int n_t) {
    if (spec.n_x < 3) throw std::invalid_argument("kinetic: need at least 3 spatial nodes");
    if (!(spec.x_hi > spec.x_lo)) throw std::invalid_argument("kinetic: empty spatial box");
    if (spec.T <= 0.0) throw std::invalid_argument("kinetic: horizon must be positive");
    if (n_t < 1) throw std::invalid_argument("kinetic: need at least one time step");
    Grid g;
    g.dx = (spec.x_hi - spec.x_lo) / (spec.n_x - 1);
    g.dt = spec.T / n_t;
    g.n_t = n_t;
    if (g.dt > g.dx * g.dx * (1.0 + 1e-12)) {
        std::ostringstream msg;
        msg << "kinetic: explicit step " << format_double(g.dt) << " exceeds the parabolic bound "
            << format_double(g.dx * g.dx);
        throw std::invalid_argument(msg.str());
    }
    g.xs.resize(static_cast<std::size_t>(spec.n_x));
    for (int i = 0; i < spec.n_x; ++i) g.xs[static_cast<std::size_t>(i)] = spec.x_lo + i * g.dx;
    g.xs.back() = spec.x_hi;
    return g;
}

// Centered slope with mirror ghosts: zero at both ends.
std::vector<double> slope(const std::vector<double>& row, double dx) {
    const std::size_t n = row.size();
    std::vector<double> d(n, 0.0);
    for (std::size_t i = 1; i + 1 < n; ++i) d[i] = (row[i + 1] - row[i - 1]) / (2.0 * dx);
    return d;
}

double mirror(const std::vector<double>& row, std::ptrdiff_t i) {
    const std::ptrdiff_t n = static_cast<std::ptrdiff_t>(row.size());
    if (i < 0) i = -i;
    if (i >= n) i = 2 * (n - 1) - i;
    return row[static_cast<std::size_t>(i)];
}

// One backward step of dh/dt = -(b dh - |dh|^2/2 + h''/2 + phi h).
std::vector<double> step_semilinear(const KineticSpec& spec, const Grid& g,
                                    const std::vector<double>& cur,
                                    const std::vector<double>& phi, double t_right) {
    const std::size_t n = cur.size();
    std::vector<double> next(n);
    std::vector<double> d = slope(cur, g.dx);
    for (std::size_t i = 0; i < n; ++i) {
        const double lap =
            (mirror(cur, static_cast<std::ptrdiff_t>(i) + 1) - 2.0 * cur[i] +
             mirror(cur, static_cast<std::ptrdiff_t>(i) - 1)) /
            (g.dx * g.dx);
        const double rhs = spec.b(t_right, g.xs[i]) * d[i] - 0.5 * d[i] * d[i] + 0.5 * lap +
                           phi[i] * cur[i];
        next[i] = cur[i] + g.dt * rhs;
        if (!std::isfinite(next[i])) {
            std::ostringstream msg;
            msg << "kinetic: value became non-finite at t=" << format_double(t_right - g.dt)
                << ", x=" << format_double(g.xs[i]);
            throw std::runtime_error(msg.str());
        }
    }
    return next;
}

std::vector<double> branching_potential(const KineticSpec& spec, const Grid& g) {
    std::vector<double> phi(g.xs.size());
    for (std::size_t i = 0; i < g.xs.size(); ++i) {
        OffspringLaw law = spec.offspring(g.xs[i]);
        law.validate();
        phi[i] = spec.gamma(g.xs[i]) * law.mean_increment();
    }
    return phi;
}

}  // namespace

HSolution solve_h(const KineticSpec& spec, int n_t) {
    Grid g = make_grid(spec, n_t);
    std::vector<double> phi = branching_potential(spec, g);

    HSolution sol;
    sol.x_lo = spec.x_lo;
    sol.x_hi = spec.x_hi;
    sol.T = spec.T;
    sol.xs = g.xs;
    sol.ts.resize(static_cast<std::size_t>(n_t) + 1);
    for (int m = 0; m <= n_t; ++m) sol.ts[static_cast<std::size_t>(m)] = g.dt * m;
    sol.ts.back() = spec.T;
    sol.h.assign(sol.ts.size(), {});
    sol.dh.assign(sol.ts.size(), {});

    std::vector<double> cur(g.xs.size());
    for (std::size_t i = 0; i < g.xs.size(); ++i) cur[i] = spec.terminal(g.xs[i]);
    sol.h.back() = cur;
    for (int m = n_t; m >= 1; --m) {
        cur = step_semilinear(spec, g, cur, phi, sol.ts[static_cast<std::size_t>(m)]);
        sol.h[static_cast<std::size_t>(m) - 1] = cur;
    }
    for (std::size_t m = 0; m < sol.ts.size(); ++m) sol.dh[m] = slope(sol.h[m], g.dx);
    return sol;
}

double hopf_cole_check(const KineticSpec& spec, int n_t) {
    Grid g = make_grid(spec, n_t);
    std::vector<double> phi = branching_potential(spec, g);
    for (std::size_t i = 0; i < phi.size(); ++i) {
        if (phi[i] != 0.0) {
            throw std::invalid_argument(
                "hopf_cole_check: the substitution only linearizes a vanishing branching "
                "potential");
        }
    }

    HSolution hsol = solve_h(spec, n_t);

    // linear solve for g = e^{-h}: dg/dt = -(b dg + g''/2), g(T,.) = e^{-terminal}
    std::vector<double> cur(g.xs.size());
    for (std::size_t i = 0; i < g.xs.size(); ++i) cur[i] = std::exp(-spec.terminal(g.xs[i]));
    const std::size_t lo = g.xs.size() / 4;
    const std::size_t hi = g.xs.size() - 1 - lo;
    double worst = 0.0;
    auto scan = [&](const std::vector<double>& grow, std::size_t m) {
        for (std::size_t i = lo; i <= hi; ++i) {
            if (grow[i] <= 0.0) throw std::runtime_error("hopf_cole_check: transform left (0,1]");
            worst = std::max(worst, std::abs(hsol.h[m][i] + std::log(grow[i])));
        }
    };
    scan(cur, static_cast<std::size_t>(n_t));
    for (int m = n_t; m >= 1; --m) {
        const double t_right = hsol.ts[static_cast<std::size_t>(m)];
        std::vector<double> d = slope(cur, g.dx);
        std::vector<double> next(cur.size());
        for (std::size_t i = 0; i < cur.size(); ++i) {
            const double lap =
                (mirror(cur, static_cast<std::ptrdiff_t>(i) + 1) - 2.0 * cur[i] +
                 mirror(cur, static_cast<std::ptrdiff_t>(i) - 1)) /
                (g.dx * g.dx);
            next[i] = cur[i] + g.dt * (spec.b(t_right, g.xs[i]) * d[i] + 0.5 * lap);
            if (!std::isfinite(next[i])) {
                throw std::runtime_error("hopf_cole_check: linear solve became non-finite");
            }
        }
        cur = std::move(next);
        scan(cur, static_cast<std::size_t>(m) - 1);
    }
    return worst;
}

namespace {

// Fractional index of x on a uniform grid, clamped to the box.
std::pair<std::size_t, double> clamp_locate(const std::vector<double>& axis, double v) {
    const std::size_t n = axis.size();
    if (v <= axis.front()) return {0, 0.0};
    if (v >= axis.back()) return {n - 2, 1.0};
    const double step = (axis.back() - axis.front()) / static_cast<double>(n - 1);
    std::size_t j = std::min(n - 2, static_cast<std::size_t>((v - axis.front()) / step));
    while (j + 2 < n && axis[j + 1] < v) ++j;
    while (j > 0 && axis[j] > v) --j;
    double theta = std::clamp((v - axis[j]) / (axis[j + 1] - axis[j]), 0.0, 1.0);
    return {j, theta};
}

double bilinear(const std::vector<std::vector<double>>& table, const std::vector<double>& ts,
                const std::vector<double>& xs, double t, double x) {
    auto [m, tt] = clamp_locate(ts, t);
    auto [j, tx] = clamp_locate(xs, x);
    const double lo = (1.0 - tx) * table[m][j] + tx * table[m][j + 1];
    const double hi = (1.0 - tx) * table[m + 1][j] + tx * table[m + 1][j + 1];
    return (1.0 - tt) * lo + tt * hi;
}

}  // namespace

double HSolution::h_at(double t, double x) const { return bilinear(h, ts, xs, t, x); }

double HSolution::dh_at(double t, double x) const { return bilinear(dh, ts, xs, t, x); }

std::string HSolution::to_csv() const {
    std::ostringstream os;
    os << "t";
    for (double x : xs) os << ',' << format_double(x);
    os << '\n';
    for (std::size_t m = 0; m < ts.size(); ++m) {
        os << format_double(ts[m]);
        for (double v : h[m]) os << ',' << format_double(v);
        os << '\n';
    }
    return os.str();
}

std::string HSolution::meta_json() const {
    std::ostringstream os;
    os << "{\"x_lo\":" << format_double(x_lo) << ",\"x_hi\":" << format_double(x_hi)
       << ",\"n_x\":" << xs.size() << ",\"T\":" << format_double(T) << ",\"n_t\":" << ts.size() - 1
       << "}";
    return os.str();
}

ControlPolicy kinetic_feedback(const HSolution& sol) {
    auto shared = std::make_shared<HSolution>(sol);
    ControlPolicy pol;
    pol.kind = ControlPolicy::Kind::Gradient;
    pol.adim = 1;
    pol.symmetric = true;
    pol.act = [shared](double t, const Label&, const Eigen::VectorXd& x, const Configuration&) {
        Eigen::VectorXd a(1);
        a[0] = -shared->dh_at(t, x[0]);
        return a;
    };
    return pol;
}

ModelCoefficients kinetic_model(const KineticSpec& spec) {
    ModelCoefficients m;
    m.dim = 1;
    m.wdim = 1;
    m.adim = 1;
    auto b0 = spec.b;
    m.drift = [b0](const Label&, const Eigen::VectorXd& x, const Configuration&,
                   const Eigen::VectorXd& a) {
        Eigen::VectorXd v(1);
        v[0] = b0(0.0, x[0]) + a[0];
        return v;
    };
    m.diffusion = [](const Label&, const Eigen::VectorXd&, const Configuration&,
                     const Eigen::VectorXd&) {
        return Eigen::MatrixXd(Eigen::MatrixXd::Identity(1, 1));
    };
    auto gam = spec.gamma;
    m.branch_rate = [gam](const Label&, const Eigen::VectorXd& x, const Configuration&,
                          const Eigen::VectorXd&) { return gam(x[0]); };
    auto law = spec.offspring;
    m.offspring = [law](const Label&, const Eigen::VectorXd& x, const Configuration&,
                        const Eigen::VectorXd&) { return law(x[0]); };

    double rate_cap = 0.0, mean_cap = 0.0, fac_cap = 0.0;
    const int probes = 64;
    for (int i = 0; i <= probes; ++i) {
        const double x = spec.x_lo + (spec.x_hi - spec.x_lo) * i / probes;
        rate_cap = std::max(rate_cap, spec.gamma(x));
        OffspringLaw l = spec.offspring(x);
        mean_cap = std::max(mean_cap, l.mean());
        fac_cap = std::max(fac_cap, l.factorial2());
    }
    m.bounds.rate_cap = rate_cap;
    m.bounds.diffusion_cap = 1.0;
    m.bounds.lipschitz = 2.0;
    m.bounds.drift_growth = 2.0 + std::abs(spec.b(0.0, 0.0));
    m.bounds.offspring_mean_cap = std::max(mean_cap, 1e-9);
    m.bounds.offspring_factorial2_cap = std::max(fac_cap, 1e-9);
    return m;
}

CostSpec kinetic_cost(const KineticSpec& spec) {
    CostSpec c;
    c.running = [](const Label&, const Eigen::VectorXd&, const Configuration&,
                   const Eigen::VectorXd& a) { return 0.5 * a.squaredNorm(); };
    auto terminal = spec.terminal;
    c.terminal = [terminal](const Configuration& lam) {
        double total = 0.0;
        for (const auto& at : lam.atoms()) total += terminal(at.pos[0]);
        return total;
    };
    c.coercivity_action = 0.5;
    c.coercivity_upper = 1.0 + std::abs(terminal(0.0));
    return c;
}

KineticSpec kinetic_benchmark_spec(double x_lo, double x_hi, int n_x, double T) {
    KineticSpec spec;
    spec.b = [](double, double) { return 0.0; };
    spec.gamma = [](double) { return 0.0; };
    spec.offspring = [](double) { return OffspringLaw{{0.0, 1.0}}; };
    spec.terminal = [](double x) { return x * x; };
    spec.x_lo = x_lo;
    spec.x_hi = x_hi;
    spec.n_x = n_x;
    spec.T = T;
    return spec;
}

}  // namespace branchsim
