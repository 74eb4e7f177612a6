#include "branchsim/riccati.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <sstream>

#include "branchsim/rng.hpp"
#include "branchsim/util.hpp"

namespace branchsim {

namespace {

struct Coeffs {
    Eigen::MatrixXd Qd;
    double pd = 0.0;
    double pbd = 0.0;
};

void require_pd(const Eigen::MatrixXd& Cb) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(Cb);
    double scale = std::max(1.0, Cb.cwiseAbs().maxCoeff());
    if (es.eigenvalues().minCoeff() <= 1e-12 * scale) {
        throw std::invalid_argument("lq: action cost matrix must be uniformly positive definite");
    }
}

// Right-hand side of the backward system at time t.
Coeffs rhs(const LQSpec& spec, double t, const Eigen::MatrixXd& Q, double p, double pbar) {
    const double g1 = spec.gamma(t) * spec.offspring.mean_increment();
    const double g2 = spec.gamma(t) * spec.offspring.sq_increment();
    Eigen::MatrixXd Bt = spec.B(t);
    Eigen::MatrixXd Bb = spec.Bbar(t);
    Eigen::MatrixXd Cb = spec.Cbar(t);
    require_pd(Cb);
    Eigen::MatrixXd K = Bb * Cb.ldlt().solve(Bb.transpose());
    const double sig = spec.sigma(t);
    Coeffs out;
    out.Qd = -(Bt.transpose() * Q + Q * Bt + g1 * Q + spec.C(t) - Q * K * Q);
    out.pd = -(g1 * p + spec.c(t));
    out.pbd = -(sig * sig * Q.trace() + g1 * pbar + g2 * p);
    return out;
}

bool sane(const Eigen::MatrixXd& Q, double p, double pbar) {
    return Q.allFinite() && std::isfinite(p) && std::isfinite(pbar) &&
           Q.cwiseAbs().maxCoeff() < 1e12 && std::abs(p) < 1e12 && std::abs(pbar) < 1e12;
}

}  // namespace

RiccatiSolution solve_riccati(const LQSpec& spec, int n_steps) {
    if (n_steps < 2) throw std::invalid_argument("solve_riccati: need at least 2 steps");
    if (spec.d < 1 || spec.q < 1) throw std::invalid_argument("solve_riccati: bad dimensions");
    if (spec.T <= 0) throw std::invalid_argument("solve_riccati: horizon must be positive");
    if (spec.H.rows() != spec.d || spec.H.cols() != spec.d) {
        throw std::invalid_argument("solve_riccati: terminal matrix has the wrong shape");
    }
    spec.offspring.validate();

    const int n = n_steps;
    const double step = spec.T / n;
    RiccatiSolution sol;
    sol.ts.resize(static_cast<std::size_t>(n) + 1);
    for (int j = 0; j <= n; ++j) sol.ts[static_cast<std::size_t>(j)] = step * j;
    sol.ts.back() = spec.T;
    Eigen::MatrixXd nanQ = Eigen::MatrixXd::Constant(spec.d, spec.d,
                                                     std::numeric_limits<double>::quiet_NaN());
    sol.Q.assign(sol.ts.size(), nanQ);
    sol.p.assign(sol.ts.size(), std::numeric_limits<double>::quiet_NaN());
    sol.pbar.assign(sol.ts.size(), std::numeric_limits<double>::quiet_NaN());

    Eigen::MatrixXd Q = 0.5 * (spec.H + spec.H.transpose());
    double p = spec.h;
    double pbar = 0.0;

    auto record = [&](int j) {
        sol.Q[static_cast<std::size_t>(j)] = Q;
        sol.p[static_cast<std::size_t>(j)] = p;
        sol.pbar[static_cast<std::size_t>(j)] = pbar;
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(Q);
        double scale = 1.0 + Q.cwiseAbs().maxCoeff();
        if (es.eigenvalues().minCoeff() < -1e-10 * scale) {
            sol.psd_ok = false;
            sol.first_non_psd = j;  // sweep runs downward, so the last write is the lowest node
        }
    };

    record(n);
    for (int j = n; j >= 1; --j) {
        const double t_hi = sol.ts[static_cast<std::size_t>(j)];
        const double hs = sol.ts[static_cast<std::size_t>(j) - 1] - t_hi;  // negative
        Coeffs k1 = rhs(spec, t_hi, Q, p, pbar);
        Coeffs k2 = rhs(spec, t_hi + 0.5 * hs, Q + 0.5 * hs * k1.Qd, p + 0.5 * hs * k1.pd,
                        pbar + 0.5 * hs * k1.pbd);
        Coeffs k3 = rhs(spec, t_hi + 0.5 * hs, Q + 0.5 * hs * k2.Qd, p + 0.5 * hs * k2.pd,
                        pbar + 0.5 * hs * k2.pbd);
        Coeffs k4 = rhs(spec, t_hi + hs, Q + hs * k3.Qd, p + hs * k3.pd, pbar + hs * k3.pbd);
        Q += (hs / 6.0) * (k1.Qd + 2.0 * k2.Qd + 2.0 * k3.Qd + k4.Qd);
        Q = 0.5 * (Q + Q.transpose()).eval();
        p += (hs / 6.0) * (k1.pd + 2.0 * k2.pd + 2.0 * k3.pd + k4.pd);
        pbar += (hs / 6.0) * (k1.pbd + 2.0 * k2.pbd + 2.0 * k3.pbd + k4.pbd);
        if (!sane(Q, p, pbar)) {
            sol.blew_up = true;
            sol.escape_node = j - 1;
            sol.valid_from = sol.ts[static_cast<std::size_t>(j)];
            return sol;
        }
        record(j - 1);
    }
    sol.valid_from = 0.0;
    return sol;
}

namespace {

// Index and weight for linear interpolation; validates the query time.
std::pair<std::size_t, double> locate(const RiccatiSolution& sol, double t) {
    const double T = sol.ts.back();
    if (!(t >= -1e-9 && t <= T + 1e-9)) {
        throw std::domain_error("lq: time outside the solved horizon");
    }
    if (sol.blew_up && t < sol.valid_from - 1e-12) {
        throw std::runtime_error("lq: coefficients blew up before the queried time");
    }
    double tc = std::clamp(t, std::max(0.0, sol.valid_from), T);
    const std::size_t n = sol.ts.size() - 1;
    const double step = T / static_cast<double>(n);
    std::size_t j = std::min(n - 1, static_cast<std::size_t>(std::max(0.0, tc / step)));
    while (j + 1 < n && sol.ts[j + 1] < tc) ++j;
    while (j > 0 && sol.ts[j] > tc) --j;
    if (sol.blew_up) {
        // never interpolate into the unreached nodes below the escape
        j = std::min(n - 1, std::max(j, static_cast<std::size_t>(sol.escape_node + 1)));
    }
    double width = sol.ts[j + 1] - sol.ts[j];
    double theta = std::clamp((tc - sol.ts[j]) / width, 0.0, 1.0);
    return {j, theta};
}

}  // namespace

Eigen::MatrixXd RiccatiSolution::Q_at(double t) const {
    auto [j, th] = locate(*this, t);
    return (1.0 - th) * Q[j] + th * Q[j + 1];
}

double RiccatiSolution::p_at(double t) const {
    auto [j, th] = locate(*this, t);
    return (1.0 - th) * p[j] + th * p[j + 1];
}

double RiccatiSolution::pbar_at(double t) const {
    auto [j, th] = locate(*this, t);
    return (1.0 - th) * pbar[j] + th * pbar[j + 1];
}

std::string RiccatiSolution::to_csv() const {
    std::ostringstream os;
    const Eigen::Index d = Q.empty() ? 0 : Q.front().rows();
    os << "t";
    for (Eigen::Index r = 0; r < d; ++r)
        for (Eigen::Index c = 0; c < d; ++c) os << ",Q_" << r << "_" << c;
    os << ",p,pbar\n";
    for (std::size_t j = 0; j < ts.size(); ++j) {
        os << format_double(ts[j]);
        for (Eigen::Index r = 0; r < d; ++r)
            for (Eigen::Index c = 0; c < d; ++c) os << ',' << format_double(Q[j](r, c));
        os << ',' << format_double(p[j]) << ',' << format_double(pbar[j]) << '\n';
    }
    return os.str();
}

ControlPolicy lq_feedback(const RiccatiSolution& sol, const LQSpec& spec) {
    auto shared = std::make_shared<RiccatiSolution>(sol);
    auto Cbar = spec.Cbar;
    auto Bbar = spec.Bbar;
    ControlPolicy pol;
    pol.kind = ControlPolicy::Kind::Custom;
    pol.adim = spec.q;
    pol.symmetric = true;
    pol.act = [shared, Cbar, Bbar](double t, const Label&, const Eigen::VectorXd& x,
                                   const Configuration&) {
        Eigen::MatrixXd Q = shared->Q_at(t);
        return Eigen::VectorXd(-Cbar(t).ldlt().solve(Bbar(t).transpose() * (Q * x)));
    };
    return pol;
}

double lq_value(const RiccatiSolution& sol, double t, const Configuration& lambda) {
    Eigen::MatrixXd Q = sol.Q_at(t);
    const double p = sol.p_at(t);
    const double pbar = sol.pbar_at(t);
    double total = 0.0;
    for (const auto& at : lambda.atoms()) total += at.pos.dot(Q * at.pos);
    const double n = lambda.mass();
    return total + p * n * n + pbar * n;
}

namespace {

// The drift of w(s, xi_s) + accumulated running cost, assembled from first
// principles: time slope of the coefficient field, diffusion generator on
// the quadratic ansatz, literal branch surgery on the configuration, and the
// running cost itself.
double generator_drift(const RiccatiSolution& sol, const LQSpec& spec, double t,
                       const Configuration& lam, const std::vector<Eigen::VectorXd>& actions,
                       double* magnitude) {
    Eigen::MatrixXd Q = sol.Q_at(t);
    const double p = sol.p_at(t);
    const double pbar = sol.pbar_at(t);
    Coeffs dt = rhs(spec, t, Q, p, pbar);
    const double n = lam.mass();
    Eigen::MatrixXd Bt = spec.B(t);
    Eigen::MatrixXd Bb = spec.Bbar(t);
    Eigen::MatrixXd Ct = spec.C(t);
    Eigen::MatrixXd Cb = spec.Cbar(t);
    const double sig = spec.sigma(t);
    const double g = spec.gamma(t);
    const double ct = spec.c(t);

    double D = dt.pd * n * n + dt.pbd * n;
    double mag = std::abs(dt.pd) * n * n + std::abs(dt.pbd) * n;
    const double w0 = lq_value(sol, t, lam);
    for (std::size_t i = 0; i < lam.atoms().size(); ++i) {
        const Eigen::VectorXd& x = lam.atom(static_cast<int>(i)).pos;
        const Eigen::VectorXd& a = actions[i];
        double term = x.dot(dt.Qd * x);
        term += (Bt * x + Bb * a).dot(2.0 * (Q * x));
        term += sig * sig * Q.trace();
        term += x.dot(Ct * x) + a.dot(Cb * a) + ct;
        D += term;
        mag += std::abs(term);
        if (g > 0.0) {
            for (std::size_t k = 0; k < spec.offspring.p.size(); ++k) {
                const double pk = spec.offspring.p[k];
                if (pk == 0.0) continue;
                Configuration bumped =
                    lam.branch_update(lam.atom(static_cast<int>(i)).label,
                                      static_cast<std::uint32_t>(k));
                double jump = g * pk * (lq_value(sol, t, bumped) - w0);
                D += jump;
                mag += std::abs(jump);
            }
        }
    }
    if (magnitude) *magnitude = mag;
    return D;
}

}  // namespace

LQSelfCheck lq_selfcheck(const RiccatiSolution& sol, const LQSpec& spec, int probes,
                         std::uint64_t seed) {
    if (probes < 1) throw std::invalid_argument("lq_selfcheck: need at least one probe");
    LQSelfCheck rep;
    rep.pass = true;
    auto note = [&](bool ok, double t, const Configuration& lam, const std::string& what) {
        if (ok || !rep.pass) return;
        rep.pass = false;
        std::ostringstream os;
        os << what << " at t=" << format_double(t) << " with " << lam.size() << " particles";
        rep.witness = os.str();
    };

    for (int i = 0; i < probes; ++i) {
        const std::uint64_t s = derive_seed(seed, static_cast<std::uint64_t>(i));
        NoiseKey key{s, Label::root()};
        const double lo = std::max(0.0, sol.valid_from);
        const double t =
            lo + (spec.T - lo) * noise_uniform(key, NoiseStream::Clock, 0);
        Configuration lam = random_admissible_population(s ^ 0x71c9a3f05d62e84bULL, spec.d, 4, 2.0);

        Eigen::MatrixXd Q = sol.Q_at(t);
        Eigen::MatrixXd Cb = spec.Cbar(t);
        Eigen::MatrixXd Bb = spec.Bbar(t);
        std::vector<Eigen::VectorXd> ahat, arand;
        double square = 0.0;
        std::uint64_t ctr = 0;
        for (const auto& at : lam.atoms()) {
            Eigen::VectorXd best = -Cb.ldlt().solve(Bb.transpose() * (Q * at.pos));
            Eigen::VectorXd delta(spec.q);
            for (int r = 0; r < spec.q; ++r) {
                delta[r] = 1.5 * noise_normal(key, NoiseStream::Mark, ctr++);
            }
            ahat.push_back(best);
            arand.push_back(best + delta);
            square += delta.dot(Cb * delta);
        }

        double mag_opt = 0.0;
        const double d_opt = generator_drift(sol, spec, t, lam, ahat, &mag_opt);
        double mag_rnd = 0.0;
        const double d_rnd = generator_drift(sol, spec, t, lam, arand, &mag_rnd);

        const double tol_opt = 1e-6 * (1.0 + mag_opt);
        const double tol_rnd = 1e-6 * (1.0 + mag_rnd + std::abs(square));
        rep.worst_at_optimum = std::max(rep.worst_at_optimum, std::abs(d_opt));
        rep.worst_negative = std::min(rep.worst_negative, d_rnd);
        rep.worst_square_gap = std::max(rep.worst_square_gap, std::abs(d_rnd - square));

        note(std::abs(d_opt) <= tol_opt, t, lam, "drift does not vanish at the feedback action");
        note(d_rnd >= -tol_rnd, t, lam, "drift goes negative away from the feedback action");
        note(std::abs(d_rnd - square) <= tol_rnd, t, lam,
             "drift does not match the completed square");
    }
    return rep;
}

std::string LQSelfCheck::summary() const {
    std::ostringstream os;
    os << (pass ? "pass" : "FAIL") << "; |drift at optimum| <= " << format_double(worst_at_optimum)
       << ", most negative drift " << format_double(worst_negative) << ", worst square gap "
       << format_double(worst_square_gap);
    if (!witness.empty()) os << "; " << witness;
    return os.str();
}

ModelCoefficients lq_model(const LQSpec& spec) {
    Eigen::MatrixXd B0 = spec.B(0.0);
    Eigen::MatrixXd Bb0 = spec.Bbar(0.0);
    const double sig0 = spec.sigma(0.0);
    const double g0 = spec.gamma(0.0);
    OffspringLaw law = spec.offspring;

    ModelCoefficients m;
    m.dim = spec.d;
    m.wdim = spec.d;
    m.adim = spec.q;
    m.drift = [B0, Bb0](const Label&, const Eigen::VectorXd& x, const Configuration&,
                        const Eigen::VectorXd& a) { return Eigen::VectorXd(B0 * x + Bb0 * a); };
    m.diffusion = [sig0, d = spec.d](const Label&, const Eigen::VectorXd&, const Configuration&,
                                     const Eigen::VectorXd&) {
        return Eigen::MatrixXd(sig0 * Eigen::MatrixXd::Identity(d, d));
    };
    m.branch_rate = [g0](const Label&, const Eigen::VectorXd&, const Configuration&,
                         const Eigen::VectorXd&) { return g0; };
    m.offspring = [law](const Label&, const Eigen::VectorXd&, const Configuration&,
                        const Eigen::VectorXd&) { return law; };
    m.bounds.rate_cap = g0;
    m.bounds.diffusion_cap = std::max(std::abs(sig0), 1e-9);
    m.bounds.lipschitz = B0.cwiseAbs().sum() + Bb0.cwiseAbs().sum() + 1.0;
    m.bounds.drift_growth = m.bounds.lipschitz;
    m.bounds.offspring_mean_cap = law.mean();
    m.bounds.offspring_factorial2_cap = std::max(law.factorial2(), 1e-9);
    return m;
}

CostSpec lq_cost(const LQSpec& spec) {
    Eigen::MatrixXd C0 = spec.C(0.0);
    Eigen::MatrixXd Cb0 = spec.Cbar(0.0);
    const double c0 = spec.c(0.0);
    Eigen::MatrixXd H = 0.5 * (spec.H + spec.H.transpose());
    const double h = spec.h;

    CostSpec cost;
    cost.running = [C0, Cb0, c0](const Label&, const Eigen::VectorXd& x, const Configuration&,
                                 const Eigen::VectorXd& a) {
        return x.dot(C0 * x) + a.dot(Cb0 * a) + c0;
    };
    cost.terminal = [H, h](const Configuration& lam) {
        double total = 0.0;
        for (const auto& at : lam.atoms()) total += at.pos.dot(H * at.pos);
        const double n = lam.mass();
        return total + h * n * n;
    };
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(Cb0);
    cost.coercivity_action = std::max(0.0, es.eigenvalues().minCoeff());
    cost.coercivity_upper =
        std::max({C0.cwiseAbs().maxCoeff(), H.cwiseAbs().maxCoeff(), c0, h, 1.0});
    return cost;
}

LQSpec lq_canonical_scalar(double sigma, double gamma) {
    LQSpec spec;
    spec.d = 1;
    spec.q = 1;
    spec.B = [](double) { return Eigen::MatrixXd::Zero(1, 1); };
    spec.Bbar = [](double) { return Eigen::MatrixXd::Identity(1, 1); };
    spec.sigma = [sigma](double) { return sigma; };
    spec.gamma = [gamma](double) { return gamma; };
    spec.offspring = OffspringLaw{{0.0, 0.0, 1.0}};
    spec.C = [](double) { return Eigen::MatrixXd::Zero(1, 1); };
    spec.c = [](double) { return 0.0; };
    spec.Cbar = [](double) { return Eigen::MatrixXd(0.5 * Eigen::MatrixXd::Identity(1, 1)); };
    spec.H = Eigen::MatrixXd::Identity(1, 1);
    spec.h = 0.0;
    spec.T = 1.0;
    return spec;
}

}  // namespace branchsim
