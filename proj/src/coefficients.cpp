#include "branchsim/coefficients.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

#include "branchsim/rng.hpp"

namespace branchsim {

void OffspringLaw::validate() const {
    if (p.empty()) throw std::invalid_argument("offspring law: empty support");
    double sum = 0.0;
    for (double v : p) {
        if (!(v >= 0.0)) throw std::invalid_argument("offspring law: negative probability");
        sum += v;
    }
    if (std::abs(sum - 1.0) > 1e-12) throw std::invalid_argument("offspring law: probabilities sum to " + std::to_string(sum));
}

double OffspringLaw::mean() const {
    double m = 0.0;
    for (std::size_t k = 0; k < p.size(); ++k) m += static_cast<double>(k) * p[k];
    return m;
}

double OffspringLaw::factorial2() const {
    double m = 0.0;
    for (std::size_t k = 0; k < p.size(); ++k) m += static_cast<double>(k) * (static_cast<double>(k) - 1.0) * p[k];
    return m;
}

double OffspringLaw::mean_increment() const {
    double m = 0.0;
    for (std::size_t k = 0; k < p.size(); ++k) m += (static_cast<double>(k) - 1.0) * p[k];
    return m;
}

double OffspringLaw::sq_increment() const {
    double m = 0.0;
    for (std::size_t k = 0; k < p.size(); ++k) {
        double d = static_cast<double>(k) - 1.0;
        m += d * d * p[k];
    }
    return m;
}

std::uint32_t OffspringLaw::pick(double z, double gamma) const {
    if (!(z >= 0.0) || !(z < gamma)) throw std::invalid_argument("offspring pick: mark outside [0, gamma)");
    double cum = 0.0;
    for (std::size_t k = 0; k < p.size(); ++k) {
        cum += gamma * p[k];
        if (z < cum) return static_cast<std::uint32_t>(k);
    }
    return max_k();  // z fell in the residual rounding sliver below gamma
}

ModelCoefficients mf_lift(const MeanFieldCoefficients& mf) {
    ModelCoefficients m;
    m.dim = mf.dim;
    m.wdim = mf.wdim;
    m.adim = mf.adim;
    m.bounds = mf.bounds;
    m.drift = [f = mf.drift](const Label&, const Eigen::VectorXd& x, const Configuration& cfg,
                             const Eigen::VectorXd& a) { return f(x, cfg.unlabeled(), a); };
    m.diffusion = [f = mf.diffusion](const Label&, const Eigen::VectorXd& x, const Configuration& cfg,
                                     const Eigen::VectorXd& a) { return f(x, cfg.unlabeled(), a); };
    m.branch_rate = [f = mf.branch_rate](const Label&, const Eigen::VectorXd& x, const Configuration& cfg,
                                         const Eigen::VectorXd& a) { return f(x, cfg.unlabeled(), a); };
    m.offspring = [f = mf.offspring](const Label&, const Eigen::VectorXd& x, const Configuration& cfg,
                                     const Eigen::VectorXd& a) { return f(x, cfg.unlabeled(), a); };
    return m;
}

namespace {

MeanFieldCoefficients constant_rate_model(double drift_pull, double sigma, double gamma,
                                          OffspringLaw law, CoefficientBounds bounds) {
    MeanFieldCoefficients mf;
    mf.bounds = bounds;
    mf.drift = [drift_pull](const Eigen::VectorXd& x, const UnlabeledMeasure&, const Eigen::VectorXd&) {
        return Eigen::VectorXd(-drift_pull * x);
    };
    mf.diffusion = [sigma](const Eigen::VectorXd& x, const UnlabeledMeasure&, const Eigen::VectorXd&) {
        return Eigen::MatrixXd(sigma * Eigen::MatrixXd::Identity(x.size(), x.size()));
    };
    mf.branch_rate = [gamma](const Eigen::VectorXd&, const UnlabeledMeasure&, const Eigen::VectorXd&) {
        return gamma;
    };
    mf.offspring = [law](const Eigen::VectorXd&, const UnlabeledMeasure&, const Eigen::VectorXd&) {
        return law;
    };
    return mf;
}

CostSpec quadratic_cost() {
    // psi = |a|^2 / 2, Psi = sum of |x|^2: the control-effort / terminal-spread pair
    CostSpec c;
    c.running = [](const Label&, const Eigen::VectorXd&, const Configuration&, const Eigen::VectorXd& a) {
        return 0.5 * a.squaredNorm();
    };
    c.terminal = [](const Configuration& cfg) { return cfg.sum_sq(); };
    c.coercivity_upper = 1.0;
    c.coercivity_action = 0.5;
    return c;
}

}  // namespace

Preset make_preset(const std::string& name) {
    Preset out;
    if (name == "yule") {
        CoefficientBounds b{.lipschitz = 1.0, .drift_growth = 1.0, .diffusion_cap = 0.0,
                            .rate_cap = 0.5, .offspring_mean_cap = 2.0, .offspring_factorial2_cap = 2.0};
        out.mean_field = constant_rate_model(0.0, 0.0, 0.5, OffspringLaw{{0.0, 0.0, 1.0}}, b);
        out.cost = quadratic_cost();
    } else if (name == "pure-death") {
        CoefficientBounds b{.lipschitz = 1.0, .drift_growth = 1.0, .diffusion_cap = 0.0,
                            .rate_cap = 1.0, .offspring_mean_cap = 1.0, .offspring_factorial2_cap = 1.0};
        out.mean_field = constant_rate_model(0.0, 0.0, 1.0, OffspringLaw{{1.0}}, b);
        out.cost = quadratic_cost();
    } else if (name == "lq") {
        // scalar controlled drift b = a, unit diffusion, binary branching at 0.2
        CoefficientBounds b{.lipschitz = 1.0, .drift_growth = 1.0, .diffusion_cap = 1.0,
                            .rate_cap = 0.2, .offspring_mean_cap = 2.0, .offspring_factorial2_cap = 2.0};
        MeanFieldCoefficients mf = constant_rate_model(0.0, 1.0, 0.2, OffspringLaw{{0.0, 0.0, 1.0}}, b);
        mf.drift = [](const Eigen::VectorXd&, const UnlabeledMeasure&, const Eigen::VectorXd& a) {
            return Eigen::VectorXd(a);
        };
        out.mean_field = std::move(mf);
        out.cost = quadratic_cost();
    } else if (name == "kinetic") {
        // controlled drift b = a, unit diffusion, no branching
        CoefficientBounds b{.lipschitz = 1.0, .drift_growth = 1.0, .diffusion_cap = 1.0,
                            .rate_cap = 0.0, .offspring_mean_cap = 1.0, .offspring_factorial2_cap = 1.0};
        MeanFieldCoefficients mf = constant_rate_model(0.0, 1.0, 0.0, OffspringLaw{{0.0, 1.0}}, b);
        mf.drift = [](const Eigen::VectorXd&, const UnlabeledMeasure&, const Eigen::VectorXd& a) {
            return Eigen::VectorXd(a);
        };
        out.mean_field = std::move(mf);
        out.cost = quadratic_cost();
    } else if (name == "logistic-mf") {
        // drift pulls to the origin; branching rate decays with total mass
        CoefficientBounds b{.lipschitz = 1.0, .drift_growth = 1.0, .diffusion_cap = 0.4,
                            .rate_cap = 0.5, .offspring_mean_cap = 2.0, .offspring_factorial2_cap = 2.0};
        MeanFieldCoefficients mf = constant_rate_model(0.5, 0.4, 0.5, OffspringLaw{{0.0, 0.0, 1.0}}, b);
        mf.branch_rate = [](const Eigen::VectorXd&, const UnlabeledMeasure& mu, const Eigen::VectorXd&) {
            return 0.5 / (1.0 + 0.1 * std::max(0.0, mu.mass() - 1.0));
        };
        out.mean_field = std::move(mf);
        out.cost = quadratic_cost();
    } else {
        throw std::invalid_argument("unknown preset '" + name + "'");
    }
    out.model = mf_lift(*out.mean_field);
    return out;
}

std::vector<std::string> preset_names() { return {"yule", "pure-death", "lq", "kinetic", "logistic-mf"}; }

namespace {

std::string describe_probe(const Label& l, const Eigen::VectorXd& x, const Configuration& cfg,
                           const Eigen::VectorXd& a) {
    std::ostringstream os;
    os << "label=" << (l.is_root() ? "<root>" : l.str()) << " x=[";
    for (Eigen::Index i = 0; i < x.size(); ++i) os << (i ? "," : "") << x[i];
    os << "] |V|=" << cfg.size() << " a=[";
    for (Eigen::Index i = 0; i < a.size(); ++i) os << (i ? "," : "") << a[i];
    os << "]";
    return os.str();
}

struct WorstTracker {
    double worst = 0.0;
    std::string witness;
    void offer(double v, const std::string& w) {
        if (v > worst) {
            worst = v;
            witness = w;
        }
    }
};

}  // namespace

std::string AssumptionReport::summary() const {
    std::ostringstream os;
    os << (pass ? "PASS" : "FAIL") << " assumption probe\n";
    for (const auto& c : checks) {
        os << "  " << (c.pass ? " ok " : "FAIL") << " " << c.name << ": worst ratio " << c.worst;
        if (!c.witness.empty()) os << "  at " << c.witness;
        os << "\n";
    }
    return os.str();
}

AssumptionReport validate_assumptions(const ModelCoefficients& m, const CostSpec* cost,
                                      const ProbeConfig& probe) {
    AssumptionReport rep;
    NoiseKey key(probe.seed, Label::root());
    std::uint64_t ctr = 0;
    auto rand_unit = [&]() { return 2.0 * noise_uniform(key, NoiseStream::Mark, ctr++) - 1.0; };

    WorstTracker drift_growth, diff_cap, rate_cap, rate_neg, law_mean, law_fact2;
    WorstTracker lip_drift, lip_diff, lip_rate;
    WorstTracker cost_low, cost_up, term_low, term_up;
    bool law_valid = true;
    std::string law_witness;

    for (int t = 0; t < probe.n_probes; ++t) {
        Configuration cfg = random_admissible_population(probe.seed + 7919ull * static_cast<std::uint64_t>(t) + 1,
                                                         m.dim, probe.max_population, probe.position_scale);
        std::size_t pick = noise_bits(key, NoiseStream::Mark, ctr++) % cfg.size();
        const Label& label = cfg.atom(pick).label;
        const Eigen::VectorXd& x = cfg.atom(pick).pos;
        Eigen::VectorXd a(m.adim);
        for (int i = 0; i < m.adim; ++i) a[i] = probe.action_scale * rand_unit();

        std::string who = describe_probe(label, x, cfg, a);
        Eigen::VectorXd b = m.drift(label, x, cfg, a);
        Eigen::MatrixXd s = m.diffusion(label, x, cfg, a);
        double g = m.branch_rate(label, x, cfg, a);
        OffspringLaw law = m.offspring(label, x, cfg, a);

        auto ratio = [](double value, double cap) {
            // cap 0 declares the quantity absent: any positive value violates
            return value / std::max(cap, 1e-300);
        };
        drift_growth.offer(b.norm() / (m.bounds.drift_growth * (1.0 + x.norm() + a.norm())), who);
        diff_cap.offer(ratio(s.norm(), m.bounds.diffusion_cap), who);
        rate_cap.offer(ratio(g, m.bounds.rate_cap), who);
        rate_neg.offer(-g, who);
        try {
            law.validate();
        } catch (const std::exception& e) {
            law_valid = false;
            law_witness = who + std::string(": ") + e.what();
        }
        law_mean.offer(law.mean() / m.bounds.offspring_mean_cap, who);
        law_fact2.offer(law.factorial2() / m.bounds.offspring_factorial2_cap, who);

        // paired probe: shift the particle and one other atom, same action
        Eigen::VectorXd dx(m.dim);
        for (int i = 0; i < m.dim; ++i) dx[i] = rand_unit();
        std::vector<Atom> moved = cfg.atoms();
        moved[pick].pos += dx;
        std::size_t other = noise_bits(key, NoiseStream::Mark, ctr++) % cfg.size();
        Eigen::VectorXd dy(m.dim);
        for (int i = 0; i < m.dim; ++i) dy[i] = rand_unit();
        moved[other].pos += dy;
        Configuration cfg2(m.dim, std::move(moved));
        const Eigen::VectorXd& x2 = cfg2.atom(pick).pos;
        double denom = (x2 - x).norm() + population_distance(cfg, cfg2);
        if (denom > 1e-9) {
            double lb = (m.drift(label, x2, cfg2, a) - b).norm() / denom / m.bounds.lipschitz;
            double ls = (m.diffusion(label, x2, cfg2, a) - s).norm() / denom / m.bounds.lipschitz;
            double lg = std::abs(m.branch_rate(label, x2, cfg2, a) - g) / denom / m.bounds.lipschitz;
            lip_drift.offer(lb, who);
            lip_diff.offer(ls, who);
            lip_rate.offer(lg, who);
        }

        // mass-difference probe: the same population minus one particle
        if (cfg.size() >= 2 && pick != cfg.size() - 1) {
            std::vector<Atom> fewer(cfg.atoms().begin(), cfg.atoms().end() - 1);
            Configuration cfg3(m.dim, std::move(fewer));
            double dpop = population_distance(cfg, cfg3);
            lip_drift.offer((m.drift(label, x, cfg3, a) - b).norm() / dpop / m.bounds.lipschitz, who);
            lip_diff.offer((m.diffusion(label, x, cfg3, a) - s).norm() / dpop / m.bounds.lipschitz, who);
            lip_rate.offer(std::abs(m.branch_rate(label, x, cfg3, a) - g) / dpop / m.bounds.lipschitz, who);
        }

        if (cost) {
            double psi = cost->running(label, x, cfg, a);
            cost_low.offer((cost->coercivity_action * a.squaredNorm() - psi) /
                               ((1.0 + x.norm()) * cost->coercivity_upper),
                           who);
            cost_up.offer(psi / ((1.0 + x.squaredNorm() + a.squaredNorm()) * cost->coercivity_upper), who);
            double Psi = cost->terminal(cfg);
            term_low.offer(-Psi / ((1.0 + cfg.mass() + cfg.sum_norm1()) * cost->coercivity_upper), who);
            term_up.offer(Psi / ((1.0 + cfg.mass() * cfg.mass() + cfg.sum_sq()) * cost->coercivity_upper), who);
        }
    }

    const double tol = 1.0 + 1e-9;
    auto add = [&](const std::string& name, const WorstTracker& w, double limit) {
        BoundCheck c;
        c.name = name;
        c.worst = w.worst;
        c.witness = w.witness;
        c.pass = w.worst <= limit;
        rep.pass = rep.pass && c.pass;
        rep.checks.push_back(std::move(c));
    };
    add("drift growth |b| <= C(1+|x|+|a|)", drift_growth, tol);
    add("diffusion bounded", diff_cap, tol);
    add("branch rate bounded", rate_cap, tol);
    add("branch rate nonnegative", rate_neg, 0.0);
    add("offspring mean bounded", law_mean, tol);
    add("offspring second factorial moment bounded", law_fact2, tol);
    add("drift Lipschitz in (x, population)", lip_drift, tol);
    add("diffusion Lipschitz in (x, population)", lip_diff, tol);
    add("branch rate Lipschitz in (x, population)", lip_rate, tol);
    {
        BoundCheck c;
        c.name = "offspring law valid";
        c.worst = law_valid ? 0.0 : 1.0;
        c.pass = law_valid;
        c.witness = law_witness;
        rep.pass = rep.pass && c.pass;
        rep.checks.push_back(std::move(c));
    }
    if (cost) {
        add("running cost lower (coercive in action)", cost_low, tol);
        add("running cost upper (quadratic growth)", cost_up, tol);
        add("terminal cost lower (linear growth)", term_low, tol);
        add("terminal cost upper (quadratic growth)", term_up, tol);
    }
    return rep;
}

}  // namespace branchsim
