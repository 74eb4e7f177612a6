#include "branchsim/control.hpp"

#include <sstream>
#include <stdexcept>

#include "branchsim/rng.hpp"

namespace branchsim {

ControlPolicy constant_policy(const Eigen::VectorXd& a) {
    ControlPolicy p;
    p.kind = ControlPolicy::Kind::Constant;
    p.adim = static_cast<int>(a.size());
    p.symmetric = true;
    p.act = [a](double, const Label&, const Eigen::VectorXd&, const Configuration&) { return a; };
    return p;
}

ControlPolicy perturb_policy(const ControlPolicy& base, const Eigen::VectorXd& delta) {
    if (delta.size() != base.adim) throw std::invalid_argument("perturb_policy: offset dimension mismatch");
    ControlPolicy p;
    p.kind = ControlPolicy::Kind::Custom;
    p.adim = base.adim;
    p.symmetric = base.symmetric;  // an additive constant cannot break symmetry
    p.act = [f = base.act, delta](double t, const Label& l, const Eigen::VectorXd& x,
                                  const Configuration& cfg) { return Eigen::VectorXd(f(t, l, x, cfg) + delta); };
    return p;
}

Eigen::VectorXd evaluate_policy(const ControlPolicy& p, double t, const Label& label,
                                const Configuration& cfg) {
    int idx = cfg.find(label);
    if (idx < 0)
        throw std::invalid_argument("evaluate_policy: particle " + label.str() + " not in population");
    Eigen::VectorXd a = p.act(t, label, cfg.atom(static_cast<std::size_t>(idx)).pos, cfg);
    if (a.size() != p.adim) throw std::runtime_error("policy returned wrong action dimension");
    return a;
}

SymmetryReport check_symmetric(const ControlPolicy& p, std::uint64_t seed, int dim, int n_probes,
                               double t0, double t1) {
    SymmetryReport rep;
    NoiseKey key(seed, Label::root());
    std::uint64_t ctr = 0;
    for (int t = 0; t < n_probes; ++t) {
        double u = noise_uniform(key, NoiseStream::Mark, ctr++);
        double time = t0 + u * (t1 - t0);
        Configuration base = random_admissible_population(seed + 31ull * static_cast<std::uint64_t>(t), dim, 5);

        // duplicate the position of one atom under a fresh unrelated label
        std::size_t pick = noise_bits(key, NoiseStream::Mark, ctr++) % base.size();
        std::uint32_t fresh = 1000 + static_cast<std::uint32_t>(t % 17);
        std::vector<Atom> atoms = base.atoms();
        atoms.push_back(Atom{Label::root().child(fresh), base.atom(pick).pos});
        Configuration twin(dim, std::move(atoms));
        Eigen::VectorXd a1 = evaluate_policy(p, time, twin.atom(twin.find(base.atom(pick).label)).label, twin);
        Eigen::VectorXd a2 = evaluate_policy(p, time, Label::root().child(fresh), twin);
        double gap = (a1 - a2).norm();
        if (gap > rep.worst) {
            rep.worst = gap;
            std::ostringstream os;
            os << "t=" << time << " duplicated position under labels " << base.atom(pick).label.str()
               << " and " << Label::root().child(fresh).str();
            rep.witness = os.str();
        }

        // relabeling must leave every action unchanged
        std::vector<Label> ls;
        for (const auto& at : base.atoms()) ls.push_back(at.label);
        LabelPermutation s = LabelPermutation::shuffle_of(ls, seed ^ (0xABCDull + t));
        Configuration shuffled = base.relabeled(s);
        for (const auto& at : base.atoms()) {
            Eigen::VectorXd b1 = p.act(time, at.label, at.pos, base);
            Eigen::VectorXd b2 = p.act(time, s.apply(at.label), at.pos, shuffled);
            double g = (b1 - b2).norm();
            if (g > rep.worst) {
                rep.worst = g;
                std::ostringstream os;
                os << "t=" << time << " relabeling moved the action of " << at.label.str();
                rep.witness = os.str();
            }
        }
    }
    rep.pass = rep.worst == 0.0;
    return rep;
}

}  // namespace branchsim
