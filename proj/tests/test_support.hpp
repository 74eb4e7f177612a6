#pragma once

// Shared helpers for the unit and acceptance tests: deterministic random
// populations and a brute-force matching oracle.

#include <algorithm>
#include <vector>

#include "branchsim/coefficients.hpp"
#include "branchsim/configuration.hpp"
#include "branchsim/label.hpp"
#include "branchsim/rng.hpp"

namespace branchsim::testsupport {

// Scalar model with constant drift/diffusion and a constant branch rate under
// the given cap; handy for pinning one mechanism at a time.
inline ModelCoefficients constant_test_model(double drift, double sigma, double rate_cap,
                                             double rate, OffspringLaw law) {
    ModelCoefficients m;
    m.bounds.rate_cap = rate_cap;
    m.bounds.diffusion_cap = std::max(std::abs(sigma), 1e-9);
    m.drift = [drift](const Label&, const Eigen::VectorXd& x, const Configuration&,
                      const Eigen::VectorXd&) {
        return Eigen::VectorXd(Eigen::VectorXd::Constant(x.size(), drift));
    };
    m.diffusion = [sigma](const Label&, const Eigen::VectorXd& x, const Configuration&,
                          const Eigen::VectorXd&) {
        return Eigen::MatrixXd(sigma * Eigen::MatrixXd::Identity(x.size(), x.size()));
    };
    m.branch_rate = [rate](const Label&, const Eigen::VectorXd&, const Configuration&,
                           const Eigen::VectorXd&) { return rate; };
    m.offspring = [law](const Label&, const Eigen::VectorXd&, const Configuration&,
                        const Eigen::VectorXd&) { return law; };
    return m;
}

// Random admissible population; forwards to the library generator.
inline Configuration random_population(std::uint64_t seed, int dim, std::size_t max_size,
                                       double pos_scale = 2.0) {
    return random_admissible_population(seed, dim, max_size, pos_scale);
}

// Positions rounded to multiples of 2^-10: all matching costs and their sums
// are then exact in double precision, so tied optima have bitwise-identical
// totals and solver-vs-oracle agreement can be asserted exactly.
inline Configuration snap_dyadic(const Configuration& c) {
    std::vector<Atom> atoms;
    for (const auto& a : c.atoms()) {
        Eigen::VectorXd p = a.pos;
        for (Eigen::Index i = 0; i < p.size(); ++i) p[i] = std::round(p[i] * 1024.0) / 1024.0;
        atoms.push_back(Atom{a.label, p});
    }
    return Configuration(c.dim(), std::move(atoms));
}

// Brute force over all pad-and-permute matchings; sums costs in ascending
// row order exactly like the solver, so agreement can be checked bitwise.
inline double brute_force_distance(const Configuration& a, const Configuration& b) {
    const int na = static_cast<int>(a.size()), nb = static_cast<int>(b.size());
    const int m = std::max(na, nb);
    if (m == 0) return 0.0;
    auto entry = [&](int i, int j) {
        if (i < na && j < nb) return atom_ground_cost(a.atom(i), b.atom(j));
        if (i < na) return atom_cemetery_cost(a.atom(i));
        if (j < nb) return atom_cemetery_cost(b.atom(j));
        return 0.0;
    };
    std::vector<int> perm(m);
    for (int i = 0; i < m; ++i) perm[i] = i;
    double best = std::numeric_limits<double>::infinity();
    do {
        double tot = 0.0;
        for (int i = 0; i < m; ++i) tot += entry(i, perm[i]);
        best = std::min(best, tot);
    } while (std::next_permutation(perm.begin(), perm.end()));
    return best;
}

}  // namespace branchsim::testsupport
