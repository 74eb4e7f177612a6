#pragma once

#include <Eigen/Dense>
#include <functional>
#include <string>

#include "branchsim/configuration.hpp"

namespace branchsim {

// Feedback control: the action a particle applies given the time, its label,
// its position, and the whole population.  A policy is "symmetric" when the
// label argument is never used and the population enters only through its
// unlabeled projection; such policies commute with relabeling.
struct ControlPolicy {
    enum class Kind { Constant, Quadratic, Gradient, Grid, Custom };

    Kind kind = Kind::Custom;
    int adim = 1;
    bool symmetric = false;  // declared; audited by check_symmetric
    std::function<Eigen::VectorXd(double, const Label&, const Eigen::VectorXd&, const Configuration&)>
        act;
};

ControlPolicy constant_policy(const Eigen::VectorXd& a);

// Additive offset; the result keeps the base policy's symmetry and becomes
// Kind::Custom.
ControlPolicy perturb_policy(const ControlPolicy& base, const Eigen::VectorXd& delta);

// Evaluates at a particle that must be present in the population.
Eigen::VectorXd evaluate_policy(const ControlPolicy& p, double t, const Label& label,
                                const Configuration& cfg);

// Empirical symmetry audit: random populations with one position duplicated
// under two unrelated labels must receive identical actions, and relabeling
// the population must not change any particle's action.
struct SymmetryReport {
    bool pass = true;
    double worst = 0.0;  // largest action discrepancy found
    std::string witness;
};
SymmetryReport check_symmetric(const ControlPolicy& p, std::uint64_t seed, int dim,
                               int n_probes = 200, double t0 = 0.0, double t1 = 1.0);

}  // namespace branchsim
