#pragma once

#include <Eigen/Dense>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "branchsim/configuration.hpp"

namespace branchsim {

// Offspring distribution (p_k)_k on {0,...,K}.
struct OffspringLaw {
    std::vector<double> p;  // p[k] = probability of k offspring

    void validate() const;              // nonnegative, sums to 1 (1e-12)
    double mean() const;                // sum k p_k
    double factorial2() const;          // sum k(k-1) p_k
    double mean_increment() const;      // sum (k-1) p_k       (net mass drift)
    double sq_increment() const;        // sum (k-1)^2 p_k     (mass jump variance scale)
    std::uint32_t max_k() const { return p.empty() ? 0 : static_cast<std::uint32_t>(p.size() - 1); }

    // Cumulative thresholds gamma * (p_0 + ... + p_k): the mark z in [0,gamma)
    // selects k as the first index whose threshold exceeds z.
    std::uint32_t pick(double z, double gamma) const;
};

// Declared structural constants the coefficients are supposed to obey; the
// validator probes them empirically.
struct CoefficientBounds {
    double lipschitz = 1.0;   // joint (position, population) Lipschitz constant
    double drift_growth = 1.0;    // |b| <= drift_growth * (1 + |x| + |a|)
    double diffusion_cap = 1.0;   // |sigma| <= diffusion_cap
    double rate_cap = 1.0;        // gamma <= rate_cap
    double offspring_mean_cap = 1.0;        // sum k p_k
    double offspring_factorial2_cap = 1.0;  // sum k(k-1) p_k
};

// Per-particle coefficient bundle: each callable sees the particle's label,
// its position, the whole labeled population, and the particle's action.
struct ModelCoefficients {
    int dim = 1;    // particle state dimension d
    int wdim = 1;   // Brownian dimension per particle
    int adim = 1;   // action dimension

    std::function<Eigen::VectorXd(const Label&, const Eigen::VectorXd&, const Configuration&,
                                  const Eigen::VectorXd&)>
        drift;
    std::function<Eigen::MatrixXd(const Label&, const Eigen::VectorXd&, const Configuration&,
                                  const Eigen::VectorXd&)>
        diffusion;  // d x wdim
    std::function<double(const Label&, const Eigen::VectorXd&, const Configuration&,
                         const Eigen::VectorXd&)>
        branch_rate;  // gamma >= 0, <= bounds.rate_cap
    std::function<OffspringLaw(const Label&, const Eigen::VectorXd&, const Configuration&,
                               const Eigen::VectorXd&)>
        offspring;

    CoefficientBounds bounds;
};

// Same bundle when the dependence on the population factors through the
// unlabeled projection (the symmetric / mean-field situation).
struct MeanFieldCoefficients {
    int dim = 1;
    int wdim = 1;
    int adim = 1;

    std::function<Eigen::VectorXd(const Eigen::VectorXd&, const UnlabeledMeasure&, const Eigen::VectorXd&)> drift;
    std::function<Eigen::MatrixXd(const Eigen::VectorXd&, const UnlabeledMeasure&, const Eigen::VectorXd&)> diffusion;
    std::function<double(const Eigen::VectorXd&, const UnlabeledMeasure&, const Eigen::VectorXd&)> branch_rate;
    std::function<OffspringLaw(const Eigen::VectorXd&, const UnlabeledMeasure&, const Eigen::VectorXd&)> offspring;

    CoefficientBounds bounds;
};

// Wraps mean-field coefficients as label-blind per-particle ones.
ModelCoefficients mf_lift(const MeanFieldCoefficients& mf);

// Running + terminal cost.
struct CostSpec {
    std::function<double(const Label&, const Eigen::VectorXd&, const Configuration&,
                         const Eigen::VectorXd&)>
        running;  // psi
    std::function<double(const Configuration&)> terminal;  // Psi

    double coercivity_upper = 1.0;  // C in the two-sided growth bounds
    double coercivity_action = 0.5; // c: psi >= -C(1+|x|) + c|a|^2
};

// Named model presets with documented constants.
//   "yule"        pure binary branching, rate 0.5, no motion
//   "pure-death"  unit death rate, no motion
//   "lq"          scalar controlled drift b = a, unit diffusion, binary
//                 branching at rate 0.2
//   "kinetic"     controlled drift b = a, unit diffusion, no branching
//   "logistic-mf" mean-field: drift pulls to the origin, branching rate
//                 decays with total mass
struct Preset {
    ModelCoefficients model;
    CostSpec cost;
    std::optional<MeanFieldCoefficients> mean_field;  // set when the preset factors through it
};
Preset make_preset(const std::string& name);
std::vector<std::string> preset_names();

// Empirical probe of the declared bounds: random labels, populations,
// positions and actions; reports the worst observed ratio per bound with a
// witness, and Lipschitz difference quotients from paired probes.
struct BoundCheck {
    std::string name;
    double worst = 0.0;   // observed / declared; > 1 is a violation
    bool pass = true;
    std::string witness;  // human-readable probe that attained the worst ratio
};
struct AssumptionReport {
    bool pass = true;
    std::vector<BoundCheck> checks;
    std::string summary() const;
};
struct ProbeConfig {
    std::uint64_t seed = 2024;
    int n_probes = 400;
    double position_scale = 3.0;
    double action_scale = 3.0;
    std::size_t max_population = 6;
};
AssumptionReport validate_assumptions(const ModelCoefficients& m, const CostSpec* cost,
                                      const ProbeConfig& probe);

}  // namespace branchsim
