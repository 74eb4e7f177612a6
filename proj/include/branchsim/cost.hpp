#pragma once

#include <functional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "branchsim/coefficients.hpp"
#include "branchsim/control.hpp"
#include "branchsim/configuration.hpp"
#include "branchsim/simulator.hpp"

namespace branchsim {

// Realized cost of one trajectory: left-endpoint rectangle rule for the
// running cost over the recorded sub-steps (event times split rectangles
// exactly), plus the terminal cost at the final population -- the empty
// population if the lineage died out.  Requires record_segments.
double pathwise_cost(const Trajectory& traj, const CostSpec& cost);

// Same, but re-evaluates `policy` on the frozen segment states instead of
// using the actions recorded with the trajectory.
double pathwise_cost(const Trajectory& traj, const CostSpec& cost, const ControlPolicy& policy);

struct CostEstimate {
    double mean = 0.0;
    double std_error = 0.0;  // sample std / sqrt(replicates)
    int replicates = 0;      // replicates that produced a sample
    int discarded = 0;       // replicates lost to population/event caps
    double min = 0.0;
    double max = 0.0;
    // Per-replicate costs in replicate order (kept so two estimates run with
    // the same seed can be compared pathwise, sharing their noise).
    std::vector<double> samples;
};

// Monte Carlo estimate of the expected total cost started from `initial`.
// Replicate r runs with seed derive_seed(cfg.seed, r), so the estimate is a
// pure function of its arguments; accumulation uses pairwise summation and a
// pre-sized sample array, so the result is independent of `threads`.
// Throws if replicates < 2 or if more than 1% of replicates hit a cap.
CostEstimate estimate_J(const Configuration& initial, const ControlPolicy& policy,
                        const ModelCoefficients& model, const CostSpec& cost, const SimConfig& cfg,
                        int replicates, int threads = 1);

// A candidate value function w(t, lambda).  Throws ValueUndefined where it
// has no value (e.g. a trajectory escaped an interpolation grid).
using ValueFunction = std::function<double(double, const Configuration&)>;

struct ValueUndefined : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ResidualGap {
    double t_left = 0.0;
    double t_right = 0.0;
    double mean = 0.0;  // sample mean of M_{t_right} - M_{t_left}
    double se = 0.0;
};

// Increment statistics of the compensation process
//   M_s = w(s, xi_s) + integral over [t0,s] of the summed running cost,
// sampled on an equispaced checkpoint grid with the same trajectories for
// every checkpoint (paired gaps).  If w is the value function and the policy
// is optimal, M is a martingale and every gap mean should sit within noise
// of zero; for any other policy M should drift upward.
struct ResidualReport {
    std::vector<ResidualGap> gaps;
    int replicates = 0;
    int discarded = 0;  // cap-hit replicates
    int escaped = 0;    // replicates where w was undefined at a visited state
    bool martingale_ok = false;     // every |gap mean| <= 3 gap SE
    bool submartingale_ok = false;  // every gap mean >= -3 gap SE
    std::string summary() const;
    std::string to_csv() const;  // checkpoint, gap_mean, gap_se, verdict
};

// Runs `replicates` trajectories and reports the checkpoint-gap statistics of
// M.  The checkpoint spacing (T - t0) / n_checkpoints must be a multiple of
// cfg.dt so checkpoints land on sub-step boundaries and the time integral is
// exact.  Throws if more than 1% of replicates are lost to caps or escapes.
ResidualReport verification_residual(const ValueFunction& w, const Configuration& initial,
                                     const ControlPolicy& policy, const ModelCoefficients& model,
                                     const CostSpec& cost, const SimConfig& cfg, int replicates,
                                     int n_checkpoints = 8);

// Envelope constants for a sampled value function: the smallest C with
//   -C(1 + <1,lambda> + <|.|_1,lambda>) <= w(lambda) <= C(1 + <1,lambda>^2 + <|.|^2,lambda>)
// over the samples.  Always finite on finite samples, so the report also
// refits C on the small-mass half and flags samples in the large-mass half
// that overshoot that envelope by more than 50% -- superquadratic growth
// shows up there while genuinely quadratic fields stay flat.
struct GrowthReport {
    double c_lower = 0.0;  // constant needed by the lower envelope alone
    double c_upper = 0.0;  // constant needed by the upper envelope alone
    double c = 0.0;        // max of the two; the reported growth constant
    bool violation = false;
    std::string witness;  // describes the sample that broke the held-out envelope
    std::string summary() const;
};

GrowthReport growth_report(const std::vector<std::pair<Configuration, double>>& samples);

}  // namespace branchsim
