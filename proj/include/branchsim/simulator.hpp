#pragma once

#include <functional>
#include <optional>
#include <stdexcept>
#include <vector>

#include "branchsim/coefficients.hpp"
#include "branchsim/configuration.hpp"
#include "branchsim/control.hpp"

namespace branchsim {

struct SimConfig {
    double t0 = 0.0;
    double T = 1.0;
    double dt = 1e-3;      // Euler grid spacing for the diffusion part
    std::uint64_t seed = 1;

    std::uint64_t max_population = 100000;  // hard caps; exceeding either throws CapExceeded
    std::uint64_t max_events = 1000000;

    bool record_frames = true;    // population snapshot at every grid time
    bool record_segments = false; // every Euler sub-step with its frozen state and actions

    // Re-keys the noise of each particle (by label) without changing anything
    // else; used to transport noise through a relabeling.  Identity if unset.
    std::function<Label(const Label&)> noise_label_map;
};

// Thrown when a trajectory outgrows the configured caps.
struct CapExceeded : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct Event {
    enum class Kind { Branch, Horizon };
    Kind kind = Kind::Branch;
    double time = 0.0;
    Label parent;            // branch events only
    std::uint32_t k = 0;     // offspring count, branch events only
    Configuration after{1};  // population right after the event
};

// One Euler sub-step: state and per-particle actions frozen at the left
// endpoint, used for exact reintegration of running costs.
struct Segment {
    double t_left = 0.0;
    double h = 0.0;
    Configuration state{1};
    std::vector<Eigen::VectorXd> actions;  // aligned with state.atoms()
};

struct Trajectory {
    double t0 = 0.0, T = 0.0, dt = 0.0;
    std::uint64_t seed = 0;
    std::vector<std::pair<double, Configuration>> frames;  // at grid multiples (if recorded)
    std::vector<Event> events;                             // branchings + final horizon
    std::vector<Segment> segments;                         // if recorded
    Configuration initial_state{1};
    Configuration final_state{1};
    bool extinct = false;
    double extinction_time = 0.0;  // valid when extinct
};

// Simulates the controlled branching diffusion from an admissible initial
// population: particles diffuse by Euler-Maruyama steps between candidate
// event times; candidates arrive per particle at the capped rate and are
// accepted by uniform-mark thinning against the state-dependent rate, the
// accepted mark picking the offspring count; offspring start at the parent's
// exact position and carry child labels.  Every random draw is keyed by
// (seed, label, stream, counter), so the run is a pure function of its
// inputs.
Trajectory simulate(const Configuration& initial, const ControlPolicy& policy,
                    const ModelCoefficients& model, const SimConfig& cfg);

struct PopulationStats {
    double final_size = 0.0;
    double sup_size = 0.0;      // running maximum of the population size
    double sup_size_sq = 0.0;   // square of that maximum
    bool extinct = false;
    double extinction_time = 0.0;
};
PopulationStats population_stats(const Trajectory& traj);

}  // namespace branchsim
