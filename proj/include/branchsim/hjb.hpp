#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "branchsim/coefficients.hpp"
#include "branchsim/control.hpp"

namespace branchsim {

// Finite surrogate for the action set: the minimization inside the
// Hamiltonian scans exactly these values.
struct ActionGrid {
    double a_lo = -1.0;
    double a_hi = 1.0;
    std::vector<double> values;  // ascending, all inside [a_lo, a_hi]

    static ActionGrid equispaced(double lo, double hi, int count = 21);
    void validate() const;  // non-empty, sorted, within the box, < 65536 entries
};

// Inputs of the population-level Hamiltonian at one spatial node of the
// level-n grid (d = 1): per-particle coordinates, the value r at the node,
// first and second derivatives per particle, and the table of values at
// post-branching configurations.  r_branch[i][k] is the value after particle
// i branches into k offspring (coordinate i duplicated k times, looked up on
// the level n+k-1 grid); entries whose target level exceeds the truncation
// cap carry r itself (branching suppressed to a no-op).
struct HamiltonianInput {
    std::vector<double> x;
    double r = 0.0;
    std::vector<double> q;
    std::vector<double> m2;
    std::vector<std::vector<double>> r_branch;
};

struct HamiltonianValue {
    double value = 0.0;
    std::vector<double> actions;    // argmin per particle
    std::vector<int> action_index;  // positions of those actions in the grid
};

// Discrete Hamiltonian for mean-field coefficients: because drift, diffusion,
// branching and running cost each see a single particle's action and the
// diffusion matrix is block-diagonal, the joint minimum over A^n splits into
// n independent scans of the action grid (ties resolved toward the smallest
// action).  Returns the summed minimum including the branching difference
// terms gamma * (sum_k p_k r_branch[i][k] - r) and the running cost.
HamiltonianValue hamiltonian(const HamiltonianInput& in, const MeanFieldCoefficients& mf,
                             const CostSpec& cost, const ActionGrid& actions);

// Geometry of the truncated population-indexed grid: one spatial axis per
// particle over [x_lo, x_hi] with n_x nodes, population levels 0..n_max.
struct HJBGeometry {
    double x_lo = -4.0;
    double x_hi = 4.0;
    int n_x = 41;
    double T = 1.0;
    int n_max = 2;
    // Every store_stride-th time slice is kept (plus the first and last);
    // 0 picks a stride that keeps at most ~65 slices.
    int store_stride = 0;
};

// Values on the truncated level hierarchy.  With symmetrized storage each
// level keeps only sorted coordinate tuples (the canonical sector of a
// permutation-invariant function); otherwise the full tensor is kept and
// coordinates are read in label order.
struct ValueGrid {
    double x_lo = 0.0, x_hi = 0.0;
    int n_x = 0;
    double T = 0.0;
    int n_max = 0;
    bool symmetrized = true;

    std::vector<double> xs;         // spatial axis
    std::vector<double> stored_ts;  // ascending; front() = 0, back() = T
    // values[s][n][rank]: stored slice s, population level n, node rank
    std::vector<std::vector<std::vector<double>>> values;

    std::size_t level_count(int level) const;              // stored nodes at a level
    std::vector<int> unrank(int level, std::size_t rank) const;  // axis indices of a node
    std::size_t rank_of(int level, const std::vector<int>& idx) const;

    // Multilinear interpolation (linear in t) on the level-|lambda| grid;
    // symmetrized grids sort the coordinates first, so permuted queries are
    // bit-identical.  Throws ValueUndefined above n_max, outside the box, or
    // outside [0, T].
    double value_at(double t, const Configuration& lam) const;

    std::string meta_json() const;
};

// Per-node argmin table extracted alongside the value grid, exposed as a
// feedback policy: at (t, x, lambda) it reads the argmin of the nearest
// stored slice at or after t, at the spatial node nearest the sorted
// population coordinates.  Populations larger than n_max fall back to the
// window of n_max sorted coordinates around the queried particle; positions
// are clamped to the box.
struct GridPolicyData {
    double x_lo = 0.0, x_hi = 0.0;
    int n_x = 0;
    int n_max = 0;
    bool symmetrized = true;
    std::vector<double> stored_ts;
    std::vector<double> actions;
    // argmin[s][n]: level_count(n) * n entries, node-major then slot
    std::vector<std::vector<std::vector<std::uint16_t>>> argmin;
};

struct GridPolicy {
    std::shared_ptr<const GridPolicyData> data;

    double action_for(double t, const Label& who, double x, const Configuration& lam) const;
    ControlPolicy policy() const;
};

struct HJBSolution {
    ValueGrid grid;
    GridPolicy policy;
};

// Backward explicit solve of the coupled level hierarchy: every level is
// stepped simultaneously; branch values are read from the current time slice
// of the neighbouring levels, offspring counts that would leave the hierarchy
// have their mass reassigned to one child (no-op).  Spatial derivatives are
// central with mirror (Neumann) closure.  Enforces the two explicit-scheme
// bounds dt <= dx^2 / sigma_max^2 and dt * (gamma_max + b_max / dx) <= 1 and
// fails on non-finite values.
HJBSolution hjb_solve(const MeanFieldCoefficients& mf, const CostSpec& cost,
                      const HJBGeometry& geo, const ActionGrid& actions, int n_t);

// Step count from the stability bounds (with the drift and rate terms folded
// into one monotonicity budget) and a floor that keeps the time error small.
int hjb_auto_steps(const MeanFieldCoefficients& mf, const HJBGeometry& geo,
                   const ActionGrid& actions);

// Label-aware variant on full-tensor (unsymmetrized) storage: coordinates are
// read in label order and coefficients may distinguish particles.  Intended
// for counterexamples; grids grow as n_x^n.
HJBSolution hjb_solve_labeled(const ModelCoefficients& model, const CostSpec& cost,
                              const HJBGeometry& geo, const ActionGrid& actions, int n_t);

// Randomized audit of permutation invariance: values of permuted
// configurations must coincide (bit-exact on symmetrized storage) and
// particles at equal positions must receive equal actions.
struct PermutationReport {
    int probes = 0;
    int value_mismatches = 0;
    double worst_value_gap = 0.0;
    int action_mismatches = 0;
    bool pass = false;
    std::string witness;  // first offending probe, if any
    std::string summary() const;
};
PermutationReport permutation_invariance_check(const HJBSolution& sol, int probes,
                                               std::uint64_t seed);

// Directory persistence: values.bin / policy.bin (little-endian arrays) plus
// meta.json describing geometry, slices, actions and per-level node counts.
void save_value_grid(const HJBSolution& sol, const std::string& dir);
HJBSolution load_value_grid(const std::string& dir);

}  // namespace branchsim
