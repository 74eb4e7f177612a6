#pragma once

#include <functional>
#include <string>
#include <vector>

#include "branchsim/coefficients.hpp"
#include "branchsim/control.hpp"

namespace branchsim {

// One-dimensional control problem whose value is linear in the population:
// particles move by dX = (b + a) dt + dW, branch at rate gamma(x) with
// offspring law p(x), pay |a|^2/2 while alive and terminal(x) per particle at
// the horizon.  The per-particle value h solves the semilinear backward PDE
//   dh/dt + b dh/dx - |dh/dx|^2 / 2 + d2h/dx2 / 2 + phi h = 0,  h(T,.) = terminal,
// with branching potential phi(x) = gamma(x) * (mean offspring - 1).
struct KineticSpec {
    std::function<double(double, double)> b;          // b(t, x)
    std::function<double(double)> gamma;              // >= 0
    std::function<OffspringLaw(double)> offspring;    // p(x)
    std::function<double(double)> terminal;           // h(T, x)
    double x_lo = -4.0;
    double x_hi = 4.0;
    int n_x = 201;
    double T = 1.0;
};

struct HSolution {
    double x_lo = 0.0, x_hi = 0.0, T = 0.0;
    std::vector<double> xs;                // n_x ascending
    std::vector<double> ts;                // n_t + 1 ascending
    std::vector<std::vector<double>> h;    // [time][space]
    std::vector<std::vector<double>> dh;   // centered slope per slice, mirror ends

    // Bilinear interpolation, clamped to the grid box.
    double h_at(double t, double x) const;
    double dh_at(double t, double x) const;

    std::string to_csv() const;     // rows t, columns x
    std::string meta_json() const;  // grid geometry
};

// Backward explicit finite differences: centered first and second derivatives
// with mirror (homogeneous Neumann) ghost nodes at both ends, the quadratic
// term evaluated on the current slope.  Enforces the parabolic step bound
// dt <= dx^2 and fails on any non-finite node.
HSolution solve_h(const KineticSpec& spec, int n_t);

// Cross-validation for vanishing branching potential: solves the linear PDE
// for g = e^{-h} with the same scheme and returns the sup of |h + log g| over
// the inner half of the grid and all time slices.  Only phi == 0 linearizes;
// a spec with phi != 0 anywhere on the grid is rejected.
double hopf_cole_check(const KineticSpec& spec, int n_t);

// Feedback a(t, x) = -dh/dx interpolated from the solved grid; label-free and
// population-free, hence symmetric.
ControlPolicy kinetic_feedback(const HSolution& sol);

// Simulator/cost export.  The simulator consumes coefficients without a time
// argument, so b is frozen at t = 0: exact when b is time-constant.
ModelCoefficients kinetic_model(const KineticSpec& spec);
CostSpec kinetic_cost(const KineticSpec& spec);

// Benchmark data: no drift, no branching, quadratic terminal x^2.  Closed
// form h(t, x) = x^2 / (1 + 2(T-t)) + log(1 + 2(T-t)) / 2.
KineticSpec kinetic_benchmark_spec(double x_lo = -4.0, double x_hi = 4.0, int n_x = 161,
                                   double T = 1.0);

}  // namespace branchsim
