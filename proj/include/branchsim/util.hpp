#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace branchsim {

// Sum with pairwise (cascade) reduction.  The result depends only on the
// order of `v`, not on how the work was chunked across threads, which keeps
// batch estimates reproducible for any worker count.
double pairwise_sum(std::span<const double> v);

struct MeanSE {
    double mean = 0.0;
    double se = 0.0;  // standard error of the mean
    std::size_t n = 0;
};

// Sample mean and standard error, pairwise-accumulated.
MeanSE mean_se(std::span<const double> v);

// Exact binomial coefficients as 64-bit integers; throws on overflow.
std::uint64_t binomial(unsigned n, unsigned k);

// Shortest decimal string that round-trips a double (printf %.17g trimmed).
std::string format_double(double x);

}  // namespace branchsim
