#include "branchsim/util.hpp"

#include <cmath>
#include <cstdio>

namespace branchsim {

double pairwise_sum(std::span<const double> v) {
    if (v.size() <= 8) {
        double s = 0.0;
        for (double x : v) s += x;
        return s;
    }
    std::size_t half = v.size() / 2;
    return pairwise_sum(v.first(half)) + pairwise_sum(v.subspan(half));
}

MeanSE mean_se(std::span<const double> v) {
    MeanSE r;
    r.n = v.size();
    if (r.n == 0) return r;
    r.mean = pairwise_sum(v) / static_cast<double>(r.n);
    if (r.n < 2) return r;
    std::vector<double> dev2(r.n);
    for (std::size_t i = 0; i < r.n; ++i) {
        double d = v[i] - r.mean;
        dev2[i] = d * d;
    }
    double var = pairwise_sum(dev2) / static_cast<double>(r.n - 1);
    r.se = std::sqrt(var / static_cast<double>(r.n));
    return r;
}

std::uint64_t binomial(unsigned n, unsigned k) {
    if (k > n) return 0;
    if (k > n - k) k = n - k;
    std::uint64_t c = 1;
    for (unsigned i = 1; i <= k; ++i) {
        std::uint64_t num = n - k + i;
        // exact update: c * num is divisible by i at every step
        if (c > UINT64_MAX / num) throw std::overflow_error("binomial overflow");
        c = c * num / i;
    }
    return c;
}

std::string format_double(double x) {
    char buf[40];
    for (int prec = 1; prec <= 17; ++prec) {
        std::snprintf(buf, sizeof(buf), "%.*g", prec, x);
        double back = std::strtod(buf, nullptr);
        if (back == x || (std::isnan(back) && std::isnan(x))) return buf;
    }
    std::snprintf(buf, sizeof(buf), "%.17g", x);
    return buf;
}

}  // namespace branchsim
