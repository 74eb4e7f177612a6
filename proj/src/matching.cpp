#include "branchsim/matching.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace branchsim {

double min_cost_assignment(const std::vector<double>& cost, int n, std::vector<int>& row_to_col) {
    if (n < 0 || cost.size() != static_cast<std::size_t>(n) * static_cast<std::size_t>(n))
        throw std::invalid_argument("min_cost_assignment: cost matrix is not n*n");
    for (double c : cost)
        if (!std::isfinite(c)) throw std::invalid_argument("min_cost_assignment: non-finite cost");

    const double inf = std::numeric_limits<double>::infinity();
    // 1-based arrays with a dummy column 0, classic potentials formulation
    std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0), minv(n + 1);
    std::vector<int> p(n + 1, 0), way(n + 1, 0);
    for (int i = 1; i <= n; ++i) {
        p[0] = i;
        int j0 = 0;
        std::fill(minv.begin(), minv.end(), inf);
        std::vector<char> used(n + 1, 0);
        do {
            used[j0] = 1;
            int i0 = p[j0], j1 = -1;
            double delta = inf;
            for (int j = 1; j <= n; ++j) {
                if (used[j]) continue;
                double cur = cost[(i0 - 1) * static_cast<std::size_t>(n) + (j - 1)] - u[i0] - v[j];
                if (cur < minv[j]) {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if (minv[j] < delta) {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for (int j = 0; j <= n; ++j) {
                if (used[j]) {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
        } while (p[j0] != 0);
        do {  // augment along the found path
            int j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
        } while (j0 != 0);
    }
    row_to_col.assign(n, -1);
    for (int j = 1; j <= n; ++j) {
        if (p[j] == 0) continue;
        row_to_col[p[j] - 1] = j - 1;
    }
    // total in ascending row order, so equal assignments cost bitwise the same
    double total = 0.0;
    for (int i = 0; i < n; ++i) total += cost[static_cast<std::size_t>(i) * n + row_to_col[i]];
    return total;
}

}  // namespace branchsim
