#pragma once

#include <vector>

namespace branchsim {

// Exact minimum-cost perfect matching on a square cost matrix (row-major,
// n*n entries), by shortest augmenting paths with dual potentials, O(n^3).
// Returns the optimal total cost; `row_to_col[i]` receives the column
// matched to row i.  Costs must be finite.
double min_cost_assignment(const std::vector<double>& cost, int n, std::vector<int>& row_to_col);

}  // namespace branchsim
