#pragma once

#include <Eigen/Dense>
#include <vector>

namespace mfstop {

// Exact dense assignment: min over permutations pi of sum_k cost(k, pi(k)).
// Shortest augmenting paths with dual potentials, O(n^3). Optionally returns
// the matching (match[row] = column).
double assignment_cost(const Eigen::MatrixXd& cost, std::vector<int>* match = nullptr);

// Exact balanced transportation problem: min sum_ij f_ij cost(i,j) subject to
// row sums = supply, column sums = demand (sums must agree within tolerance;
// they are rescaled to the common mean). Successive shortest paths with node
// potentials; each augmentation saturates at least one supply or demand.
double transport_cost(const std::vector<double>& supply, const std::vector<double>& demand,
                      const Eigen::MatrixXd& cost);

} // namespace mfstop
