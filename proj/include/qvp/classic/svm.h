#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "qvp/matrix.h"

namespace qvp::classic {

double rbf_kernel(std::span<const double> a, std::span<const double> b, double gamma);

/// Dual solution of a binary soft-margin RBF SVM. Decision value for x is
/// sum_i alpha_i y_i K(x_i, x) - rho.
struct SmoSolution {
  std::vector<double> alpha;
  double rho = 0.0;
  std::size_t iterations = 0;
  bool converged = false;
};

/// Sequential minimal optimization with maximal-violating-pair working-set
/// selection. `y` holds +1/-1. Stops when the violation gap drops below `tol`
/// or after `max_iterations` (0: 10^4 passes over the data).
SmoSolution smo_solve(const Matrix& x, std::span<const int> y, double c, double gamma, double tol = 1e-3,
                      std::size_t max_iterations = 0);

double smo_decision(const Matrix& x, std::span<const int> y, const SmoSolution& s, double gamma,
                    std::span<const double> query);

}  // namespace qvp::classic
