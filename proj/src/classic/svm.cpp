#include "qvp/classic/svm.h"

#include <algorithm>
#include <cmath>
#include <limits>

#include "qvp/error.h"

namespace qvp::classic {

double rbf_kernel(std::span<const double> a, std::span<const double> b, double gamma) {
  double d2 = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) d2 += (a[i] - b[i]) * (a[i] - b[i]);
  return std::exp(-gamma * d2);
}

SmoSolution smo_solve(const Matrix& x, std::span<const int> y, double c, double gamma, double tol,
                      std::size_t max_iterations) {
  const std::size_t n = x.rows();
  if (n != y.size() || n == 0) throw ContractError("smo_solve: X and y differ in length or are empty");
  if (!(c > 0.0) || !(gamma > 0.0)) throw ConfigError("smo_solve: C and gamma must be positive");
  for (int v : y) {
    if (v != 1 && v != -1) throw ContractError("smo_solve: labels must be +1 or -1");
  }
  if (max_iterations == 0) max_iterations = 10000 * n;

  std::vector<double> k(n * n);
  for (std::size_t i = 0; i < n; ++i) {
    k[i * n + i] = 1.0;
    for (std::size_t j = i + 1; j < n; ++j) k[i * n + j] = k[j * n + i] = rbf_kernel(x.row(i), x.row(j), gamma);
  }
  SmoSolution s;
  s.alpha.assign(n, 0.0);
  std::vector<double> g(n, -1.0);  // gradient of 0.5 a'Qa - e'a
  auto in_up = [&](std::size_t t) { return (y[t] == 1 && s.alpha[t] < c) || (y[t] == -1 && s.alpha[t] > 0.0); };
  auto in_low = [&](std::size_t t) { return (y[t] == 1 && s.alpha[t] > 0.0) || (y[t] == -1 && s.alpha[t] < c); };

  for (s.iterations = 0; s.iterations < max_iterations; ++s.iterations) {
    std::size_t i = n, j = n;
    double m = -std::numeric_limits<double>::infinity(), big_m = std::numeric_limits<double>::infinity();
    for (std::size_t t = 0; t < n; ++t) {
      const double v = -y[t] * g[t];
      if (in_up(t) && v > m) m = v, i = t;
      if (in_low(t) && v < big_m) big_m = v, j = t;
    }
    if (i == n || j == n || m - big_m < tol) {
      s.converged = true;
      break;
    }
    const double quad = std::max(k[i * n + i] + k[j * n + j] - 2.0 * k[i * n + j], 1e-12);
    double step = (m - big_m) / quad;
    step = std::min(step, y[i] == 1 ? c - s.alpha[i] : s.alpha[i]);
    step = std::min(step, y[j] == 1 ? s.alpha[j] : c - s.alpha[j]);
    s.alpha[i] += y[i] * step;
    s.alpha[j] -= y[j] * step;
    s.alpha[i] = std::clamp(s.alpha[i], 0.0, c);
    s.alpha[j] = std::clamp(s.alpha[j], 0.0, c);
    for (std::size_t t = 0; t < n; ++t) g[t] += y[t] * step * (k[t * n + i] - k[t * n + j]);
  }

  double ub = std::numeric_limits<double>::infinity(), lb = -ub, sum_free = 0.0;
  std::size_t n_free = 0;
  for (std::size_t t = 0; t < n; ++t) {
    const double yg = y[t] * g[t];
    const bool at_upper = s.alpha[t] >= c, at_lower = s.alpha[t] <= 0.0;
    if ((at_upper && y[t] == -1) || (at_lower && y[t] == 1)) {
      ub = std::min(ub, yg);
    } else if (at_upper || at_lower) {
      lb = std::max(lb, yg);
    } else {
      ++n_free;
      sum_free += yg;
    }
  }
  if (n_free > 0) {
    s.rho = sum_free / static_cast<double>(n_free);
  } else if (std::isfinite(ub) && std::isfinite(lb)) {
    s.rho = 0.5 * (ub + lb);
  } else {
    s.rho = std::isfinite(ub) ? ub : (std::isfinite(lb) ? lb : 0.0);
  }
  return s;
}

double smo_decision(const Matrix& x, std::span<const int> y, const SmoSolution& s, double gamma,
                    std::span<const double> query) {
  double f = -s.rho;
  for (std::size_t i = 0; i < x.rows(); ++i) {
    if (s.alpha[i] > 0.0) f += s.alpha[i] * y[i] * rbf_kernel(x.row(i), query, gamma);
  }
  return f;
}

}  // namespace qvp::classic
