#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <vector>

#include "glmfit/linalg.hpp"

namespace glmfit {

/// Euclidean projection of v onto {p >= 0, sum p = 1} by sort-and-threshold.
///
/// With u sorted descending, rho = max{j : u_j - (sum_{i<=j} u_i - 1) / j > 0}
/// and theta = (sum_{i<=rho} u_i - 1) / rho; the projection is max(v - theta, 0).
inline Vector project_simplex(const Vector& v) {
  const Index k = v.size();
  if (k == 0) throw InvalidArgument("project_simplex: empty vector");
  if (!v.allFinite()) throw InvalidArgument("project_simplex: non-finite entry");

  // Points already feasible up to summation roundoff are fixed points.
  const double feasible_tol = 8.0 * std::numeric_limits<double>::epsilon() * static_cast<double>(k);
  if (v.minCoeff() >= 0.0 && std::abs(v.sum() - 1.0) <= feasible_tol) return v;

  std::vector<double> u(v.data(), v.data() + k);
  std::sort(u.begin(), u.end(), std::greater<>());
  double cumsum = 0.0;
  double theta = 0.0;
  for (Index j = 0; j < k; ++j) {
    cumsum += u[static_cast<std::size_t>(j)];
    const double t = (cumsum - 1.0) / static_cast<double>(j + 1);
    if (u[static_cast<std::size_t>(j)] - t > 0.0) theta = t;
  }
  Vector p = (v.array() - theta).max(0.0).matrix();
  return p;
}

/// Projects every row of m in place.
inline void project_rows_onto_simplex(Matrix& m) {
  for (Index i = 0; i < m.rows(); ++i) m.row(i) = project_simplex(m.row(i).transpose()).transpose();
}

}  // namespace glmfit
