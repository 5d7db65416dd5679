#include <limits>
#include <stdexcept>

#include "wflow/errors.hpp"
#include "wflow/metrics.hpp"

namespace wflow {

// Hungarian method with row/column potentials, one augmenting path per row.
double min_cost_assignment(const Eigen::MatrixXd& cost, std::vector<std::size_t>* row_to_col) {
  if (cost.rows() != cost.cols()) throw ShapeError("assignment: cost matrix must be square");
  const Eigen::Index n = cost.rows();
  if (n == 0) {
    if (row_to_col) row_to_col->clear();
    return 0.0;
  }
  if (!cost.allFinite()) throw NumericError("assignment: non-finite cost");
  const double inf = std::numeric_limits<double>::infinity();
  // 1-based; column 0 is a sentinel.
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<Eigen::Index> match(n + 1, 0), way(n + 1, 0);
  for (Eigen::Index i = 1; i <= n; ++i) {
    match[0] = i;
    Eigen::Index j0 = 0;
    std::vector<double> minv(n + 1, inf);
    std::vector<char> used(n + 1, 0);
    do {
      used[j0] = 1;
      const Eigen::Index i0 = match[j0];
      double delta = inf;
      Eigen::Index j1 = 0;
      for (Eigen::Index j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (Eigen::Index j = 0; j <= n; ++j) {
        if (used[j]) {
          u[match[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (match[j0] != 0);
    do {
      const Eigen::Index j1 = way[j0];
      match[j0] = match[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<std::size_t> r2c(n);
  double total = 0.0;
  for (Eigen::Index j = 1; j <= n; ++j) {
    r2c[match[j] - 1] = static_cast<std::size_t>(j - 1);
    total += cost(match[j] - 1, j - 1);
  }
  if (row_to_col) *row_to_col = std::move(r2c);
  return total;
}

}  // namespace wflow
