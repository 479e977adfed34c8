#include "miq3d/hungarian.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "miq3d/errors.hpp"

namespace miq3d {
namespace {

// Shortest-augmenting-path Hungarian method (potentials form), O(n^2 m).
// `a` is [n][m] with n <= m; returns col_of_row.
std::vector<std::size_t> solve_rows_le_cols(const std::vector<std::vector<double>>& a) {
  const std::size_t n = a.size();
  const std::size_t m = n ? a[0].size() : 0;
  constexpr double kInf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0), v(m + 1, 0);
  std::vector<std::size_t> p(m + 1, 0), way(m + 1, 0);
  for (std::size_t i = 1; i <= n; ++i) {
    p[0] = i;
    std::size_t j0 = 0;
    std::vector<double> minv(m + 1, kInf);
    std::vector<bool> used(m + 1, false);
    do {
      used[j0] = true;
      const std::size_t i0 = p[j0];
      double delta = kInf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= m; ++j) {
        if (used[j]) continue;
        const double cur = a[i0 - 1][j - 1] - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= m; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<std::size_t> col_of_row(n, 0);
  for (std::size_t j = 1; j <= m; ++j)
    if (p[j] != 0) col_of_row[p[j] - 1] = j - 1;
  return col_of_row;
}

// Optimal cost of assigning the given gts into the given (unused) queries.
double reduced_optimum(const std::vector<double>& cost, std::size_t n_gts,
                       const std::vector<std::size_t>& gts, const std::vector<std::size_t>& queries) {
  if (gts.empty()) return 0.0;
  std::vector<std::vector<double>> a(gts.size(), std::vector<double>(queries.size()));
  for (std::size_t r = 0; r < gts.size(); ++r)
    for (std::size_t c = 0; c < queries.size(); ++c) a[r][c] = cost[queries[c] * n_gts + gts[r]];
  const auto assign = solve_rows_le_cols(a);
  double total = 0;
  for (std::size_t r = 0; r < gts.size(); ++r) total += a[r][assign[r]];
  return total;
}

}  // namespace

MatchAssignment hungarian(const std::vector<double>& cost, std::size_t n_queries,
                          std::size_t n_gts) {
  if (n_gts == 0 || n_queries < n_gts)
    throw ConfigError("hungarian needs N >= M >= 1, got N=" + std::to_string(n_queries) +
                      ", M=" + std::to_string(n_gts));
  if (cost.size() != n_queries * n_gts) throw DimensionError("hungarian: cost matrix size mismatch");
  double scale = 1.0;
  for (const double c : cost) {
    if (!std::isfinite(c)) throw NumericError("hungarian: non-finite cost entry");
    scale = std::max(scale, std::abs(c));
  }
  std::vector<std::size_t> all_gts(n_gts), all_queries(n_queries);
  for (std::size_t j = 0; j < n_gts; ++j) all_gts[j] = j;
  for (std::size_t i = 0; i < n_queries; ++i) all_queries[i] = i;
  const double optimum = reduced_optimum(cost, n_gts, all_gts, all_queries);
  const double tol = 1e-10 * scale * static_cast<double>(n_gts);

  // Fix ground truths in order, each to the smallest query index that still
  // admits an optimal completion.
  MatchAssignment result;
  std::vector<bool> taken(n_queries, false);
  double fixed_cost = 0;
  for (std::size_t j = 0; j < n_gts; ++j) {
    const std::vector<std::size_t> rest_gts(all_gts.begin() + static_cast<std::ptrdiff_t>(j) + 1,
                                            all_gts.end());
    bool placed = false;
    for (std::size_t i = 0; i < n_queries && !placed; ++i) {
      if (taken[i]) continue;
      std::vector<std::size_t> free_queries;
      for (std::size_t q = 0; q < n_queries; ++q)
        if (!taken[q] && q != i) free_queries.push_back(q);
      const double here = cost[i * n_gts + j];
      const double total = fixed_cost + here + reduced_optimum(cost, n_gts, rest_gts, free_queries);
      if (total <= optimum + tol) {
        taken[i] = true;
        fixed_cost += here;
        result.pairs.emplace_back(i, j);
        placed = true;
      }
    }
    if (!placed) throw NumericError("hungarian: failed to reconstruct an optimal assignment");
  }
  result.total_cost = 0;
  for (const auto& [i, j] : result.pairs) result.total_cost += cost[i * n_gts + j];
  return result;
}

MatchAssignment min_cost_matching(const std::vector<double>& cost, std::size_t rows,
                                  std::size_t cols) {
  MatchAssignment out;
  if (rows == 0 || cols == 0) return out;
  if (rows >= cols) return hungarian(cost, rows, cols);
  std::vector<double> transposed(cost.size());
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) transposed[c * rows + r] = cost[r * cols + c];
  auto t = hungarian(transposed, cols, rows);
  for (auto& [col, row] : t.pairs) out.pairs.emplace_back(row, col);
  out.total_cost = t.total_cost;
  return out;
}

}  // namespace miq3d
