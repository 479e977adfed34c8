#pragma once

#include <cstddef>
#include <utility>
#include <vector>

namespace miq3d {

// Optimal injection of ground-truth instances into query indices.
struct MatchAssignment {
  // (query index, ground-truth index), ordered by ground-truth index.
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  // Sum of cost[query, gt] over pairs, accumulated in ground-truth order.
  double total_cost = 0;
};

// cost is row-major [n_queries, n_gts] with n_queries >= n_gts >= 1 and all
// entries finite (NumericError / ConfigError otherwise). Among optimal
// assignments, returns the one whose query sequence (in ground-truth order)
// is lexicographically smallest.
MatchAssignment hungarian(const std::vector<double>& cost, std::size_t n_queries,
                          std::size_t n_gts);

// Minimum-cost matching of min(rows, cols) pairs for any rectangular shape.
// Pairs are (row, col), ordered by column when rows >= cols, else by row.
MatchAssignment min_cost_matching(const std::vector<double>& cost, std::size_t rows,
                                  std::size_t cols);

}  // namespace miq3d
