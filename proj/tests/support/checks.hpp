#pragma once

// Brute-force oracles and the property checks behind the acceptance criteria.
// Each check returns its worst observed deviation plus a verdict so unit tests
// and the acceptance binary share one implementation.

#include <string>
#include <vector>

#include "miq3d/hungarian.hpp"
#include "miq3d/metrics.hpp"
#include "miq3d/rng.hpp"

namespace miq3d::testing {

struct CheckResult {
  bool pass = false;
  std::string detail;
};

// Minimum of sum cost[q_j, j] over injective q, enumerated exhaustively, summed in gt order.
double brute_force_assignment(const std::vector<double>& cost, std::size_t n, std::size_t m);

BinaryMask random_binary_mask(Extent3 shape, Rng& rng, double density);
std::size_t brute_force_intersection(const BinaryMask& a, const BinaryMask& b);
// All-pairs surface distances; no distance transform.
double brute_force_nsd(const BinaryMask& a, const BinaryMask& b, double tau);

CheckResult hungarian_oracle(std::size_t matrices = 200, std::uint64_t seed = 11);
CheckResult metric_oracles(std::size_t pairs = 50, std::uint64_t seed = 13);
CheckResult attention_invariants(std::uint64_t seed = 17);
CheckResult loss_properties(std::size_t trials = 50, std::uint64_t seed = 19);

}  // namespace miq3d::testing
