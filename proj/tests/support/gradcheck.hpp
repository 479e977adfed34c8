#pragma once

// Central finite-difference gradient checking in double precision.

#include <functional>
#include <string>
#include <vector>

#include "miq3d/ops.hpp"
#include "miq3d/rng.hpp"

namespace miq3d::testing {

using TensorD = Tensor<double>;
using ScalarFn = std::function<TensorD(const std::vector<TensorD>&)>;

struct GradCheckResult {
  // ||analytic - numeric|| / max(||analytic||, ||numeric||, 1e-8) over the
  // checked coordinates.
  double rel_error = 0;
  std::size_t coords = 0;
  // Coordinates rejected because x - h and x + h took different branches at
  // a ReLU or matching kink.
  std::size_t skipped = 0;
};

// Checks d f / d inputs on up to `max_coords` coordinates drawn uniformly
// from all elements of all inputs that require a gradient, skipping
// coordinates whose stencil straddles a kink. Inputs must be leaves.
GradCheckResult grad_check(const ScalarFn& f, std::vector<TensorD> inputs, Rng& rng,
                           std::size_t max_coords = 48, double step = 1e-4);

// sum(y * R) for a fixed random R: reduces any output to a scalar whose
// gradient exercises every output coordinate.
TensorD random_projection(const TensorD& y, std::uint64_t seed);

TensorD random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0, bool requires_grad = true);

struct OpCheck {
  std::string op;
  std::size_t trials = 0;
  double worst = 0;
  std::size_t coords = 0;   // checked coordinates over all trials
  std::size_t skipped = 0;  // rejected as straddling a kink
};

// Every differentiable operation, layer and the end-to-end loss, `trials`
// randomized instances each.
std::vector<OpCheck> run_gradient_suite(std::size_t trials = 20, std::uint64_t seed = 7);

inline constexpr double kGradTolerance = 1e-4;

}  // namespace miq3d::testing
