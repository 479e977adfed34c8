#pragma once

#include <cstdint>
#include <vector>

#include "miq3d/config.hpp"
#include "miq3d/nn.hpp"

namespace miq3d {

// First and second moment estimates, one buffer per parameter in store order.
struct AdamState {
  std::uint64_t t = 0;
  std::vector<std::vector<float>> m;
  std::vector<std::vector<float>> v;
  bool operator==(const AdamState&) const = default;
};

double global_grad_norm(const ParameterStore<float>& store);

// Adam with global-norm gradient clipping. Frozen parameters are skipped and
// keep zero moments.
class Adam {
 public:
  explicit Adam(const OptimizerConfig& cfg) : cfg_(cfg) {}
  // Returns the gradient norm before clipping.
  double step(ParameterStore<float>& store, AdamState& state) const;

 private:
  OptimizerConfig cfg_;
};

}  // namespace miq3d
