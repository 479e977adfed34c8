#pragma once

// Prompt-conditioned instance query generation: the feature vector under the
// user's click (the seed prototype) is expanded into N instance queries by a
// shared MLP over [seed ; slot_n], one learned slot embedding per query.

#include "miq3d/nn.hpp"

namespace miq3d {

struct PointPrompt {
  Point3 p;
};

template <typename T>
struct SeedPrototype {
  Tensor<T> v_seed;  // [C]
};

template <typename T>
struct InstanceQuerySet {
  Tensor<T> queries;  // [N, C]
  std::size_t n_queries() const { return queries.dim(0); }
};

// Trilinear read of features[C,D,H,W] at the prompt; PromptError if outside.
template <typename T>
SeedPrototype<T> sample_seed(const Tensor<T>& features, const PointPrompt& prompt);

template <typename T>
class QueryGenerator {
 public:
  QueryGenerator(ParameterStore<T>& store, std::size_t n_queries, std::size_t dim);

  InstanceQuerySet<T> generate(const SeedPrototype<T>& seed) const;
  const Tensor<T>& slots() const { return slots_; }
  std::size_t n_queries() const { return slots_.dim(0); }

 private:
  Tensor<T> slots_;  // [N, C]
  Mlp<T> mlp_;       // 2C -> 2C -> C
};

extern template class QueryGenerator<float>;
extern template class QueryGenerator<double>;

}  // namespace miq3d
