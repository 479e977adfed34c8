#include "miq3d/pciqg.hpp"

#include "miq3d/errors.hpp"

namespace miq3d {

template <typename T>
SeedPrototype<T> sample_seed(const Tensor<T>& features, const PointPrompt& prompt) {
  return {trilinear_sample(features, prompt.p)};
}

template <typename T>
QueryGenerator<T>::QueryGenerator(ParameterStore<T>& store, std::size_t n_queries,
                                  std::size_t dim) {
  if (n_queries == 0) throw ConfigError("query generator needs at least one query");
  // fan_in = 1 gives U(-1, 1) slot entries, well separated from each other.
  slots_ = store.add("pciqg.slots", {n_queries, dim}, Init::kFanInUniform, 1);
  mlp_ = Mlp<T>::create(store, "pciqg.mlp", 2 * dim, 2 * dim, dim);
}

template <typename T>
InstanceQuerySet<T> QueryGenerator<T>::generate(const SeedPrototype<T>& seed) const {
  const std::size_t dim = slots_.dim(1);
  if (seed.v_seed.numel() != dim)
    throw DimensionError("seed prototype " + shape_str(seed.v_seed.shape()) + " vs query dim " +
                         std::to_string(dim));
  const auto tiled = expand(reshape(seed.v_seed, {1, dim}), {n_queries(), dim});
  return {mlp_(concat<T>({tiled, slots_}, 1))};
}

template SeedPrototype<float> sample_seed(const Tensor<float>&, const PointPrompt&);
template SeedPrototype<double> sample_seed(const Tensor<double>&, const PointPrompt&);
template class QueryGenerator<float>;
template class QueryGenerator<double>;

}  // namespace miq3d
