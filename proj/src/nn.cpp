#include "miq3d/nn.hpp"

#include <cmath>

#include "miq3d/errors.hpp"

namespace miq3d {

template <typename T>
Tensor<T> ParameterStore<T>::add(const std::string& name, Shape shape, Init init,
                                 std::size_t fan_in) {
  if (contains(name)) throw ConfigError("duplicate parameter name '" + name + "'");
  std::vector<T> values(numel(shape), T(0));
  switch (init) {
    case Init::kZeros:
      break;
    case Init::kOnes:
      std::fill(values.begin(), values.end(), T(1));
      break;
    case Init::kFanInUniform: {
      if (fan_in == 0) throw ConfigError("fan-in init for '" + name + "' needs fan_in > 0");
      const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
      for (auto& v : values) v = static_cast<T>(rng_.uniform(-bound, bound));
      break;
    }
  }
  auto tensor = Tensor<T>::from(std::move(shape), std::move(values), true);
  index_[name] = params_.size();
  params_.push_back({name, tensor, false});
  return tensor;
}

template <typename T>
const Parameter<T>& ParameterStore<T>::get(const std::string& name) const {
  const auto it = index_.find(name);
  if (it == index_.end()) throw ConfigError("unknown parameter '" + name + "'");
  return params_[it->second];
}

template <typename T>
void ParameterStore<T>::set_frozen(const std::string& prefix, bool frozen) {
  for (auto& p : params_) {
    if (p.name.rfind(prefix, 0) == 0) {
      p.frozen = frozen;
      p.tensor.set_requires_grad(!frozen);
    }
  }
}

template <typename T>
void ParameterStore<T>::zero_grad() {
  for (auto& p : params_) p.tensor.zero_grad();
}

template <typename T>
std::size_t ParameterStore<T>::total_elements() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.tensor.numel();
  return n;
}

template <typename T>
Linear<T> Linear<T>::create(ParameterStore<T>& store, const std::string& name, std::size_t in,
                            std::size_t out) {
  return {store.add(name + ".weight", {in, out}, Init::kFanInUniform, in),
          store.add(name + ".bias", {out}, Init::kZeros)};
}

template <typename T>
LayerNorm<T> LayerNorm<T>::create(ParameterStore<T>& store, const std::string& name,
                                  std::size_t dim) {
  return {store.add(name + ".gamma", {dim}, Init::kOnes),
          store.add(name + ".beta", {dim}, Init::kZeros)};
}

template <typename T>
Mlp<T> Mlp<T>::create(ParameterStore<T>& store, const std::string& name, std::size_t in,
                      std::size_t hidden, std::size_t out) {
  auto fc1 = Linear<T>::create(store, name + ".fc1", in, hidden);
  auto fc2 = Linear<T>::create(store, name + ".fc2", hidden, out);
  return {fc1, fc2};
}

template <typename T>
Conv3d<T> Conv3d<T>::create(ParameterStore<T>& store, const std::string& name, std::size_t in,
                            std::size_t out, std::size_t k, std::size_t stride) {
  Conv3d conv;
  conv.weight = store.add(name + ".weight", {out, in, k, k, k}, Init::kFanInUniform, in * k * k * k);
  conv.bias = store.add(name + ".bias", {out}, Init::kZeros);
  conv.stride = stride;
  conv.pad = k / 2;
  return conv;
}

template <typename T>
MultiHeadAttention<T> MultiHeadAttention<T>::create(ParameterStore<T>& store,
                                                    const std::string& name, std::size_t dim,
                                                    std::size_t heads) {
  if (heads == 0 || dim % heads != 0)
    throw ConfigError(name + ": embedding dim " + std::to_string(dim) +
                      " is not divisible by " + std::to_string(heads) + " heads");
  MultiHeadAttention mha;
  mha.q = Linear<T>::create(store, name + ".q", dim, dim);
  mha.k = Linear<T>::create(store, name + ".k", dim, dim);
  mha.v = Linear<T>::create(store, name + ".v", dim, dim);
  mha.o = Linear<T>::create(store, name + ".o", dim, dim);
  mha.heads = heads;
  return mha;
}

template <typename T>
Tensor<T> MultiHeadAttention<T>::split_heads(const Tensor<T>& x) const {
  const std::size_t tokens = x.dim(0);
  const std::size_t head_dim = x.dim(1) / heads;
  return permute(reshape(x, {tokens, heads, head_dim}), {1, 0, 2});
}

template <typename T>
Tensor<T> MultiHeadAttention<T>::weights(const Tensor<T>& query, const Tensor<T>& key_value,
                                         const Tensor<T>& key_gate) const {
  const std::size_t head_dim = query.dim(1) / heads;
  const auto qh = split_heads(q(query));
  const auto kh = split_heads(k(key_value));
  auto scores = scale(matmul(qh, transpose(kh)), T(1) / std::sqrt(static_cast<T>(head_dim)));
  if (key_gate.defined()) {
    if (key_gate.numel() != key_value.dim(0))
      throw DimensionError("attention gate " + shape_str(key_gate.shape()) + " vs " +
                           std::to_string(key_value.dim(0)) + " keys");
    scores = mul(scores, reshape(key_gate, {key_gate.numel()}));
  }
  return softmax_lastdim(scores);
}

template <typename T>
Tensor<T> MultiHeadAttention<T>::operator()(const Tensor<T>& query, const Tensor<T>& key_value,
                                            const Tensor<T>& key_gate) const {
  const auto probs = weights(query, key_value, key_gate);
  const auto ctx = matmul(probs, split_heads(v(key_value)));  // [heads, T_q, head_dim]
  const std::size_t tq = query.dim(0);
  return o(reshape(permute(ctx, {1, 0, 2}), {tq, query.dim(1)}));
}

template class ParameterStore<float>;
template class ParameterStore<double>;
template struct Linear<float>;
template struct Linear<double>;
template struct LayerNorm<float>;
template struct LayerNorm<double>;
template struct Mlp<float>;
template struct Mlp<double>;
template struct Conv3d<float>;
template struct Conv3d<double>;
template struct MultiHeadAttention<float>;
template struct MultiHeadAttention<double>;

}  // namespace miq3d
