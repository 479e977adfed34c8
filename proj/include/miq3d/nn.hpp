#pragma once

#include <map>
#include <string>
#include <vector>

#include "miq3d/ops.hpp"
#include "miq3d/rng.hpp"
#include "miq3d/tensor.hpp"

namespace miq3d {

template <typename T>
struct Parameter {
  std::string name;
  Tensor<T> tensor;
  bool frozen = false;
};

enum class Init { kZeros, kOnes, kFanInUniform };

// Named, ordered collection of trainable tensors. Registration order is the
// serialization order, so it must be deterministic for a given config.
template <typename T>
class ParameterStore {
 public:
  explicit ParameterStore(std::uint64_t seed) : rng_(seed) {}

  // fan_in is only used by kFanInUniform: values ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
  Tensor<T> add(const std::string& name, Shape shape, Init init, std::size_t fan_in = 0);

  const std::vector<Parameter<T>>& params() const { return params_; }
  std::vector<Parameter<T>>& params() { return params_; }
  const Parameter<T>& get(const std::string& name) const;
  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  // Marks every parameter whose name starts with `prefix`.
  void set_frozen(const std::string& prefix, bool frozen);
  void zero_grad();
  std::size_t total_elements() const;

 private:
  Rng rng_;
  std::vector<Parameter<T>> params_;
  std::map<std::string, std::size_t> index_;
};

template <typename T>
struct Linear {
  Tensor<T> weight;  // [in, out]
  Tensor<T> bias;    // [out]

  static Linear create(ParameterStore<T>& store, const std::string& name, std::size_t in,
                       std::size_t out);
  Tensor<T> operator()(const Tensor<T>& x) const { return linear(x, weight, bias); }
};

template <typename T>
struct LayerNorm {
  Tensor<T> gamma;
  Tensor<T> beta;

  static LayerNorm create(ParameterStore<T>& store, const std::string& name, std::size_t dim);
  Tensor<T> operator()(const Tensor<T>& x) const { return layernorm(x, gamma, beta, T(1e-5)); }
};

// Two-layer perceptron with ReLU between the layers.
template <typename T>
struct Mlp {
  Linear<T> fc1;
  Linear<T> fc2;

  static Mlp create(ParameterStore<T>& store, const std::string& name, std::size_t in,
                    std::size_t hidden, std::size_t out);
  Tensor<T> operator()(const Tensor<T>& x) const { return fc2(relu(fc1(x))); }
};

template <typename T>
struct Conv3d {
  Tensor<T> weight;  // [out, in, k, k, k]
  Tensor<T> bias;    // [out]
  std::size_t stride = 1;
  std::size_t pad = 0;

  static Conv3d create(ParameterStore<T>& store, const std::string& name, std::size_t in,
                       std::size_t out, std::size_t k, std::size_t stride);
  Tensor<T> operator()(const Tensor<T>& x) const { return conv3d(x, weight, bias, stride, pad); }
};

// Multi-head scaled dot-product attention with separate query and key/value
// inputs. An optional key gate g[T_kv] multiplies the raw scores column-wise
// before the softmax: A'[i,j] = A[i,j] * g[j].
template <typename T>
struct MultiHeadAttention {
  Linear<T> q, k, v, o;
  std::size_t heads = 1;

  static MultiHeadAttention create(ParameterStore<T>& store, const std::string& name,
                                   std::size_t dim, std::size_t heads);
  // Post-softmax weights [heads, T_q, T_kv].
  Tensor<T> weights(const Tensor<T>& query, const Tensor<T>& key_value,
                    const Tensor<T>& key_gate = {}) const;
  Tensor<T> operator()(const Tensor<T>& query, const Tensor<T>& key_value,
                       const Tensor<T>& key_gate = {}) const;

 private:
  Tensor<T> split_heads(const Tensor<T>& x) const;  // [T, C] -> [heads, T, C/heads]
};

extern template class ParameterStore<float>;
extern template class ParameterStore<double>;

}  // namespace miq3d
