#pragma once

// Competitive query refinement decoder and the classification / mask heads.
//
// Each layer (post-norm):
//   q'   = LN(q + SelfAttn(q))          inter-query competition
//   q''  = LN(q' + CrossAttn(q', img))  query-to-image retrieval
//   out  = LN(q'' + FFN(q''))

#include <vector>

#include "miq3d/encoder.hpp"
#include "miq3d/nn.hpp"
#include "miq3d/pciqg.hpp"

namespace miq3d {

struct DecoderConfig {
  std::size_t num_layers = 4;
  std::size_t num_heads = 4;
  std::size_t ffn_hidden = 128;
  // false ablates the inter-query self-attention sublayer (queries decouple).
  bool self_attention = true;

  void validate(std::size_t dim) const;
};

// Class index 0 is "lesion", 1 is "no-object".
inline constexpr std::size_t kLesionClass = 0;
inline constexpr std::size_t kNoObjectClass = 1;

template <typename T>
struct InstancePrediction {
  Tensor<T> class_logits;  // [N, 2]
  Tensor<T> class_probs;   // [N, 2]
  Tensor<T> mask_logits;   // [N, D, H, W]
  Tensor<T> masks;         // sigmoid(mask_logits)
  std::size_t n_queries() const { return class_logits.dim(0); }
};

template <typename T>
struct DecoderLayer {
  MultiHeadAttention<T> self_attn;
  LayerNorm<T> ln1;
  MultiHeadAttention<T> cross_attn;
  LayerNorm<T> ln2;
  Mlp<T> ffn;
  LayerNorm<T> ln3;
  bool use_self_attention = true;

  static DecoderLayer create(ParameterStore<T>& store, const std::string& name, std::size_t dim,
                             const DecoderConfig& cfg);
  Tensor<T> operator()(const Tensor<T>& queries, const Tensor<T>& image_tokens) const;
};

template <typename T>
class QueryDecoder {
 public:
  QueryDecoder(ParameterStore<T>& store, std::size_t dim, const DecoderConfig& cfg);

  const DecoderLayer<T>& layer(std::size_t i) const { return layers_.at(i); }
  std::size_t num_layers() const { return layers_.size(); }
  // Runs every layer against the same final encoder tokens.
  Tensor<T> decode(const InstanceQuerySet<T>& q0, const Tensor<T>& image_tokens) const;

 private:
  std::vector<DecoderLayer<T>> layers_;
};

template <typename T>
class PredictionHeads {
 public:
  PredictionHeads(ParameterStore<T>& store, std::size_t dim);

  // Class head: linear + softmax. Mask head: e_n = MLP(q_n), then
  // mask_logits[n] = sum_c e_n[c] * voxel_features[c].
  InstancePrediction<T> predict(const Tensor<T>& queries, const VoxelFeatureField<T>& features) const;
  // Same, against an explicit [C, D, H, W] feature map.
  InstancePrediction<T> predict(const Tensor<T>& queries, const Tensor<T>& voxel_features) const;

 private:
  InstancePrediction<T> finish(const Tensor<T>& queries, Tensor<T> mask_logits) const;

  Linear<T> class_head_;
  Mlp<T> mask_embed_;
};

// The mask head's dot product, exposed for direct testing.
template <typename T>
Tensor<T> mask_dot_product(const Tensor<T>& embeddings, const Tensor<T>& voxel_features);

extern template class QueryDecoder<float>;
extern template class QueryDecoder<double>;
extern template class PredictionHeads<float>;
extern template class PredictionHeads<double>;

}  // namespace miq3d
