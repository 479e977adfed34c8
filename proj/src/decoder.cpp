#include "miq3d/decoder.hpp"

#include "miq3d/errors.hpp"

namespace miq3d {

void DecoderConfig::validate(std::size_t dim) const {
  if (num_layers < 1) throw ConfigError("decoder num_layers must be >= 1");
  if (num_heads == 0 || dim % num_heads != 0)
    throw ConfigError("decoder heads " + std::to_string(num_heads) + " must divide dim " +
                      std::to_string(dim));
  if (ffn_hidden == 0) throw ConfigError("decoder ffn_hidden must be positive");
}

template <typename T>
DecoderLayer<T> DecoderLayer<T>::create(ParameterStore<T>& store, const std::string& name,
                                        std::size_t dim, const DecoderConfig& cfg) {
  DecoderLayer layer;
  layer.self_attn = MultiHeadAttention<T>::create(store, name + ".self_attn", dim, cfg.num_heads);
  layer.ln1 = LayerNorm<T>::create(store, name + ".ln1", dim);
  layer.cross_attn = MultiHeadAttention<T>::create(store, name + ".cross_attn", dim, cfg.num_heads);
  layer.ln2 = LayerNorm<T>::create(store, name + ".ln2", dim);
  layer.ffn = Mlp<T>::create(store, name + ".ffn", dim, cfg.ffn_hidden, dim);
  layer.ln3 = LayerNorm<T>::create(store, name + ".ln3", dim);
  layer.use_self_attention = cfg.self_attention;
  return layer;
}

template <typename T>
Tensor<T> DecoderLayer<T>::operator()(const Tensor<T>& queries, const Tensor<T>& image_tokens) const {
  Tensor<T> q = queries;
  if (use_self_attention) q = ln1(add(q, self_attn(q, q)));
  q = ln2(add(q, cross_attn(q, image_tokens)));
  return ln3(add(q, ffn(q)));
}

template <typename T>
QueryDecoder<T>::QueryDecoder(ParameterStore<T>& store, std::size_t dim, const DecoderConfig& cfg) {
  cfg.validate(dim);
  for (std::size_t l = 0; l < cfg.num_layers; ++l)
    layers_.push_back(DecoderLayer<T>::create(store, "cqrd.layer" + std::to_string(l), dim, cfg));
}

template <typename T>
Tensor<T> QueryDecoder<T>::decode(const InstanceQuerySet<T>& q0, const Tensor<T>& image_tokens) const {
  Tensor<T> q = q0.queries;
  for (const auto& layer : layers_) q = layer(q, image_tokens);
  return q;
}

template <typename T>
Tensor<T> mask_dot_product(const Tensor<T>& embeddings, const Tensor<T>& voxel_features) {
  if (voxel_features.rank() != 4 || embeddings.rank() != 2 ||
      embeddings.dim(1) != voxel_features.dim(0))
    throw DimensionError("mask head: embeddings " + shape_str(embeddings.shape()) +
                         " vs voxel features " + shape_str(voxel_features.shape()));
  const std::size_t c = voxel_features.dim(0);
  const std::size_t voxels = voxel_features.numel() / c;
  const auto flat = matmul(embeddings, reshape(voxel_features, {c, voxels}));
  return reshape(flat, {embeddings.dim(0), voxel_features.dim(1), voxel_features.dim(2),
                        voxel_features.dim(3)});
}

template <typename T>
PredictionHeads<T>::PredictionHeads(ParameterStore<T>& store, std::size_t dim)
    : class_head_(Linear<T>::create(store, "heads.class", dim, 2)),
      mask_embed_(Mlp<T>::create(store, "heads.mask_embed", dim, dim, dim)) {}

template <typename T>
InstancePrediction<T> PredictionHeads<T>::finish(const Tensor<T>& queries, Tensor<T> mask_logits) const {
  InstancePrediction<T> out;
  out.class_logits = class_head_(queries);
  out.class_probs = softmax_lastdim(out.class_logits);
  out.mask_logits = std::move(mask_logits);
  out.masks = sigmoid(out.mask_logits);
  return out;
}

template <typename T>
InstancePrediction<T> PredictionHeads<T>::predict(const Tensor<T>& queries,
                                                  const VoxelFeatureField<T>& features) const {
  return finish(queries, features.contract(mask_embed_(queries)));
}

template <typename T>
InstancePrediction<T> PredictionHeads<T>::predict(const Tensor<T>& queries,
                                                  const Tensor<T>& voxel_features) const {
  return finish(queries, mask_dot_product(mask_embed_(queries), voxel_features));
}

template Tensor<float> mask_dot_product(const Tensor<float>&, const Tensor<float>&);
template Tensor<double> mask_dot_product(const Tensor<double>&, const Tensor<double>&);
template struct DecoderLayer<float>;
template struct DecoderLayer<double>;
template class QueryDecoder<float>;
template class QueryDecoder<double>;
template class PredictionHeads<float>;
template class PredictionHeads<double>;

}  // namespace miq3d
