#include "miq3d/encoder.hpp"

#include <algorithm>

#include "miq3d/errors.hpp"

namespace miq3d {

void EncoderConfig::validate() const {
  for (auto e : volume_shape) {
    if (e == 0 || patch_size == 0 || e % patch_size != 0)
      throw ConfigError("volume extents " + shape_str({volume_shape[0], volume_shape[1], volume_shape[2]}) +
                        " must be divisible by patch size " + std::to_string(patch_size));
  }
  if (num_heads == 0 || embed_dim % num_heads != 0)
    throw ConfigError("embed_dim " + std::to_string(embed_dim) + " must be divisible by num_heads " +
                      std::to_string(num_heads));
  if (num_vit_blocks == 0) throw ConfigError("num_vit_blocks must be >= 1");
  if (mlp_ratio == 0) throw ConfigError("mlp_ratio must be >= 1");
  if (use_cnn_branch) {
    if (cnn_channels.empty()) throw ConfigError("cnn_channels must list at least one stage");
    for (auto c : cnn_channels)
      if (c == 0) throw ConfigError("cnn_channels entries must be positive");
    const std::size_t factor = std::size_t{1} << (cnn_channels.size() - 1);
    for (auto e : volume_shape)
      if (e % factor != 0)
        throw ConfigError("volume extents must be divisible by " + std::to_string(factor) +
                          " for " + std::to_string(cnn_channels.size()) + " CNN stages");
  }
}

Extent3 EncoderConfig::token_grid() const {
  return {volume_shape[0] / patch_size, volume_shape[1] / patch_size, volume_shape[2] / patch_size};
}

std::size_t EncoderConfig::token_count() const {
  const auto g = token_grid();
  return g[0] * g[1] * g[2];
}

std::size_t EncoderConfig::stage_for_block(std::size_t block) const {
  return std::min(block, num_stages() - 1);
}

template <typename T>
GateMap<T> make_gate(const Conv3d<T>& gate_conv, const Tensor<T>& cnn_feat, Extent3 full_shape,
                     Extent3 token_grid) {
  const auto g = sigmoid(gate_conv(cnn_feat));
  auto g_full = trilinear_resize(g, full_shape);
  auto pooled = avgpool_downsample(g_full, token_grid);
  auto g_tokens = reshape(pooled, {pooled.numel()});
  return {g_full, g_tokens};
}

template <typename T>
FusedVitBlock<T> FusedVitBlock<T>::create(ParameterStore<T>& store, const std::string& name,
                                          std::size_t dim, std::size_t heads, std::size_t hidden) {
  FusedVitBlock b;
  b.attn = MultiHeadAttention<T>::create(store, name + ".attn", dim, heads);
  b.ln1 = LayerNorm<T>::create(store, name + ".ln1", dim);
  b.mlp = Mlp<T>::create(store, name + ".mlp", dim, hidden, dim);
  b.ln2 = LayerNorm<T>::create(store, name + ".ln2", dim);
  return b;
}

template <typename T>
Tensor<T> FusedVitBlock<T>::operator()(const Tensor<T>& tokens, const Tensor<T>& g_tokens) const {
  const auto h = ln1(add(tokens, attn(tokens, tokens, g_tokens)));
  return ln2(add(h, mlp(h)));
}

template <typename T>
HybridEncoder<T>::HybridEncoder(const EncoderConfig& cfg, ParameterStore<T>& store) : cfg_(cfg) {
  cfg_.validate();
  if (cfg_.use_cnn_branch) {
    std::size_t in = 1;
    for (std::size_t s = 0; s < cfg_.cnn_channels.size(); ++s) {
      const std::size_t out = cfg_.cnn_channels[s];
      const std::string name = "encoder.cnn.stage" + std::to_string(s);
      CnnStage<T> stage;
      stage.conv1 = Conv3d<T>::create(store, name + ".conv1", in, out, 3, 1);
      stage.conv2 = Conv3d<T>::create(store, name + ".conv2", out, out, 3, 1);
      stage.skip = Conv3d<T>::create(store, name + ".skip", in, out, 1, 1);
      stage.downsample = s > 0;
      stages_.push_back(stage);
      in = out;
    }
    for (std::size_t s = 0; s < cfg_.cnn_channels.size(); ++s)
      gate_convs_.push_back(Conv3d<T>::create(store, "encoder.gate.stage" + std::to_string(s),
                                              cfg_.cnn_channels[s], 1, 1, 1));
  }
  const std::size_t c = cfg_.embed_dim;
  const std::size_t p = cfg_.patch_size;
  patch_embed_ = Linear<T>::create(store, "encoder.vit.patch_embed", p * p * p, c);
  pos_embed_ = store.add("encoder.vit.pos_embed", {cfg_.token_count(), c}, Init::kZeros);
  for (std::size_t b = 0; b < cfg_.num_vit_blocks; ++b)
    blocks_.push_back(FusedVitBlock<T>::create(store, "encoder.vit.block" + std::to_string(b), c,
                                               cfg_.num_heads, cfg_.mlp_ratio * c));
  // One 1x1x1 conv over [tokens ; skip], stored as its two input blocks.
  const std::size_t skip_channels = cfg_.use_cnn_branch ? cfg_.cnn_channels[0] : 0;
  fuse_tokens_ = store.add("encoder.fuse.tokens", {c, c}, Init::kFanInUniform, c + skip_channels);
  if (cfg_.use_cnn_branch)
    fuse_skip_ = store.add("encoder.fuse.skip", {skip_channels, c}, Init::kFanInUniform, c + skip_channels);
  fuse_bias_ = store.add("encoder.fuse.bias", {c}, Init::kZeros);
  if (cfg_.freeze_vit) store.set_frozen("encoder.vit.", true);
}

template <typename T>
void HybridEncoder<T>::check_input(const Tensor<T>& x) const {
  const auto& v = cfg_.volume_shape;
  if (x.shape() != Shape{1, v[0], v[1], v[2]})
    throw ConfigError("encoder input " + shape_str(x.shape()) + " does not match configured volume " +
                      shape_str({1, v[0], v[1], v[2]}));
}

template <typename T>
std::vector<Tensor<T>> HybridEncoder<T>::cnn_branch(const Tensor<T>& x) const {
  if (!cfg_.use_cnn_branch) throw ConfigError("CNN branch is disabled in this configuration");
  check_input(x);
  std::vector<Tensor<T>> features;
  Tensor<T> h = x;
  for (const auto& stage : stages_) {
    if (stage.downsample)
      h = avgpool_downsample(h, {h.dim(1) / 2, h.dim(2) / 2, h.dim(3) / 2});
    const auto inner = relu(stage.conv1(h));
    h = relu(add(stage.conv2(inner), stage.skip(h)));
    features.push_back(h);
  }
  return features;
}

template <typename T>
GateMap<T> HybridEncoder<T>::gate_for_stage(std::size_t stage, const Tensor<T>& stage_features) const {
  return make_gate(gate_convs_.at(stage), stage_features, cfg_.volume_shape, cfg_.token_grid());
}

template <typename T>
GateMap<T> HybridEncoder<T>::constant_gate(T value) const {
  const auto& v = cfg_.volume_shape;
  return {Tensor<T>::full({1, v[0], v[1], v[2]}, value),
          Tensor<T>::full({cfg_.token_count()}, value)};
}

template <typename T>
EncoderOutput<T> HybridEncoder<T>::encode(const Tensor<T>& x, const EncodeOptions& options) const {
  check_input(x);
  EncoderOutput<T> out;
  std::vector<Tensor<T>> cnn;
  if (cfg_.use_cnn_branch) {
    cnn = cnn_branch(x);
    for (std::size_t s = 0; s < cnn.size(); ++s) out.stage_gates.push_back(gate_for_stage(s, cnn[s]));
  }

  auto tokens = add(linear(patchify(x, cfg_.patch_size), patch_embed_.weight, patch_embed_.bias),
                    pos_embed_);
  for (std::size_t b = 0; b < blocks_.size(); ++b) {
    GateMap<T> gate;
    if (options.forced_gate) {
      gate = constant_gate(static_cast<T>(*options.forced_gate));
    } else if (cfg_.use_cnn_branch) {
      gate = out.stage_gates[cfg_.stage_for_block(b)];
    } else {
      gate = constant_gate(T(1));
    }
    if (b == 0) out.gate = gate;
    const bool gated = options.forced_gate.has_value() || (cfg_.use_cnn_branch && cfg_.gating);
    tokens = blocks_[b](tokens, gated ? gate.g_tokens : Tensor<T>{});
  }
  out.tokens = tokens;

  const auto grid = cfg_.token_grid();
  auto& f = out.features;
  f.token_map = reshape(transpose(tokens), {cfg_.embed_dim, grid[0], grid[1], grid[2]});
  if (cfg_.use_cnn_branch) {
    f.skip = cnn[0];
    f.w_skip = fuse_skip_;
  }
  f.w_tokens = fuse_tokens_;
  f.bias = fuse_bias_;
  f.shape = cfg_.volume_shape;
  return out;
}

namespace {

// [C, D, H, W] -> [DHW, C] so a channel-mixing weight applies on the right.
template <typename T>
Tensor<T> voxels_by_channel(const Tensor<T>& x) {
  return transpose(reshape(x, {x.dim(0), x.numel() / x.dim(0)}));
}

}  // namespace

template <typename T>
Tensor<T> VoxelFeatureField<T>::materialize() const {
  auto mixed = matmul(voxels_by_channel(trilinear_resize(token_map, shape)), w_tokens);
  if (skip.defined()) mixed = add(mixed, matmul(voxels_by_channel(skip), w_skip));
  mixed = add(mixed, bias);
  return reshape(transpose(mixed), {channels(), shape[0], shape[1], shape[2]});
}

template <typename T>
Tensor<T> VoxelFeatureField<T>::sample(const Point3& p) const {
  const std::size_t c = channels();
  auto v = matmul(reshape(trilinear_sample(trilinear_resize(token_map, shape), p), {1, c}), w_tokens);
  if (skip.defined())
    v = add(v, matmul(reshape(trilinear_sample(skip, p), {1, skip.dim(0)}), w_skip));
  return reshape(add(v, bias), {c});
}

template <typename T>
Tensor<T> VoxelFeatureField<T>::contract(const Tensor<T>& embeddings) const {
  if (embeddings.rank() != 2 || embeddings.dim(1) != channels())
    throw DimensionError("embeddings " + shape_str(embeddings.shape()) + " vs feature channels " +
                         std::to_string(channels()));
  const std::size_t n = embeddings.dim(0);
  const std::size_t c = channels();
  const std::size_t tokens = token_map.numel() / c;
  // Channel mixing commutes with the (per-channel linear) upsampling.
  const auto coarse = matmul(matmul(embeddings, transpose(w_tokens)), reshape(token_map, {c, tokens}));
  auto logits = trilinear_resize(
      reshape(coarse, {n, token_map.dim(1), token_map.dim(2), token_map.dim(3)}), shape);
  const std::size_t voxels = shape[0] * shape[1] * shape[2];
  if (skip.defined()) {
    const auto s = matmul(matmul(embeddings, transpose(w_skip)), reshape(skip, {skip.dim(0), voxels}));
    logits = add(logits, reshape(s, {n, shape[0], shape[1], shape[2]}));
  }
  const auto offset = matmul(embeddings, reshape(bias, {c, 1}));
  return add(logits, reshape(offset, {n, 1, 1, 1}));
}

template GateMap<float> make_gate(const Conv3d<float>&, const Tensor<float>&, Extent3, Extent3);
template GateMap<double> make_gate(const Conv3d<double>&, const Tensor<double>&, Extent3, Extent3);
template struct FusedVitBlock<float>;
template struct FusedVitBlock<double>;
template struct VoxelFeatureField<float>;
template struct VoxelFeatureField<double>;
template class HybridEncoder<float>;
template class HybridEncoder<double>;

}  // namespace miq3d
