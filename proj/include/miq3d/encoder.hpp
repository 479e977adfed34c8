#pragma once

// Dual-branch hybrid encoder: a residual CNN branch produces spatial gating
// maps that scale the key columns of the attention scores inside each ViT
// block; the fused token grid is upsampled, joined with the full-resolution
// CNN features and projected (1x1x1) to the per-voxel feature map.

#include <optional>
#include <vector>

#include "miq3d/nn.hpp"

namespace miq3d {

struct EncoderConfig {
  Extent3 volume_shape{32, 32, 32};
  std::size_t patch_size = 8;
  std::size_t embed_dim = 64;
  std::size_t num_heads = 4;
  std::size_t num_vit_blocks = 4;
  std::vector<std::size_t> cnn_channels{8, 16, 32};
  std::size_t mlp_ratio = 2;
  bool freeze_vit = false;
  // false: the "w/o CNN branch" ablation (no cnn.* / gate.* parameters, gates = 1).
  bool use_cnn_branch = true;
  // false: CNN features still reach the voxel map but attention is ungated.
  bool gating = true;

  void validate() const;  // throws ConfigError
  Extent3 token_grid() const;
  std::size_t token_count() const;
  std::size_t num_stages() const { return use_cnn_branch ? cnn_channels.size() : 0; }
  // ViT block -> CNN stage whose gate it consumes.
  std::size_t stage_for_block(std::size_t block) const;
};

template <typename T>
struct GateMap {
  Tensor<T> g_full;    // [1, D, H, W], values in (0, 1)
  Tensor<T> g_tokens;  // [T], block means of g_full in token order
};

// Per-voxel feature map in factored form:
//   F = Wt^T up(token_map) + Ws^T skip + b          [C, D, H, W]
// where up() is trilinear_resize to full resolution. Both consumers of F are
// linear in it, so neither needs F itself: a point sample interpolates the
// factors, and the mask contraction mixes channels first and then upsamples
// N query channels instead of C feature channels.
template <typename T>
struct VoxelFeatureField {
  Tensor<T> token_map;  // [C, g0, g1, g2]
  Tensor<T> skip;       // [C0, D, H, W]; undefined without the CNN branch
  Tensor<T> w_tokens;   // [C, C]  (in, out)
  Tensor<T> w_skip;     // [C0, C]; undefined without the CNN branch
  Tensor<T> bias;       // [C]
  Extent3 shape{0, 0, 0};

  std::size_t channels() const { return bias.numel(); }
  Tensor<T> materialize() const;
  // == trilinear_sample(materialize(), p); PromptError outside the volume.
  Tensor<T> sample(const Point3& p) const;
  // embeddings [N, C] -> [N, D, H, W], == mask_dot_product(embeddings, materialize()).
  Tensor<T> contract(const Tensor<T>& embeddings) const;
};

template <typename T>
struct EncoderOutput {
  Tensor<T> tokens;  // [T, C]
  VoxelFeatureField<T> features;
  GateMap<T> gate;           // gate used by the first ViT block
  std::vector<GateMap<T>> stage_gates;
};

struct EncodeOptions {
  // Replaces every gate with this constant (test hook for neutral gating).
  std::optional<double> forced_gate;
};

template <typename T>
GateMap<T> make_gate(const Conv3d<T>& gate_conv, const Tensor<T>& cnn_feat, Extent3 full_shape,
                     Extent3 token_grid);

template <typename T>
struct FusedVitBlock {
  MultiHeadAttention<T> attn;
  LayerNorm<T> ln1;
  Mlp<T> mlp;
  LayerNorm<T> ln2;

  static FusedVitBlock create(ParameterStore<T>& store, const std::string& name, std::size_t dim,
                              std::size_t heads, std::size_t hidden);
  // g_tokens undefined -> ungated attention.
  Tensor<T> operator()(const Tensor<T>& tokens, const Tensor<T>& g_tokens) const;
};

template <typename T>
struct CnnStage {
  Conv3d<T> conv1;
  Conv3d<T> conv2;
  Conv3d<T> skip;
  bool downsample = false;
};

template <typename T>
class HybridEncoder {
 public:
  HybridEncoder(const EncoderConfig& cfg, ParameterStore<T>& store);

  const EncoderConfig& config() const { return cfg_; }
  // Stage features [C_s, D/2^s, H/2^s, W/2^s].
  std::vector<Tensor<T>> cnn_branch(const Tensor<T>& x) const;
  GateMap<T> gate_for_stage(std::size_t stage, const Tensor<T>& stage_features) const;
  const FusedVitBlock<T>& block(std::size_t i) const { return blocks_.at(i); }
  EncoderOutput<T> encode(const Tensor<T>& x, const EncodeOptions& options = {}) const;

 private:
  void check_input(const Tensor<T>& x) const;
  GateMap<T> constant_gate(T value) const;

  EncoderConfig cfg_;
  std::vector<CnnStage<T>> stages_;
  std::vector<Conv3d<T>> gate_convs_;
  Linear<T> patch_embed_;
  Tensor<T> pos_embed_;
  std::vector<FusedVitBlock<T>> blocks_;
  Tensor<T> fuse_tokens_;
  Tensor<T> fuse_skip_;
  Tensor<T> fuse_bias_;
};

extern template struct VoxelFeatureField<float>;
extern template struct VoxelFeatureField<double>;
extern template class HybridEncoder<float>;
extern template class HybridEncoder<double>;

}  // namespace miq3d
