#pragma once

// The full prompt-to-instances pipeline:
//   volume -> hybrid encoder -> seed prototype at the click
//          -> N instance queries -> competitive decoder -> class + mask heads.

#include <memory>
#include <optional>

#include "miq3d/decoder.hpp"
#include "miq3d/encoder.hpp"
#include "miq3d/pciqg.hpp"

namespace miq3d {

struct ModelConfig {
  EncoderConfig encoder;
  DecoderConfig decoder;
  std::size_t num_queries = 10;
  // One query taken straight from the seed prototype; no slots, no decoder.
  bool disable_pciqg_cqrd = false;
  // No CNN branch, no gate parameters, all attention gates equal to 1.
  bool disable_cnn_branch = false;

  void validate() const;  // ConfigError
  EncoderConfig effective_encoder() const;
  std::size_t effective_queries() const { return disable_pciqg_cqrd ? 1 : num_queries; }
};

template <typename T>
struct ForwardResult {
  EncoderOutput<T> encoded;
  SeedPrototype<T> seed;
  InstanceQuerySet<T> queries;  // decoder output (what the heads consume)
  InstancePrediction<T> prediction;
};

template <typename T>
class Model {
 public:
  Model(const ModelConfig& cfg, std::uint64_t init_seed);
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;

  const ModelConfig& config() const { return cfg_; }
  ParameterStore<T>& store() { return store_; }
  const ParameterStore<T>& store() const { return store_; }
  const HybridEncoder<T>& encoder() const { return encoder_; }

  // volume is [1, D, H, W]; PromptError for a click outside the volume.
  ForwardResult<T> forward(const Tensor<T>& volume, const PointPrompt& prompt,
                           const EncodeOptions& options = {}) const;

 private:
  ModelConfig cfg_;
  ParameterStore<T> store_;
  HybridEncoder<T> encoder_;
  std::optional<QueryGenerator<T>> generator_;
  std::optional<QueryDecoder<T>> decoder_;
  PredictionHeads<T> heads_;
};

extern template class Model<float>;
extern template class Model<double>;

}  // namespace miq3d
