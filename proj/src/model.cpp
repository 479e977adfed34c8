#include "miq3d/model.hpp"

#include "miq3d/errors.hpp"

namespace miq3d {

void ModelConfig::validate() const {
  effective_encoder().validate();
  if (num_queries == 0) throw ConfigError("num_queries must be >= 1");
  if (!disable_pciqg_cqrd) decoder.validate(encoder.embed_dim);
}

EncoderConfig ModelConfig::effective_encoder() const {
  EncoderConfig e = encoder;
  if (disable_cnn_branch) e.use_cnn_branch = false;
  return e;
}

namespace {

ModelConfig validated(const ModelConfig& cfg) {
  cfg.validate();
  return cfg;
}

}  // namespace

// Member order fixes parameter registration order: encoder, pciqg, cqrd, heads.
template <typename T>
Model<T>::Model(const ModelConfig& cfg, std::uint64_t init_seed)
    : cfg_(validated(cfg)),
      store_(init_seed),
      encoder_(cfg_.effective_encoder(), store_),
      generator_(cfg_.disable_pciqg_cqrd
                     ? std::nullopt
                     : std::optional<QueryGenerator<T>>(std::in_place, store_, cfg_.num_queries,
                                                        cfg_.encoder.embed_dim)),
      decoder_(cfg_.disable_pciqg_cqrd ? std::nullopt
                                       : std::optional<QueryDecoder<T>>(
                                             std::in_place, store_, cfg_.encoder.embed_dim, cfg_.decoder)),
      heads_(store_, cfg_.encoder.embed_dim) {}

template <typename T>
ForwardResult<T> Model<T>::forward(const Tensor<T>& volume, const PointPrompt& prompt,
                                   const EncodeOptions& options) const {
  const auto& v = cfg_.encoder.volume_shape;
  const double c[3] = {prompt.p.d, prompt.p.h, prompt.p.w};
  for (int a = 0; a < 3; ++a)
    if (!(c[a] >= 0.0 && c[a] <= static_cast<double>(v[static_cast<std::size_t>(a)] - 1)))
      throw PromptError("prompt (" + std::to_string(c[0]) + ", " + std::to_string(c[1]) + ", " +
                        std::to_string(c[2]) + ") lies outside the volume " +
                        shape_str({v[0], v[1], v[2]}));
  ForwardResult<T> r;
  r.encoded = encoder_.encode(volume, options);
  r.seed = {r.encoded.features.sample(prompt.p)};
  if (generator_) {
    const auto q0 = generator_->generate(r.seed);
    r.queries = {decoder_->decode(q0, r.encoded.tokens)};
  } else {
    r.queries = {reshape(r.seed.v_seed, {1, cfg_.encoder.embed_dim})};
  }
  r.prediction = heads_.predict(r.queries.queries, r.encoded.features);
  return r;
}

template class Model<float>;
template class Model<double>;

}  // namespace miq3d
