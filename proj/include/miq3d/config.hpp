#pragma once

// Run configuration and its INI representation.
//
//   [model]     num_queries, disable_pciqg_cqrd, disable_cnn_branch
//   [encoder]   volume_shape = 32,32,32   patch_size  embed_dim  num_heads
//               num_vit_blocks  cnn_channels = 8,16,32  mlp_ratio  freeze_vit  gating
//   [decoder]   num_layers  num_heads  ffn_hidden  self_attention
//   [loss]      lambda_cls  lambda_dice  lambda_bce  no_object_weight  dice_eps
//   [optimizer] lr  beta1  beta2  eps  grad_clip  steps  batch_size
//   [data]      shape  max_instances  radius_min  radius_max  noise_sigma  blur_sigma
//               intensity_offset  train_seed  train_count  val_seed  val_count
//               test_seed  test_count
//   [run]       rng_seed  log_interval  val_interval  checkpoint
//
// Every key is optional; missing keys keep their defaults. Unknown sections or
// keys are rejected so typos do not silently fall back to defaults.

#include <filesystem>
#include <string>

#include "miq3d/model.hpp"
#include "miq3d/set_loss.hpp"
#include "miq3d/synthdata.hpp"

namespace miq3d {

struct OptimizerConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double grad_clip = 1.0;  // global L2 norm; 0 disables clipping
  std::size_t steps = 2000;
  std::size_t batch_size = 2;
};

// Datasets are seed ranges: volume i of a split is generate(seed + i, synth).
struct DataConfig {
  SynthConfig synth;
  std::uint64_t train_seed = 1000;
  std::size_t train_count = 8;
  std::uint64_t val_seed = 500000;
  std::size_t val_count = 0;
  std::uint64_t test_seed = 900000;
  std::size_t test_count = 0;
};

struct RunConfig {
  ModelConfig model;
  LossWeights loss;
  OptimizerConfig optimizer;
  DataConfig data;
  std::uint64_t rng_seed = 0;
  std::size_t log_interval = 50;
  std::size_t val_interval = 0;  // 0: no periodic validation
  std::string checkpoint_path;

  void validate() const;  // ConfigError
};

RunConfig parse_run_config(const std::string& ini_text);
RunConfig load_run_config(const std::filesystem::path& path);
// Canonical text; parse_run_config(to_ini(c)) reproduces c exactly.
std::string to_ini(const RunConfig& cfg);

// Seeds derived from rng_seed for the independent random streams of a run.
std::uint64_t init_seed(const RunConfig& cfg);
std::uint64_t batch_seed(const RunConfig& cfg);
std::uint64_t prompt_seed(const RunConfig& cfg, std::size_t step, std::size_t slot);
// Fixed per-volume prompt used by evaluation and the train-set metric log.
std::uint64_t eval_prompt_seed(std::uint64_t volume_seed);

}  // namespace miq3d
