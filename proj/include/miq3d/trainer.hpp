#pragma once

#include <functional>
#include <optional>
#include <vector>

#include "miq3d/checkpoint.hpp"
#include "miq3d/inference.hpp"

namespace miq3d {

struct TrainLogEntry {
  std::size_t step = 0;  // 1-based
  double loss = 0;       // batch mean of the set loss
  double grad_norm = 0;  // before clipping
};

struct ValidationEntry {
  std::size_t step = 0;
  EvalSummary summary;
};

struct TrainOptions {
  std::function<void(const TrainLogEntry&)> on_step;
  std::function<void(const ValidationEntry&)> on_validation;
  // Evaluate on the training split after the last step.
  bool final_train_eval = true;
  // Continue from this checkpoint (its step counter and optimizer state).
  std::optional<Checkpoint> resume;
  // Stop once this many steps are done (0: run all configured steps). The
  // returned checkpoint can be resumed with the same config.
  std::size_t stop_after = 0;
};

struct TrainResult {
  Checkpoint checkpoint;
  std::vector<TrainLogEntry> loss_log;
  std::vector<ValidationEntry> validation;
  std::optional<EvalSummary> train_metrics;
};

// Volumes generate(seed + i, synth) for i < count.
std::vector<VolumeSample> make_split(const SynthConfig& synth, std::uint64_t seed, std::size_t count);

// Batch element `slot` of step `step` trains on this training-set index.
std::size_t batch_index(const RunConfig& cfg, std::size_t step, std::size_t slot);

// Deterministic for a given config (single thread). NumericError names the
// step, volume and first non-finite tensor when the loss diverges.
TrainResult train(const RunConfig& cfg, const TrainOptions& options = {});

nlohmann::json to_json(const TrainResult& r);

}  // namespace miq3d
