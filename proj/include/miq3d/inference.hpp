#pragma once

#include <nlohmann/json.hpp>
#include <vector>

#include "miq3d/metrics.hpp"
#include "miq3d/model.hpp"
#include "miq3d/synthdata.hpp"

namespace miq3d {

struct PredictedInstance {
  double score = 0;   // P(lesion) of the query
  std::size_t query = 0;
  BinaryMask mask;
};

// Keeps queries with P(lesion) > 0.5, binarizes their masks at > 0.5 (a
// probability of exactly 0.5 stays background), gives each contested voxel to
// the instance with the highest mask probability (lower query index on ties)
// and drops instances left empty. Sorted by descending score.
std::vector<PredictedInstance> predict(const Model<float>& model, const Tensor<float>& volume,
                                       const PointPrompt& prompt);
std::vector<PredictedInstance> predict(const Model<float>& model, const VolumeSample& sample,
                                       const PointPrompt& prompt);

BinaryMask union_mask(const std::vector<PredictedInstance>& instances, Extent3 shape);

struct VolumeEvaluation {
  std::uint64_t volume_seed = 0;
  PointPrompt prompt;
  MetricReport report;
  bool count_correct = false;
};

struct EvalSummary {
  double dice = 0;
  double nsd = 0;
  double count_acc = 0;
  std::size_t n_volumes = 0;
  std::vector<VolumeEvaluation> volumes;
};

// One prompt per volume, drawn with eval_prompt_seed(volume seed).
EvalSummary evaluate(const Model<float>& model, const std::vector<VolumeSample>& samples,
                     double tau = 1.0);
nlohmann::json to_json(const EvalSummary& s);

struct RobustnessReport {
  std::vector<std::vector<double>> agreement;  // dice of union masks, symmetric
  std::vector<std::size_t> instance_counts;
};

// UsageError for fewer than two prompts.
RobustnessReport prompt_robustness(const Model<float>& model, const VolumeSample& sample,
                                   const std::vector<PointPrompt>& prompts);
nlohmann::json to_json(const RobustnessReport& r);

}  // namespace miq3d
