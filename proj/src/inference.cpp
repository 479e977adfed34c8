#include "miq3d/inference.hpp"

#include <algorithm>

#include "miq3d/config.hpp"
#include "miq3d/errors.hpp"

namespace miq3d {

std::vector<PredictedInstance> predict(const Model<float>& model, const Tensor<float>& volume,
                                       const PointPrompt& prompt) {
  NoGradGuard no_grad;
  const auto fwd = model.forward(volume, prompt);
  const auto& pred = fwd.prediction;
  const std::size_t n = pred.n_queries();
  const auto probs = pred.class_probs.data();
  const auto masks = pred.masks.data();
  const Extent3 shape{volume.dim(1), volume.dim(2), volume.dim(3)};
  const std::size_t voxels = shape[0] * shape[1] * shape[2];

  std::vector<std::size_t> kept;
  for (std::size_t q = 0; q < n; ++q)
    if (probs[q * 2 + kLesionClass] > 0.5f) kept.push_back(q);

  std::vector<PredictedInstance> out;
  for (auto q : kept) out.push_back({static_cast<double>(probs[q * 2 + kLesionClass]), q, BinaryMask(shape)});
  for (std::size_t v = 0; v < voxels; ++v) {
    std::size_t best = out.size();
    float best_p = 0.5f;
    for (std::size_t k = 0; k < out.size(); ++k) {
      const float p = masks[out[k].query * voxels + v];
      if (p > best_p) {
        best_p = p;
        best = k;
      }
    }
    if (best < out.size()) out[best].mask.voxels[v] = 1;
  }
  std::erase_if(out, [](const PredictedInstance& p) { return p.mask.empty(); });
  std::stable_sort(out.begin(), out.end(),
                   [](const PredictedInstance& a, const PredictedInstance& b) { return a.score > b.score; });
  return out;
}

std::vector<PredictedInstance> predict(const Model<float>& model, const VolumeSample& sample,
                                       const PointPrompt& prompt) {
  return predict(model, sample.volume<float>(), prompt);
}

BinaryMask union_mask(const std::vector<PredictedInstance>& instances, Extent3 shape) {
  BinaryMask u(shape);
  for (const auto& inst : instances) {
    if (inst.mask.shape != shape) throw DimensionError("instance mask shape mismatch");
    for (std::size_t i = 0; i < u.size(); ++i) u.voxels[i] |= inst.mask.voxels[i];
  }
  return u;
}

EvalSummary evaluate(const Model<float>& model, const std::vector<VolumeSample>& samples, double tau) {
  EvalSummary s;
  const auto& expected = model.config().encoder.volume_shape;
  for (const auto& sample : samples) {
    if (sample.shape != expected)
      throw CompatibilityError("volume shape " + shape_str({sample.shape[0], sample.shape[1], sample.shape[2]}) +
                               " does not match checkpoint volume shape " +
                               shape_str({expected[0], expected[1], expected[2]}));
    VolumeEvaluation ev;
    ev.volume_seed = sample.rng_seed;
    ev.prompt = sample_prompt(sample, eval_prompt_seed(sample.rng_seed)).prompt;
    const auto instances = predict(model, sample, ev.prompt);
    std::vector<BinaryMask> preds;
    for (const auto& inst : instances) preds.push_back(inst.mask);
    ev.report = instance_report(preds, sample.masks, tau);
    ev.count_correct = preds.size() == sample.masks.size();
    s.dice += ev.report.dice;
    s.nsd += ev.report.nsd;
    s.count_acc += ev.count_correct ? 1.0 : 0.0;
    s.volumes.push_back(std::move(ev));
  }
  s.n_volumes = samples.size();
  if (s.n_volumes > 0) {
    const auto n = static_cast<double>(s.n_volumes);
    s.dice /= n;
    s.nsd /= n;
    s.count_acc /= n;
  }
  return s;
}

nlohmann::json to_json(const EvalSummary& s) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& v : s.volumes) {
    nlohmann::json matches = nlohmann::json::array();
    for (const auto& m : v.report.per_instance)
      matches.push_back({{"pred", m.pred}, {"gt", m.gt}, {"dice", m.dice}, {"nsd", m.nsd}});
    rows.push_back({{"volume_seed", v.volume_seed},
                    {"prompt", {v.prompt.p.d, v.prompt.p.h, v.prompt.p.w}},
                    {"dice", v.report.dice},
                    {"nsd", v.report.nsd},
                    {"instance_count_pred", v.report.instance_count_pred},
                    {"instance_count_gt", v.report.instance_count_gt},
                    {"count_correct", v.count_correct},
                    {"per_instance", matches}});
  }
  return {{"dice", s.dice}, {"nsd", s.nsd}, {"count_acc", s.count_acc}, {"n_volumes", s.n_volumes},
          {"volumes", rows}};
}

RobustnessReport prompt_robustness(const Model<float>& model, const VolumeSample& sample,
                                   const std::vector<PointPrompt>& prompts) {
  if (prompts.size() < 2) throw UsageError("prompt robustness needs at least two prompts");
  std::vector<BinaryMask> unions;
  RobustnessReport r;
  for (const auto& p : prompts) {
    const auto inst = predict(model, sample, p);
    r.instance_counts.push_back(inst.size());
    unions.push_back(union_mask(inst, sample.shape));
  }
  const std::size_t n = prompts.size();
  r.agreement.assign(n, std::vector<double>(n, 1.0));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) r.agreement[i][j] = r.agreement[j][i] = dice_coeff(unions[i], unions[j]);
  return r;
}

nlohmann::json to_json(const RobustnessReport& r) {
  return {{"agreement", r.agreement}, {"instance_counts", r.instance_counts}};
}

}  // namespace miq3d
