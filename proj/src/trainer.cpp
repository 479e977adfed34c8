#include "miq3d/trainer.hpp"

#include <algorithm>
#include <cmath>

#include "miq3d/errors.hpp"
#include "miq3d/rng.hpp"
#include "miq3d/set_loss.hpp"

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace miq3d {

std::vector<VolumeSample> make_split(const SynthConfig& synth, std::uint64_t seed, std::size_t count) {
  std::vector<VolumeSample> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) out.push_back(generate(seed + i, synth));
  return out;
}

std::size_t batch_index(const RunConfig& cfg, std::size_t step, std::size_t slot) {
  // Stateless in `step` so a resumed run draws the same batches.
  Rng rng(mix_seed(batch_seed(cfg), step * cfg.optimizer.batch_size + slot));
  return static_cast<std::size_t>(rng.below(cfg.data.train_count));
}

namespace {

struct TrainItem {
  const VolumeSample* sample;
  Tensor<float> volume;
  GroundTruthSet<float> gts;
};

// Per-step activations are large and short-lived; serving them from mmap
// makes every step pay for fresh page faults.
void keep_buffers_in_heap() {
#if defined(__GLIBC__)
  static const bool done = [] {
    mallopt(M_MMAP_THRESHOLD, 1 << 30);
    mallopt(M_TRIM_THRESHOLD, 1 << 30);
    mallopt(M_TOP_PAD, 64 << 20);
    return true;
  }();
  (void)done;
#endif
}

std::string first_bad_parameter(const ParameterStore<float>& store) {
  for (const auto& p : store.params()) {
    for (float v : p.tensor.data())
      if (!std::isfinite(v)) return "parameter " + p.name;
    if (p.tensor.has_grad())
      for (float g : p.tensor.grad())
        if (!std::isfinite(g)) return "gradient of " + p.name;
  }
  return "";
}

}  // namespace

TrainResult train(const RunConfig& cfg, const TrainOptions& options) {
  cfg.validate();
  keep_buffers_in_heap();
  Model<float> model(cfg.model, init_seed(cfg));
  AdamState state;
  std::size_t start = 0;
  if (options.resume) {
    if (to_ini(options.resume->config) != to_ini(cfg))
      throw CompatibilityError("resume checkpoint was produced by a different configuration");
    restore(model, *options.resume);
    state = options.resume->optimizer;
    start = options.resume->step;
  }
  const Adam adam(cfg.optimizer);

  const auto train_set = make_split(cfg.data.synth, cfg.data.train_seed, cfg.data.train_count);
  const auto val_set = make_split(cfg.data.synth, cfg.data.val_seed, cfg.data.val_count);
  std::vector<TrainItem> items;
  for (const auto& s : train_set) {
    TrainItem it{&s, s.volume<float>(), {}};
    for (const auto& m : s.masks) it.gts.masks.push_back(m.to_tensor<float>());
    items.push_back(std::move(it));
  }

  TrainResult result;
  const std::size_t batch = cfg.optimizer.batch_size;
  const float inv_batch = 1.0f / static_cast<float>(batch);
  // Without PC-IQG and CQRD the model is a single-instance segmenter: its one
  // query learns the clicked instance.
  const bool single_instance = cfg.model.disable_pciqg_cqrd;
  const std::size_t end =
      options.stop_after > 0 ? std::min(options.stop_after, cfg.optimizer.steps) : cfg.optimizer.steps;
  for (std::size_t step = start; step < end; ++step) {
    model.store().zero_grad();
    double loss_sum = 0;
    for (std::size_t slot = 0; slot < batch; ++slot) {
      const auto& item = items[batch_index(cfg, step, slot)];
      try {
        const auto sp = sample_prompt(*item.sample, prompt_seed(cfg, step, slot));
        const auto fwd = model.forward(item.volume, sp.prompt);
        const auto loss =
            single_instance
                ? total_loss(fwd.prediction, GroundTruthSet<float>{{item.gts.masks[sp.instance]}}, cfg.loss)
                : total_loss(fwd.prediction, item.gts, cfg.loss);
        const double value = loss.loss.item();
        if (!std::isfinite(value)) throw NumericError("non-finite loss value");
        scale(loss.loss, inv_batch).backward();
        loss_sum += value;
      } catch (const NumericError& e) {
        const auto bad = first_bad_parameter(model.store());
        throw NumericError("training diverged at step " + std::to_string(step + 1) + " on volume seed " +
                           std::to_string(item.sample->rng_seed) + ": " + e.what() +
                           (bad.empty() ? "" : " (first non-finite tensor: " + bad + ")"));
      }
    }
    double norm = 0;
    try {
      norm = adam.step(model.store(), state);
    } catch (const NumericError& e) {
      throw NumericError("training diverged at step " + std::to_string(step + 1) + ": " + e.what());
    }
    TrainLogEntry entry{step + 1, loss_sum / static_cast<double>(batch), norm};
    result.loss_log.push_back(entry);
    if (options.on_step) options.on_step(entry);

    if (cfg.val_interval > 0 && !val_set.empty() && (step + 1) % cfg.val_interval == 0) {
      ValidationEntry v{step + 1, evaluate(model, val_set)};
      if (options.on_validation) options.on_validation(v);
      result.validation.push_back(std::move(v));
    }
  }
  if (options.final_train_eval) result.train_metrics = evaluate(model, train_set);
  result.checkpoint = capture(cfg, model, state, std::max(start, end));
  return result;
}

nlohmann::json to_json(const TrainResult& r) {
  nlohmann::json losses = nlohmann::json::array();
  for (const auto& e : r.loss_log) losses.push_back({{"step", e.step}, {"loss", e.loss}, {"grad_norm", e.grad_norm}});
  nlohmann::json val = nlohmann::json::array();
  for (const auto& v : r.validation) {
    auto s = to_json(v.summary);
    s.erase("volumes");
    s["step"] = v.step;
    val.push_back(s);
  }
  nlohmann::json j = {{"loss", losses}, {"validation", val}, {"steps", r.checkpoint.step}};
  if (r.train_metrics) j["train_metrics"] = to_json(*r.train_metrics);
  return j;
}

}  // namespace miq3d
