#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "miq3d/checkpoint.hpp"
#include "miq3d/config.hpp"
#include "miq3d/errors.hpp"
#include "miq3d/inference.hpp"
#include "miq3d/optimizer.hpp"
#include "miq3d/trainer.hpp"

using namespace miq3d;
namespace fs = std::filesystem;

namespace {

// Small enough that a few training steps take well under a second.
RunConfig tiny_config() {
  RunConfig c;
  auto& e = c.model.encoder;
  e.volume_shape = {16, 16, 16};
  e.patch_size = 4;
  e.embed_dim = 16;
  e.num_heads = 2;
  e.num_vit_blocks = 2;
  e.cnn_channels = {4, 8};
  c.model.decoder = DecoderConfig{1, 2, 32, true};
  c.model.num_queries = 4;
  c.data.synth.shape = {16, 16, 16};
  c.data.synth.max_instances = 2;
  c.data.synth.radius_min = 2;
  c.data.synth.radius_max = 4;
  c.data.train_count = 2;
  c.optimizer.steps = 10;
  c.optimizer.batch_size = 2;
  c.optimizer.lr = 3e-3;
  c.rng_seed = 5;
  return c;
}

const TrainResult& trained_tiny() {
  static const TrainResult r = [] {
    auto cfg = tiny_config();
    cfg.optimizer.steps = 60;
    return train(cfg);
  }();
  return r;
}

std::string ckpt_bytes(const TrainResult& r) { return serialize(r.checkpoint); }

}  // namespace

TEST_CASE("config INI roundtrip is exact") {
  auto c = tiny_config();
  c.model.disable_cnn_branch = true;
  c.model.encoder.freeze_vit = true;
  c.loss.lambda_bce = 0.1 + 0.2;  // not exactly representable in short decimal
  c.optimizer.beta2 = 0.98765432101234;
  c.data.val_count = 3;
  c.checkpoint_path = "out/model.ckpt";
  const auto text = to_ini(c);
  const auto back = parse_run_config(text);
  CHECK(to_ini(back) == text);
  CHECK(back.loss.lambda_bce == c.loss.lambda_bce);
  CHECK(back.optimizer.beta2 == c.optimizer.beta2);
  CHECK(back.model.disable_cnn_branch);
  CHECK(back.model.encoder.cnn_channels == c.model.encoder.cnn_channels);
  CHECK(back.checkpoint_path == c.checkpoint_path);
}

TEST_CASE("config defaults and partial files") {
  const auto d = parse_run_config("");
  CHECK(to_ini(d) == to_ini(RunConfig{}));
  const auto p = parse_run_config("[optimizer]\nsteps = 7\n[model]\ndisable_pciqg_cqrd = true\n");
  CHECK(p.optimizer.steps == 7);
  CHECK(p.model.disable_pciqg_cqrd);
  CHECK(p.model.effective_queries() == 1);
}

TEST_CASE("config errors") {
  CHECK_THROWS_AS(parse_run_config("[bogus]\nx = 1\n"), ConfigError);
  CHECK_THROWS_AS(parse_run_config("[optimizer]\nstepz = 1\n"), ConfigError);
  CHECK_THROWS_AS(parse_run_config("[optimizer]\nsteps = -3\n"), ConfigError);
  CHECK_THROWS_AS(parse_run_config("[optimizer]\nlr = fast\n"), ConfigError);
  CHECK_THROWS_AS(parse_run_config("[optimizer]\nlr = 0\n"), ConfigError);
  CHECK_THROWS_AS(parse_run_config("[model]\nnum_queries = 2\n"), ConfigError);
  CHECK_THROWS_AS(parse_run_config("[data]\nshape = 16,16,16\n"), ConfigError);
  CHECK_THROWS_AS(parse_run_config("[encoder]\nvolume_shape = 16,16\n"), ConfigError);
  CHECK_THROWS_AS(load_run_config("/nonexistent/run.ini"), ConfigError);
}

TEST_CASE("seed streams are distinct and reproducible") {
  const auto c = tiny_config();
  CHECK(init_seed(c) != batch_seed(c));
  CHECK(prompt_seed(c, 3, 0) != prompt_seed(c, 3, 1));
  CHECK(prompt_seed(c, 3, 1) == prompt_seed(tiny_config(), 3, 1));
  for (std::size_t s = 0; s < 50; ++s) CHECK(batch_index(c, s, 1) < c.data.train_count);
}

TEST_CASE("adam clips by the global norm and skips frozen parameters") {
  ParameterStore<float> store(1);
  auto a = store.add("a", {2}, Init::kOnes);
  auto b = store.add("b", {1}, Init::kOnes);
  store.set_frozen("b", true);
  auto ga = a.mutable_grad();
  ga[0] = 3;
  ga[1] = 4;
  b.mutable_grad()[0] = 100;
  OptimizerConfig oc;
  oc.lr = 0.1;
  oc.grad_clip = 1.0;
  AdamState st;
  CHECK(global_grad_norm(store) == doctest::Approx(5.0));
  const double norm = Adam(oc).step(store, st);
  CHECK(norm == doctest::Approx(5.0));
  CHECK(st.t == 1);
  // First Adam step moves each coordinate by ~lr regardless of scale.
  CHECK(a.at(0) == doctest::Approx(0.9).epsilon(1e-4));
  CHECK(a.at(1) == doctest::Approx(0.9).epsilon(1e-4));
  CHECK(b.at(0) == 1.0f);
  a.mutable_grad()[0] = NAN;
  CHECK_THROWS_AS(Adam(oc).step(store, st), NumericError);
}

TEST_CASE("a 10-step smoke run logs 10 finite losses") {
  const auto r = train(tiny_config());
  REQUIRE(r.loss_log.size() == 10);
  for (std::size_t i = 0; i < 10; ++i) {
    CHECK(r.loss_log[i].step == i + 1);
    CHECK(std::isfinite(r.loss_log[i].loss));
    CHECK(std::isfinite(r.loss_log[i].grad_norm));
  }
  CHECK(r.checkpoint.step == 10);
  REQUIRE(r.train_metrics.has_value());
  CHECK(r.train_metrics->n_volumes == 2);
  const auto j = to_json(r);
  CHECK(j["loss"].size() == 10);
  CHECK(j.contains("train_metrics"));
}

TEST_CASE("training is deterministic and resumable bit for bit") {
  TrainOptions quiet;
  quiet.final_train_eval = false;
  const auto a = train(tiny_config(), quiet);
  const auto b = train(tiny_config(), quiet);
  CHECK(ckpt_bytes(a) == ckpt_bytes(b));

  auto first = quiet;
  first.stop_after = 4;
  const auto half = train(tiny_config(), first);
  CHECK(half.checkpoint.step == 4);
  CHECK(half.loss_log.size() == 4);
  auto second = quiet;
  second.resume = deserialize(serialize(half.checkpoint));
  const auto rest = train(tiny_config(), second);
  CHECK(rest.loss_log.size() == 6);
  CHECK(rest.loss_log.front().step == 5);
  CHECK(rest.loss_log.back().loss == a.loss_log.back().loss);
  CHECK(ckpt_bytes(rest) == ckpt_bytes(a));

  auto other = tiny_config();
  other.rng_seed = 6;
  CHECK(ckpt_bytes(train(other, quiet)) != ckpt_bytes(a));
  auto mismatched = second;
  other.optimizer.lr = 1e-2;
  CHECK_THROWS_AS(train(other, mismatched), CompatibilityError);
}

TEST_CASE("checkpoint roundtrip preserves forward outputs bitwise") {
  const auto& r = trained_tiny();
  const auto dir = fs::temp_directory_path() / "miq3d_harness_ckpt";
  fs::create_directories(dir);
  const auto path = dir / "m.ckpt";
  save_checkpoint(path, r.checkpoint);
  const auto loaded = load_checkpoint(path);
  CHECK(serialize(loaded) == serialize(r.checkpoint));
  CHECK(loaded.step == r.checkpoint.step);
  CHECK(loaded.params == r.checkpoint.params);

  const auto m1 = build_model(r.checkpoint);
  const auto m2 = build_model(loaded);
  const auto s = generate(r.checkpoint.config.data.train_seed, r.checkpoint.config.data.synth);
  const auto p = sample_prompt(s, 1).prompt;
  NoGradGuard ng;
  const auto f1 = m1->forward(s.volume<float>(), p).prediction;
  const auto f2 = m2->forward(s.volume<float>(), p).prediction;
  CHECK(std::equal(f1.mask_logits.data().begin(), f1.mask_logits.data().end(), f2.mask_logits.data().begin()));
  CHECK(std::equal(f1.class_logits.data().begin(), f1.class_logits.data().end(), f2.class_logits.data().begin()));

  std::string bytes = serialize(loaded);
  CHECK_THROWS_AS(deserialize(bytes.substr(0, bytes.size() / 2)), FormatError);
  bytes[0] = 'X';
  CHECK_THROWS_AS(deserialize(bytes), FormatError);

  auto cfg = r.checkpoint.config;
  cfg.model.disable_cnn_branch = true;
  Model<float> other(cfg.model, 1);
  CHECK_THROWS_AS(restore(other, r.checkpoint), CompatibilityError);
  fs::remove_all(dir);
}

TEST_CASE("ablation flags remove exactly their modules") {
  auto count = [](const ModelConfig& mc, const std::string& prefix) {
    Model<float> m(mc, 1);
    std::size_t n = 0;
    for (const auto& p : m.store().params()) n += p.name.rfind(prefix, 0) == 0;
    return n;
  };
  const auto full = tiny_config().model;
  auto no_cnn = full;
  no_cnn.disable_cnn_branch = true;
  auto no_q = full;
  no_q.disable_pciqg_cqrd = true;
  CHECK(count(full, "encoder.cnn.") > 0);
  CHECK(count(full, "encoder.gate.") > 0);
  CHECK(count(full, "pciqg.") > 0);
  CHECK(count(full, "cqrd.") > 0);
  CHECK(count(no_cnn, "encoder.cnn.") == 0);
  CHECK(count(no_cnn, "encoder.gate.") == 0);
  CHECK(count(no_cnn, "pciqg.") == count(full, "pciqg."));
  CHECK(count(no_q, "pciqg.") == 0);
  CHECK(count(no_q, "cqrd.") == 0);
  CHECK(count(no_q, "encoder.cnn.") == count(full, "encoder.cnn."));

  Model<float> single(no_q, 3);
  const auto s = generate(1, SynthConfig{{16, 16, 16}, 2, 2, 4});
  const auto fwd = single.forward(s.volume<float>(), sample_prompt(s, 0).prompt);
  CHECK(fwd.prediction.n_queries() == 1);
  CHECK(predict(single, s, sample_prompt(s, 0).prompt).size() <= 1);

  // The single query is trained on the clicked instance, so more instances than queries is fine.
  auto cfg = tiny_config();
  cfg.model = no_q;
  cfg.optimizer.steps = 3;
  TrainOptions quiet;
  quiet.final_train_eval = false;
  CHECK(train(cfg, quiet).loss_log.size() == 3);
}

TEST_CASE("predictions are disjoint, nonempty and sorted by score") {
  const auto& r = trained_tiny();
  const auto model = build_model(r.checkpoint);
  const auto& cfg = r.checkpoint.config;
  for (std::size_t i = 0; i < cfg.data.train_count; ++i) {
    const auto s = generate(cfg.data.train_seed + i, cfg.data.synth);
    const auto preds = predict(*model, s, sample_prompt(s, 2).prompt);
    std::vector<int> owner(16 * 16 * 16, 0);
    for (std::size_t k = 0; k < preds.size(); ++k) {
      CHECK(preds[k].score > 0.5);
      CHECK_FALSE(preds[k].mask.empty());
      if (k > 0) CHECK(preds[k - 1].score >= preds[k].score);
      for (std::size_t v = 0; v < owner.size(); ++v) owner[v] += preds[k].mask.voxels[v];
    }
    for (int o : owner) CHECK(o <= 1);
    CHECK(union_mask(preds, s.shape).count() == static_cast<std::size_t>(std::count(owner.begin(), owner.end(), 1)));
  }
  CHECK_THROWS_AS(predict(*model, generate(1, cfg.data.synth), PointPrompt{{16, 0, 0}}), PromptError);
}

TEST_CASE("evaluation matches the metrics logged at the end of training") {
  const auto& r = trained_tiny();
  const auto model = build_model(r.checkpoint);
  const auto& cfg = r.checkpoint.config;
  const auto e = evaluate(*model, make_split(cfg.data.synth, cfg.data.train_seed, cfg.data.train_count));
  REQUIRE(r.train_metrics.has_value());
  CHECK(std::abs(e.dice - r.train_metrics->dice) < 1e-6);
  CHECK(std::abs(e.nsd - r.train_metrics->nsd) < 1e-6);
  CHECK(e.count_acc == r.train_metrics->count_acc);
  const auto j = to_json(e);
  for (const char* key : {"dice", "nsd", "count_acc", "n_volumes"}) CHECK(j.contains(key));
  CHECK(j["n_volumes"] == 2);
  CHECK_THROWS_AS(evaluate(*model, {generate(1, SynthConfig{})}), CompatibilityError);
}

TEST_CASE("prompt robustness report") {
  const auto& r = trained_tiny();
  const auto model = build_model(r.checkpoint);
  const auto s = generate(r.checkpoint.config.data.train_seed, r.checkpoint.config.data.synth);
  const auto p0 = sample_prompt(s, 0).prompt;
  const auto p1 = sample_prompt(s, 7).prompt;
  const auto rep = prompt_robustness(*model, s, {p0, p1, p0});
  REQUIRE(rep.agreement.size() == 3);
  CHECK(rep.instance_counts.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(rep.agreement[i][i] == 1.0);
    for (std::size_t j = 0; j < 3; ++j) CHECK(rep.agreement[i][j] == rep.agreement[j][i]);
  }
  CHECK(rep.agreement[0][2] == 1.0);
  CHECK(to_json(rep).contains("agreement"));
  CHECK_THROWS_AS(prompt_robustness(*model, s, {p0}), UsageError);
}
