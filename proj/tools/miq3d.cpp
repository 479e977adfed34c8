// Command-line front end: data generation, training, evaluation, prediction,
// prompt robustness and the HTTP service.

#include <CLI11.hpp>
#include <fmt/format.h>

#include <chrono>
#include <fstream>
#include <iostream>
#include <sstream>

#include "miq3d/checkpoint.hpp"
#include "miq3d/errors.hpp"
#include "miq3d/inference.hpp"
#include "miq3d/kernels/kernels.hpp"
#include "miq3d/rle.hpp"
#include "miq3d/service.hpp"
#include "miq3d/trainer.hpp"

namespace {

using namespace miq3d;
using nlohmann::json;

Point3 parse_point(const std::string& text) {
  std::stringstream ss(text);
  std::string part;
  std::vector<double> v;
  while (std::getline(ss, part, ',')) {
    std::size_t pos = 0;
    try {
      v.push_back(std::stod(part, &pos));
    } catch (const std::exception&) {
      pos = 0;
    }
    if (pos == 0) throw UsageError("bad coordinate '" + part + "' in point '" + text + "'");
  }
  if (v.size() != 3) throw UsageError("point must be d,h,w, got '" + text + "'");
  return {v[0], v[1], v[2]};
}

void write_json(const std::string& path, const json& j) {
  if (path.empty() || path == "-") {
    std::cout << j.dump(2) << '\n';
    return;
  }
  std::ofstream out(path);
  if (!out) throw UsageError("cannot write " + path);
  out << j.dump(2) << '\n';
}

json instances_json(const std::vector<PredictedInstance>& instances) {
  json list = json::array();
  for (const auto& inst : instances)
    list.push_back({{"score", inst.score}, {"query", inst.query}, {"voxels", inst.mask.count()},
                    {"rle", rle_encode(inst.mask)}});
  return list;
}

std::vector<VolumeSample> read_dir(const std::filesystem::path& dir) {
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::directory_iterator(dir))
    if (e.path().extension() == ".vol") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  std::vector<VolumeSample> out;
  for (const auto& f : files) out.push_back(read_vol(f));
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"miq3d: single-point prompted multi-instance 3D segmentation"};
  app.require_subcommand(1);
  std::string isa;
  app.add_option("--isa", isa, "kernel variant: scalar or avx2 (default: best available)");

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "write synthetic .vol volumes");
  std::string gen_out;
  std::size_t gen_count = 8;
  std::uint64_t gen_seed = 1000;
  SynthConfig synth;
  std::vector<std::size_t> gen_shape{32, 32, 32};
  gen->add_option("--out", gen_out, "output directory")->required();
  gen->add_option("--count", gen_count, "number of volumes")->required();
  gen->add_option("--seed", gen_seed, "seed of the first volume (volume i uses seed+i)")->required();
  gen->add_option("--shape", gen_shape, "D H W")->expected(3);
  gen->add_option("--max-instances", synth.max_instances);
  gen->add_option("--radius-min", synth.radius_min);
  gen->add_option("--radius-max", synth.radius_max);
  gen->add_option("--noise-sigma", synth.noise_sigma);
  gen->add_option("--blur-sigma", synth.blur_sigma);
  gen->add_option("--intensity-offset", synth.intensity_offset);

  // train
  auto* tr = app.add_subcommand("train", "train a model from a config file");
  std::string tr_config, tr_out, tr_log;
  tr->add_option("--config", tr_config, "INI run configuration")->required();
  tr->add_option("--out", tr_out, "checkpoint path (default: [run] checkpoint)");
  tr->add_option("--log", tr_log, "JSON training log (default: <checkpoint>.log.json)");

  // eval
  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint on a directory of volumes");
  std::string ev_ckpt, ev_data, ev_json;
  double ev_tau = 1.0;
  ev->add_option("--ckpt", ev_ckpt)->required();
  ev->add_option("--data", ev_data)->required();
  ev->add_option("--json", ev_json, "output path ('-' for stdout)")->required();
  ev->add_option("--tau", ev_tau, "NSD tolerance in voxels");

  // predict
  auto* pr = app.add_subcommand("predict", "segment all instances from one point prompt");
  std::string pr_ckpt, pr_vol, pr_point, pr_json;
  pr->add_option("--ckpt", pr_ckpt)->required();
  pr->add_option("--vol", pr_vol)->required();
  pr->add_option("--point", pr_point, "d,h,w")->required();
  pr->add_option("--json", pr_json, "output path ('-' for stdout)")->required();

  // robustness
  auto* rb = app.add_subcommand("robustness", "pairwise agreement across point prompts");
  std::string rb_ckpt, rb_vol, rb_points, rb_json;
  rb->add_option("--ckpt", rb_ckpt)->required();
  rb->add_option("--vol", rb_vol)->required();
  rb->add_option("--points", rb_points, "\"d,h,w;d,h,w;...\"")->required();
  rb->add_option("--json", rb_json, "output path ('-' for stdout)")->required();

  // serve
  auto* sv = app.add_subcommand("serve", "HTTP prediction service");
  std::string sv_ckpt, sv_data, sv_bind = "127.0.0.1:8080";
  sv->add_option("--ckpt", sv_ckpt)->required();
  sv->add_option("--data", sv_data)->required();
  sv->add_option("--bind", sv_bind, "HOST:PORT");

  CLI11_PARSE(app, argc, argv);

  try {
    if (!isa.empty()) kernels::set_isa(kernels::parse_isa(isa));

    if (*gen) {
      synth.shape = {gen_shape[0], gen_shape[1], gen_shape[2]};
      synth.validate();
      std::filesystem::create_directories(gen_out);
      for (std::size_t i = 0; i < gen_count; ++i) {
        const auto seed = gen_seed + i;
        const auto s = generate(seed, synth);
        write_vol_with_sidecar(std::filesystem::path(gen_out) / fmt::format("vol_{}.vol", seed), s, synth);
      }
      fmt::print("wrote {} volumes to {}\n", gen_count, gen_out);
    } else if (*tr) {
      auto cfg = load_run_config(tr_config);
      if (!tr_out.empty()) cfg.checkpoint_path = tr_out;
      if (cfg.checkpoint_path.empty()) throw UsageError("no checkpoint path: pass --out or set [run] checkpoint");
      const auto t0 = std::chrono::steady_clock::now();
      TrainOptions opts;
      opts.on_step = [&](const TrainLogEntry& e) {
        if (cfg.log_interval > 0 && (e.step % cfg.log_interval == 0 || e.step == cfg.optimizer.steps)) {
          const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
          fmt::print("step {:>6}  loss {:.6f}  grad_norm {:.4f}  {:.1f}s\n", e.step, e.loss, e.grad_norm, secs);
          std::fflush(stdout);
        }
      };
      opts.on_validation = [](const ValidationEntry& v) {
        fmt::print("val  {:>6}  dice {:.4f}  nsd {:.4f}  count_acc {:.3f}\n", v.step, v.summary.dice,
                   v.summary.nsd, v.summary.count_acc);
      };
      const auto result = train(cfg, opts);
      save_checkpoint(cfg.checkpoint_path, result.checkpoint);
      write_json(tr_log.empty() ? cfg.checkpoint_path + ".log.json" : tr_log, to_json(result));
      if (result.train_metrics)
        fmt::print("train dice {:.4f}  nsd {:.4f}  count_acc {:.3f}\n", result.train_metrics->dice,
                   result.train_metrics->nsd, result.train_metrics->count_acc);
      fmt::print("saved {}\n", cfg.checkpoint_path);
    } else if (*ev) {
      const auto model = build_model(load_checkpoint(ev_ckpt));
      const auto summary = evaluate(*model, read_dir(ev_data), ev_tau);
      write_json(ev_json, to_json(summary));
    } else if (*pr) {
      const auto model = build_model(load_checkpoint(pr_ckpt));
      const auto sample = read_vol(pr_vol);
      const PointPrompt prompt{parse_point(pr_point)};
      const auto instances = predict(*model, sample, prompt);
      write_json(pr_json, {{"point", {prompt.p.d, prompt.p.h, prompt.p.w}},
                           {"shape", {sample.shape[0], sample.shape[1], sample.shape[2]}},
                           {"instances", instances_json(instances)}});
    } else if (*rb) {
      const auto model = build_model(load_checkpoint(rb_ckpt));
      const auto sample = read_vol(rb_vol);
      std::vector<PointPrompt> prompts;
      std::stringstream ss(rb_points);
      std::string part;
      while (std::getline(ss, part, ';'))
        if (!part.empty()) prompts.push_back({parse_point(part)});
      write_json(rb_json, to_json(prompt_robustness(*model, sample, prompts)));
    } else if (*sv) {
      const auto colon = sv_bind.rfind(':');
      if (colon == std::string::npos) throw UsageError("--bind must be HOST:PORT");
      const std::string host = sv_bind.substr(0, colon);
      const int port = std::stoi(sv_bind.substr(colon + 1));
      std::shared_ptr<const Model<float>> model = build_model(load_checkpoint(sv_ckpt));
      const PredictionService service(model, sv_data);
      fmt::print("serving {} volumes on {}:{}\n", service.volume_count(), host, port);
      std::fflush(stdout);
      serve(service, host, port);
    }
  } catch (const miq3d::Error& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return 2;
  }
  return 0;
}
