#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <nlohmann/json.hpp>

#include "miq3d/checkpoint.hpp"
#include "miq3d/synthdata.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const fs::path kWork = fs::temp_directory_path() / "miq3d_cli_test";

int run(const std::string& args) {
  const std::string cmd = std::string(MIQ3D_CLI_PATH) + " " + args + " > " + (kWork / "stdout.txt").string() +
                          " 2> " + (kWork / "stderr.txt").string();
  const int rc = std::system(cmd.c_str());
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

json read_json(const fs::path& p) {
  std::ifstream in(p);
  return json::parse(in);
}

std::string read_text(const fs::path& p) {
  std::ifstream in(p);
  return {std::istreambuf_iterator<char>(in), {}};
}

constexpr const char* kConfig = R"([model]
num_queries = 3
[encoder]
volume_shape = 16,16,16
patch_size = 4
embed_dim = 16
num_heads = 2
num_vit_blocks = 1
cnn_channels = 4,8
[decoder]
num_layers = 1
num_heads = 2
ffn_hidden = 16
[data]
shape = 16,16,16
max_instances = 2
radius_min = 2
radius_max = 4
train_seed = 70
train_count = 2
[optimizer]
steps = 4
batch_size = 1
[run]
log_interval = 2
)";

}  // namespace

TEST_CASE("command-line workflow: gen-data, train, eval, predict, robustness") {
  fs::remove_all(kWork);
  fs::create_directories(kWork);
  const auto data = kWork / "data";
  REQUIRE(run("gen-data --out " + data.string() +
              " --count 2 --seed 70 --shape 16 16 16 --max-instances 2 --radius-min 2 --radius-max 4") == 0);
  CHECK(fs::exists(data / "vol_70.vol"));
  CHECK(fs::exists(data / "vol_71.json"));
  const auto sample = miq3d::read_vol(data / "vol_70.vol");
  CHECK(sample.shape == miq3d::Extent3{16, 16, 16});

  {
    std::ofstream(kWork / "run.ini") << kConfig;
  }
  const auto ckpt = kWork / "m.ckpt";
  REQUIRE(run("train --config " + (kWork / "run.ini").string() + " --out " + ckpt.string()) == 0);
  CHECK(read_text(kWork / "stdout.txt").find("step      4") != std::string::npos);
  REQUIRE(fs::exists(ckpt));
  CHECK(miq3d::load_checkpoint(ckpt).step == 4);
  const auto log = read_json(kWork / "m.ckpt.log.json");
  CHECK(log["loss"].size() == 4);
  CHECK(log.contains("train_metrics"));

  REQUIRE(run("eval --ckpt " + ckpt.string() + " --data " + data.string() + " --json " + (kWork / "eval.json").string()) == 0);
  const auto ev = read_json(kWork / "eval.json");
  for (const char* k : {"dice", "nsd", "count_acc", "n_volumes"}) CHECK(ev.contains(k));
  CHECK(ev["n_volumes"] == 2);
  // Evaluating the training volumes reproduces the metrics logged by train.
  CHECK(ev["dice"].get<double>() == doctest::Approx(log["train_metrics"]["dice"].get<double>()).epsilon(1e-9));

  const auto p = miq3d::sample_prompt(sample, 0).prompt.p;
  const std::string point = std::to_string(p.d) + "," + std::to_string(p.h) + "," + std::to_string(p.w);
  REQUIRE(run("predict --ckpt " + ckpt.string() + " --vol " + (data / "vol_70.vol").string() + " --point " + point +
              " --json " + (kWork / "pred.json").string()) == 0);
  const auto pred = read_json(kWork / "pred.json");
  CHECK(pred["instances"].is_array());
  CHECK(pred["shape"] == json{16, 16, 16});

  REQUIRE(run("robustness --ckpt " + ckpt.string() + " --vol " + (data / "vol_70.vol").string() + " --points \"" +
              point + ";" + point + "\" --json " + (kWork / "rob.json").string()) == 0);
  const auto rob = read_json(kWork / "rob.json");
  CHECK(rob["agreement"][0][1] == 1.0);

  // Error handling: library errors exit 1 with a message.
  CHECK(run("predict --ckpt " + ckpt.string() + " --vol " + (data / "vol_70.vol").string() +
            " --point 99,0,0 --json -") == 1);
  CHECK(read_text(kWork / "stderr.txt").find("error:") != std::string::npos);
  CHECK(run("eval --ckpt " + (kWork / "missing.ckpt").string() + " --data " + data.string() + " --json -") == 1);
  CHECK(run("train --config " + (kWork / "missing.ini").string() + " --out x") == 1);
  CHECK(run("bogus-command") != 0);
  fs::remove_all(kWork);
}
