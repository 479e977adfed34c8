#include <doctest.h>

#include <filesystem>

#include "miq3d/errors.hpp"
#include "miq3d/service.hpp"
#include "miq3d/synthdata.hpp"
#include "service_checks.hpp"

using namespace miq3d;
namespace fs = std::filesystem;

namespace {

ModelConfig small_model() {
  ModelConfig m;
  m.encoder.volume_shape = {16, 16, 16};
  m.encoder.patch_size = 4;
  m.encoder.embed_dim = 16;
  m.encoder.num_heads = 2;
  m.encoder.num_vit_blocks = 1;
  m.encoder.cnn_channels = {4};
  m.decoder = DecoderConfig{1, 2, 16, true};
  m.num_queries = 4;
  return m;
}

struct DataDir {
  fs::path path;
  explicit DataDir(const std::string& name, std::size_t n) : path(fs::temp_directory_path() / name) {
    fs::remove_all(path);
    fs::create_directories(path);
    SynthConfig cfg;
    cfg.shape = {16, 16, 16};
    cfg.max_instances = 3;
    cfg.radius_min = 2;
    cfg.radius_max = 4;
    for (std::size_t i = 0; i < n; ++i)
      write_vol_with_sidecar(path / ("vol_" + std::to_string(i) + ".vol"), generate(100 + i, cfg), cfg);
  }
  ~DataDir() { fs::remove_all(path); }
};

}  // namespace

TEST_CASE("live service contract over HTTP") {
  const DataDir dir("miq3d_service_live", 3);
  const auto model = std::make_shared<const Model<float>>(small_model(), 7);
  const auto r = miq3d::testing::service_contract(model, dir.path, false);
  INFO(r.detail);
  CHECK(r.pass);
}

TEST_CASE("service lists one id per .vol file") {
  const DataDir dir("miq3d_service_list", 3);
  const PredictionService svc(std::make_shared<const Model<float>>(small_model(), 7), dir.path);
  CHECK(svc.volume_count() == 3);
  const auto r = svc.list_volumes();
  CHECK(r.status == 200);
  REQUIRE(r.body.size() == 3);
  CHECK(r.body[0]["id"] == "vol_0");
  CHECK(svc.health().body["status"] == "ok");
}

TEST_CASE("a volume whose shape differs from the model is rejected with 422") {
  const DataDir dir("miq3d_service_shape", 0);
  write_vol(dir.path / "big.vol", generate(1, SynthConfig{}));
  const PredictionService svc(std::make_shared<const Model<float>>(small_model(), 7), dir.path);
  CHECK(svc.predict(R"({"volume_id": "big", "point": [1, 1, 1]})").status == 422);
}

TEST_CASE("missing data directory is a usage error") {
  CHECK_THROWS_AS(PredictionService(std::make_shared<const Model<float>>(small_model(), 7), "/nonexistent/dir"),
                  UsageError);
}
