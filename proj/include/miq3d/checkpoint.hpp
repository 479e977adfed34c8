#pragma once

// Binary checkpoint, little-endian:
//   "MIQ3DCKP" | u32 version | u64 len + INI config echo | u64 step
//   | u32 n_params, each: u32 len + name, u32 rank, u64 dims[rank], f32 data
//   | u64 adam_t | u8 has_moments, then per parameter f32 m[numel], f32 v[numel]
// Serialization is a pure function of the contents, so equal training runs
// produce byte-identical files.

#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "miq3d/config.hpp"
#include "miq3d/model.hpp"
#include "miq3d/optimizer.hpp"

namespace miq3d {

struct ParamBlob {
  std::string name;
  Shape shape;
  std::vector<float> data;
  bool operator==(const ParamBlob&) const = default;
};

struct Checkpoint {
  RunConfig config;
  std::uint64_t step = 0;
  std::vector<ParamBlob> params;
  AdamState optimizer;
};

Checkpoint capture(const RunConfig& cfg, const Model<float>& model, const AdamState& optim,
                   std::uint64_t step);
// Copies parameter values into `model`; CompatibilityError on any name or
// shape mismatch.
void restore(Model<float>& model, const Checkpoint& ckpt);
std::unique_ptr<Model<float>> build_model(const Checkpoint& ckpt);

std::string serialize(const Checkpoint& ckpt);
Checkpoint deserialize(const std::string& bytes);  // FormatError / ConfigError
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace miq3d
