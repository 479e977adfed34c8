#pragma once

// Synthetic multi-lesion volumes: ellipsoidal blobs over Gaussian noise,
// blurred so boundaries are soft, plus the binary .vol container.

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "miq3d/mask.hpp"
#include "miq3d/pciqg.hpp"

namespace miq3d {

struct SynthConfig {
  Extent3 shape{32, 32, 32};
  std::size_t max_instances = 4;
  double radius_min = 3.0;
  double radius_max = 6.0;
  double noise_sigma = 0.1;
  double blur_sigma = 1.0;
  double intensity_offset = 0.5;

  void validate() const;  // ConfigError
  bool operator==(const SynthConfig&) const = default;
};

struct VolumeSample {
  Extent3 shape{0, 0, 0};
  std::vector<float> intensities;  // row-major, values in [0, 1]
  std::vector<BinaryMask> masks;
  std::uint64_t rng_seed = 0;

  std::size_t n_instances() const { return masks.size(); }
  // [1, D, H, W]
  template <typename T>
  Tensor<T> volume() const {
    return Tensor<T>::from({1, shape[0], shape[1], shape[2]},
                           std::vector<T>(intensities.begin(), intensities.end()));
  }
  bool operator==(const VolumeSample&) const = default;
};

VolumeSample generate(std::uint64_t seed, const SynthConfig& cfg);

struct SampledPrompt {
  PointPrompt prompt;
  std::size_t instance = 0;
};

// Uniform instance, then a uniform interior voxel of it (any voxel if the
// instance has no interior). UsageError on a sample without instances.
SampledPrompt sample_prompt(const VolumeSample& s, std::uint64_t seed);
// Same, restricted to a given instance.
PointPrompt sample_prompt_in(const VolumeSample& s, std::size_t instance, std::uint64_t seed);

// Index of the instance containing voxel p, or n_instances() if none.
std::size_t instance_at(const VolumeSample& s, const Point3& p);

std::size_t vol_file_size(const Extent3& shape, std::size_t n_instances);
void write_vol(const std::filesystem::path& path, const VolumeSample& s);
VolumeSample read_vol(const std::filesystem::path& path);  // FormatError
// write_vol plus the informational JSON sidecar.
void write_vol_with_sidecar(const std::filesystem::path& path, const VolumeSample& s,
                            const SynthConfig& cfg);

}  // namespace miq3d
