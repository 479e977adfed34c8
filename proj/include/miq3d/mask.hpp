#pragma once

#include <cstdint>
#include <vector>

#include "miq3d/ops.hpp"

namespace miq3d {

// Binary volume, one byte per voxel (0 or 1), row-major (d, h, w).
struct BinaryMask {
  Extent3 shape{0, 0, 0};
  std::vector<std::uint8_t> voxels;

  BinaryMask() = default;
  explicit BinaryMask(Extent3 s) : shape(s), voxels(s[0] * s[1] * s[2], 0) {}

  std::size_t size() const { return voxels.size(); }
  std::size_t index(std::size_t d, std::size_t h, std::size_t w) const {
    return (d * shape[1] + h) * shape[2] + w;
  }
  bool at(std::size_t d, std::size_t h, std::size_t w) const { return voxels[index(d, h, w)] != 0; }
  std::size_t count() const {
    std::size_t n = 0;
    for (auto v : voxels) n += v != 0;
    return n;
  }
  bool empty() const { return count() == 0; }
  bool operator==(const BinaryMask&) const = default;

  template <typename T>
  Tensor<T> to_tensor() const {
    std::vector<T> data(voxels.begin(), voxels.end());
    return Tensor<T>::from({shape[0], shape[1], shape[2]}, std::move(data));
  }
};

}  // namespace miq3d
