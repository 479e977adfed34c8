#pragma once

#include <cstdint>
#include <vector>

#include "miq3d/mask.hpp"

namespace miq3d {

// Foreground runs over row-major voxel order as [start, length, start, length, ...].
std::vector<std::uint64_t> rle_encode(const BinaryMask& m);
// FormatError on odd length, zero-length, overlapping/unsorted or out-of-range runs.
BinaryMask rle_decode(const std::vector<std::uint64_t>& runs, Extent3 shape);

}  // namespace miq3d
