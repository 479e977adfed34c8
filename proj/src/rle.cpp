#include "miq3d/rle.hpp"

#include "miq3d/errors.hpp"

namespace miq3d {

std::vector<std::uint64_t> rle_encode(const BinaryMask& m) {
  std::vector<std::uint64_t> runs;
  const std::size_t n = m.size();
  std::size_t i = 0;
  while (i < n) {
    if (!m.voxels[i]) {
      ++i;
      continue;
    }
    const std::size_t start = i;
    while (i < n && m.voxels[i]) ++i;
    runs.push_back(start);
    runs.push_back(i - start);
  }
  return runs;
}

BinaryMask rle_decode(const std::vector<std::uint64_t>& runs, Extent3 shape) {
  if (runs.size() % 2 != 0) throw FormatError("RLE must hold (start, length) pairs");
  BinaryMask m(shape);
  std::uint64_t next_free = 0;
  for (std::size_t r = 0; r < runs.size(); r += 2) {
    const auto start = runs[r];
    const auto len = runs[r + 1];
    if (len == 0) throw FormatError("RLE run of zero length");
    if (start < next_free) throw FormatError("RLE runs overlap or are unsorted");
    if (start > m.size() || len > m.size() - start) throw FormatError("RLE run exceeds the volume");
    for (std::uint64_t i = start; i < start + len; ++i) m.voxels[i] = 1;
    next_free = start + len;
  }
  return m;
}

}  // namespace miq3d
