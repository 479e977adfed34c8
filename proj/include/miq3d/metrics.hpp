#pragma once

// Overlap metrics on binary volumes: Dice and Normalized Surface Dice, plus a
// multi-instance report that pairs predictions with ground truths by
// Hungarian matching on (1 - Dice).

#include <array>
#include <vector>

#include "miq3d/mask.hpp"

namespace miq3d {

using Voxel = std::array<std::size_t, 3>;

// 2|a∩b| / (|a|+|b|); 1 when both are empty. DimensionError on shape mismatch.
double dice_coeff(const BinaryMask& a, const BinaryMask& b);

// Voxels of m with at least one 6-neighbour outside m (or outside the volume).
std::vector<Voxel> surface_voxels(const BinaryMask& m);

// Squared Euclidean distance from every voxel to the nearest set voxel of
// `seeds` (exact, separable lower-envelope transform). +inf when seeds is empty.
std::vector<double> squared_distance_transform(const BinaryMask& seeds);

// Fraction of both surfaces lying within tau voxels of the other surface.
double nsd(const BinaryMask& a, const BinaryMask& b, double tau = 1.0);

struct MatchedInstance {
  std::size_t pred = 0;
  std::size_t gt = 0;
  double dice = 0;
  double nsd = 0;
};

struct MetricReport {
  double dice = 0;
  double nsd = 0;
  std::vector<MatchedInstance> per_instance;
  std::size_t instance_count_pred = 0;
  std::size_t instance_count_gt = 0;
};

// Means run over max(#pred, #gt) entities; unmatched ones contribute 0.
// Two empty sets score 1.
MetricReport instance_report(const std::vector<BinaryMask>& preds,
                             const std::vector<BinaryMask>& gts, double tau = 1.0);

}  // namespace miq3d
