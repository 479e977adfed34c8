#pragma once

// Bipartite set-prediction loss. The matching cost
//   C[i,j] = -l_cls * P_i(lesion) + l_dice * dice(m_i, g_j) + l_bce * bce(m_i, g_j)
// is minimised by the Hungarian solver; matched queries then pay
// cross-entropy + dice + bce, unmatched queries a down-weighted no-object
// cross-entropy.

#include <vector>

#include "miq3d/decoder.hpp"
#include "miq3d/hungarian.hpp"

namespace miq3d {

struct LossWeights {
  double lambda_cls = 2.0;
  double lambda_dice = 5.0;
  double lambda_bce = 5.0;
  double no_object_weight = 0.1;
  double dice_eps = 1.0;

  void validate() const;
};

// Every instance is a lesion; masks are {0,1}-valued [D,H,W] tensors.
template <typename T>
struct GroundTruthSet {
  std::vector<Tensor<T>> masks;
  std::size_t size() const { return masks.size(); }
};

// Row-major [N, M] cost matrix evaluated in double precision (no gradient).
template <typename T>
std::vector<double> matching_cost(const InstancePrediction<T>& pred, const GroundTruthSet<T>& gts,
                                  const LossWeights& w);

template <typename T>
struct SetLoss {
  Tensor<T> loss;  // scalar, differentiable
  MatchAssignment assignment;
};

template <typename T>
SetLoss<T> total_loss(const InstancePrediction<T>& pred, const GroundTruthSet<T>& gts,
                      const LossWeights& w);

}  // namespace miq3d
