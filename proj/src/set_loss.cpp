#include "miq3d/set_loss.hpp"

#include <algorithm>
#include <cmath>
#include <utility>

#include "miq3d/errors.hpp"
#include "miq3d/kink_trace.hpp"

namespace miq3d {

void LossWeights::validate() const {
  if (lambda_cls < 0 || lambda_dice < 0 || lambda_bce < 0 || no_object_weight < 0)
    throw ConfigError("loss weights must be nonnegative");
  if (lambda_cls == 0 && lambda_dice == 0 && lambda_bce == 0)
    throw ConfigError("loss weights must not all be zero");
  if (!(dice_eps > 0)) throw ConfigError("dice smoothing must be positive");
}

template <typename T>
std::vector<double> matching_cost(const InstancePrediction<T>& pred, const GroundTruthSet<T>& gts,
                                  const LossWeights& w) {
  const std::size_t n = pred.n_queries();
  const std::size_t m = gts.size();
  if (m == 0) throw ConfigError("matching_cost needs at least one ground-truth instance");
  const std::size_t voxels = pred.mask_logits.numel() / n;
  for (const auto& g : gts.masks)
    if (g.numel() != voxels)
      throw DimensionError("ground-truth mask " + shape_str(g.shape()) + " vs prediction " +
                           shape_str(pred.mask_logits.shape()));
  const auto logits = pred.mask_logits.data();
  const auto probs = pred.masks.data();
  const auto cls = pred.class_probs.data();
  // bce(x, g) = sum(softplus(x)) - sum(x * g): the first term is per query,
  // the second only touches ground-truth foreground.
  std::vector<std::vector<std::pair<std::size_t, double>>> fg(m);
  std::vector<double> sum_g(m, 0.0);
  for (std::size_t j = 0; j < m; ++j) {
    const auto g = gts.masks[j].data();
    for (std::size_t v = 0; v < voxels; ++v)
      if (g[v] != T(0)) {
        fg[j].emplace_back(v, static_cast<double>(g[v]));
        sum_g[j] += g[v];
      }
  }
  std::vector<double> cost(n * m);
  for (std::size_t i = 0; i < n; ++i) {
    const T* x = logits.data() + i * voxels;
    const T* p = probs.data() + i * voxels;
    double sum_p = 0, softplus = 0;
    for (std::size_t v = 0; v < voxels; ++v) {
      const double xv = x[v];
      sum_p += p[v];
      softplus += std::max(xv, 0.0) + std::log1p(std::exp(-std::abs(xv)));
    }
    for (std::size_t j = 0; j < m; ++j) {
      double inter = 0, xg = 0;
      for (const auto& [v, g] : fg[j]) {
        inter += static_cast<double>(p[v]) * g;
        xg += static_cast<double>(x[v]) * g;
      }
      const double dice = 1.0 - (2.0 * inter + w.dice_eps) / (sum_p + sum_g[j] + w.dice_eps);
      const double bce = (softplus - xg) / static_cast<double>(voxels);
      cost[i * m + j] = -w.lambda_cls * static_cast<double>(cls[i * 2 + kLesionClass]) +
                        w.lambda_dice * dice + w.lambda_bce * bce;
    }
  }
  return cost;
}

template <typename T>
SetLoss<T> total_loss(const InstancePrediction<T>& pred, const GroundTruthSet<T>& gts,
                      const LossWeights& w) {
  const std::size_t n = pred.n_queries();
  if (gts.size() > n)
    throw ConfigError(std::to_string(gts.size()) + " ground-truth instances exceed " +
                      std::to_string(n) + " queries");
  SetLoss<T> out;
  std::vector<std::ptrdiff_t> gt_of_query(n, -1);
  if (gts.size() > 0) {
    out.assignment = hungarian(matching_cost(pred, gts, w), n, gts.size());
    for (const auto& [i, j] : out.assignment.pairs) {
      gt_of_query[i] = static_cast<std::ptrdiff_t>(j);
      KinkTrace::record(i);
    }
  }
  const auto log_probs = log_softmax_lastdim(pred.class_logits);
  Tensor<T> total;
  auto accumulate = [&total](const Tensor<T>& term) { total = total.defined() ? add(total, term) : term; };
  for (std::size_t i = 0; i < n; ++i) {
    const auto row = select(log_probs, i);
    if (gt_of_query[i] < 0) {
      accumulate(scale(select(row, kNoObjectClass), static_cast<T>(-w.lambda_cls * w.no_object_weight)));
      continue;
    }
    const auto& gt = gts.masks[static_cast<std::size_t>(gt_of_query[i])];
    const auto logits = select(pred.mask_logits, i);
    const auto probs = select(pred.masks, i);
    accumulate(scale(select(row, kLesionClass), static_cast<T>(-w.lambda_cls)));
    if (gt.shape() != logits.shape())
      throw DimensionError("ground-truth mask " + shape_str(gt.shape()) + " vs prediction " +
                           shape_str(logits.shape()));
    accumulate(scale(soft_dice_loss(probs, gt, static_cast<T>(w.dice_eps)), static_cast<T>(w.lambda_dice)));
    accumulate(scale(bce_with_logits(logits, gt), static_cast<T>(w.lambda_bce)));
  }
  out.loss = total;
  return out;
}

template std::vector<double> matching_cost(const InstancePrediction<float>&,
                                           const GroundTruthSet<float>&, const LossWeights&);
template std::vector<double> matching_cost(const InstancePrediction<double>&,
                                           const GroundTruthSet<double>&, const LossWeights&);
template SetLoss<float> total_loss(const InstancePrediction<float>&, const GroundTruthSet<float>&,
                                   const LossWeights&);
template SetLoss<double> total_loss(const InstancePrediction<double>&,
                                    const GroundTruthSet<double>&, const LossWeights&);

}  // namespace miq3d
