#include "miq3d/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "miq3d/errors.hpp"
#include "miq3d/hungarian.hpp"

namespace miq3d {
namespace {

void require_same_shape(const BinaryMask& a, const BinaryMask& b) {
  if (a.shape != b.shape)
    throw DimensionError("mask shapes " + shape_str({a.shape[0], a.shape[1], a.shape[2]}) + " and " +
                         shape_str({b.shape[0], b.shape[1], b.shape[2]}) + " differ");
}

BinaryMask surface_mask(const BinaryMask& m) {
  BinaryMask out(m.shape);
  for (const auto& v : surface_voxels(m)) out.voxels[m.index(v[0], v[1], v[2])] = 1;
  return out;
}

// 1-D squared distance transform of sampled function f (Felzenszwalb & Huttenlocher).
void edt_1d(const std::vector<double>& f, std::vector<double>& d, std::vector<std::size_t>& v,
            std::vector<double>& z) {
  constexpr double kInf = std::numeric_limits<double>::infinity();
  const std::size_t n = f.size();
  std::size_t k = 0;
  std::size_t first = n;
  for (std::size_t q = 0; q < n; ++q)
    if (f[q] < kInf) {
      first = q;
      break;
    }
  if (first == n) {
    std::fill(d.begin(), d.end(), kInf);
    return;
  }
  v[0] = first;
  z[0] = -kInf;
  z[1] = kInf;
  for (std::size_t q = first + 1; q < n; ++q) {
    if (!(f[q] < kInf)) continue;
    const double qd = static_cast<double>(q);
    double s;
    while (true) {
      const double vk = static_cast<double>(v[k]);
      s = ((f[q] + qd * qd) - (f[v[k]] + vk * vk)) / (2.0 * qd - 2.0 * vk);
      if (s <= z[k] && k > 0) {
        --k;
        continue;
      }
      break;
    }
    ++k;
    v[k] = q;
    z[k] = s;
    z[k + 1] = kInf;
  }
  k = 0;
  for (std::size_t q = 0; q < n; ++q) {
    const double qd = static_cast<double>(q);
    while (z[k + 1] < qd) ++k;
    const double diff = qd - static_cast<double>(v[k]);
    d[q] = diff * diff + f[v[k]];
  }
}

}  // namespace

double dice_coeff(const BinaryMask& a, const BinaryMask& b) {
  require_same_shape(a, b);
  std::size_t inter = 0, sa = 0, sb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const bool x = a.voxels[i] != 0;
    const bool y = b.voxels[i] != 0;
    inter += x && y;
    sa += x;
    sb += y;
  }
  if (sa + sb == 0) return 1.0;
  return 2.0 * static_cast<double>(inter) / static_cast<double>(sa + sb);
}

std::vector<Voxel> surface_voxels(const BinaryMask& m) {
  std::vector<Voxel> out;
  const auto [nd, nh, nw] = m.shape;
  auto inside = [&](std::ptrdiff_t d, std::ptrdiff_t h, std::ptrdiff_t w) {
    if (d < 0 || h < 0 || w < 0 || d >= static_cast<std::ptrdiff_t>(nd) ||
        h >= static_cast<std::ptrdiff_t>(nh) || w >= static_cast<std::ptrdiff_t>(nw))
      return false;
    return m.at(static_cast<std::size_t>(d), static_cast<std::size_t>(h), static_cast<std::size_t>(w));
  };
  for (std::size_t d = 0; d < nd; ++d)
    for (std::size_t h = 0; h < nh; ++h)
      for (std::size_t w = 0; w < nw; ++w) {
        if (!m.at(d, h, w)) continue;
        const auto sd = static_cast<std::ptrdiff_t>(d);
        const auto sh = static_cast<std::ptrdiff_t>(h);
        const auto sw = static_cast<std::ptrdiff_t>(w);
        if (!inside(sd - 1, sh, sw) || !inside(sd + 1, sh, sw) || !inside(sd, sh - 1, sw) ||
            !inside(sd, sh + 1, sw) || !inside(sd, sh, sw - 1) || !inside(sd, sh, sw + 1))
          out.push_back({d, h, w});
      }
  return out;
}

std::vector<double> squared_distance_transform(const BinaryMask& seeds) {
  constexpr double kInf = std::numeric_limits<double>::infinity();
  const auto [nd, nh, nw] = seeds.shape;
  std::vector<double> dist(seeds.size());
  for (std::size_t i = 0; i < seeds.size(); ++i) dist[i] = seeds.voxels[i] ? 0.0 : kInf;
  const std::size_t longest = std::max({nd, nh, nw});
  std::vector<double> f(longest), d(longest), z(longest + 1);
  std::vector<std::size_t> v(longest);
  // One pass per axis; each pass is a 1-D transform along lines of that axis.
  auto pass = [&](std::size_t len, std::size_t stride, std::size_t lines,
                  auto&& line_start) {
    f.resize(len);
    d.resize(len);
    for (std::size_t l = 0; l < lines; ++l) {
      const std::size_t base = line_start(l);
      for (std::size_t q = 0; q < len; ++q) f[q] = dist[base + q * stride];
      edt_1d(f, d, v, z);
      for (std::size_t q = 0; q < len; ++q) dist[base + q * stride] = d[q];
    }
  };
  pass(nw, 1, nd * nh, [&](std::size_t l) { return l * nw; });
  pass(nh, nw, nd * nw, [&](std::size_t l) { return (l / nw) * nh * nw + l % nw; });
  pass(nd, nh * nw, nh * nw, [&](std::size_t l) { return l; });
  return dist;
}

double nsd(const BinaryMask& a, const BinaryMask& b, double tau) {
  require_same_shape(a, b);
  if (tau < 0) throw ConfigError("NSD tolerance must be nonnegative");
  const auto sa = surface_voxels(a);
  const auto sb = surface_voxels(b);
  if (sa.empty() && sb.empty()) return 1.0;
  if (sa.empty() || sb.empty()) return 0.0;
  const auto da = squared_distance_transform(surface_mask(a));
  const auto db = squared_distance_transform(surface_mask(b));
  const double tau2 = tau * tau;
  std::size_t close = 0;
  for (const auto& s : sa) close += db[a.index(s[0], s[1], s[2])] <= tau2;
  for (const auto& s : sb) close += da[b.index(s[0], s[1], s[2])] <= tau2;
  return static_cast<double>(close) / static_cast<double>(sa.size() + sb.size());
}

MetricReport instance_report(const std::vector<BinaryMask>& preds,
                             const std::vector<BinaryMask>& gts, double tau) {
  MetricReport report;
  report.instance_count_pred = preds.size();
  report.instance_count_gt = gts.size();
  const std::size_t entities = std::max(preds.size(), gts.size());
  if (entities == 0) {
    report.dice = 1.0;
    report.nsd = 1.0;
    return report;
  }
  if (preds.empty() || gts.empty()) return report;
  std::vector<double> dice(preds.size() * gts.size());
  for (std::size_t i = 0; i < preds.size(); ++i)
    for (std::size_t j = 0; j < gts.size(); ++j) dice[i * gts.size() + j] = dice_coeff(preds[i], gts[j]);
  std::vector<double> cost(dice.size());
  for (std::size_t k = 0; k < dice.size(); ++k) cost[k] = 1.0 - dice[k];
  const auto match = min_cost_matching(cost, preds.size(), gts.size());
  double dice_sum = 0, nsd_sum = 0;
  for (const auto& [i, j] : match.pairs) {
    MatchedInstance mi{i, j, dice[i * gts.size() + j], nsd(preds[i], gts[j], tau)};
    dice_sum += mi.dice;
    nsd_sum += mi.nsd;
    report.per_instance.push_back(mi);
  }
  report.dice = dice_sum / static_cast<double>(entities);
  report.nsd = nsd_sum / static_cast<double>(entities);
  return report;
}

}  // namespace miq3d
