#include <doctest.h>

#include <cmath>

#include "checks.hpp"
#include "miq3d/errors.hpp"
#include "miq3d/metrics.hpp"
#include "miq3d/ops.hpp"

using namespace miq3d;
using miq3d::testing::random_binary_mask;

namespace {

BinaryMask box(Extent3 shape, Voxel lo, Voxel hi) {
  BinaryMask m(shape);
  for (std::size_t d = lo[0]; d < hi[0]; ++d)
    for (std::size_t h = lo[1]; h < hi[1]; ++h)
      for (std::size_t w = lo[2]; w < hi[2]; ++w) m.voxels[m.index(d, h, w)] = 1;
  return m;
}

}  // namespace

TEST_CASE("metrics agree with brute-force enumeration") {
  const auto r = miq3d::testing::metric_oracles();
  INFO(r.detail);
  CHECK(r.pass);
}

TEST_CASE("dice examples") {
  const Extent3 s{4, 4, 4};
  const auto a = box(s, {0, 0, 0}, {1, 1, 4});
  const auto b = box(s, {0, 0, 2}, {1, 2, 4});
  CHECK(a.count() == 4);
  CHECK(b.count() == 4);
  CHECK(dice_coeff(a, b) == 0.5);
  CHECK(dice_coeff(a, a) == 1.0);
  CHECK(dice_coeff(a, box(s, {2, 2, 2}, {3, 3, 3})) == 0.0);
  CHECK(dice_coeff(BinaryMask(s), BinaryMask(s)) == 1.0);
  CHECK_THROWS_AS(dice_coeff(a, BinaryMask({4, 4, 5})), DimensionError);
}

TEST_CASE("surface voxels") {
  const Extent3 s{5, 5, 5};
  CHECK(surface_voxels(box(s, {1, 1, 1}, {4, 4, 4})).size() == 26);
  const auto single = surface_voxels(box(s, {2, 3, 4}, {3, 4, 5}));
  REQUIRE(single.size() == 1);
  CHECK(single[0] == Voxel{2, 3, 4});
  CHECK(surface_voxels(BinaryMask(s)).empty());
  // The volume boundary counts as outside: a full volume is all surface except its interior.
  CHECK(surface_voxels(box(s, {0, 0, 0}, {5, 5, 5})).size() == 125 - 27);
}

TEST_CASE("nsd examples, symmetry and monotonicity in tau") {
  const Extent3 s{12, 12, 12};
  const auto a = box(s, {0, 0, 0}, {1, 1, 1});
  const auto far = box(s, {10, 0, 0}, {11, 1, 1});
  CHECK(nsd(a, a) == 1.0);
  CHECK(nsd(a, far, 1.0) == 0.0);
  CHECK(nsd(a, BinaryMask(s)) == 0.0);
  CHECK(nsd(BinaryMask(s), BinaryMask(s)) == 1.0);
  const auto c1 = box(s, {2, 2, 2}, {6, 6, 6});
  const auto c2 = box(s, {3, 2, 2}, {7, 6, 6});
  CHECK(nsd(c1, c2, 1.0) == doctest::Approx(miq3d::testing::brute_force_nsd(c1, c2, 1.0)).epsilon(1e-12));
  Rng rng(21);
  for (int t = 0; t < 20; ++t) {
    const auto x = random_binary_mask({8, 8, 8}, rng, 0.2);
    const auto y = random_binary_mask({8, 8, 8}, rng, 0.2);
    CHECK(dice_coeff(x, y) == dice_coeff(y, x));
    CHECK(nsd(x, y, 1.0) == nsd(y, x, 1.0));
    double prev = 0;
    for (double tau : {0.0, 0.5, 1.0, 1.5, 2.0, 3.0, 10.0}) {
      const double v = nsd(x, y, tau);
      CHECK(v >= prev);
      CHECK((v >= 0.0 && v <= 1.0));
      prev = v;
    }
  }
}

TEST_CASE("squared distance transform matches brute force") {
  Rng rng(23);
  for (int t = 0; t < 10; ++t) {
    const auto seeds = random_binary_mask({6, 7, 5}, rng, 0.05);
    const auto dt = squared_distance_transform(seeds);
    for (std::size_t d = 0; d < 6; ++d)
      for (std::size_t h = 0; h < 7; ++h)
        for (std::size_t w = 0; w < 5; ++w) {
          double best = INFINITY;
          for (std::size_t d2 = 0; d2 < 6; ++d2)
            for (std::size_t h2 = 0; h2 < 7; ++h2)
              for (std::size_t w2 = 0; w2 < 5; ++w2)
                if (seeds.at(d2, h2, w2)) {
                  const double dd = double(d) - double(d2), dh = double(h) - double(h2), dw = double(w) - double(w2);
                  best = std::min(best, dd * dd + dh * dh + dw * dw);
                }
          CHECK(dt[seeds.index(d, h, w)] == best);
        }
  }
}

TEST_CASE("dice agrees with one minus soft dice loss on large binary masks") {
  Rng rng(29);
  for (int t = 0; t < 5; ++t) {
    const auto a = random_binary_mask({24, 24, 24}, rng, 0.3);
    const auto b = random_binary_mask({24, 24, 24}, rng, 0.3);
    REQUIRE(a.count() >= 1000);
    const double soft = soft_dice_loss(a.to_tensor<double>(), b.to_tensor<double>()).item();
    CHECK(std::abs(dice_coeff(a, b) - (1.0 - soft)) < 1e-3);
  }
}

TEST_CASE("instance report") {
  const Extent3 s{10, 10, 10};
  const auto g1 = box(s, {0, 0, 0}, {3, 3, 3});
  const auto g2 = box(s, {6, 6, 6}, {9, 9, 9});
  const auto perfect = instance_report({g2, g1}, {g1, g2});
  CHECK(perfect.dice == 1.0);
  CHECK(perfect.nsd == 1.0);
  CHECK(perfect.instance_count_pred == 2);
  CHECK(perfect.per_instance.size() == 2);
  const auto none = instance_report({}, {g1, g2});
  CHECK(none.dice == 0.0);
  CHECK(none.instance_count_pred == 0);
  CHECK(none.instance_count_gt == 2);
  const auto half = instance_report({g1}, {g1, g2});
  CHECK(half.dice == 0.5);
  CHECK(half.nsd == 0.5);
  // Extra false positives dilute the mean.
  const auto extra = instance_report({g1, g2, box(s, {0, 6, 0}, {2, 8, 2})}, {g1, g2});
  CHECK(extra.dice == doctest::Approx(2.0 / 3.0));
  CHECK(instance_report({}, {}).dice == 1.0);
}
