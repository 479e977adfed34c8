#include <doctest.h>

#include <cmath>

#include "gradcheck.hpp"
#include "miq3d/errors.hpp"
#include "miq3d/ops.hpp"

using namespace miq3d;
using miq3d::testing::random_tensor;
using T = Tensor<double>;

namespace {

double at4(const T& x, std::size_t c, std::size_t d, std::size_t h, std::size_t w) {
  return x.at(((c * x.dim(1) + d) * x.dim(2) + h) * x.dim(3) + w);
}

}  // namespace

TEST_CASE("broadcasting follows the trailing-dimension rule") {
  CHECK(broadcast_shapes({2, 3, 4}, {3, 1}) == Shape{2, 3, 4});
  CHECK(broadcast_shapes({4}, {2, 1}) == Shape{2, 4});
  CHECK_THROWS_AS(broadcast_shapes({2, 3}, {4}), DimensionError);
  const auto a = T::from({2, 2}, {1, 2, 3, 4});
  const auto b = T::from({2}, {10, 20});
  const auto c = add(a, b);
  CHECK(c.at(0) == 11);
  CHECK(c.at(3) == 24);
}

TEST_CASE("softmax rows sum to one and log_softmax is its log") {
  Rng rng(1);
  const auto x = random_tensor({4, 7}, rng, -30, 30, false);
  const auto s = softmax_lastdim(x);
  const auto l = log_softmax_lastdim(x);
  for (std::size_t r = 0; r < 4; ++r) {
    double total = 0;
    for (std::size_t c = 0; c < 7; ++c) {
      total += s.at(r * 7 + c);
      CHECK(std::log(s.at(r * 7 + c)) == doctest::Approx(l.at(r * 7 + c)).epsilon(1e-9));
    }
    CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("layernorm output has zero mean and unit variance before the affine") {
  Rng rng(2);
  const auto x = random_tensor({3, 16}, rng, -5, 5, false);
  const auto y = layernorm(x, T::full({16}, 1.0), T::zeros({16}));
  for (std::size_t r = 0; r < 3; ++r) {
    double m = 0, v = 0;
    for (std::size_t c = 0; c < 16; ++c) m += y.at(r * 16 + c);
    m /= 16;
    for (std::size_t c = 0; c < 16; ++c) v += (y.at(r * 16 + c) - m) * (y.at(r * 16 + c) - m);
    CHECK(std::abs(m) < 1e-12);
    CHECK(v / 16 == doctest::Approx(1.0).epsilon(1e-4));
  }
}

TEST_CASE("batched matmul matches the naive product") {
  Rng rng(3);
  const auto a = random_tensor({2, 3, 4}, rng, -1, 1, false);
  const auto b = random_tensor({4, 5}, rng, -1, 1, false);
  const auto c = matmul(a, b);
  REQUIRE(c.shape() == Shape{2, 3, 5});
  for (std::size_t bt = 0; bt < 2; ++bt)
    for (std::size_t i = 0; i < 3; ++i)
      for (std::size_t j = 0; j < 5; ++j) {
        double s = 0;
        for (std::size_t k = 0; k < 4; ++k) s += a.at((bt * 3 + i) * 4 + k) * b.at(k * 5 + j);
        CHECK(c.at((bt * 3 + i) * 5 + j) == doctest::Approx(s).epsilon(1e-12));
      }
  CHECK_THROWS_AS(matmul(a, random_tensor({3, 5}, rng, -1, 1, false)), DimensionError);
}

TEST_CASE("conv3d matches direct cross-correlation with stride and padding") {
  Rng rng(4);
  const auto x = random_tensor({2, 5, 6, 7}, rng, -1, 1, false);
  const auto w = random_tensor({3, 2, 3, 3, 3}, rng, -1, 1, false);
  const auto b = random_tensor({3}, rng, -1, 1, false);
  for (std::size_t stride : {1u, 2u}) {
    const std::size_t pad = 1;
    // Choose extents so the output extent is integral for both strides.
    const auto xin = stride == 1 ? x : random_tensor({2, 5, 7, 7}, rng, -1, 1, false);
    const auto y = conv3d(xin, w, b, stride, pad);
    for (std::size_t o = 0; o < 3; ++o)
      for (std::size_t d = 0; d < y.dim(1); ++d)
        for (std::size_t h = 0; h < y.dim(2); ++h)
          for (std::size_t ww = 0; ww < y.dim(3); ++ww) {
            double s = b.at(o);
            for (std::size_t c = 0; c < 2; ++c)
              for (std::size_t i = 0; i < 3; ++i)
                for (std::size_t j = 0; j < 3; ++j)
                  for (std::size_t k = 0; k < 3; ++k) {
                    const long zd = static_cast<long>(d * stride + i) - 1;
                    const long zh = static_cast<long>(h * stride + j) - 1;
                    const long zw = static_cast<long>(ww * stride + k) - 1;
                    if (zd < 0 || zh < 0 || zw < 0 || zd >= static_cast<long>(xin.dim(1)) ||
                        zh >= static_cast<long>(xin.dim(2)) || zw >= static_cast<long>(xin.dim(3)))
                      continue;
                    s += w.at((((o * 2 + c) * 3 + i) * 3 + j) * 3 + k) *
                         at4(xin, c, static_cast<std::size_t>(zd), static_cast<std::size_t>(zh), static_cast<std::size_t>(zw));
                  }
            CHECK(at4(y, o, d, h, ww) == doctest::Approx(s).epsilon(1e-12));
          }
  }
}

TEST_CASE("conv3d rejects even kernels and non-integral output extents") {
  const auto x = T::zeros({1, 4, 4, 4});
  CHECK_THROWS_AS(conv3d(x, T::zeros({1, 1, 2, 2, 2}), T{}, 1, 0), ConfigError);
  CHECK_THROWS_AS(conv3d(x, T::zeros({1, 1, 3, 3, 3}), T{}, 2, 1), ConfigError);
  CHECK_THROWS_AS(conv3d(x, T::zeros({1, 2, 3, 3, 3}), T{}, 1, 1), DimensionError);
}

TEST_CASE("patchify orders tokens row-major and features (c, pd, ph, pw)") {
  std::vector<double> v(2 * 4 * 4 * 4);
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<double>(i);
  const auto x = T::from({2, 4, 4, 4}, v);
  const auto p = patchify(x, 2);
  REQUIRE(p.shape() == Shape{8, 16});
  // Token 5 = grid (1, 0, 1); feature 11 = (c=1, pd=0, ph=1, pw=1).
  CHECK(p.at(5 * 16 + 11) == at4(x, 1, 2, 1, 3));
}

TEST_CASE("avgpool_downsample averages blocks") {
  std::vector<double> v(4 * 4 * 4);
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<double>(i);
  const auto y = avgpool_downsample(T::from({1, 4, 4, 4}, v), {2, 2, 2});
  // Block (0,0,0): voxels with d,h,w in {0,1}.
  double s = 0;
  for (std::size_t d = 0; d < 2; ++d)
    for (std::size_t h = 0; h < 2; ++h)
      for (std::size_t w = 0; w < 2; ++w) s += static_cast<double>((d * 4 + h) * 4 + w);
  CHECK(y.at(0) == doctest::Approx(s / 8));
  CHECK_THROWS_AS(avgpool_downsample(T::from({1, 4, 4, 4}, v), {3, 2, 2}), ConfigError);
}

TEST_CASE("trilinear_sample matches the 8-corner oracle and hits voxel centers exactly") {
  Rng rng(6);
  const auto f = random_tensor({3, 5, 6, 4}, rng, -1, 1, false);
  const auto at_voxel = trilinear_sample(f, {2, 3, 1});
  for (std::size_t c = 0; c < 3; ++c) CHECK(at_voxel.at(c) == at4(f, c, 2, 3, 1));
  for (int trial = 0; trial < 20; ++trial) {
    const Point3 p{rng.uniform(0, 4), rng.uniform(0, 5), rng.uniform(0, 3)};
    const auto s = trilinear_sample(f, p);
    const auto d0 = static_cast<std::size_t>(std::floor(p.d)), h0 = static_cast<std::size_t>(std::floor(p.h)),
               w0 = static_cast<std::size_t>(std::floor(p.w));
    const double td = p.d - static_cast<double>(d0), th = p.h - static_cast<double>(h0), tw = p.w - static_cast<double>(w0);
    for (std::size_t c = 0; c < 3; ++c) {
      double e = 0;
      for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 2; ++j)
          for (int k = 0; k < 2; ++k) {
            const double wt = (i ? td : 1 - td) * (j ? th : 1 - th) * (k ? tw : 1 - tw);
            if (wt == 0) continue;
            e += wt * at4(f, c, d0 + static_cast<std::size_t>(i), h0 + static_cast<std::size_t>(j), w0 + static_cast<std::size_t>(k));
          }
      CHECK(s.at(c) == doctest::Approx(e).epsilon(1e-12));
    }
  }
  CHECK_THROWS_AS(trilinear_sample(f, {-0.1, 0, 0}), PromptError);
  CHECK_THROWS_AS(trilinear_sample(f, {0, 5.01, 0}), PromptError);
  CHECK_NOTHROW(trilinear_sample(f, {4, 5, 3}));
}

TEST_CASE("trilinear_resize is the identity at equal size and preserves constants") {
  Rng rng(7);
  const auto f = random_tensor({2, 3, 4, 5}, rng, -1, 1, false);
  const auto same = trilinear_resize(f, {3, 4, 5});
  for (std::size_t i = 0; i < f.numel(); ++i) CHECK(same.at(i) == doctest::Approx(f.at(i)).epsilon(1e-14));
  const auto up = trilinear_resize(T::full({1, 2, 2, 2}, 0.25), {8, 6, 4});
  for (double v : up.data()) CHECK(v == doctest::Approx(0.25));
}

TEST_CASE("trilinear_resize upsampling uses half-voxel alignment") {
  // A 2-voxel line upsampled to 4: centers at -0.25, 0.25, 0.75, 1.25 clamp to [0, 1].
  const auto y = trilinear_resize(T::from({1, 1, 1, 2}, {0.0, 1.0}), {1, 1, 4});
  CHECK(y.at(0) == doctest::Approx(0.0));
  CHECK(y.at(1) == doctest::Approx(0.25));
  CHECK(y.at(2) == doctest::Approx(0.75));
  CHECK(y.at(3) == doctest::Approx(1.0));
}

TEST_CASE("bce_with_logits is stable for large logits and matches the definition") {
  const auto logits = T::from({4}, {-800.0, 800.0, 0.3, -1.2});
  const auto target = T::from({4}, {0.0, 1.0, 1.0, 0.0});
  const double expect = (0 + 0 + std::log1p(std::exp(-0.3)) + std::log1p(std::exp(-1.2))) / 4.0;
  CHECK(bce_with_logits(logits, target).item() == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("soft dice loss matches its formula") {
  const auto p = T::from({4}, {0.9, 0.1, 0.8, 0.0});
  const auto g = T::from({4}, {1, 0, 1, 1});
  const double inter = 0.9 + 0.8, sp = 1.8, sg = 3;
  CHECK(soft_dice_loss(p, g, 1.0).item() == doctest::Approx(1 - (2 * inter + 1) / (sp + sg + 1)));
}
