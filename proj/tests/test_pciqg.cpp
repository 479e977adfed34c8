#include <doctest.h>

#include <cmath>

#include "gradcheck.hpp"
#include "miq3d/errors.hpp"
#include "miq3d/pciqg.hpp"

using namespace miq3d;
using miq3d::testing::random_tensor;

TEST_CASE("seed at an integer voxel is that voxel's feature column") {
  Rng rng(1);
  const auto f = random_tensor({6, 4, 5, 3}, rng, -1, 1, false);
  const auto s = sample_seed(f, PointPrompt{{1, 2, 0}});
  REQUIRE(s.v_seed.shape() == Shape{6});
  for (std::size_t c = 0; c < 6; ++c) CHECK(s.v_seed.at(c) == f.at(((c * 4 + 1) * 5 + 2) * 3 + 0));
}

TEST_CASE("prompts inside a constant-feature region give identical seeds") {
  std::vector<double> v(2 * 6 * 6 * 6, 0.0);
  for (std::size_t c = 0; c < 2; ++c)
    for (std::size_t d = 1; d < 5; ++d)
      for (std::size_t h = 1; h < 5; ++h)
        for (std::size_t w = 1; w < 5; ++w) v[((c * 6 + d) * 6 + h) * 6 + w] = 0.5 + static_cast<double>(c);
  const auto f = Tensor<double>::from({2, 6, 6, 6}, v);
  const auto a = sample_seed(f, PointPrompt{{1.5, 2.25, 3.0}});
  const auto b = sample_seed(f, PointPrompt{{3.9, 1.0, 2.7}});
  for (std::size_t c = 0; c < 2; ++c) CHECK(a.v_seed.at(c) == b.v_seed.at(c));
}

TEST_CASE("out-of-bounds prompts are rejected") {
  const auto f = Tensor<double>::zeros({2, 4, 4, 4});
  CHECK_THROWS_AS(sample_seed(f, PointPrompt{{0, 0, 4}}), PromptError);
  CHECK_THROWS_AS(sample_seed(f, PointPrompt{{-1, 0, 0}}), PromptError);
}

TEST_CASE("query set shape and slot diversity") {
  ParameterStore<double> store(2);
  const QueryGenerator<double> gen(store, 10, 8);
  Rng rng(3);
  const auto q = gen.generate({random_tensor({8}, rng, -1, 1, false)}).queries;
  REQUIRE(q.shape() == Shape{10, 8});
  for (std::size_t i = 0; i < 10; ++i)
    for (std::size_t j = i + 1; j < 10; ++j) {
      double d = 0;
      for (std::size_t c = 0; c < 8; ++c) d += std::abs(q.at(i * 8 + c) - q.at(j * 8 + c));
      CHECK(d > 1e-6);
    }
  for (double v : gen.slots().data()) CHECK((v >= -1.0 && v <= 1.0));
  CHECK_THROWS_AS(gen.generate({random_tensor({7}, rng, -1, 1, false)}), DimensionError);
}

TEST_CASE("queries genuinely depend on the seed (nonzero finite-difference gradient)") {
  ParameterStore<double> store(4);
  const QueryGenerator<double> gen(store, 5, 6);
  Rng rng(5);
  const auto seed = random_tensor({6}, rng);
  const auto r = miq3d::testing::grad_check(
      [&gen](const auto& in) { return miq3d::testing::random_projection(gen.generate({in[0]}).queries, 9); },
      {seed}, rng);
  CHECK(r.rel_error < 1e-6);
  const auto leaf = random_tensor({6}, rng);
  miq3d::testing::random_projection(gen.generate({leaf}).queries, 9).backward();
  REQUIRE(leaf.has_grad());
  double norm = 0;
  for (double g : leaf.grad()) norm += g * g;
  CHECK(std::sqrt(norm) > 1e-3);
}
