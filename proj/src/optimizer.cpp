#include "miq3d/optimizer.hpp"

#include <cmath>

#include "miq3d/errors.hpp"

namespace miq3d {

double global_grad_norm(const ParameterStore<float>& store) {
  double sq = 0;
  for (const auto& p : store.params()) {
    if (p.frozen || !p.tensor.has_grad()) continue;
    for (float g : p.tensor.grad()) sq += static_cast<double>(g) * g;
  }
  return std::sqrt(sq);
}

double Adam::step(ParameterStore<float>& store, AdamState& state) const {
  auto& params = store.params();
  if (state.m.empty()) {
    for (const auto& p : params) {
      state.m.emplace_back(p.tensor.numel(), 0.0f);
      state.v.emplace_back(p.tensor.numel(), 0.0f);
    }
  }
  if (state.m.size() != params.size()) throw CompatibilityError("optimizer state does not match parameters");

  const double norm = global_grad_norm(store);
  if (!std::isfinite(norm)) {
    for (const auto& p : params) {
      if (p.frozen || !p.tensor.has_grad()) continue;
      for (float g : p.tensor.grad())
        if (!std::isfinite(g)) throw NumericError("non-finite gradient in parameter " + p.name);
    }
  }
  const double clip = (cfg_.grad_clip > 0 && norm > cfg_.grad_clip) ? cfg_.grad_clip / norm : 1.0;

  state.t += 1;
  const double t = static_cast<double>(state.t);
  const double bc1 = 1.0 - std::pow(cfg_.beta1, t);
  const double bc2 = 1.0 - std::pow(cfg_.beta2, t);
  const auto b1 = static_cast<float>(cfg_.beta1);
  const auto b2 = static_cast<float>(cfg_.beta2);
  const auto step_size = static_cast<float>(cfg_.lr / bc1);
  const auto inv_sqrt_bc2 = static_cast<float>(1.0 / std::sqrt(bc2));
  const auto eps = static_cast<float>(cfg_.eps);
  const auto fclip = static_cast<float>(clip);

  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i];
    if (p.frozen || !p.tensor.has_grad()) continue;
    const auto g = p.tensor.grad();
    const auto w = p.tensor.mutable_data();
    auto& m = state.m[i];
    auto& v = state.v[i];
    if (m.size() != w.size()) throw CompatibilityError("optimizer state size mismatch for " + p.name);
    for (std::size_t j = 0; j < w.size(); ++j) {
      const float gj = g[j] * fclip;
      m[j] = b1 * m[j] + (1.0f - b1) * gj;
      v[j] = b2 * v[j] + (1.0f - b2) * gj * gj;
      w[j] -= step_size * m[j] / (std::sqrt(v[j]) * inv_sqrt_bc2 + eps);
    }
  }
  return norm;
}

}  // namespace miq3d
