#include "pumfa/optim.hpp"

#include <cmath>

namespace pumfa {

AdamState::AdamState(const std::vector<Tensor>& params, AdamOptions opts) : options(opts) {
  m.reserve(params.size());
  v.reserve(params.size());
  for (const auto& p : params) {
    m.emplace_back(p.numel(), 0.0);
    v.emplace_back(p.numel(), 0.0);
  }
}

void adam_step(std::vector<Tensor>& params, AdamState& state) {
  if (params.size() != state.m.size() || params.size() != state.v.size()) {
    throw DimensionError("adam_step: " + std::to_string(params.size()) + " parameters but state tracks " +
                         std::to_string(state.m.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (state.m[i].size() != params[i].numel() || state.v[i].size() != params[i].numel()) {
      throw DimensionError("adam_step: moment buffer " + std::to_string(i) + " does not match parameter " +
                           shape_str(params[i].shape()));
    }
  }
  const auto& o = state.options;
  state.step += 1;
  const double t = static_cast<double>(state.step);
  const real bc1 = static_cast<real>(1.0 - std::pow(static_cast<double>(o.beta1), t));
  const real bc2 = static_cast<real>(1.0 - std::pow(static_cast<double>(o.beta2), t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto w = params[i].mutable_data();
    auto g = params[i].grad();
    auto& m = state.m[i];
    auto& v = state.v[i];
    for (std::size_t j = 0; j < w.size(); ++j) {
      const real gj = g.empty() ? 0.0 : g[j];
      m[j] = o.beta1 * m[j] + (1.0 - o.beta1) * gj;
      v[j] = o.beta2 * v[j] + (1.0 - o.beta2) * gj * gj;
      const real m_hat = m[j] / bc1;
      const real v_hat = v[j] / bc2;
      w[j] -= o.lr * m_hat / (std::sqrt(v_hat) + o.eps);
    }
  }
}

void zero_grads(std::vector<Tensor>& params) {
  for (auto& p : params) p.zero_grad();
}

}  // namespace pumfa
