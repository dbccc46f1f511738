#pragma once

#include "pumfa/tensor.hpp"

#include <cstdint>
#include <vector>

namespace pumfa {

struct AdamOptions {
  real lr = 1e-4;
  real beta1 = 0.9;
  real beta2 = 0.999;
  real eps = 1e-8;
};

/// Moment buffers for one ordered parameter list.
struct AdamState {
  AdamOptions options;
  std::vector<std::vector<real>> m;
  std::vector<std::vector<real>> v;
  std::int64_t step = 0;

  AdamState() = default;
  AdamState(const std::vector<Tensor>& params, AdamOptions opts);
};

/// One bias-corrected Adam update using each parameter's accumulated gradient.
/// Parameters without a gradient buffer are treated as having zero gradient.
void adam_step(std::vector<Tensor>& params, AdamState& state);

void zero_grads(std::vector<Tensor>& params);

}  // namespace pumfa
