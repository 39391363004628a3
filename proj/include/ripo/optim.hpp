#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "ripo/tensor.hpp"

namespace ripo {

struct AdamState {
  std::int64_t step_count = 0;
  std::vector<std::vector<double>> m;  // one buffer per parameter, same order
  std::vector<std::vector<double>> v;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  // Sizes the moment buffers for `params` (zero-filled).
  void init(std::span<const Tensor> params);
};

// One bias-corrected Adam update in place; gradients are zeroed afterwards.
// Every parameter must carry a gradient buffer.
void adam_step(std::span<Tensor> params, AdamState& state);

}  // namespace ripo
