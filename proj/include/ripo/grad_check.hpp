#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "ripo/tensor.hpp"

namespace ripo {

struct GradCheckOptions {
  double step = 1e-5;  // five-point central stencil
  double tolerance = 1e-4;
  // Entries sampled per parameter tensor (all entries if the tensor is smaller).
  std::size_t samples_per_param = 8;
  // Denominator floor for the relative error, so gradients that are zero up
  // to rounding do not inflate it.
  double abs_floor = 1e-5;
  // Samples whose h and 2h central differences disagree by more than this
  // relative amount straddle a non-differentiable point and are replaced.
  double kink_tolerance = 1e-3;
  std::uint64_t seed = 0;
};

struct GradCheckEntry {
  std::size_t param = 0;
  std::size_t index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double rel_error = 0.0;
};

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  std::size_t skipped_nonsmooth = 0;
  bool passed = false;
  std::vector<GradCheckEntry> entries;
};

// Compares reverse-mode gradients of `loss_fn` (which must rebuild its graph
// on each call from the current values of `params`) with central finite
// differences on a random subsample of parameter entries. Entries near a
// non-differentiable point are skipped and counted.
GradCheckReport grad_check(const std::function<Tensor()>& loss_fn, std::span<Tensor> params,
                           const GradCheckOptions& options = {});

}  // namespace ripo
