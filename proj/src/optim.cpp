#include "ripo/optim.hpp"

#include <cmath>
#include <string>

#include "ripo/error.hpp"

namespace ripo {

void AdamState::init(std::span<const Tensor> params) {
  step_count = 0;
  m.clear();
  v.clear();
  for (const Tensor& p : params) {
    m.emplace_back(p.size(), 0.0);
    v.emplace_back(p.size(), 0.0);
  }
}

void adam_step(std::span<Tensor> params, AdamState& state) {
  if (state.m.size() != params.size() || state.v.size() != params.size()) {
    throw Error(ErrorKind::kDimension, "adam_step: optimizer state holds " + std::to_string(state.m.size()) +
                                           " buffers for " + std::to_string(params.size()) + " parameters");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!params[i].has_grad()) {
      throw Error(ErrorKind::kInvalidArgument, "adam_step: parameter " + std::to_string(i) + " has no gradient");
    }
    if (state.m[i].size() != params[i].size() || state.v[i].size() != params[i].size()) {
      throw Error(ErrorKind::kDimension, "adam_step: moment buffer size mismatch at parameter " + std::to_string(i));
    }
  }
  ++state.step_count;
  const double t = static_cast<double>(state.step_count);
  const double correction1 = 1.0 - std::pow(state.beta1, t);
  const double correction2 = 1.0 - std::pow(state.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto data = params[i].mutable_data();
    auto grad = params[i].grad_sink();
    auto& m = state.m[i];
    auto& v = state.v[i];
    for (std::size_t j = 0; j < data.size(); ++j) {
      const double g = grad[j];
      m[j] = state.beta1 * m[j] + (1.0 - state.beta1) * g;
      v[j] = state.beta2 * v[j] + (1.0 - state.beta2) * g * g;
      const double m_hat = m[j] / correction1;
      const double v_hat = v[j] / correction2;
      data[j] -= state.lr * m_hat / (std::sqrt(v_hat) + state.eps);
    }
    params[i].zero_grad();
  }
}

}  // namespace ripo
