#include "ripo/init.hpp"

#include <cmath>
#include <random>

namespace ripo {

Tensor xavier_uniform(std::size_t fan_in, std::size_t fan_out, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-limit, limit);
  std::vector<double> data(fan_in * fan_out);
  for (double& v : data) v = dist(rng);
  return Tensor::from({fan_in, fan_out}, std::move(data), true);
}

Tensor normal_init(Shape shape, double stddev, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> dist(0.0, stddev);
  std::vector<double> data(shape_size(shape));
  for (double& v : data) v = dist(rng);
  return Tensor::from(std::move(shape), std::move(data), true);
}

Tensor zeros_param(Shape shape) { return Tensor::zeros(std::move(shape), true); }

Tensor ones_param(Shape shape) { return Tensor::full(std::move(shape), 1.0, true); }

}  // namespace ripo
