#pragma once

#include <cstdint>

#include "ripo/tensor.hpp"

namespace ripo {

// Parameter initializers; each draws from its own seeded stream.
Tensor xavier_uniform(std::size_t fan_in, std::size_t fan_out, std::uint64_t seed);  // [fan_in, fan_out]
Tensor normal_init(Shape shape, double stddev, std::uint64_t seed);
Tensor zeros_param(Shape shape);
Tensor ones_param(Shape shape);

}  // namespace ripo
