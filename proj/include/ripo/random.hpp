#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace ripo {

// All randomness derives from one run seed. Each consumer (corpus, a named
// parameter's init, sampling, shuffling) draws from its own stream so that
// adding or removing one consumer never shifts another's draws.
std::uint64_t stream_seed(std::uint64_t seed, std::string_view name);

inline std::mt19937_64 make_stream(std::uint64_t seed, std::string_view name) {
  return std::mt19937_64(stream_seed(seed, name));
}

}  // namespace ripo
