#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "ripo/model.hpp"
#include "ripo/optim.hpp"

namespace ripo {

// On-disk layout: the 8-byte magic "RIPOCKPT", a little-endian u32 format
// version, a u64 header length, a JSON header of that many bytes, then the
// tensor payload as little-endian IEEE-754 doubles. The header's "tensors"
// list gives each tensor's name, shape and element offset into the payload.
// Adam moments are stored as "adam.m/<param>" and "adam.v/<param>".
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  ModelConfig config;
  std::size_t epoch = 0;
  AdamState adam;
  std::string rng_state;  // serialized shuffle stream
  std::vector<std::pair<std::string, std::vector<double>>> parameters;
  std::vector<std::pair<std::string, Shape>> shapes;
};

Checkpoint make_checkpoint(const RipoModel& model, const AdamState& adam, const std::string& rng_state,
                           std::size_t epoch);
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// Builds a model from the checkpoint's config and copies its parameters in.
RipoModel restore_model(const Checkpoint& checkpoint);

}  // namespace ripo
