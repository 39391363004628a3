#pragma once

#include <cstddef>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "ripo/model.hpp"
#include "ripo/optim.hpp"

namespace ripo {

struct LossRecord {
  std::size_t epoch = 0;
  std::string split;  // "train" or "test"
  double ce_pitch = 0.0;
  double ce_duration = 0.0;
  double ce_sum = 0.0;
  std::size_t targets = 0;
};

// Everything besides the weights needed to continue training exactly.
struct TrainState {
  AdamState adam;
  std::mt19937_64 shuffle;
  std::size_t epoch = 0;  // completed epochs

  static TrainState fresh(const RipoModel& model);
  std::string rng_state() const;
  void set_rng_state(const std::string& text);
};

using EpochCallback = std::function<void(const LossRecord&)>;

// Target-weighted mean losses over `sequences`, without building a graph.
LossRecord evaluate_loss(const RipoModel& model, std::span<const TokenSequence> sequences,
                         std::size_t batch_size);

// Runs `epochs` more epochs of shuffled mini-batch Adam. Each epoch logs the
// running target-weighted training loss and a full pass over `test` (if
// non-empty), then multiplies the learning rate by the configured decay.
// Throws Error(kDivergence) on a non-finite loss.
std::vector<LossRecord> train(RipoModel& model, std::span<const TokenSequence> train_set,
                              std::span<const TokenSequence> test_set, std::size_t epochs, TrainState& state,
                              const EpochCallback& on_record = {});

std::string loss_csv(std::span<const LossRecord> records);

}  // namespace ripo
