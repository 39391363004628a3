#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "ripo/model.hpp"

namespace ripo {

enum class SamplingStrategy { kTopK, kTopP };

struct GenerationConfig {
  SamplingStrategy strategy = SamplingStrategy::kTopP;
  std::size_t k = 5;
  double p = 0.9;
  double temperature = 1.0;
  int seed_bars = 2;
  int target_bars = 16;  // total length including the seed
  std::uint64_t rng_seed = 0;

  void validate() const;
  nlohmann::json to_json() const;
  static GenerationConfig from_json(const nlohmann::json& j);
};

struct StepRecord {
  std::size_t step = 0;
  std::size_t pitch_token = 0;
  double p_pitch = 0.0;
  std::size_t duration_token = 0;
  double p_duration = 0.0;
  double onset = 0.0;
};

using StepTrace = std::vector<StepRecord>;

struct GenerationResult {
  TokenSequence sequence;  // seed followed by the generated tokens
  std::size_t seed_length = 0;
  StepTrace trace;
};

// Keeps the k largest probabilities (ties go to the lower index) and
// renormalizes.
std::vector<double> filter_top_k(std::span<const double> probs, std::size_t k);
// Keeps the smallest descending-probability prefix whose mass reaches p and
// renormalizes.
std::vector<double> filter_top_p(std::span<const double> probs, double p);
std::vector<double> apply_temperature(std::span<const double> logits, double temperature);

// Pad masking, temperature and the configured filter, in that order. This is
// the exact distribution a token is drawn from.
std::vector<double> sampling_distribution(std::span<const double> logits, std::size_t pad_index,
                                          const GenerationConfig& config);

// Tokens whose onset lies before seed_bars bars.
TokenSequence seed_prefix(const TokenSequence& piece, int seed_bars);

GenerationResult generate(const RipoModel& model, const TokenSequence& seed, const GenerationConfig& config);

// Teacher-forced probability of each actual next token under the plain
// softmax; one record per position 0..n-2.
StepTrace trace_ground_truth(const RipoModel& model, const TokenSequence& piece);

std::string trace_csv(const StepTrace& trace);

}  // namespace ripo
