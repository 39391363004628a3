#include "ripo/decoder.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "ripo/error.hpp"
#include "ripo/io_util.hpp"
#include "ripo/random.hpp"

namespace ripo {
namespace {

void require_distribution(std::span<const double> probs, const char* where) {
  if (probs.empty()) throw Error(ErrorKind::kInvalidArgument, std::string(where) + ": empty distribution");
  double total = 0.0;
  for (double p : probs) {
    if (!(p >= 0.0) || !std::isfinite(p)) {
      throw Error(ErrorKind::kInvalidArgument, std::string(where) + ": probabilities must be finite and >= 0");
    }
    total += p;
  }
  if (std::abs(total - 1.0) > 1e-6) {
    throw Error(ErrorKind::kInvalidArgument, std::string(where) + ": probabilities sum to " + format_double(total));
  }
}

// Indices by descending probability, lower index first among equals.
std::vector<std::size_t> ranked(std::span<const double> probs) {
  std::vector<std::size_t> order(probs.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return probs[a] > probs[b]; });
  return order;
}

std::vector<double> keep(std::span<const double> probs, std::span<const std::size_t> kept) {
  double mass = 0.0;
  for (std::size_t i : kept) mass += probs[i];
  std::vector<double> out(probs.size(), 0.0);
  for (std::size_t i : kept) out[i] = probs[i] / mass;
  return out;
}

std::size_t draw(std::span<const double> probs, std::mt19937_64& rng) {
  const double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
  double cum = 0.0;
  std::size_t last = 0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    if (probs[i] <= 0.0) continue;
    cum += probs[i];
    last = i;
    if (u < cum) return i;
  }
  return last;
}

std::vector<double> last_row(const Tensor& logits) {
  const std::size_t cols = logits.cols();
  auto row = logits.data().subspan((logits.rows() - 1) * cols, cols);
  return {row.begin(), row.end()};
}

SamplingStrategy strategy_from_string(const std::string& name) {
  if (name == "top_k") return SamplingStrategy::kTopK;
  if (name == "top_p") return SamplingStrategy::kTopP;
  throw Error(ErrorKind::kInvalidArgument, "unknown sampling strategy '" + name + "' (expected top_k or top_p)");
}

}  // namespace

void GenerationConfig::validate() const {
  auto fail = [](const std::string& what) { throw Error(ErrorKind::kInvalidArgument, "generation config: " + what); };
  if (k < 1) fail("k must be at least 1");
  if (!(p > 0.0 && p <= 1.0)) fail("p must lie in (0, 1]");
  if (!(temperature > 0.0) || !std::isfinite(temperature)) fail("temperature must be positive");
  if (seed_bars < 1) fail("seed_bars must be positive");
  if (target_bars <= seed_bars) fail("target_bars must exceed seed_bars");
}

nlohmann::json GenerationConfig::to_json() const {
  return {{"strategy", strategy == SamplingStrategy::kTopK ? "top_k" : "top_p"},
          {"k", k},
          {"p", p},
          {"temperature", temperature},
          {"seed_bars", seed_bars},
          {"target_bars", target_bars},
          {"rng_seed", rng_seed}};
}

GenerationConfig GenerationConfig::from_json(const nlohmann::json& j) {
  GenerationConfig c;
  try {
    c.strategy = strategy_from_string(j.at("strategy").get<std::string>());
    c.k = j.at("k").get<std::size_t>();
    c.p = j.at("p").get<double>();
    c.temperature = j.at("temperature").get<double>();
    c.seed_bars = j.at("seed_bars").get<int>();
    c.target_bars = j.at("target_bars").get<int>();
    c.rng_seed = j.at("rng_seed").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& ex) {
    throw Error(ErrorKind::kInvalidArgument, std::string("generation config: ") + ex.what());
  }
  c.validate();
  return c;
}

std::vector<double> filter_top_k(std::span<const double> probs, std::size_t k) {
  if (k < 1) throw Error(ErrorKind::kInvalidArgument, "filter_top_k: k must be at least 1");
  require_distribution(probs, "filter_top_k");
  if (k >= probs.size()) return {probs.begin(), probs.end()};
  const auto order = ranked(probs);
  return keep(probs, std::span(order).first(k));
}

std::vector<double> filter_top_p(std::span<const double> probs, double p) {
  if (!(p > 0.0) || p > 1.0) throw Error(ErrorKind::kInvalidArgument, "filter_top_p: p must lie in (0, 1]");
  require_distribution(probs, "filter_top_p");
  if (p == 1.0) return {probs.begin(), probs.end()};
  const auto order = ranked(probs);
  double cum = 0.0;
  std::size_t count = 0;
  while (count < order.size()) {
    cum += probs[order[count++]];
    if (cum >= p) break;
  }
  return keep(probs, std::span(order).first(count));
}

std::vector<double> apply_temperature(std::span<const double> logits, double temperature) {
  if (!(temperature > 0.0)) throw Error(ErrorKind::kInvalidArgument, "apply_temperature: temperature must be > 0");
  if (logits.empty()) throw Error(ErrorKind::kInvalidArgument, "apply_temperature: empty logits");
  const double peak = *std::max_element(logits.begin(), logits.end());
  std::vector<double> out(logits.size());
  double total = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp((logits[i] - peak) / temperature);
    total += out[i];
  }
  for (double& v : out) v /= total;
  return out;
}

std::vector<double> sampling_distribution(std::span<const double> logits, std::size_t pad_index,
                                          const GenerationConfig& config) {
  if (logits.size() < 2 || pad_index >= logits.size()) {
    throw Error(ErrorKind::kInvalidArgument, "sampling_distribution: need a pad index and another token");
  }
  std::vector<double> masked(logits.begin(), logits.end());
  masked[pad_index] = -std::numeric_limits<double>::infinity();
  const std::vector<double> probs = apply_temperature(masked, config.temperature);
  return config.strategy == SamplingStrategy::kTopK ? filter_top_k(probs, config.k) : filter_top_p(probs, config.p);
}

TokenSequence seed_prefix(const TokenSequence& piece, int seed_bars) {
  const TokenSequence real = strip_padding(piece);
  const double limit = static_cast<double>(seed_bars) * real.beat;
  std::size_t n = 0;
  while (n < real.size() && real.onset[n] < limit) ++n;
  return prefix(real, n);
}

GenerationResult generate(const RipoModel& model, const TokenSequence& seed, const GenerationConfig& config) {
  config.validate();
  TokenSequence current = strip_padding(seed);
  const double seed_beats = static_cast<double>(config.seed_bars) * current.beat;
  if (current.size() == 0 || current.end_time() < seed_beats) {
    throw Error(ErrorKind::kInvalidArgument, "seed '" + seed.name + "' covers " + format_double(current.end_time()) +
                                                 " beats; at least " + format_double(seed_beats) + " are required");
  }
  const std::size_t max_len = model.config().max_len;
  if (current.size() > max_len) throw Error(ErrorKind::kInvalidArgument, "seed is longer than max_len");

  const double target = static_cast<double>(config.target_bars) * current.beat;
  std::mt19937_64 rng = make_stream(config.rng_seed, "sampling");
  std::vector<std::size_t> pitch = current.pitch, duration = current.duration;
  GenerationResult result;
  result.seed_length = current.size();

  NoGradGuard no_grad;
  while (current.end_time() < target && current.size() < max_len) {
    const SequenceLogits logits = model.forward(current);
    const auto pitch_probs = sampling_distribution(last_row(logits.pitch), Vocabulary::kPitchPad, config);
    const auto dur_probs = sampling_distribution(last_row(logits.duration), Vocabulary::kDurationPad, config);
    const std::size_t p = draw(pitch_probs, rng);
    const std::size_t d = draw(dur_probs, rng);
    result.trace.push_back({result.trace.size(), p, pitch_probs[p], d, dur_probs[d], current.end_time()});
    pitch.push_back(p);
    duration.push_back(d);
    current = make_sequence(pitch, duration, current.beat, current.name);
  }
  result.sequence = std::move(current);
  return result;
}

StepTrace trace_ground_truth(const RipoModel& model, const TokenSequence& piece) {
  const TokenSequence seq = strip_padding(piece);
  if (seq.size() < 2) throw Error(ErrorKind::kInvalidArgument, "trace_ground_truth: piece needs at least 2 tokens");
  NoGradGuard no_grad;
  const SequenceLogits logits = model.forward(seq);
  const Tensor pitch = softmax_lastdim(logits.pitch), dur = softmax_lastdim(logits.duration);
  StepTrace trace;
  for (std::size_t t = 0; t + 1 < seq.size(); ++t) {
    const std::size_t p = seq.pitch[t + 1], d = seq.duration[t + 1];
    trace.push_back({t, p, pitch.at(t, p), d, dur.at(t, d), seq.onset[t + 1]});
  }
  return trace;
}

std::string trace_csv(const StepTrace& trace) {
  std::string out = "step,pitch_token,p_pitch,dur_token,p_dur,onset\n";
  for (const auto& r : trace) {
    out += std::to_string(r.step) + "," + std::to_string(r.pitch_token) + "," + format_double(r.p_pitch) + "," +
           std::to_string(r.duration_token) + "," + format_double(r.p_duration) + "," + format_double(r.onset) + "\n";
  }
  return out;
}

}  // namespace ripo
