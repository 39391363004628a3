#include <algorithm>
#include <array>
#include <cmath>
#include <random>

#include "ripo/error.hpp"
#include "ripo/music_data.hpp"
#include "ripo/random.hpp"

namespace ripo {

namespace {

constexpr std::array<int, 7> kMajorScale = {0, 2, 4, 5, 7, 9, 11};

struct MotifNote {
  int degree = 0;  // relative to the piece's base degree
  bool rest = false;
  int units = 1;  // 16th notes
};

// Samples `count` palette entries (in 16th units) that sum to `total`,
// uniformly over all ordered compositions.
std::vector<int> sample_rhythm(std::size_t count, int total, const std::vector<int>& parts, std::mt19937_64& rng) {
  // ways[k][r]: ordered ways to fill r units with k parts.
  std::vector<std::vector<double>> ways(count + 1, std::vector<double>(total + 1, 0.0));
  ways[0][0] = 1.0;
  for (std::size_t k = 1; k <= count; ++k) {
    for (int r = 0; r <= total; ++r) {
      for (int p : parts) {
        if (p <= r) ways[k][r] += ways[k - 1][r - p];
      }
    }
  }
  std::vector<int> out;
  int remaining = total;
  for (std::size_t k = count; k >= 1; --k) {
    std::vector<double> weights;
    for (int p : parts) weights.push_back(p <= remaining ? ways[k - 1][remaining - p] : 0.0);
    std::discrete_distribution<std::size_t> pick(weights.begin(), weights.end());
    const int chosen = parts[pick(rng)];
    out.push_back(chosen);
    remaining -= chosen;
  }
  return out;
}

bool rhythm_feasible(std::size_t count, int total, const std::vector<int>& parts) {
  std::vector<bool> reach(total + 1, false);
  reach[0] = true;
  for (std::size_t k = 0; k < count; ++k) {
    std::vector<bool> next(total + 1, false);
    for (int r = 0; r <= total; ++r) {
      if (!reach[r]) continue;
      for (int p : parts) {
        if (r + p <= total) next[r + p] = true;
      }
    }
    reach = std::move(next);
  }
  return reach[total];
}

}  // namespace

int scale_degree_to_midi(int degree) {
  const int octave = degree >= 0 ? degree / 7 : -((-degree + 6) / 7);
  const int step = degree - octave * 7;
  return 60 + 12 * octave + kMajorScale[static_cast<std::size_t>(step)];
}

void CorpusSpec::validate() const {
  auto fail = [](const std::string& what) { throw Error(ErrorKind::kInvalidArgument, "corpus spec: " + what); };
  if (num_pieces == 0) fail("num_pieces must be positive");
  if (bars_per_piece == 0) fail("bars_per_piece must be positive");
  if (motif_bars == 0) fail("motif_bars must be positive");
  if (motif_min_notes == 0 || motif_max_notes < motif_min_notes) fail("motif length range is empty");
  if (transposition_set.empty()) fail("transposition_set is empty");
  if (rhythm_palette.empty()) fail("rhythm_palette is empty");
  if (beats_per_bar != 4) fail("only 4 beats per bar are supported");
  for (double d : rhythm_palette) {
    const double units = d / kDurationUnit;
    if (!(d >= kDurationUnit && d <= kMaxTokenDuration) || std::abs(units - std::round(units)) > 1e-9) {
      fail("rhythm palette entries must be multiples of 0.25 within [0.25, 4]");
    }
  }
  if (rhythm_variation < 0.0 || rhythm_variation > 1.0) fail("rhythm_variation must be a probability");
  if (rest_probability < 0.0 || rest_probability >= 1.0) fail("rest_probability must be in [0, 1)");
  if (motif_bars > bars_per_piece) {
    throw Error(ErrorKind::kInvalidArgument, "corpus spec: motif of " + std::to_string(motif_bars) +
                                                 " bars is longer than a piece of " +
                                                 std::to_string(bars_per_piece) + " bars");
  }
}

nlohmann::json CorpusSpec::to_json() const {
  return {{"num_pieces", num_pieces},
          {"bars_per_piece", bars_per_piece},
          {"motif_bars", motif_bars},
          {"motif_length_range", {motif_min_notes, motif_max_notes}},
          {"transposition_set", transposition_set},
          {"rhythm_palette", rhythm_palette},
          {"rhythm_variation", rhythm_variation},
          {"rest_probability", rest_probability},
          {"beats_per_bar", beats_per_bar},
          {"rng_seed", seed}};
}

CorpusSpec CorpusSpec::from_json(const nlohmann::json& j) {
  CorpusSpec s;
  try {
    s.num_pieces = j.at("num_pieces").get<std::size_t>();
    s.bars_per_piece = j.at("bars_per_piece").get<std::size_t>();
    s.motif_bars = j.at("motif_bars").get<std::size_t>();
    s.motif_min_notes = j.at("motif_length_range").at(0).get<std::size_t>();
    s.motif_max_notes = j.at("motif_length_range").at(1).get<std::size_t>();
    s.transposition_set = j.at("transposition_set").get<std::vector<int>>();
    s.rhythm_palette = j.at("rhythm_palette").get<std::vector<double>>();
    s.rhythm_variation = j.at("rhythm_variation").get<double>();
    s.rest_probability = j.at("rest_probability").get<double>();
    s.beats_per_bar = j.at("beats_per_bar").get<int>();
    s.seed = j.at("rng_seed").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& ex) {
    throw Error(ErrorKind::kInvalidArgument, std::string("corpus spec: ") + ex.what());
  }
  return s;
}

std::vector<Melody> generate_corpus_melodies(const CorpusSpec& spec) {
  spec.validate();
  const int motif_units = static_cast<int>(spec.motif_bars) * spec.beats_per_bar * 4;
  const int piece_units = static_cast<int>(spec.bars_per_piece) * spec.beats_per_bar * 4;
  std::vector<int> parts;
  for (double d : spec.rhythm_palette) parts.push_back(static_cast<int>(std::lround(d / kDurationUnit)));
  std::sort(parts.begin(), parts.end());
  parts.erase(std::unique(parts.begin(), parts.end()), parts.end());

  std::vector<std::size_t> lengths;
  for (std::size_t len = spec.motif_min_notes; len <= spec.motif_max_notes; ++len) {
    if (rhythm_feasible(len, motif_units, parts)) lengths.push_back(len);
  }
  if (lengths.empty()) {
    throw Error(ErrorKind::kInvalidArgument,
                "corpus spec: no motif length in range can fill the motif span from the rhythm palette");
  }

  std::mt19937_64 rng = make_stream(spec.seed, "corpus");
  std::vector<Melody> pieces;
  pieces.reserve(spec.num_pieces);
  for (std::size_t piece = 0; piece < spec.num_pieces; ++piece) {
    std::uniform_int_distribution<std::size_t> pick_len(0, lengths.size() - 1);
    const std::size_t len = lengths[pick_len(rng)];
    const std::vector<int> rhythm = sample_rhythm(len, motif_units, parts, rng);

    std::vector<MotifNote> motif(len);
    std::uniform_int_distribution<int> step(-2, 2);
    std::bernoulli_distribution is_rest(spec.rest_probability);
    int degree = 0;
    for (std::size_t i = 0; i < len; ++i) {
      if (i > 0) degree += step(rng);
      motif[i].degree = degree;
      motif[i].units = rhythm[i];
      // The first note always sounds so every repetition starts on a pitch.
      motif[i].rest = i > 0 && is_rest(rng);
    }
    std::uniform_int_distribution<int> base_pick(-3, 4);
    const int base = base_pick(rng);

    Melody melody;
    melody.name = "synthetic_" + std::to_string(piece);
    melody.beats_per_bar = spec.beats_per_bar;
    std::uniform_int_distribution<std::size_t> pick_shift(0, spec.transposition_set.size() - 1);
    std::bernoulli_distribution vary(spec.rhythm_variation);
    int used = 0;
    for (std::size_t rep = 0; used < piece_units; ++rep) {
      const int shift = rep == 0 ? 0 : spec.transposition_set[pick_shift(rng)];
      std::vector<int> units(len);
      for (std::size_t i = 0; i < len; ++i) units[i] = motif[i].units;
      if (rep > 0 && len > 1 && vary(rng)) {
        std::uniform_int_distribution<std::size_t> at(0, len - 2);
        const std::size_t i = at(rng);
        std::swap(units[i], units[i + 1]);
      }
      for (std::size_t i = 0; i < len && used < piece_units; ++i) {
        const int u = std::min(units[i], piece_units - used);
        used += u;
        const Pitch pitch =
            motif[i].rest ? Pitch::rest() : Pitch::note(scale_degree_to_midi(base + shift + motif[i].degree));
        melody.notes.push_back({pitch, u * kDurationUnit});
      }
    }
    pieces.push_back(std::move(melody));
  }
  return pieces;
}

std::vector<TokenSequence> generate_corpus(const CorpusSpec& spec) {
  std::vector<TokenSequence> seqs;
  std::size_t longest = 0;
  for (const Melody& m : generate_corpus_melodies(spec)) {
    seqs.push_back(encode(m));
    longest = std::max(longest, seqs.back().size());
  }
  for (auto& s : seqs) s = pad_to(s, longest);
  return seqs;
}

}  // namespace ripo
