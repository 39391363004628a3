#include "ripo/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <set>

#include "ripo/error.hpp"
#include "ripo/io_util.hpp"

namespace ripo {
namespace {

constexpr double kDensityFloor = 1e-12;

bool in_c_major(int midi) {
  switch (((midi % 12) + 12) % 12) {
    case 0: case 2: case 4: case 5: case 7: case 9: case 11:
      return true;
    default:
      return false;
  }
}

std::vector<double> normalized_density(std::span<const double> sample, const Grid& grid) {
  std::vector<double> d = kde_on_grid(sample, grid);
  double total = 0.0;
  for (double& v : d) {
    v = std::max(v, kDensityFloor);
    total += v;
  }
  for (double& v : d) v /= total;
  return d;
}

std::vector<Pitch> pitches_of(const TokenSequence& seq) {
  std::vector<Pitch> out;
  for (std::size_t t = 0; t < seq.size(); ++t) {
    if (!seq.pad[t]) out.push_back(Vocabulary::pitch_token(seq.pitch[t]));
  }
  return out;
}

double mean(std::span<const double> xs) {
  double s = 0.0;
  for (double x : xs) s += x;
  return xs.empty() ? 0.0 : s / static_cast<double>(xs.size());
}

}  // namespace

double seq_rep_n(std::span<const std::size_t> tokens, std::size_t n) {
  if (n == 0) throw Error(ErrorKind::kInvalidArgument, "seq_rep_n: n must be positive");
  if (tokens.size() < n) {
    throw Error(ErrorKind::kInvalidArgument, "seq_rep_n: sequence of length " + std::to_string(tokens.size()) +
                                                 " is shorter than n = " + std::to_string(n));
  }
  std::set<std::vector<std::size_t>> distinct;
  const std::size_t total = tokens.size() - n + 1;
  for (std::size_t i = 0; i < total; ++i) distinct.emplace(tokens.begin() + i, tokens.begin() + i + n);
  return 1.0 - static_cast<double>(distinct.size()) / static_cast<double>(total);
}

std::vector<double> Grid::points() const {
  if (!(step > 0.0) || stop < start) throw Error(ErrorKind::kInvalidArgument, "grid: need step > 0 and stop >= start");
  const auto count = static_cast<std::size_t>(std::floor((stop - start) / step + 1e-9)) + 1;
  std::vector<double> out(count);
  for (std::size_t i = 0; i < count; ++i) out[i] = start + static_cast<double>(i) * step;
  return out;
}

double scott_bandwidth(std::span<const double> sample, double fallback) {
  const double n = static_cast<double>(sample.size());
  if (sample.size() < 2) return fallback;
  const double mu = mean(sample);
  double ss = 0.0;
  for (double x : sample) ss += (x - mu) * (x - mu);
  const double sd = std::sqrt(ss / (n - 1.0));
  return sd > 0.0 ? sd * std::pow(n, -0.2) : fallback;
}

std::vector<double> kde_on_grid(std::span<const double> sample, const Grid& grid) {
  if (sample.empty()) throw Error(ErrorKind::kInvalidArgument, "kde: empty sample");
  const double h = scott_bandwidth(sample, grid.step);
  const double norm = 1.0 / (static_cast<double>(sample.size()) * h * std::sqrt(2.0 * std::numbers::pi));
  std::vector<double> out;
  for (double x : grid.points()) {
    double s = 0.0;
    for (double xi : sample) {
      const double z = (x - xi) / h;
      s += std::exp(-0.5 * z * z);
    }
    out.push_back(s * norm);
  }
  return out;
}

double kl_kde(std::span<const double> sample_p, std::span<const double> sample_q, const Grid& grid) {
  if (sample_p.empty() || sample_q.empty()) throw Error(ErrorKind::kInvalidArgument, "kl_kde: empty sample");
  const auto p = normalized_density(sample_p, grid);
  const auto q = normalized_density(sample_q, grid);
  double kl = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) kl += p[i] * std::log(p[i] / q[i]);
  return kl;
}

double in_scale_ratio(std::span<const Pitch> pitches) {
  std::size_t total = 0, in_scale = 0;
  for (const Pitch& p : pitches) {
    if (p.kind != PitchKind::kMidi) continue;
    ++total;
    if (in_c_major(p.midi)) ++in_scale;
  }
  if (total == 0) throw Error(ErrorKind::kInvalidArgument, "in_scale_ratio: no MIDI pitches");
  return static_cast<double>(in_scale) / static_cast<double>(total);
}

ArpeggioCount arpeggio_count(const TokenSequence& seq) {
  ArpeggioCount c;
  const std::size_t n = seq.real_length();
  for (std::size_t i = 0; i + 4 <= n; ++i) {
    bool all_notes = true;
    for (std::size_t j = i; j < i + 4; ++j) all_notes = all_notes && seq.pitch_fmt[j];
    if (!all_notes) continue;
    ++c.eligible;

    // At most one duration may differ from the mode, i.e. some duration
    // occurs at least three times.
    std::size_t modal = 0;
    for (std::size_t j = i; j < i + 4; ++j) {
      modal = std::max(modal, static_cast<std::size_t>(
                                  std::count(seq.duration.begin() + i, seq.duration.begin() + i + 4, seq.duration[j])));
    }
    if (modal < 3) continue;

    int direction = 0;
    bool ok = true;
    for (std::size_t j = i; j + 1 < i + 4 && ok; ++j) {
      const double step = seq.pitch_value[j + 1] - seq.pitch_value[j];
      const double size = std::abs(step);
      const int dir = step > 0 ? 1 : -1;
      ok = size >= 1.0 && size <= 4.0 && (direction == 0 || dir == direction);
      direction = dir;
    }
    if (ok) ++c.qualifying;
  }
  return c;
}

double arpeggio_ratio(const TokenSequence& seq) {
  const ArpeggioCount c = arpeggio_count(seq);
  if (c.eligible == 0) throw Error(ErrorKind::kInvalidArgument, "arpeggio_ratio: no 4-gram of MIDI pitches");
  return static_cast<double>(c.qualifying) / static_cast<double>(c.eligible);
}

MetricsReport evaluate(std::span<const TokenSequence> generated, std::span<const TokenSequence> reference,
                       const EvaluationOptions& options) {
  if (generated.empty()) throw Error(ErrorKind::kInvalidArgument, "evaluate: the generated corpus is empty");
  if (reference.empty()) throw Error(ErrorKind::kInvalidArgument, "evaluate: the reference corpus is empty");
  MetricsReport r;
  r.options = options;
  r.pieces = generated.size();
  r.reference_pieces = reference.size();

  std::vector<double> rep_p, rep_d, ars;
  std::vector<Pitch> pooled;
  for (const TokenSequence& raw : generated) {
    const TokenSequence seq = strip_padding(raw);
    PieceMetrics pm;
    pm.name = seq.name;
    pm.length = seq.size();
    if (seq.size() >= options.ngram) {
      pm.seq_rep_pitch = seq_rep_n(seq.pitch, options.ngram);
      pm.seq_rep_duration = seq_rep_n(seq.duration, options.ngram);
      rep_p.push_back(*pm.seq_rep_pitch);
      rep_d.push_back(*pm.seq_rep_duration);
    }
    const auto pitches = pitches_of(seq);
    if (std::any_of(pitches.begin(), pitches.end(), [](const Pitch& p) { return p.kind == PitchKind::kMidi; })) {
      pm.isr = in_scale_ratio(pitches);
    }
    pooled.insert(pooled.end(), pitches.begin(), pitches.end());
    const ArpeggioCount ac = arpeggio_count(seq);
    if (ac.eligible > 0) {
      pm.ar = static_cast<double>(ac.qualifying) / static_cast<double>(ac.eligible);
      ars.push_back(*pm.ar);
    }
    r.per_piece.push_back(std::move(pm));
  }
  r.seq_rep_pieces = rep_p.size();
  r.seq_rep_pitch = mean(rep_p);
  r.seq_rep_duration = mean(rep_d);
  r.ar_pieces = ars.size();
  r.ar = mean(ars);
  r.isr = in_scale_ratio(pooled);
  r.isr_pitches = static_cast<std::size_t>(
      std::count_if(pooled.begin(), pooled.end(), [](const Pitch& p) { return p.kind == PitchKind::kMidi; }));

  auto values = [](std::span<const TokenSequence> corpus, bool pitch) {
    std::vector<double> out;
    for (const TokenSequence& seq : corpus) {
      for (std::size_t t = 0; t < seq.size(); ++t) {
        if (pitch && seq.pitch_fmt[t]) out.push_back(seq.pitch_value[t]);
        if (!pitch && seq.duration_fmt[t]) out.push_back(seq.duration_value[t]);
      }
    }
    return out;
  };
  const auto gen_p = values(generated, true), ref_p = values(reference, true);
  const auto gen_d = values(generated, false), ref_d = values(reference, false);
  const bool forward = options.kl_direction == KlDirection::kGeneratedToReference;
  r.kl_pitch = forward ? kl_kde(gen_p, ref_p, options.pitch_grid) : kl_kde(ref_p, gen_p, options.pitch_grid);
  r.kl_duration = forward ? kl_kde(gen_d, ref_d, options.duration_grid) : kl_kde(ref_d, gen_d, options.duration_grid);
  r.kl_pitch_samples = gen_p.size();
  r.kl_duration_samples = gen_d.size();
  return r;
}

nlohmann::json MetricsReport::to_json() const {
  auto grid_json = [](const Grid& g) { return nlohmann::json{{"start", g.start}, {"stop", g.stop}, {"step", g.step}}; };
  return {
      {"metrics",
       {{"seq_rep_4_pitch", seq_rep_pitch},
        {"seq_rep_4_duration", seq_rep_duration},
        {"kl_pitch", kl_pitch},
        {"kl_duration", kl_duration},
        {"isr", isr},
        {"ar", ar}}},
      {"counts",
       {{"pieces", pieces},
        {"reference_pieces", reference_pieces},
        {"seq_rep_pieces", seq_rep_pieces},
        {"ar_pieces", ar_pieces},
        {"isr_pitches", isr_pitches},
        {"kl_pitch_samples", kl_pitch_samples},
        {"kl_duration_samples", kl_duration_samples}}},
      {"metadata",
       {{"kl_direction", options.kl_direction == KlDirection::kGeneratedToReference ? "generated||reference"
                                                                                     : "reference||generated"},
        {"kde_bandwidth", "scott"},
        {"pitch_grid", grid_json(options.pitch_grid)},
        {"duration_grid", grid_json(options.duration_grid)},
        {"ngram", options.ngram},
        {"ngram_windows", "sliding, stride 1"},
        {"ar_rule",
         "sliding 4-grams of MIDI pitches; some duration token occurs at least 3 times; strictly monotonic with "
         "every interval in [1, 4] semitones"}}},
  };
}

std::string MetricsReport::per_piece_csv() const {
  auto cell = [](const std::optional<double>& v) { return v ? format_double(*v) : std::string(); };
  std::string out = "name,length,seq_rep_4_pitch,seq_rep_4_duration,isr,ar\n";
  for (const auto& p : per_piece) {
    out += p.name + "," + std::to_string(p.length) + "," + cell(p.seq_rep_pitch) + "," + cell(p.seq_rep_duration) +
           "," + cell(p.isr) + "," + cell(p.ar) + "\n";
  }
  return out;
}

}  // namespace ripo
