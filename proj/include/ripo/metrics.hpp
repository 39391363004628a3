#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "ripo/music_data.hpp"

namespace ripo {

// 1 - distinct / total over sliding n-grams.
double seq_rep_n(std::span<const std::size_t> tokens, std::size_t n);

struct Grid {
  double start = 0.0;
  double stop = 0.0;
  double step = 1.0;
  std::vector<double> points() const;  // start, start + step, ... up to stop inclusive
};

// Bandwidth from Scott's rule (sample std with ddof 1, times n^(-1/5)).
// Samples without spread fall back to the grid step.
double scott_bandwidth(std::span<const double> sample, double fallback);
std::vector<double> kde_on_grid(std::span<const double> sample, const Grid& grid);

// KL(p || q) between Gaussian KDEs of two samples, evaluated on `grid`,
// floored at 1e-12 and normalized over the grid.
double kl_kde(std::span<const double> sample_p, std::span<const double> sample_q, const Grid& grid);

// Fraction of MIDI pitches in C major; rests and sustains are ignored.
double in_scale_ratio(std::span<const Pitch> pitches);

struct ArpeggioCount {
  std::size_t qualifying = 0;
  std::size_t eligible = 0;  // sliding 4-grams whose pitches are all MIDI notes
};

ArpeggioCount arpeggio_count(const TokenSequence& seq);
double arpeggio_ratio(const TokenSequence& seq);

enum class KlDirection { kGeneratedToReference, kReferenceToGenerated };

struct EvaluationOptions {
  KlDirection kl_direction = KlDirection::kGeneratedToReference;
  Grid pitch_grid{0.0, 127.0, 0.5};
  Grid duration_grid{0.25, 4.0, 0.05};
  std::size_t ngram = 4;
};

struct PieceMetrics {
  std::string name;
  std::size_t length = 0;
  std::optional<double> seq_rep_pitch, seq_rep_duration, isr, ar;
};

struct MetricsReport {
  double seq_rep_pitch = 0.0;
  double seq_rep_duration = 0.0;
  double kl_pitch = 0.0;
  double kl_duration = 0.0;
  double isr = 0.0;
  double ar = 0.0;
  std::size_t pieces = 0;
  std::size_t seq_rep_pieces = 0;
  std::size_t ar_pieces = 0;
  std::size_t isr_pitches = 0;
  std::size_t kl_pitch_samples = 0;
  std::size_t kl_duration_samples = 0;
  std::size_t reference_pieces = 0;
  EvaluationOptions options;
  std::vector<PieceMetrics> per_piece;

  nlohmann::json to_json() const;
  std::string per_piece_csv() const;
};

// Metrics of `generated`, with KL divergences taken against `reference`.
// seq-rep and AR are per-piece means over the pieces where they are defined.
MetricsReport evaluate(std::span<const TokenSequence> generated, std::span<const TokenSequence> reference,
                       const EvaluationOptions& options = {});

}  // namespace ripo
