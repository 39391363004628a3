#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

namespace ripo {

inline constexpr std::size_t kMaxSequenceLength = 246;
inline constexpr double kDurationUnit = 0.25;  // a 16th note, in beats
inline constexpr double kMaxTokenDuration = 4.0;
inline constexpr int kDefaultBeatsPerBar = 4;

enum class PitchKind { kMidi, kRest, kSustain };

struct Pitch {
  PitchKind kind = PitchKind::kMidi;
  int midi = 0;  // meaningful only for kMidi

  static Pitch note(int midi_number) { return {PitchKind::kMidi, midi_number}; }
  static Pitch rest() { return {PitchKind::kRest, 0}; }
  static Pitch sustain() { return {PitchKind::kSustain, 0}; }
  bool is_midi() const { return kind == PitchKind::kMidi; }

  friend bool operator==(const Pitch& a, const Pitch& b) {
    return a.kind == b.kind && (a.kind != PitchKind::kMidi || a.midi == b.midi);
  }
};

struct NoteEvent {
  Pitch pitch;
  double duration = 1.0;  // beats

  friend bool operator==(const NoteEvent&, const NoteEvent&) = default;
};

struct Melody {
  std::string name;
  int beats_per_bar = kDefaultBeatsPerBar;
  std::vector<NoteEvent> notes;
};

// Fixed token <-> index maps (version 1).
//   pitch:    0 pad, 1 rest, 2 sustain, 3 + m for MIDI m in [0, 127]  (131)
//   duration: 0 pad, k for k * 0.25 beats, k in [1, 16]               (17)
struct Vocabulary {
  static constexpr int kVersion = 1;
  static constexpr std::size_t kPitchSize = 131;
  static constexpr std::size_t kDurationSize = 17;
  static constexpr std::size_t kPitchPad = 0;
  static constexpr std::size_t kPitchRest = 1;
  static constexpr std::size_t kPitchSustain = 2;
  static constexpr std::size_t kFirstMidi = 3;
  static constexpr std::size_t kDurationPad = 0;
  static constexpr std::size_t kNumNonFmtPitch = 3;
  static constexpr std::size_t kNumNonFmtDuration = 1;

  static std::size_t pitch_index(const Pitch& pitch);
  // Throws for pad or an out-of-range index.
  static Pitch pitch_token(std::size_t index);
  static bool pitch_is_fmt(std::size_t index) { return index >= kFirstMidi && index < kPitchSize; }
  static double pitch_value(std::size_t index);  // MIDI number; 0 for non-FMT
  // Row of a non-FMT pitch token in its embedding table (pad 0, rest 1, sustain 2).
  static std::size_t pitch_nonfmt_row(std::size_t index) { return index; }

  // `beats` must already lie on the 0.25 grid within [0.25, 4].
  static std::size_t duration_index(double beats);
  static bool duration_is_fmt(std::size_t index) { return index >= 1 && index < kDurationSize; }
  static double duration_value(std::size_t index);  // beats; 0 for pad

  static std::string pitch_name(std::size_t index);
  static std::string duration_name(std::size_t index);
  static nlohmann::json to_json();
};

// Parallel per-position vectors for one melody. Pad positions form a suffix.
struct TokenSequence {
  std::string name;
  int beat = kDefaultBeatsPerBar;
  std::vector<std::size_t> pitch;     // P, vocabulary indices
  std::vector<std::size_t> duration;  // D, vocabulary indices
  std::vector<double> onset;          // O, beats
  std::vector<std::size_t> index;     // I = 0..n-1
  std::vector<bool> pad;
  std::vector<double> pitch_value;     // MIDI for FMT pitches, 0 otherwise
  std::vector<double> duration_value;  // beats for FMT durations, 0 for pad
  std::vector<bool> pitch_fmt;
  std::vector<bool> duration_fmt;

  std::size_t size() const { return pitch.size(); }
  std::size_t real_length() const;
  // Total duration in beats of the unpadded part.
  double end_time() const;
  // Throws unless every structural invariant holds.
  void validate() const;
};

// Derives onsets, indices, masks and numeric values from token indices.
// Pad tokens (pitch pad paired with duration pad) must form a suffix.
TokenSequence make_sequence(std::span<const std::size_t> pitch, std::span<const std::size_t> duration,
                            int beat = kDefaultBeatsPerBar, std::string name = {});

TokenSequence pad_to(const TokenSequence& seq, std::size_t length);
TokenSequence strip_padding(const TokenSequence& seq);
TokenSequence prefix(const TokenSequence& seq, std::size_t length);

// Snaps durations to the 0.25 grid (half-up) and splits anything longer than
// a whole note into a 4-beat token followed by sustain tokens.
std::vector<NoteEvent> quantize_and_split(std::span<const NoteEvent> events);

// Exclusive prefix sum.
std::vector<double> onsets_from_durations(std::span<const double> durations);

TokenSequence encode(std::span<const NoteEvent> events, int beat = kDefaultBeatsPerBar, std::string name = {});
TokenSequence encode(const Melody& melody);
// Sustain tokens are merged into the preceding event; padding is dropped.
std::vector<NoteEvent> decode(const TokenSequence& seq);
Melody decode_melody(const TokenSequence& seq);
// One event per real token with sustain tokens kept, so encode() of the
// result reproduces the tokens exactly.
Melody token_melody(const TokenSequence& seq);

// ---- melody files (JSON lines) --------------------------------------------
// {"name": str, "beats_per_bar": 4, "notes": [{"pitch": 60 | "rest" | "sustain", "dur": 1.0}, ...]}

nlohmann::json melody_to_json(const Melody& melody);
Melody melody_from_json(const nlohmann::json& j);
std::string melodies_to_jsonl(std::span<const Melody> melodies);
std::vector<Melody> melodies_from_jsonl(const std::string& text);
std::vector<Melody> read_melodies(const std::filesystem::path& path);
void write_melodies(const std::filesystem::path& path, std::span<const Melody> melodies);

// ---- synthetic corpus -----------------------------------------------------

struct CorpusSpec {
  std::size_t num_pieces = 200;
  std::size_t bars_per_piece = 8;
  std::size_t motif_bars = 1;
  std::size_t motif_min_notes = 3;  // motif length range, inclusive
  std::size_t motif_max_notes = 6;
  std::vector<int> transposition_set = {-3, -2, -1, 0, 1, 2, 3, 4};  // C-major scale degrees
  std::vector<double> rhythm_palette = {0.5, 1.0, 1.5, 2.0};         // beats
  double rhythm_variation = 0.25;  // chance a repetition swaps two adjacent durations
  double rest_probability = 0.05;  // chance a motif note is a rest
  int beats_per_bar = kDefaultBeatsPerBar;
  std::uint64_t seed = 1;

  void validate() const;
  nlohmann::json to_json() const;
  static CorpusSpec from_json(const nlohmann::json& j);
};

// Each piece repeats a one-motif pattern with in-scale transpositions and
// occasional rhythm swaps; every pitch lies in the C major scale.
std::vector<Melody> generate_corpus_melodies(const CorpusSpec& spec);
// Encoded and padded to the longest piece.
std::vector<TokenSequence> generate_corpus(const CorpusSpec& spec);

// MIDI number of a (possibly negative) C-major scale degree; degree 0 is C4.
int scale_degree_to_midi(int degree);

}  // namespace ripo
