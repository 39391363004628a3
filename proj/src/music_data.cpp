#include "ripo/music_data.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "ripo/error.hpp"
#include "ripo/io_util.hpp"

namespace ripo {

namespace {

[[noreturn]] void invalid(const std::string& what) { throw Error(ErrorKind::kInvalidArgument, what); }

bool on_grid(double beats) {
  const double units = beats / kDurationUnit;
  return std::abs(units - std::round(units)) < 1e-9;
}

}  // namespace

// ---- Vocabulary -----------------------------------------------------------

std::size_t Vocabulary::pitch_index(const Pitch& pitch) {
  switch (pitch.kind) {
    case PitchKind::kRest:
      return kPitchRest;
    case PitchKind::kSustain:
      return kPitchSustain;
    case PitchKind::kMidi:
      if (pitch.midi < 0 || pitch.midi > 127) invalid("MIDI pitch out of range: " + std::to_string(pitch.midi));
      return kFirstMidi + static_cast<std::size_t>(pitch.midi);
  }
  invalid("unknown pitch kind");
}

Pitch Vocabulary::pitch_token(std::size_t index) {
  if (index == kPitchRest) return Pitch::rest();
  if (index == kPitchSustain) return Pitch::sustain();
  if (pitch_is_fmt(index)) return Pitch::note(static_cast<int>(index - kFirstMidi));
  invalid("pitch token index " + std::to_string(index) + " has no event form");
}

double Vocabulary::pitch_value(std::size_t index) {
  return pitch_is_fmt(index) ? static_cast<double>(index - kFirstMidi) : 0.0;
}

std::size_t Vocabulary::duration_index(double beats) {
  if (!(beats >= kDurationUnit && beats <= kMaxTokenDuration) || !on_grid(beats)) {
    invalid("duration " + format_double(beats) + " is not a token duration");
  }
  return static_cast<std::size_t>(std::lround(beats / kDurationUnit));
}

double Vocabulary::duration_value(std::size_t index) {
  if (index >= kDurationSize) invalid("duration token index " + std::to_string(index) + " out of range");
  return static_cast<double>(index) * kDurationUnit;
}

std::string Vocabulary::pitch_name(std::size_t index) {
  if (index == kPitchPad) return "pad";
  if (index == kPitchRest) return "rest";
  if (index == kPitchSustain) return "sustain";
  if (pitch_is_fmt(index)) return std::to_string(index - kFirstMidi);
  invalid("pitch token index " + std::to_string(index) + " out of range");
}

std::string Vocabulary::duration_name(std::size_t index) {
  if (index == kDurationPad) return "pad";
  return format_double(duration_value(index));
}

nlohmann::json Vocabulary::to_json() {
  nlohmann::json pitch = nlohmann::json::object();
  for (std::size_t i = 0; i < kPitchSize; ++i) {
    pitch[pitch_name(i)] = {{"index", i}, {"is_fmt", pitch_is_fmt(i)}};
  }
  nlohmann::json duration = nlohmann::json::object();
  for (std::size_t i = 0; i < kDurationSize; ++i) {
    duration[duration_name(i)] = {{"index", i}, {"is_fmt", duration_is_fmt(i)}};
  }
  return {{"version", kVersion}, {"pitch", pitch}, {"duration", duration}};
}

// ---- TokenSequence --------------------------------------------------------

std::size_t TokenSequence::real_length() const {
  return static_cast<std::size_t>(std::find(pad.begin(), pad.end(), true) - pad.begin());
}

double TokenSequence::end_time() const {
  const std::size_t n = real_length();
  return n == 0 ? 0.0 : onset[n - 1] + duration_value[n - 1];
}

void TokenSequence::validate() const {
  const std::size_t n = size();
  if (duration.size() != n || onset.size() != n || index.size() != n || pad.size() != n ||
      pitch_value.size() != n || duration_value.size() != n || pitch_fmt.size() != n ||
      duration_fmt.size() != n) {
    throw Error(ErrorKind::kDimension, "token sequence vectors have different lengths");
  }
  if (n > kMaxSequenceLength) {
    invalid("sequence of length " + std::to_string(n) + " exceeds " + std::to_string(kMaxSequenceLength));
  }
  if (beat <= 0) invalid("beats per bar must be positive");
  const std::size_t real = real_length();
  for (std::size_t t = 0; t < n; ++t) {
    if (index[t] != t) invalid("index vector is not 0..n-1");
    if (pitch[t] >= Vocabulary::kPitchSize || duration[t] >= Vocabulary::kDurationSize) {
      invalid("token index out of range at position " + std::to_string(t));
    }
    if (t >= real && !pad[t]) invalid("pad positions are not a suffix");
    const bool is_pad = t >= real;
    if (is_pad != (pitch[t] == Vocabulary::kPitchPad) || is_pad != (duration[t] == Vocabulary::kDurationPad)) {
      invalid("pad mask disagrees with pad tokens at position " + std::to_string(t));
    }
  }
  if (n > 0 && onset[0] != 0.0) invalid("first onset must be 0");
  for (std::size_t t = 0; t + 1 < n; ++t) {
    if (onset[t + 1] < onset[t]) invalid("onsets must be non-decreasing");
    if (t + 1 < real && onset[t + 1] != onset[t] + duration_value[t]) {
      invalid("onsets are not the cumulative sum of durations at position " + std::to_string(t + 1));
    }
  }
}

TokenSequence make_sequence(std::span<const std::size_t> pitch, std::span<const std::size_t> duration, int beat,
                            std::string name) {
  if (pitch.size() != duration.size()) {
    throw Error(ErrorKind::kDimension, "pitch and duration token counts differ");
  }
  const std::size_t n = pitch.size();
  TokenSequence seq;
  seq.name = std::move(name);
  seq.beat = beat;
  seq.pitch.assign(pitch.begin(), pitch.end());
  seq.duration.assign(duration.begin(), duration.end());
  seq.onset.resize(n);
  seq.index.resize(n);
  seq.pad.resize(n);
  seq.pitch_value.resize(n);
  seq.duration_value.resize(n);
  seq.pitch_fmt.resize(n);
  seq.duration_fmt.resize(n);
  double time = 0.0;
  for (std::size_t t = 0; t < n; ++t) {
    if (pitch[t] >= Vocabulary::kPitchSize) invalid("unknown pitch token index " + std::to_string(pitch[t]));
    if (duration[t] >= Vocabulary::kDurationSize) {
      invalid("unknown duration token index " + std::to_string(duration[t]));
    }
    seq.index[t] = t;
    seq.pad[t] = pitch[t] == Vocabulary::kPitchPad;
    seq.pitch_fmt[t] = Vocabulary::pitch_is_fmt(pitch[t]);
    seq.duration_fmt[t] = Vocabulary::duration_is_fmt(duration[t]);
    seq.pitch_value[t] = Vocabulary::pitch_value(pitch[t]);
    seq.duration_value[t] = Vocabulary::duration_value(duration[t]);
    seq.onset[t] = time;
    time += seq.duration_value[t];
  }
  seq.validate();
  return seq;
}

TokenSequence pad_to(const TokenSequence& seq, std::size_t length) {
  if (length < seq.size()) invalid("pad_to: target shorter than sequence");
  std::vector<std::size_t> p = seq.pitch, d = seq.duration;
  p.resize(length, Vocabulary::kPitchPad);
  d.resize(length, Vocabulary::kDurationPad);
  return make_sequence(p, d, seq.beat, seq.name);
}

TokenSequence prefix(const TokenSequence& seq, std::size_t length) {
  length = std::min(length, seq.size());
  return make_sequence(std::span(seq.pitch).first(length), std::span(seq.duration).first(length), seq.beat,
                       seq.name);
}

TokenSequence strip_padding(const TokenSequence& seq) { return prefix(seq, seq.real_length()); }

// ---- event processing -----------------------------------------------------

std::vector<NoteEvent> quantize_and_split(std::span<const NoteEvent> events) {
  std::vector<NoteEvent> out;
  out.reserve(events.size());
  for (const NoteEvent& e : events) {
    if (!(e.duration > 0.0) || !std::isfinite(e.duration)) {
      invalid("note duration must be positive and finite, got " + format_double(e.duration));
    }
    // Half-up rounding on the 16th grid.
    const double units = std::floor(e.duration / kDurationUnit + 0.5);
    if (units < 1.0) {
      throw Error(ErrorKind::kDomain,
                  "note of " + format_double(e.duration) + " beats quantizes to zero length");
    }
    double remaining = units * kDurationUnit;
    Pitch pitch = e.pitch;
    while (remaining > kMaxTokenDuration) {
      out.push_back({pitch, kMaxTokenDuration});
      remaining -= kMaxTokenDuration;
      pitch = Pitch::sustain();
    }
    out.push_back({pitch, remaining});
  }
  return out;
}

std::vector<double> onsets_from_durations(std::span<const double> durations) {
  std::vector<double> onsets(durations.size());
  double time = 0.0;
  for (std::size_t i = 0; i < durations.size(); ++i) {
    onsets[i] = time;
    time += durations[i];
  }
  return onsets;
}

TokenSequence encode(std::span<const NoteEvent> events, int beat, std::string name) {
  const std::vector<NoteEvent> tokens = quantize_and_split(events);
  if (tokens.size() > kMaxSequenceLength) {
    invalid("piece '" + name + "' needs " + std::to_string(tokens.size()) + " tokens, more than " +
            std::to_string(kMaxSequenceLength));
  }
  std::vector<std::size_t> p, d;
  p.reserve(tokens.size());
  d.reserve(tokens.size());
  for (const NoteEvent& e : tokens) {
    p.push_back(Vocabulary::pitch_index(e.pitch));
    d.push_back(Vocabulary::duration_index(e.duration));
  }
  return make_sequence(p, d, beat, std::move(name));
}

TokenSequence encode(const Melody& melody) { return encode(melody.notes, melody.beats_per_bar, melody.name); }

std::vector<NoteEvent> decode(const TokenSequence& seq) {
  std::vector<NoteEvent> events;
  for (std::size_t t = 0; t < seq.size(); ++t) {
    if (seq.pitch[t] == Vocabulary::kPitchPad) break;
    if (seq.pitch[t] >= Vocabulary::kPitchSize) invalid("unknown pitch token index " + std::to_string(seq.pitch[t]));
    if (!Vocabulary::duration_is_fmt(seq.duration[t])) {
      invalid("duration token index " + std::to_string(seq.duration[t]) + " is not a duration");
    }
    const double beats = Vocabulary::duration_value(seq.duration[t]);
    const Pitch pitch = Vocabulary::pitch_token(seq.pitch[t]);
    if (pitch.kind == PitchKind::kSustain && !events.empty()) {
      events.back().duration += beats;
    } else {
      events.push_back({pitch, beats});
    }
  }
  return events;
}

Melody decode_melody(const TokenSequence& seq) { return {seq.name, seq.beat, decode(seq)}; }

Melody token_melody(const TokenSequence& seq) {
  Melody m{seq.name, seq.beat, {}};
  for (std::size_t t = 0; t < seq.size() && !seq.pad[t]; ++t) {
    m.notes.push_back({Vocabulary::pitch_token(seq.pitch[t]), Vocabulary::duration_value(seq.duration[t])});
  }
  return m;
}

// ---- JSONL ----------------------------------------------------------------

nlohmann::json melody_to_json(const Melody& melody) {
  nlohmann::json notes = nlohmann::json::array();
  for (const NoteEvent& e : melody.notes) {
    nlohmann::json pitch;
    switch (e.pitch.kind) {
      case PitchKind::kMidi:
        pitch = e.pitch.midi;
        break;
      case PitchKind::kRest:
        pitch = "rest";
        break;
      case PitchKind::kSustain:
        pitch = "sustain";
        break;
    }
    nlohmann::json note = nlohmann::json::object();
    note["pitch"] = pitch;
    note["dur"] = e.duration;
    notes.push_back(std::move(note));
  }
  nlohmann::json j = nlohmann::json::object();
  j["name"] = melody.name;
  j["beats_per_bar"] = melody.beats_per_bar;
  j["notes"] = std::move(notes);
  return j;
}

Melody melody_from_json(const nlohmann::json& j) {
  try {
    Melody m;
    m.name = j.value("name", std::string{});
    m.beats_per_bar = j.value("beats_per_bar", kDefaultBeatsPerBar);
    if (m.beats_per_bar != 4) invalid("only 4/4 melodies are supported");
    for (const auto& note : j.at("notes")) {
      const auto& p = note.at("pitch");
      NoteEvent e;
      if (p.is_number_integer()) {
        e.pitch = Pitch::note(p.get<int>());
        if (e.pitch.midi < 0 || e.pitch.midi > 127) invalid("MIDI pitch out of range in '" + m.name + "'");
      } else if (p == "rest") {
        e.pitch = Pitch::rest();
      } else if (p == "sustain") {
        e.pitch = Pitch::sustain();
      } else {
        invalid("unrecognised pitch " + p.dump() + " in '" + m.name + "'");
      }
      e.duration = note.at("dur").get<double>();
      m.notes.push_back(e);
    }
    return m;
  } catch (const nlohmann::json::exception& ex) {
    invalid(std::string("malformed melody record: ") + ex.what());
  }
}

std::string melodies_to_jsonl(std::span<const Melody> melodies) {
  std::string out;
  for (const Melody& m : melodies) {
    out += melody_to_json(m).dump();
    out += '\n';
  }
  return out;
}

std::vector<Melody> melodies_from_jsonl(const std::string& text) {
  std::vector<Melody> out;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& ex) {
      invalid("line " + std::to_string(line_no) + ": " + ex.what());
    }
    out.push_back(melody_from_json(j));
  }
  return out;
}

std::vector<Melody> read_melodies(const std::filesystem::path& path) {
  return melodies_from_jsonl(read_text_file(path));
}

void write_melodies(const std::filesystem::path& path, std::span<const Melody> melodies) {
  write_text_file(path, melodies_to_jsonl(melodies));
}

}  // namespace ripo
