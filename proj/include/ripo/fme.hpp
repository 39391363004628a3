#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "ripo/music_data.hpp"
#include "ripo/tensor.hpp"

namespace ripo {

// Bias-adjusted sinusoidal embedding for one token family.
//
// Lane layout is interleaved: lanes 2k and 2k+1 hold the sine and cosine of
// omega(k) * f, each shifted by its own trainable bias. Non-numeric tokens of
// the family (pad, rest, sustain) use rows of an ordinary trainable table.
struct FmeParams {
  double base = 10000.0;
  std::size_t dim = 256;
  Tensor bias;           // [dim]
  Tensor nonfmt_table;   // [num_nonfmt, dim]

  // Zero bias, table rows drawn from N(0, 0.02) on the given stream seed.
  static FmeParams create(double base, std::size_t dim, std::size_t num_nonfmt, std::uint64_t table_seed);
  void validate() const;
};

// Bases for the model's sinusoidal codes. Duration, onset and the onset
// positional encoding share one base.
struct FmeFamilyConfig {
  double pitch_base = 9919.0;
  double duration_base = 7920.0;
  double onset_base = 7920.0;
  double index_base = 10000.0;  // classic transformer positional encoding
  double pe_onset_base = 7920.0;
};

// B^(-2k/d).
double omega(std::size_t k, std::size_t dim, double base);

// Bias-free code [sin(w_0 x), cos(w_0 x), ...]; equals fms_embed for a shift.
std::vector<double> sinusoid(double x, double base, std::size_t dim);

std::vector<double> fme_embed(double value, const FmeParams& params);
// Embedding of the non-FMT token stored at `row` of the table.
std::vector<double> fme_embed_nonfmt(std::size_t row, const FmeParams& params);
std::vector<double> fms_embed(double shift, const FmeParams& params);

// Differentiable batch embedding (w.r.t. bias and non-FMT table). Position t
// uses values[t] when is_fmt[t], otherwise table row nonfmt_row[t].
Tensor fme_embed_tokens(std::span<const double> values, std::span<const bool> is_fmt,
                        std::span<const std::size_t> nonfmt_row, const FmeParams& params);

// L2 distance between embeddings of two values `shift` apart; independent of
// the bias and of the values themselves.
double closed_form_distance(double shift, const FmeParams& params);

// Moves the embedding of f to that of f + shift by rotating each (sin, cos)
// lane pair of (e - bias) and re-adding the bias.
std::vector<double> transpose_in_embedding(std::span<const double> embedding, double shift,
                                           const FmeParams& params);

struct PeTerms {
  bool onset = true;  // PE_o(O)
  bool beat = true;   // PE_o(O mod beat)
};

// Index + onset + metrical positional encoding, [n, dim]. Bias-free.
std::vector<double> build_pe(const TokenSequence& seq, const FmeFamilyConfig& config, std::size_t dim,
                             PeTerms terms = {});

}  // namespace ripo
