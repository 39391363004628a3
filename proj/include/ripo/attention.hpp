#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "ripo/fme.hpp"
#include "ripo/music_data.hpp"
#include "ripo/tensor.hpp"

namespace ripo {

// Switches for the relative logit terms and the onset positional encodings.
// The index positional encoding is always present.
struct AttentionAblation {
  bool use_rel_onset = true;
  bool use_rel_pitch = true;
  bool use_rel_index = true;
  bool use_pe_onset = true;
  bool use_pe_beat = true;

  nlohmann::json to_json() const;
  static AttentionAblation from_json(const nlohmann::json& j);
  friend bool operator==(const AttentionAblation&, const AttentionAblation&) = default;
};

struct LayerShape {
  std::size_t model_dim = 256;
  std::size_t num_heads = 8;
  std::size_t fme_dim = 256;
  std::size_t ffn_dim = 512;
  std::size_t max_len = kMaxSequenceLength;

  std::size_t head_dim() const { return model_dim / num_heads; }
  void validate() const;
};

// One RIPO layer. Per-head blocks of w_rp, w_ro and e_r are column slices of
// width head_dim (head h owns columns [h * head_dim, (h + 1) * head_dim)).
// Ablated relative terms have no parameters.
struct RipoLayerWeights {
  Tensor ln1_gain, ln1_bias;
  Tensor wq, bq, wk, bk, wv, bv;  // [model, model], [model]
  std::optional<Tensor> w_rp;     // [fme_dim, model]
  std::optional<Tensor> w_ro;     // [fme_dim, model]
  std::optional<Tensor> e_r;      // [max_len, model], row = relative distance
  Tensor ln2_gain, ln2_bias;
  Tensor w1, b1;  // [model, ffn], [ffn]
  Tensor w2, b2;  // [ffn, model], [model]

  // Every parameter is drawn from a stream keyed by "<prefix><name>", so
  // toggling an ablation never changes another parameter's initial values.
  static RipoLayerWeights create(const LayerShape& shape, const AttentionAblation& ablation, std::uint64_t seed,
                                 const std::string& prefix);
  std::vector<std::pair<std::string, Tensor>> named_parameters(const std::string& prefix) const;
};

// Per-sequence constants shared by every layer: attention mask and the
// relative pitch/onset shift tables.
struct RelativeContext {
  std::size_t n = 0;
  std::size_t fme_dim = 0;
  // Additive mask, 0 for visible (causal and non-pad key), -inf otherwise.
  std::vector<double> mask;
  // For each (i, j): row of the shift table, or -1 when the pair contributes 0
  // (future key, pad, or non-FMT pitch on either side).
  // Shared so graph nodes may outlive the context.
  std::shared_ptr<const std::vector<std::int32_t>> pitch_pairs;
  std::shared_ptr<const std::vector<double>> pitch_table;  // [rows, fme_dim], FMS_P of each distinct shift
  std::shared_ptr<const std::vector<std::int32_t>> onset_pairs;
  std::shared_ptr<const std::vector<double>> onset_table;  // FMS_O of each distinct shift
};

RelativeContext make_relative_context(const TokenSequence& seq, const FmeFamilyConfig& bases, std::size_t fme_dim);

// M[i][j] = x[i] - x[j].
std::vector<double> relative_matrix(std::span<const double> x);

// Q [n, model] split into heads; returns one [n, n] logit block per head.
std::vector<Tensor> rel_logits_pitch(const Tensor& q, const RelativeContext& ctx, const Tensor& w_rp,
                                     std::size_t num_heads);
std::vector<Tensor> rel_logits_onset(const Tensor& q, const RelativeContext& ctx, const Tensor& w_ro,
                                     std::size_t num_heads);

// Relative-index logits through the pad / reshape / slice skew. Entry (i, j)
// for j <= i equals Q_h[i] . e_r_h[i - j]; entries above the diagonal are 0.
// Throws when n exceeds the table length.
std::vector<Tensor> skewed_index_logits(const Tensor& q, const Tensor& e_r, std::size_t num_heads);

// Multi-head RIPO attention on one sequence (already normalized input);
// returns the concatenated head outputs [n, model].
Tensor ripo_attention_heads(const Tensor& h, const RelativeContext& ctx, const RipoLayerWeights& w,
                            const AttentionAblation& ablation, const LayerShape& shape);

// Pre-norm block: x + attn(LN(x)), then + FFN(LN(.)). `x` stacks several
// sequences row-wise; contexts[i] covers rows [offsets[i], offsets[i] + n).
Tensor ripo_attention_forward(const Tensor& x, std::span<const RelativeContext> contexts,
                              std::span<const std::size_t> offsets, const RipoLayerWeights& w,
                              const AttentionAblation& ablation, const LayerShape& shape);

}  // namespace ripo
