#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "ripo/attention.hpp"
#include "ripo/fme.hpp"
#include "ripo/music_data.hpp"
#include "ripo/tensor.hpp"

namespace ripo {

enum class EmbeddingMode {
  kFme,     // bias-adjusted sinusoidal embedding, then a trainable projection
  kTable,   // trainable lookup table of fme_dim columns, then a projection
  kOneHot,  // one-hot over the vocabulary, projected by a trainable matrix
};

std::string to_string(EmbeddingMode mode);
EmbeddingMode embedding_mode_from_string(const std::string& name);

struct ModelConfig {
  std::size_t num_layers = 2;
  std::size_t num_heads = 8;
  std::size_t model_dim = 256;
  std::size_t fme_dim = 256;
  std::size_t proj_dim = 128;  // per token family; 2 * proj_dim == model_dim
  std::size_t ffn_dim = 512;
  std::size_t max_len = kMaxSequenceLength;
  std::size_t batch_size = 16;
  double lr = 1e-3;
  double lr_decay = 0.95;  // multiplied into lr after every epoch
  AttentionAblation ablation;
  EmbeddingMode embedding_mode = EmbeddingMode::kFme;
  FmeFamilyConfig bases;
  std::uint64_t seed = 0;

  LayerShape layer_shape() const { return {model_dim, num_heads, fme_dim, ffn_dim, max_len}; }
  void validate() const;
  nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);
};

struct SequenceLogits {
  Tensor pitch;     // [rows, 131]
  Tensor duration;  // [rows, 17]
};

struct LossBreakdown {
  Tensor ce_pitch;
  Tensor ce_duration;
  Tensor ce_sum;
  std::size_t targets = 0;
};

struct CensusEntry {
  std::string name;
  Shape shape;
  std::size_t count = 0;
};

// Transformer of RIPO layers with pitch and duration output heads. Logits at
// position t predict the tokens at t + 1.
class RipoModel {
 public:
  explicit RipoModel(const ModelConfig& config);

  const ModelConfig& config() const { return config_; }

  // Stable names; see README for the list.
  std::vector<std::pair<std::string, Tensor>> named_parameters() const;
  std::vector<Tensor> parameters() const;
  std::vector<CensusEntry> census() const;
  std::size_t parameter_count() const;

  // Overwrites parameter values by name; every parameter must be present.
  void load_parameters(const std::vector<std::pair<std::string, std::vector<double>>>& values);

  // Token embedding projection, [n, model_dim], without positional encoding.
  Tensor embed_tokens(const TokenSequence& seq) const;
  std::vector<double> positional_encoding(const TokenSequence& seq) const;
  Tensor build_input(const TokenSequence& seq) const;

  SequenceLogits forward(const TokenSequence& seq) const;
  // Rows of all sequences stacked in order.
  SequenceLogits forward_batch(std::span<const TokenSequence> batch) const;

  LossBreakdown loss(const TokenSequence& seq) const;
  // Means are over every unpadded target position of the batch.
  LossBreakdown loss_batch(std::span<const TokenSequence> batch) const;

  // Raw (pre-projection) embedding of a pitch or duration token, as used by
  // the self-distance inspection.
  std::vector<double> raw_pitch_embedding(std::size_t token) const;
  std::vector<double> raw_duration_embedding(std::size_t token) const;

  // Present only in kFme mode.
  const FmeParams* pitch_fme() const;
  const FmeParams* duration_fme() const;
  const std::vector<RipoLayerWeights>& layers() const { return layers_; }

 private:
  struct TokenEmbedding {
    std::optional<FmeParams> fme;  // kFme
    std::optional<Tensor> table;   // kTable
    Tensor proj_weight;            // [fme_dim or vocab, proj_dim]
    Tensor proj_bias;              // [proj_dim]
  };

  Tensor embed_family(const TokenEmbedding& emb, std::span<const std::size_t> tokens,
                      std::span<const double> values, std::span<const bool> is_fmt) const;
  std::vector<double> raw_embedding(const TokenEmbedding& emb, std::size_t token, bool is_fmt, double value) const;

  ModelConfig config_;
  TokenEmbedding pitch_emb_, duration_emb_;
  std::vector<RipoLayerWeights> layers_;
  Tensor final_gain_, final_bias_;
  Tensor pitch_head_w_, pitch_head_b_;
  Tensor duration_head_w_, duration_head_b_;
};

}  // namespace ripo
