#include "ripo/model.hpp"

#include <cmath>
#include <map>
#include <memory>

#include "ripo/error.hpp"
#include "ripo/init.hpp"
#include "ripo/random.hpp"

namespace ripo {

std::string to_string(EmbeddingMode mode) {
  switch (mode) {
    case EmbeddingMode::kFme:
      return "fme";
    case EmbeddingMode::kTable:
      return "table";
    case EmbeddingMode::kOneHot:
      return "onehot";
  }
  return "fme";
}

EmbeddingMode embedding_mode_from_string(const std::string& name) {
  if (name == "fme") return EmbeddingMode::kFme;
  if (name == "table") return EmbeddingMode::kTable;
  if (name == "onehot") return EmbeddingMode::kOneHot;
  throw Error(ErrorKind::kInvalidArgument, "unknown embedding mode '" + name + "' (expected fme, table or onehot)");
}

// ---- ModelConfig ----------------------------------------------------------

void ModelConfig::validate() const {
  auto fail = [](const std::string& what) { throw Error(ErrorKind::kInvalidArgument, "model config: " + what); };
  layer_shape().validate();
  if (num_layers == 0) fail("num_layers must be positive");
  if (2 * proj_dim != model_dim) fail("2 * proj_dim must equal model_dim");
  if (max_len == 0 || max_len > kMaxSequenceLength) fail("max_len must lie in [1, 246]");
  if (batch_size == 0) fail("batch_size must be positive");
  if (!(lr > 0.0)) fail("lr must be positive");
  if (!(lr_decay > 0.0 && lr_decay <= 1.0)) fail("lr_decay must lie in (0, 1]");
}

nlohmann::json ModelConfig::to_json() const {
  return {{"num_layers", num_layers},
          {"num_heads", num_heads},
          {"model_dim", model_dim},
          {"fme_dim", fme_dim},
          {"proj_dim", proj_dim},
          {"ffn_dim", ffn_dim},
          {"max_len", max_len},
          {"batch_size", batch_size},
          {"lr", lr},
          {"lr_decay", lr_decay},
          {"ablation", ablation.to_json()},
          {"embedding_mode", to_string(embedding_mode)},
          {"bases",
           {{"pitch", bases.pitch_base},
            {"duration", bases.duration_base},
            {"onset", bases.onset_base},
            {"index", bases.index_base},
            {"pe_onset", bases.pe_onset_base}}},
          {"seed", seed}};
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
  ModelConfig c;
  try {
    c.num_layers = j.at("num_layers").get<std::size_t>();
    c.num_heads = j.at("num_heads").get<std::size_t>();
    c.model_dim = j.at("model_dim").get<std::size_t>();
    c.fme_dim = j.at("fme_dim").get<std::size_t>();
    c.proj_dim = j.at("proj_dim").get<std::size_t>();
    c.ffn_dim = j.at("ffn_dim").get<std::size_t>();
    c.max_len = j.at("max_len").get<std::size_t>();
    c.batch_size = j.at("batch_size").get<std::size_t>();
    c.lr = j.at("lr").get<double>();
    c.lr_decay = j.at("lr_decay").get<double>();
    c.ablation = AttentionAblation::from_json(j.at("ablation"));
    c.embedding_mode = embedding_mode_from_string(j.at("embedding_mode").get<std::string>());
    const auto& b = j.at("bases");
    c.bases.pitch_base = b.at("pitch").get<double>();
    c.bases.duration_base = b.at("duration").get<double>();
    c.bases.onset_base = b.at("onset").get<double>();
    c.bases.index_base = b.at("index").get<double>();
    c.bases.pe_onset_base = b.at("pe_onset").get<double>();
    c.seed = j.at("seed").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& ex) {
    throw Error(ErrorKind::kInvalidArgument, std::string("model config: ") + ex.what());
  }
  c.validate();
  return c;
}

// ---- RipoModel ------------------------------------------------------------

RipoModel::RipoModel(const ModelConfig& config) : config_(config) {
  config_.validate();
  const std::uint64_t seed = config_.seed;
  auto key = [seed](const std::string& name) { return stream_seed(seed, "init/" + name); };

  auto make_family = [&](const std::string& family, double base, std::size_t vocab, std::size_t num_nonfmt) {
    TokenEmbedding emb;
    std::size_t in_width = config_.fme_dim;
    switch (config_.embedding_mode) {
      case EmbeddingMode::kFme:
        emb.fme = FmeParams::create(base, config_.fme_dim, num_nonfmt, key("emb." + family + ".nonfmt"));
        break;
      case EmbeddingMode::kTable:
        emb.table = normal_init({vocab, config_.fme_dim}, 0.02, key("emb." + family + ".table"));
        break;
      case EmbeddingMode::kOneHot:
        in_width = vocab;
        break;
    }
    emb.proj_weight = xavier_uniform(in_width, config_.proj_dim, key("emb." + family + ".proj.weight"));
    emb.proj_bias = zeros_param({config_.proj_dim});
    return emb;
  };
  pitch_emb_ = make_family("pitch", config_.bases.pitch_base, Vocabulary::kPitchSize, Vocabulary::kNumNonFmtPitch);
  duration_emb_ = make_family("duration", config_.bases.duration_base, Vocabulary::kDurationSize,
                              Vocabulary::kNumNonFmtDuration);

  const LayerShape shape = config_.layer_shape();
  for (std::size_t l = 0; l < config_.num_layers; ++l) {
    layers_.push_back(RipoLayerWeights::create(shape, config_.ablation, seed,
                                               "init/layers." + std::to_string(l) + "."));
  }
  final_gain_ = ones_param({config_.model_dim});
  final_bias_ = zeros_param({config_.model_dim});
  pitch_head_w_ = xavier_uniform(config_.model_dim, Vocabulary::kPitchSize, key("head.pitch.weight"));
  pitch_head_b_ = zeros_param({Vocabulary::kPitchSize});
  duration_head_w_ = xavier_uniform(config_.model_dim, Vocabulary::kDurationSize, key("head.duration.weight"));
  duration_head_b_ = zeros_param({Vocabulary::kDurationSize});
}

const FmeParams* RipoModel::pitch_fme() const { return pitch_emb_.fme ? &*pitch_emb_.fme : nullptr; }
const FmeParams* RipoModel::duration_fme() const { return duration_emb_.fme ? &*duration_emb_.fme : nullptr; }

std::vector<std::pair<std::string, Tensor>> RipoModel::named_parameters() const {
  std::vector<std::pair<std::string, Tensor>> out;
  auto add_family = [&out](const std::string& family, const TokenEmbedding& emb) {
    if (emb.fme) {
      out.emplace_back("emb." + family + ".fme_bias", emb.fme->bias);
      out.emplace_back("emb." + family + ".nonfmt", emb.fme->nonfmt_table);
    }
    if (emb.table) out.emplace_back("emb." + family + ".table", *emb.table);
    out.emplace_back("emb." + family + ".proj.weight", emb.proj_weight);
    out.emplace_back("emb." + family + ".proj.bias", emb.proj_bias);
  };
  add_family("pitch", pitch_emb_);
  add_family("duration", duration_emb_);
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    auto named = layers_[l].named_parameters("layers." + std::to_string(l) + ".");
    out.insert(out.end(), named.begin(), named.end());
  }
  out.emplace_back("final_ln.gain", final_gain_);
  out.emplace_back("final_ln.bias", final_bias_);
  out.emplace_back("head.pitch.weight", pitch_head_w_);
  out.emplace_back("head.pitch.bias", pitch_head_b_);
  out.emplace_back("head.duration.weight", duration_head_w_);
  out.emplace_back("head.duration.bias", duration_head_b_);
  return out;
}

std::vector<Tensor> RipoModel::parameters() const {
  std::vector<Tensor> out;
  for (auto& [name, t] : named_parameters()) out.push_back(t);
  return out;
}

std::vector<CensusEntry> RipoModel::census() const {
  std::vector<CensusEntry> out;
  for (auto& [name, t] : named_parameters()) out.push_back({name, t.shape(), t.size()});
  return out;
}

std::size_t RipoModel::parameter_count() const {
  std::size_t total = 0;
  for (const auto& e : census()) total += e.count;
  return total;
}

void RipoModel::load_parameters(const std::vector<std::pair<std::string, std::vector<double>>>& values) {
  std::map<std::string, const std::vector<double>*> by_name;
  for (const auto& [name, data] : values) by_name[name] = &data;
  for (auto& [name, t] : named_parameters()) {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw Error(ErrorKind::kInvalidArgument, "missing parameter '" + name + "'");
    if (it->second->size() != t.size()) {
      throw Error(ErrorKind::kDimension, "parameter '" + name + "' has " + std::to_string(it->second->size()) +
                                             " values, expected " + std::to_string(t.size()));
    }
    Tensor target = t;
    std::copy(it->second->begin(), it->second->end(), target.mutable_data().begin());
  }
}

Tensor RipoModel::embed_family(const TokenEmbedding& emb, std::span<const std::size_t> tokens,
                               std::span<const double> values, std::span<const bool> is_fmt) const {
  Tensor features;
  switch (config_.embedding_mode) {
    case EmbeddingMode::kFme: {
      // Non-FMT tokens occupy the lowest vocabulary indices, so the index is
      // also the table row.
      features = fme_embed_tokens(values, is_fmt, tokens, *emb.fme);
      break;
    }
    case EmbeddingMode::kTable:
      features = gather_rows(*emb.table, tokens);
      break;
    case EmbeddingMode::kOneHot:
      // one_hot(token) * W is row `token` of W.
      return add_row(gather_rows(emb.proj_weight, tokens), emb.proj_bias);
  }
  return add_row(matmul(features, emb.proj_weight), emb.proj_bias);
}

Tensor RipoModel::embed_tokens(const TokenSequence& seq) const {
  // std::vector<bool> is not contiguous, so copy the flags into plain arrays.
  const std::size_t n = seq.size();
  std::unique_ptr<bool[]> pitch_fmt(new bool[n]), dur_fmt(new bool[n]);
  for (std::size_t t = 0; t < n; ++t) {
    pitch_fmt[t] = seq.pitch_fmt[t];
    dur_fmt[t] = seq.duration_fmt[t];
  }
  const Tensor parts[2] = {
      embed_family(pitch_emb_, seq.pitch, seq.pitch_value, std::span<const bool>(pitch_fmt.get(), n)),
      embed_family(duration_emb_, seq.duration, seq.duration_value, std::span<const bool>(dur_fmt.get(), n)),
  };
  return concat_cols(parts);
}

std::vector<double> RipoModel::positional_encoding(const TokenSequence& seq) const {
  return build_pe(seq, config_.bases, config_.model_dim,
                  {config_.ablation.use_pe_onset, config_.ablation.use_pe_beat});
}

Tensor RipoModel::build_input(const TokenSequence& seq) const {
  if (seq.size() == 0) throw Error(ErrorKind::kInvalidArgument, "cannot embed an empty sequence");
  if (seq.size() > config_.max_len) {
    throw Error(ErrorKind::kInvalidArgument, "sequence of length " + std::to_string(seq.size()) +
                                                 " exceeds max_len " + std::to_string(config_.max_len));
  }
  return add(embed_tokens(seq), Tensor::from({seq.size(), config_.model_dim}, positional_encoding(seq)));
}

SequenceLogits RipoModel::forward_batch(std::span<const TokenSequence> batch) const {
  if (batch.empty()) throw Error(ErrorKind::kInvalidArgument, "forward: empty batch");
  std::vector<Tensor> inputs;
  std::vector<RelativeContext> contexts;
  std::vector<std::size_t> offsets;
  std::size_t offset = 0;
  for (const TokenSequence& seq : batch) {
    inputs.push_back(build_input(seq));
    contexts.push_back(make_relative_context(seq, config_.bases, config_.fme_dim));
    offsets.push_back(offset);
    offset += seq.size();
  }
  Tensor x = inputs.size() == 1 ? inputs[0] : concat_rows(inputs);
  const LayerShape shape = config_.layer_shape();
  for (const RipoLayerWeights& layer : layers_) {
    x = ripo_attention_forward(x, contexts, offsets, layer, config_.ablation, shape);
  }
  const Tensor h = layer_norm(x, final_gain_, final_bias_);
  return {add_row(matmul(h, pitch_head_w_), pitch_head_b_), add_row(matmul(h, duration_head_w_), duration_head_b_)};
}

SequenceLogits RipoModel::forward(const TokenSequence& seq) const { return forward_batch(std::span(&seq, 1)); }

LossBreakdown RipoModel::loss_batch(std::span<const TokenSequence> batch) const {
  std::vector<std::size_t> pitch_targets, duration_targets;
  std::vector<char> mask_bytes;
  for (const TokenSequence& seq : batch) {
    if (seq.size() < 2) throw Error(ErrorKind::kInvalidArgument, "loss needs sequences of length >= 2");
    for (std::size_t t = 0; t < seq.size(); ++t) {
      const bool has_target = t + 1 < seq.size() && !seq.pad[t + 1];
      pitch_targets.push_back(has_target ? seq.pitch[t + 1] : 0);
      duration_targets.push_back(has_target ? seq.duration[t + 1] : 0);
      mask_bytes.push_back(has_target ? 1 : 0);
    }
  }
  std::unique_ptr<bool[]> mask(new bool[mask_bytes.size()]);
  std::size_t targets = 0;
  for (std::size_t i = 0; i < mask_bytes.size(); ++i) {
    mask[i] = mask_bytes[i] != 0;
    targets += mask_bytes[i];
  }
  if (targets == 0) throw Error(ErrorKind::kDomain, "loss: every target position is padding");
  const std::span<const bool> mask_span(mask.get(), mask_bytes.size());
  const SequenceLogits logits = forward_batch(batch);
  LossBreakdown out;
  out.ce_pitch = cross_entropy(logits.pitch, pitch_targets, mask_span);
  out.ce_duration = cross_entropy(logits.duration, duration_targets, mask_span);
  out.ce_sum = add(out.ce_pitch, out.ce_duration);
  out.targets = targets;
  return out;
}

LossBreakdown RipoModel::loss(const TokenSequence& seq) const { return loss_batch(std::span(&seq, 1)); }

std::vector<double> RipoModel::raw_embedding(const TokenEmbedding& emb, std::size_t token, bool is_fmt,
                                             double value) const {
  switch (config_.embedding_mode) {
    case EmbeddingMode::kFme:
      return is_fmt ? fme_embed(value, *emb.fme) : fme_embed_nonfmt(token, *emb.fme);
    case EmbeddingMode::kTable: {
      auto row = emb.table->data().subspan(token * config_.fme_dim, config_.fme_dim);
      return {row.begin(), row.end()};
    }
    case EmbeddingMode::kOneHot: {
      const std::size_t vocab = emb.proj_weight.rows();
      std::vector<double> v(vocab, 0.0);
      v[token] = 1.0;
      return v;
    }
  }
  return {};
}

std::vector<double> RipoModel::raw_pitch_embedding(std::size_t token) const {
  if (token >= Vocabulary::kPitchSize) throw Error(ErrorKind::kInvalidArgument, "pitch token out of range");
  return raw_embedding(pitch_emb_, token, Vocabulary::pitch_is_fmt(token), Vocabulary::pitch_value(token));
}

std::vector<double> RipoModel::raw_duration_embedding(std::size_t token) const {
  if (token >= Vocabulary::kDurationSize) throw Error(ErrorKind::kInvalidArgument, "duration token out of range");
  return raw_embedding(duration_emb_, token, Vocabulary::duration_is_fmt(token), Vocabulary::duration_value(token));
}

}  // namespace ripo
