#include "ripo/attention.hpp"

#include <cmath>
#include <limits>
#include <map>

#include "ripo/error.hpp"
#include "ripo/init.hpp"
#include "ripo/random.hpp"

namespace ripo {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

// Fixed-order four-lane dot product; the result depends only on the inputs,
// never on where they sit in a larger computation.
double dot4(const double* a, const double* b, std::size_t n) {
  double acc[4] = {0.0, 0.0, 0.0, 0.0};
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    acc[0] += a[i] * b[i];
    acc[1] += a[i + 1] * b[i + 1];
    acc[2] += a[i + 2] * b[i + 2];
    acc[3] += a[i + 3] * b[i + 3];
  }
  double total = (acc[0] + acc[1]) + (acc[2] + acc[3]);
  for (; i < n; ++i) total += a[i] * b[i];
  return total;
}

// S[i][j] = qproj[i] . table[pairs[i][j]], 0 where pairs[i][j] < 0.
using PairsPtr = std::shared_ptr<const std::vector<std::int32_t>>;
using TablePtr = std::shared_ptr<const std::vector<double>>;

Tensor pair_table_logits(const Tensor& qproj, const PairsPtr& pairs_ptr, const TablePtr& table_ptr, std::size_t n,
                         std::size_t d) {
  const std::vector<std::int32_t>& pairs = *pairs_ptr;
  const std::vector<double>& table = *table_ptr;
  std::vector<double> out(n * n, 0.0);
  const double* q = qproj.data().data();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      const std::int32_t row = pairs[i * n + j];
      if (row >= 0) out[i * n + j] = dot4(q + i * d, table.data() + static_cast<std::size_t>(row) * d, d);
    }
  }
  return Tensor::make_op({n, n}, std::move(out), {qproj},
                         [qproj, pairs_ptr, table_ptr, n, d](std::span<const double>, std::span<const double> g) mutable {
                           const std::vector<std::int32_t>& pairs = *pairs_ptr;
                           const std::vector<double>& table = *table_ptr;
                           auto sink = qproj.grad_sink();
                           for (std::size_t i = 0; i < n; ++i) {
                             double* dst = sink.data() + i * d;
                             for (std::size_t j = 0; j < n; ++j) {
                               const std::int32_t row = pairs[i * n + j];
                               const double gij = g[i * n + j];
                               if (row < 0 || gij == 0.0) continue;
                               const double* src = table.data() + static_cast<std::size_t>(row) * d;
                               for (std::size_t k = 0; k < d; ++k) dst[k] += gij * src[k];
                             }
                           }
                         });
}

std::vector<Tensor> relative_logits(const Tensor& q, const PairsPtr& pairs, const TablePtr& table, std::size_t fme_dim, const Tensor& w,
                                    std::size_t num_heads, std::size_t n) {
  const std::size_t model = q.cols();
  if (q.rows() != n) throw Error(ErrorKind::kDimension, "relative logits: query rows differ from context length");
  if (w.rows() != fme_dim || w.cols() != model) {
    throw Error(ErrorKind::kDimension, "relative logits: projection must be [fme_dim, model_dim]");
  }
  const std::size_t dh = model / num_heads;
  std::vector<Tensor> out;
  out.reserve(num_heads);
  for (std::size_t h = 0; h < num_heads; ++h) {
    // Q_h [W FMS]^T == (Q_h W^T) FMS^T; projecting the query keeps the cost
    // linear in the number of pairs.
    const Tensor qproj = matmul_nt(slice_cols(q, h * dh, dh), slice_cols(w, h * dh, dh));
    out.push_back(pair_table_logits(qproj, pairs, table, n, fme_dim));
  }
  return out;
}

void fill_pairs(std::span<const double> values, const std::vector<bool>& usable, double base, std::size_t fme_dim,
                PairsPtr& pairs_out, TablePtr& table_out) {
  const std::size_t n = values.size();
  std::vector<std::int32_t> pairs(n * n, -1);
  std::vector<double> table;
  std::map<double, std::int32_t> rows;
  for (std::size_t i = 0; i < n; ++i) {
    if (!usable[i]) continue;
    for (std::size_t j = 0; j <= i; ++j) {
      if (!usable[j]) continue;
      const double shift = values[i] - values[j];
      auto [it, inserted] = rows.try_emplace(shift, static_cast<std::int32_t>(rows.size()));
      if (inserted) {
        const std::vector<double> code = sinusoid(shift, base, fme_dim);
        table.insert(table.end(), code.begin(), code.end());
      }
      pairs[i * n + j] = it->second;
    }
  }
  pairs_out = std::make_shared<const std::vector<std::int32_t>>(std::move(pairs));
  table_out = std::make_shared<const std::vector<double>>(std::move(table));
}

}  // namespace

// ---- configuration --------------------------------------------------------

nlohmann::json AttentionAblation::to_json() const {
  return {{"use_rel_onset", use_rel_onset},
          {"use_rel_pitch", use_rel_pitch},
          {"use_rel_index", use_rel_index},
          {"use_pe_onset", use_pe_onset},
          {"use_pe_beat", use_pe_beat}};
}

AttentionAblation AttentionAblation::from_json(const nlohmann::json& j) {
  AttentionAblation a;
  a.use_rel_onset = j.at("use_rel_onset").get<bool>();
  a.use_rel_pitch = j.at("use_rel_pitch").get<bool>();
  a.use_rel_index = j.at("use_rel_index").get<bool>();
  a.use_pe_onset = j.at("use_pe_onset").get<bool>();
  a.use_pe_beat = j.at("use_pe_beat").get<bool>();
  return a;
}

void LayerShape::validate() const {
  if (num_heads == 0 || model_dim == 0 || model_dim % num_heads != 0) {
    throw Error(ErrorKind::kInvalidArgument, "model_dim must be a positive multiple of num_heads");
  }
  if (fme_dim == 0 || fme_dim % 2 != 0) throw Error(ErrorKind::kInvalidArgument, "fme_dim must be even");
  if (ffn_dim == 0 || max_len == 0) throw Error(ErrorKind::kInvalidArgument, "ffn_dim and max_len must be positive");
}

RipoLayerWeights RipoLayerWeights::create(const LayerShape& shape, const AttentionAblation& ablation,
                                          std::uint64_t seed, const std::string& prefix) {
  shape.validate();
  const std::size_t m = shape.model_dim;
  auto key = [&](const char* name) { return stream_seed(seed, prefix + name); };
  RipoLayerWeights w;
  w.ln1_gain = ones_param({m});
  w.ln1_bias = zeros_param({m});
  w.wq = xavier_uniform(m, m, key("attn.wq.weight"));
  w.bq = zeros_param({m});
  w.wk = xavier_uniform(m, m, key("attn.wk.weight"));
  w.bk = zeros_param({m});
  w.wv = xavier_uniform(m, m, key("attn.wv.weight"));
  w.bv = zeros_param({m});
  if (ablation.use_rel_pitch) w.w_rp = xavier_uniform(shape.fme_dim, m, key("attn.w_rp"));
  if (ablation.use_rel_onset) w.w_ro = xavier_uniform(shape.fme_dim, m, key("attn.w_ro"));
  if (ablation.use_rel_index) w.e_r = normal_init({shape.max_len, m}, 0.02, key("attn.e_r"));
  w.ln2_gain = ones_param({m});
  w.ln2_bias = zeros_param({m});
  w.w1 = xavier_uniform(m, shape.ffn_dim, key("ffn.w1.weight"));
  w.b1 = zeros_param({shape.ffn_dim});
  w.w2 = xavier_uniform(shape.ffn_dim, m, key("ffn.w2.weight"));
  w.b2 = zeros_param({m});
  return w;
}

std::vector<std::pair<std::string, Tensor>> RipoLayerWeights::named_parameters(const std::string& prefix) const {
  std::vector<std::pair<std::string, Tensor>> out = {
      {prefix + "ln1.gain", ln1_gain},    {prefix + "ln1.bias", ln1_bias},    {prefix + "attn.wq.weight", wq},
      {prefix + "attn.wq.bias", bq},      {prefix + "attn.wk.weight", wk},    {prefix + "attn.wk.bias", bk},
      {prefix + "attn.wv.weight", wv},    {prefix + "attn.wv.bias", bv},
  };
  if (w_rp) out.emplace_back(prefix + "attn.w_rp", *w_rp);
  if (w_ro) out.emplace_back(prefix + "attn.w_ro", *w_ro);
  if (e_r) out.emplace_back(prefix + "attn.e_r", *e_r);
  out.insert(out.end(), {{prefix + "ln2.gain", ln2_gain},
                         {prefix + "ln2.bias", ln2_bias},
                         {prefix + "ffn.w1.weight", w1},
                         {prefix + "ffn.w1.bias", b1},
                         {prefix + "ffn.w2.weight", w2},
                         {prefix + "ffn.w2.bias", b2}});
  return out;
}

// ---- relative terms -------------------------------------------------------

RelativeContext make_relative_context(const TokenSequence& seq, const FmeFamilyConfig& bases, std::size_t fme_dim) {
  const std::size_t n = seq.size();
  RelativeContext ctx;
  ctx.n = n;
  ctx.fme_dim = fme_dim;
  ctx.mask.assign(n * n, kNegInf);
  for (std::size_t i = 0; i < n; ++i) {
    bool any = false;
    for (std::size_t j = 0; j <= i; ++j) {
      if (!seq.pad[j]) {
        ctx.mask[i * n + j] = 0.0;
        any = true;
      }
    }
    if (!any) {
      throw Error(ErrorKind::kDomain, "attention: query " + std::to_string(i) + " has no visible key");
    }
  }
  std::vector<bool> pitch_usable(n), onset_usable(n);
  for (std::size_t t = 0; t < n; ++t) {
    pitch_usable[t] = seq.pitch_fmt[t];
    onset_usable[t] = !seq.pad[t];
  }
  fill_pairs(seq.pitch_value, pitch_usable, bases.pitch_base, fme_dim, ctx.pitch_pairs, ctx.pitch_table);
  fill_pairs(seq.onset, onset_usable, bases.onset_base, fme_dim, ctx.onset_pairs, ctx.onset_table);
  return ctx;
}

std::vector<double> relative_matrix(std::span<const double> x) {
  const std::size_t n = x.size();
  std::vector<double> out(n * n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = x[i] - x[j];
  }
  return out;
}

std::vector<Tensor> rel_logits_pitch(const Tensor& q, const RelativeContext& ctx, const Tensor& w_rp,
                                     std::size_t num_heads) {
  return relative_logits(q, ctx.pitch_pairs, ctx.pitch_table, ctx.fme_dim, w_rp, num_heads, ctx.n);
}

std::vector<Tensor> rel_logits_onset(const Tensor& q, const RelativeContext& ctx, const Tensor& w_ro,
                                     std::size_t num_heads) {
  return relative_logits(q, ctx.onset_pairs, ctx.onset_table, ctx.fme_dim, w_ro, num_heads, ctx.n);
}

std::vector<Tensor> skewed_index_logits(const Tensor& q, const Tensor& e_r, std::size_t num_heads) {
  const std::size_t n = q.rows(), model = q.cols(), table_len = e_r.rows();
  if (n > table_len) {
    throw Error(ErrorKind::kInvalidArgument, "skewed_index_logits: sequence length " + std::to_string(n) +
                                                 " exceeds relative table length " + std::to_string(table_len));
  }
  if (e_r.cols() != model || model % num_heads != 0) {
    throw Error(ErrorKind::kDimension, "skewed_index_logits: table width must equal the query width");
  }
  const std::size_t dh = model / num_heads;
  std::vector<Tensor> out;
  out.reserve(num_heads);
  for (std::size_t h = 0; h < num_heads; ++h) {
    const std::size_t off = h * dh;
    const double* qd = q.data().data();
    const double* ed = e_r.data().data();
    // rel[i][c] = Q_h[i] . E_h[n - 1 - c]: distances n-1 .. 0 left to right.
    std::vector<double> padded(n * (n + 1), 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t c = 0; c < n; ++c) {
        const double* qi = qd + i * model + off;
        const double* er = ed + (n - 1 - c) * model + off;
        double acc = 0.0;
        for (std::size_t k = 0; k < dh; ++k) acc += qi[k] * er[k];
        padded[i * (n + 1) + c + 1] = acc;  // column 0 is the pad column
      }
    }
    // Reshape [n, n+1] -> [n+1, n] and drop the first row.
    std::vector<double> skewed(padded.begin() + static_cast<std::ptrdiff_t>(n), padded.end());
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = i + 1; j < n; ++j) skewed[i * n + j] = 0.0;
    }
    out.push_back(Tensor::make_op(
        {n, n}, std::move(skewed), {q, e_r},
        [q, e_r, n, model, dh, off](std::span<const double>, std::span<const double> g) mutable {
          // Only the lower triangle came from rel[]; each (i, j) maps back to
          // rel[i][n - 1 + j - i], i.e. distance i - j.
          for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j <= i; ++j) {
              const double gij = g[i * n + j];
              if (gij == 0.0) continue;
              const std::size_t dist = i - j;
              if (q.requires_grad()) {
                double* dq = q.grad_sink().data() + i * model + off;
                const double* er = e_r.data().data() + dist * model + off;
                for (std::size_t k = 0; k < dh; ++k) dq[k] += gij * er[k];
              }
              if (e_r.requires_grad()) {
                double* de = e_r.grad_sink().data() + dist * model + off;
                const double* qi = q.data().data() + i * model + off;
                for (std::size_t k = 0; k < dh; ++k) de[k] += gij * qi[k];
              }
            }
          }
        }));
  }
  return out;
}

// ---- layer ----------------------------------------------------------------

Tensor ripo_attention_heads(const Tensor& h, const RelativeContext& ctx, const RipoLayerWeights& w,
                            const AttentionAblation& ablation, const LayerShape& shape) {
  const std::size_t n = ctx.n, heads = shape.num_heads, dh = shape.head_dim();
  if (h.rows() != n || h.cols() != shape.model_dim) {
    throw Error(ErrorKind::kDimension, "attention: input " + shape_str(h.shape()) + " does not match context");
  }
  const Tensor q = add_row(matmul(h, w.wq), w.bq);
  const Tensor k = add_row(matmul(h, w.wk), w.bk);
  const Tensor v = add_row(matmul(h, w.wv), w.bv);

  std::vector<Tensor> s_index, s_pitch, s_onset;
  if (ablation.use_rel_index) s_index = skewed_index_logits(q, *w.e_r, heads);
  if (ablation.use_rel_pitch) s_pitch = rel_logits_pitch(q, ctx, *w.w_rp, heads);
  if (ablation.use_rel_onset) s_onset = rel_logits_onset(q, ctx, *w.w_ro, heads);

  const Tensor mask = Tensor::from({n, n}, ctx.mask);
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<Tensor> outputs;
  outputs.reserve(heads);
  for (std::size_t hd = 0; hd < heads; ++hd) {
    const Tensor qh = slice_cols(q, hd * dh, dh);
    Tensor logits = matmul_nt(qh, slice_cols(k, hd * dh, dh));
    if (!s_index.empty()) logits = add(logits, s_index[hd]);
    if (!s_pitch.empty()) logits = add(logits, s_pitch[hd]);
    if (!s_onset.empty()) logits = add(logits, s_onset[hd]);
    const Tensor probs = softmax_lastdim(add(scale(logits, inv_sqrt), mask));
    outputs.push_back(matmul(probs, slice_cols(v, hd * dh, dh)));
  }
  return concat_cols(outputs);
}

Tensor ripo_attention_forward(const Tensor& x, std::span<const RelativeContext> contexts,
                              std::span<const std::size_t> offsets, const RipoLayerWeights& w,
                              const AttentionAblation& ablation, const LayerShape& shape) {
  if (contexts.size() != offsets.size()) throw Error(ErrorKind::kDimension, "contexts and offsets differ in count");
  const Tensor normed = layer_norm(x, w.ln1_gain, w.ln1_bias);
  std::vector<Tensor> per_seq;
  per_seq.reserve(contexts.size());
  for (std::size_t s = 0; s < contexts.size(); ++s) {
    const Tensor rows = slice_rows(normed, offsets[s], contexts[s].n);
    per_seq.push_back(ripo_attention_heads(rows, contexts[s], w, ablation, shape));
  }
  const Tensor attended = per_seq.size() == 1 ? per_seq[0] : concat_rows(per_seq);
  if (attended.rows() != x.rows()) throw Error(ErrorKind::kDimension, "contexts do not cover every input row");
  const Tensor x1 = add(x, attended);
  const Tensor hidden = relu(add_row(matmul(layer_norm(x1, w.ln2_gain, w.ln2_bias), w.w1), w.b1));
  return add(x1, add_row(matmul(hidden, w.w2), w.b2));
}

}  // namespace ripo
