#include "ripo/fme.hpp"

#include <cmath>
#include <random>
#include <string>

#include "ripo/error.hpp"

namespace ripo {

FmeParams FmeParams::create(double base, std::size_t dim, std::size_t num_nonfmt, std::uint64_t table_seed) {
  FmeParams p;
  p.base = base;
  p.dim = dim;
  p.validate();
  p.bias = Tensor::zeros({dim}, true);
  std::mt19937_64 rng(table_seed);
  std::normal_distribution<double> normal(0.0, 0.02);
  std::vector<double> table(num_nonfmt * dim);
  for (double& v : table) v = normal(rng);
  p.nonfmt_table = Tensor::from({num_nonfmt, dim}, std::move(table), true);
  return p;
}

void FmeParams::validate() const {
  if (!(base > 1.0)) throw Error(ErrorKind::kInvalidArgument, "FME base must exceed 1");
  if (dim == 0 || dim % 2 != 0) throw Error(ErrorKind::kInvalidArgument, "FME dimension must be even and positive");
}

double omega(std::size_t k, std::size_t dim, double base) {
  return std::pow(base, -2.0 * static_cast<double>(k) / static_cast<double>(dim));
}

std::vector<double> sinusoid(double x, double base, std::size_t dim) {
  std::vector<double> out(dim);
  for (std::size_t k = 0; k < dim / 2; ++k) {
    const double angle = omega(k, dim, base) * x;
    out[2 * k] = std::sin(angle);
    out[2 * k + 1] = std::cos(angle);
  }
  return out;
}

std::vector<double> fme_embed(double value, const FmeParams& params) {
  std::vector<double> out = sinusoid(value, params.base, params.dim);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += params.bias[i];
  return out;
}

std::vector<double> fme_embed_nonfmt(std::size_t row, const FmeParams& params) {
  if (row >= params.nonfmt_table.rows()) {
    throw Error(ErrorKind::kInvalidArgument, "unknown non-FMT token row " + std::to_string(row));
  }
  auto data = params.nonfmt_table.data().subspan(row * params.dim, params.dim);
  return {data.begin(), data.end()};
}

std::vector<double> fms_embed(double shift, const FmeParams& params) {
  return sinusoid(shift, params.base, params.dim);
}

Tensor fme_embed_tokens(std::span<const double> values, std::span<const bool> is_fmt,
                        std::span<const std::size_t> nonfmt_row, const FmeParams& params) {
  const std::size_t n = values.size(), d = params.dim;
  if (is_fmt.size() != n || nonfmt_row.size() != n) {
    throw Error(ErrorKind::kDimension, "fme_embed_tokens: input vectors differ in length");
  }
  const std::size_t table_rows = params.nonfmt_table.rows();
  std::vector<double> out(n * d);
  for (std::size_t t = 0; t < n; ++t) {
    if (is_fmt[t]) {
      const std::vector<double> e = fme_embed(values[t], params);
      std::copy(e.begin(), e.end(), out.begin() + t * d);
    } else {
      if (nonfmt_row[t] >= table_rows) {
        throw Error(ErrorKind::kInvalidArgument, "unknown non-FMT token row " + std::to_string(nonfmt_row[t]));
      }
      auto row = params.nonfmt_table.data().subspan(nonfmt_row[t] * d, d);
      std::copy(row.begin(), row.end(), out.begin() + t * d);
    }
  }
  std::vector<bool> fmt(is_fmt.begin(), is_fmt.end());
  std::vector<std::size_t> rows(nonfmt_row.begin(), nonfmt_row.end());
  return Tensor::make_op(
      {n, d}, std::move(out), {params.bias, params.nonfmt_table},
      [bias = params.bias, table = params.nonfmt_table, fmt = std::move(fmt), rows = std::move(rows), n, d](
          std::span<const double>, std::span<const double> g) mutable {
        for (std::size_t t = 0; t < n; ++t) {
          if (fmt[t]) {
            if (!bias.requires_grad()) continue;
            auto sink = bias.grad_sink();
            for (std::size_t i = 0; i < d; ++i) sink[i] += g[t * d + i];
          } else {
            if (!table.requires_grad()) continue;
            auto sink = table.grad_sink();
            for (std::size_t i = 0; i < d; ++i) sink[rows[t] * d + i] += g[t * d + i];
          }
        }
      });
}

double closed_form_distance(double shift, const FmeParams& params) {
  const double abs_shift = std::abs(shift);
  double cos_sum = 0.0;
  for (std::size_t k = 0; k < params.dim / 2; ++k) cos_sum += std::cos(omega(k, params.dim, params.base) * abs_shift);
  // Rounding can push the bracket a hair below zero at shift 0.
  return std::sqrt(std::max(0.0, static_cast<double>(params.dim) - 2.0 * cos_sum));
}

std::vector<double> transpose_in_embedding(std::span<const double> embedding, double shift,
                                           const FmeParams& params) {
  if (embedding.size() != params.dim) {
    throw Error(ErrorKind::kDimension, "transpose_in_embedding: embedding width differs from FME dimension");
  }
  const std::vector<double> rot = fms_embed(shift, params);
  std::vector<double> out(params.dim);
  for (std::size_t k = 0; k < params.dim / 2; ++k) {
    const double s = rot[2 * k], c = rot[2 * k + 1];
    const double x = embedding[2 * k] - params.bias[2 * k];
    const double y = embedding[2 * k + 1] - params.bias[2 * k + 1];
    // [[c, s], [-s, c]] applied to the (sin, cos) pair.
    out[2 * k] = c * x + s * y + params.bias[2 * k];
    out[2 * k + 1] = -s * x + c * y + params.bias[2 * k + 1];
  }
  return out;
}

std::vector<double> build_pe(const TokenSequence& seq, const FmeFamilyConfig& config, std::size_t dim,
                             PeTerms terms) {
  if (dim == 0 || dim % 2 != 0) throw Error(ErrorKind::kInvalidArgument, "positional encoding width must be even");
  const std::size_t n = seq.size();
  std::vector<double> pe(n * dim, 0.0);
  for (std::size_t t = 0; t < n; ++t) {
    double* row = pe.data() + t * dim;
    const std::vector<double> by_index = sinusoid(static_cast<double>(seq.index[t]), config.index_base, dim);
    for (std::size_t i = 0; i < dim; ++i) row[i] = by_index[i];
    if (terms.onset) {
      const std::vector<double> by_onset = sinusoid(seq.onset[t], config.pe_onset_base, dim);
      for (std::size_t i = 0; i < dim; ++i) row[i] += by_onset[i];
    }
    if (terms.beat) {
      const double in_bar = std::fmod(seq.onset[t], static_cast<double>(seq.beat));
      const std::vector<double> by_beat = sinusoid(in_bar, config.pe_onset_base, dim);
      for (std::size_t i = 0; i < dim; ++i) row[i] += by_beat[i];
    }
  }
  return pe;
}

}  // namespace ripo
