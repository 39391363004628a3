#include <cmath>
#include <random>

#include "doctest.h"
#include "ripo/error.hpp"
#include "ripo/fme.hpp"
#include "ripo/grad_check.hpp"

using namespace ripo;

namespace {

// Pitch FME with a non-zero bias, as after training.
FmeParams trained_params(double base = 9919.0, std::size_t dim = 256, std::uint64_t seed = 3) {
  FmeParams p = FmeParams::create(base, dim, 3, seed);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> dist(0.0, 0.5);
  for (double& b : p.bias.mutable_data()) b = dist(rng);
  return p;
}

double l2(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s);
}

}  // namespace

TEST_CASE("frequencies") {
  CHECK(omega(0, 256, 9919.0) == 1.0);
  CHECK(omega(128, 256, 9919.0) == doctest::Approx(1.00817e-4).epsilon(1e-5));
  CHECK(omega(64, 256, 7920.0) == doctest::Approx(0.0112367).epsilon(1e-5));
}

TEST_CASE("embedding lanes are interleaved sine and cosine plus bias") {
  const FmeParams p = trained_params();
  const double f = 67.0;
  const auto e = fme_embed(f, p);
  REQUIRE(e.size() == 256);
  for (std::size_t k = 0; k < 128; ++k) {
    const double w = std::pow(9919.0, -2.0 * k / 256.0);
    CHECK(e[2 * k] == doctest::Approx(std::sin(w * f) + p.bias[2 * k]).epsilon(1e-13));
    CHECK(e[2 * k + 1] == doctest::Approx(std::cos(w * f) + p.bias[2 * k + 1]).epsilon(1e-13));
  }
  const auto s = fms_embed(-3.5, p);
  CHECK(s == sinusoid(-3.5, 9919.0, 256));
  CHECK(s[0] == std::sin(-3.5));
}

TEST_CASE("distance depends only on the interval") {
  const FmeParams p = trained_params();
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> pitch(0.0, 127.0);
  for (int delta = 0; delta <= 24; ++delta) {
    const double expected = closed_form_distance(delta, p);
    for (int i = 0; i < 50; ++i) {
      const double f = pitch(rng);
      CHECK(l2(fme_embed(f, p), fme_embed(f + delta, p)) == doctest::Approx(expected).epsilon(1e-9));
      CHECK(l2(fme_embed(f, p), fme_embed(f - delta, p)) == doctest::Approx(expected).epsilon(1e-9));
    }
  }
  CHECK(closed_form_distance(0.0, p) == 0.0);
  CHECK(closed_form_distance(5.0, p) == closed_form_distance(-5.0, p));
  CHECK(closed_form_distance(5.0, p) == closed_form_distance(5.0, FmeParams::create(9919.0, 256, 3, 0)));
}

TEST_CASE("transposition inside the embedding space") {
  const FmeParams p = trained_params(7920.0, 64);
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> f_dist(0.0, 127.0), d_dist(-24.0, 24.0);
  for (int i = 0; i < 500; ++i) {
    const double f = f_dist(rng), d = d_dist(rng);
    const auto moved = transpose_in_embedding(fme_embed(f, p), d, p);
    const auto target = fme_embed(f + d, p);
    for (std::size_t j = 0; j < target.size(); ++j) CHECK(std::abs(moved[j] - target[j]) < 1e-9);
  }
}

TEST_CASE("token embedding matches per-token values and routes non-numeric tokens to the table") {
  const FmeParams p = trained_params(9919.0, 16);
  const double values[] = {60.0, 0.0, 64.0, 0.0};
  const bool fmt[] = {true, false, true, false};
  const std::size_t rows[] = {0, 1, 0, 2};
  const Tensor e = fme_embed_tokens(values, fmt, rows, p);
  REQUIRE(e.shape() == Shape{4, 16});
  const auto e0 = fme_embed(60.0, p), e1 = fme_embed_nonfmt(1, p), e3 = fme_embed_nonfmt(2, p);
  for (std::size_t j = 0; j < 16; ++j) {
    CHECK(e.at(0, j) == e0[j]);
    CHECK(e.at(1, j) == e1[j]);
    CHECK(e.at(1, j) == p.nonfmt_table.at(1, j));
    CHECK(e.at(3, j) == e3[j]);
  }
}

TEST_CASE("token embedding gradients reach the bias and the table") {
  FmeParams p = trained_params(9919.0, 8);
  const double values[] = {60.0, 0.0, 64.0, 0.0, 61.0};
  const bool fmt[] = {true, false, true, false, true};
  const std::size_t rows[] = {0, 2, 0, 2, 0};
  std::mt19937_64 rng(1);
  std::normal_distribution<double> dist;
  std::vector<double> w(8);
  for (double& v : w) v = dist(rng);
  const Tensor readout = Tensor::from({8, 1}, w);
  std::vector<Tensor> params{p.bias, p.nonfmt_table};
  GradCheckOptions opt;
  opt.samples_per_param = 64;
  const auto r = grad_check([&] { return sum(matmul(fme_embed_tokens(values, fmt, rows, p), readout)); }, params, opt);
  CHECK_MESSAGE(r.passed, r.max_rel_error);
}

TEST_CASE("positional encoding sums index, onset and in-bar terms") {
  const NoteEvent events[] = {{Pitch::note(60), 1.5}, {Pitch::note(62), 3.0}, {Pitch::rest(), 0.5}};
  const TokenSequence seq = encode(events);
  const FmeFamilyConfig cfg;
  const std::size_t d = 32;
  const auto pe = build_pe(seq, cfg, d);
  const auto pe_index_only = build_pe(seq, cfg, d, {false, false});
  const auto pe_no_beat = build_pe(seq, cfg, d, {true, false});
  for (std::size_t t = 0; t < seq.size(); ++t) {
    const double o = seq.onset[t];
    const auto i_term = sinusoid(static_cast<double>(t), 10000.0, d);
    const auto o_term = sinusoid(o, 7920.0, d);
    const auto b_term = sinusoid(std::fmod(o, 4.0), 7920.0, d);
    for (std::size_t j = 0; j < d; ++j) {
      CHECK(pe[t * d + j] == doctest::Approx(i_term[j] + o_term[j] + b_term[j]).epsilon(1e-14));
      CHECK(pe_index_only[t * d + j] == i_term[j]);
      CHECK(pe_no_beat[t * d + j] == doctest::Approx(i_term[j] + o_term[j]).epsilon(1e-14));
    }
  }
  CHECK(seq.onset[2] == 4.5);
}

TEST_CASE("invalid FME parameters are rejected") {
  CHECK_THROWS_AS((void)FmeParams::create(9919.0, 7, 3, 0), Error);
  CHECK_THROWS_AS((void)FmeParams::create(1.0, 8, 3, 0), Error);
}
