#include <cmath>
#include <limits>
#include <random>

#include "doctest.h"
#include "ripo/error.hpp"
#include "ripo/grad_check.hpp"
#include "ripo/optim.hpp"
#include "ripo/tensor.hpp"

using namespace ripo;

namespace {

Tensor random_tensor(Shape shape, std::uint64_t seed, bool requires_grad = true) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> dist(0.0, 1.0);
  std::vector<double> data(shape_size(shape));
  for (double& v : data) v = dist(rng);
  return Tensor::from(std::move(shape), std::move(data), requires_grad);
}

// Scalar read-out with distinct weights per column so that gradients are not
// symmetric across entries.
Tensor probe(const Tensor& x, std::uint64_t seed = 99) {
  return sum(matmul(x, random_tensor({x.cols(), 1}, seed, false)));
}

void expect_grads_ok(const std::function<Tensor()>& loss, std::vector<Tensor> params) {
  GradCheckOptions opt;
  opt.samples_per_param = 64;
  const GradCheckReport r = grad_check(loss, params, opt);
  CHECK(r.checked > 0);
  CHECK_MESSAGE(r.passed, "max rel error " << r.max_rel_error);
}

}  // namespace

TEST_CASE("matmul matches a triple-loop product") {
  const Tensor a = random_tensor({3, 5}, 1), b = random_tensor({5, 4}, 2);
  const Tensor c = matmul(a, b), c_nt = matmul_nt(a, random_tensor({4, 5}, 3));
  const Tensor bt = random_tensor({4, 5}, 3);
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t j = 0; j < 4; ++j) {
      double s = 0.0, s_nt = 0.0;
      for (std::size_t k = 0; k < 5; ++k) {
        s += a.at(i, k) * b.at(k, j);
        s_nt += a.at(i, k) * bt.at(j, k);
      }
      CHECK(c.at(i, j) == doctest::Approx(s).epsilon(1e-14));
      CHECK(c_nt.at(i, j) == doctest::Approx(s_nt).epsilon(1e-14));
    }
  }
}

TEST_CASE("shape mismatches raise dimension errors") {
  const Tensor a = random_tensor({3, 5}, 1), b = random_tensor({4, 4}, 2);
  try {
    (void)matmul(a, b);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kDimension);
  }
  CHECK_THROWS_AS((void)add(a, b), Error);
  CHECK_THROWS_AS((void)slice_cols(a, 3, 3), Error);
}

TEST_CASE("softmax of [1,2,3]") {
  const Tensor p = softmax_lastdim(Tensor::from({1, 3}, {1.0, 2.0, 3.0}));
  CHECK(p[0] == doctest::Approx(0.09003057317).epsilon(1e-9));
  CHECK(p[1] == doctest::Approx(0.24472847105).epsilon(1e-9));
  CHECK(p[2] == doctest::Approx(0.66524095577).epsilon(1e-9));
}

TEST_CASE("softmax zeroes masked entries and rejects fully masked rows") {
  const double inf = std::numeric_limits<double>::infinity();
  const Tensor p = softmax_lastdim(Tensor::from({1, 3}, {0.5, -inf, 0.5}));
  CHECK(p[1] == 0.0);
  CHECK(p[0] == doctest::Approx(0.5));
  CHECK_THROWS_AS((void)softmax_lastdim(Tensor::from({1, 2}, {-inf, -inf})), Error);
}

TEST_CASE("softmax propagates NaN rows instead of treating them as masked") {
  const double nan = std::numeric_limits<double>::quiet_NaN();
  const Tensor y = softmax_lastdim(Tensor::from({2, 2}, {nan, nan, 0.0, 0.0}));
  CHECK(std::isnan(y.at(0, 0)));
  CHECK(std::isnan(y.at(0, 1)));
  CHECK(y.at(1, 0) == 0.5);
  const bool mask[1] = {true};
  const std::size_t target[1] = {0};
  CHECK(std::isnan(cross_entropy(Tensor::from({1, 2}, {nan, 1.0}), target, mask).item()));
}

TEST_CASE("cross entropy against hand values") {
  const std::size_t targets[] = {1};
  const bool mask[] = {true};
  const Tensor ce = cross_entropy(Tensor::from({1, 2}, {1.0, 2.0}), targets, mask);
  CHECK(ce.item() == doctest::Approx(std::log(1.0 + std::exp(-1.0))).epsilon(1e-12));
  CHECK(ce.item() == doctest::Approx(0.31326).epsilon(1e-4));

  const bool none[] = {false};
  CHECK_THROWS_AS((void)cross_entropy(Tensor::from({1, 2}, {1.0, 2.0}), targets, none), Error);
  const std::size_t bad[] = {2};
  CHECK_THROWS_AS((void)cross_entropy(Tensor::from({1, 2}, {1.0, 2.0}), bad, mask), Error);
}

TEST_CASE("layer norm of a single row") {
  const Tensor y = layer_norm(Tensor::from({1, 3}, {1.0, 2.0, 3.0}), Tensor::full({3}, 1.0), Tensor::zeros({3}));
  const double s = std::sqrt(2.0 / 3.0 + 1e-5);
  CHECK(y[0] == doctest::Approx(-1.0 / s).epsilon(1e-12));
  CHECK(y[1] == doctest::Approx(0.0));
  CHECK(y[2] == doctest::Approx(1.0 / s).epsilon(1e-12));
}

TEST_CASE("gradients of every op match finite differences") {
  const Tensor a = random_tensor({4, 6}, 10), b = random_tensor({6, 3}, 11), c = random_tensor({3, 6}, 12);
  const Tensor row = random_tensor({6}, 13), gain = random_tensor({6}, 14), bias = random_tensor({6}, 15);

  SUBCASE("matmul") { expect_grads_ok([&] { return probe(matmul(a, b)); }, {a, b}); }
  SUBCASE("matmul_nt") { expect_grads_ok([&] { return probe(matmul_nt(a, c)); }, {a, c}); }
  SUBCASE("add, add_row, scale") {
    const Tensor a2 = random_tensor({4, 6}, 16);
    expect_grads_ok([&] { return probe(scale(add_row(add(a, a2), row), -1.7)); }, {a, a2, row});
  }
  SUBCASE("relu") { expect_grads_ok([&] { return probe(relu(a)); }, {a}); }
  SUBCASE("concat and slice") {
    expect_grads_ok(
        [&] {
          const Tensor cols[] = {slice_cols(a, 1, 3), a};
          const Tensor rows[] = {slice_rows(concat_cols(cols), 2, 2), slice_rows(concat_cols(cols), 0, 1)};
          return probe(concat_rows(rows));
        },
        {a});
  }
  SUBCASE("gather_rows with repeats") {
    const std::size_t idx[] = {3, 0, 3, 1};
    expect_grads_ok([&] { return probe(gather_rows(a, idx)); }, {a});
  }
  SUBCASE("layer_norm") { expect_grads_ok([&] { return probe(layer_norm(a, gain, bias)); }, {a, gain, bias}); }
  SUBCASE("softmax with a masked entry") {
    expect_grads_ok(
        [&] {
          std::vector<double> m(24, 0.0);
          m[5] = -std::numeric_limits<double>::infinity();
          return probe(softmax_lastdim(add(a, Tensor::from({4, 6}, m))));
        },
        {a});
  }
  SUBCASE("cross_entropy") {
    const std::size_t targets[] = {0, 5, 2, 2};
    const bool mask[] = {true, false, true, true};
    expect_grads_ok([&] { return cross_entropy(a, targets, mask); }, {a});
  }
}

TEST_CASE("no graph is recorded under NoGradGuard") {
  const Tensor a = random_tensor({2, 2}, 1);
  Tensor y;
  {
    NoGradGuard guard;
    CHECK_FALSE(grad_enabled());
    y = matmul(a, a);
  }
  CHECK(grad_enabled());
  CHECK_FALSE(y.requires_grad());
}

TEST_CASE("gradients accumulate across shared uses") {
  const Tensor x = Tensor::from({1, 1}, {3.0}, true);
  const Tensor y = sum(add(matmul(x, x), x));  // x^2 + x
  y.backward();
  CHECK(x.grad()[0] == doctest::Approx(7.0));
}

TEST_CASE("first Adam step moves each weight by lr against its gradient sign") {
  Tensor w = Tensor::from({3}, {1.0, -2.0, 0.5}, true);
  auto g = w.grad_sink();
  g[0] = 0.3;
  g[1] = -4.0;
  g[2] = 1e-3;
  std::vector<Tensor> params{w};
  AdamState st;
  st.init(params);
  adam_step(params, st);
  // m_hat = g and v_hat = g^2 after one step, so the update is lr * g / (|g| + eps).
  CHECK(w[0] == doctest::Approx(1.0 - 1e-3 * 0.3 / (0.3 + 1e-8)).epsilon(1e-12));
  CHECK(w[1] == doctest::Approx(-2.0 + 1e-3 * 4.0 / (4.0 + 1e-8)).epsilon(1e-12));
  CHECK(w[2] == doctest::Approx(0.5 - 1e-3 * 1e-3 / (1e-3 + 1e-8)).epsilon(1e-12));
  CHECK(w.grad()[0] == 0.0);
  CHECK(st.step_count == 1);
}

TEST_CASE("Adam refuses parameters without gradients") {
  std::vector<Tensor> params{Tensor::zeros({2}, true)};
  AdamState st;
  st.init(params);
  CHECK_THROWS_AS(adam_step(params, st), Error);
}

TEST_CASE("grad check replaces samples at kinks and still flags wrong gradients") {
  Tensor x = Tensor::from({1, 3}, {0.0, 0.7, -0.4}, true);
  std::vector<Tensor> params = {x};
  GradCheckOptions opt;
  const GradCheckReport ok = grad_check([&] { return sum(relu(x)); }, params, opt);
  CHECK(ok.passed);
  CHECK(ok.skipped_nonsmooth == 1);
  CHECK(ok.checked == 2);

  // Smooth loss sum(x^2) + sum(x) whose quadratic term is hidden from backward.
  const GradCheckReport bad = grad_check(
      [&] {
        double sq = 0.0;
        for (double v : x.data()) sq += v * v;
        return add(sum(Tensor::from({1, 1}, {sq})), sum(x));
      },
      params, opt);
  CHECK_FALSE(bad.passed);
  CHECK(bad.skipped_nonsmooth == 0);
}
