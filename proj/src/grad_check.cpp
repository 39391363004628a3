#include "ripo/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "ripo/error.hpp"

namespace ripo {

namespace {

double evaluate(const std::function<Tensor()>& loss_fn) {
  NoGradGuard guard;
  const double value = loss_fn().item();
  if (!std::isfinite(value)) throw Error(ErrorKind::kDomain, "grad_check: loss is not finite");
  return value;
}

}  // namespace

GradCheckReport grad_check(const std::function<Tensor()>& loss_fn, std::span<Tensor> params,
                           const GradCheckOptions& options) {
  for (Tensor& p : params) p.clear_grad();
  Tensor loss = loss_fn();
  if (!std::isfinite(loss.item())) throw Error(ErrorKind::kDomain, "grad_check: loss is not finite");
  loss.backward();

  std::mt19937_64 rng(options.seed);
  GradCheckReport report;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Tensor& p = params[pi];
    std::vector<double> analytic(p.size(), 0.0);
    if (p.has_grad()) std::copy(p.grad().begin(), p.grad().end(), analytic.begin());

    std::vector<std::size_t> order(p.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng);
    auto data = p.mutable_data();
    std::size_t accepted = 0;
    for (std::size_t idx : order) {
      if (accepted == options.samples_per_param) break;
      const double original = data[idx];
      auto at = [&](double offset) {
        data[idx] = original + offset;
        return evaluate(loss_fn);
      };
      const double h = options.step;
      const double fm2 = at(-2.0 * h);
      const double fm1 = at(-h);
      const double f0 = at(0.0);
      const double fp1 = at(h);
      const double fp2 = at(2.0 * h);
      data[idx] = original;
      const double narrow = (fp1 - fm1) / (2.0 * h);
      const double wide = (fp2 - fm2) / (4.0 * h);
      // Five-point stencil: truncation error O(h^4).
      const double numeric = (4.0 * narrow - wide) / 3.0;
      const double scale = std::max({std::abs(narrow), std::abs(wide), options.abs_floor});
      // First and second differences at h and 2h agree on smooth functions.
      const double curvature_gap = std::abs((fp1 - 2.0 * f0 + fm1) - 0.25 * (fp2 - 2.0 * f0 + fm2)) / h;
      if (std::max(std::abs(narrow - wide), curvature_gap) / scale > options.kink_tolerance) {
        ++report.skipped_nonsmooth;
        continue;
      }
      const double denom = std::max({std::abs(analytic[idx]), std::abs(numeric), options.abs_floor});
      const double rel = std::abs(analytic[idx] - numeric) / denom;
      report.entries.push_back({pi, idx, analytic[idx], numeric, rel});
      report.max_rel_error = std::max(report.max_rel_error, rel);
      ++report.checked;
      ++accepted;
    }
  }
  report.passed = report.max_rel_error < options.tolerance;
  return report;
}

}  // namespace ripo
