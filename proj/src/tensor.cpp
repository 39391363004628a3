#include "ripo/tensor.hpp"

// Products always take Eigen's packed GEMM path. The coefficient-based path
// used for tiny operands peels loops by pointer alignment, which makes a row's
// result depend on where its buffer happens to live.
#define EIGEN_GEMM_TO_COEFFBASED_THRESHOLD 0
#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>
#include <unordered_set>

#include "ripo/error.hpp"

namespace ripo {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;

thread_local bool g_grad_enabled = true;

[[noreturn]] void dim_error(const std::string& what) { throw Error(ErrorKind::kDimension, what); }

void require_rank2(const Tensor& t, const char* op) {
  if (t.rank() != 2) {
    dim_error(std::string(op) + ": expected a 2-D tensor, got " + shape_str(t.shape()));
  }
}

ConstMatMap view(std::span<const double> data, std::size_t rows, std::size_t cols) {
  return ConstMatMap(data.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

MatMap view(std::span<double> data, std::size_t rows, std::size_t cols) {
  return MatMap(data.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

// dst (+)= lhs * rhs. Matrix-vector shapes are summed in plain index order
// because Eigen's GEMV kernels are also alignment dependent.
template <typename Lhs, typename Rhs>
void product(MatMap dst, const Lhs& lhs, const Rhs& rhs, bool accumulate) {
  if (dst.rows() == 1 || dst.cols() == 1) {
    for (Eigen::Index i = 0; i < dst.rows(); ++i) {
      for (Eigen::Index j = 0; j < dst.cols(); ++j) {
        double s = 0.0;
        for (Eigen::Index k = 0; k < lhs.cols(); ++k) s += lhs(i, k) * rhs(k, j);
        dst(i, j) = accumulate ? dst(i, j) + s : s;
      }
    }
  } else if (accumulate) {
    dst.noalias() += lhs * rhs;
  } else {
    dst.noalias() = lhs * rhs;
  }
}

}  // namespace

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kDimension:
      return "dimension";
    case ErrorKind::kInvalidArgument:
      return "invalid_argument";
    case ErrorKind::kDomain:
      return "domain";
    case ErrorKind::kIo:
      return "io";
    case ErrorKind::kDivergence:
      return "divergence";
  }
  return "unknown";
}

std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    os << (i ? "," : "") << shape[i];
  }
  os << ']';
  return os.str();
}

// ---- Tensor ---------------------------------------------------------------

Tensor::Tensor() : node_(std::make_shared<detail::Node>()) { node_->data.assign(1, 0.0); }

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  auto node = std::make_shared<detail::Node>();
  node->data.assign(shape_size(shape), value);
  node->shape = std::move(shape);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

Tensor Tensor::from(Shape shape, std::vector<double> data, bool requires_grad) {
  if (shape_size(shape) != data.size()) {
    dim_error("Tensor::from: shape " + shape_str(shape) + " does not hold " +
              std::to_string(data.size()) + " values");
  }
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

Tensor Tensor::scalar(double value, bool requires_grad) { return from({}, {value}, requires_grad); }

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= rank()) {
    dim_error("axis " + std::to_string(axis) + " out of range for " + shape_str(shape()));
  }
  return node_->shape[axis];
}

std::size_t Tensor::rows() const {
  if (rank() == 2) return node_->shape[0];
  if (rank() == 1) return 1;
  dim_error("rows(): tensor of shape " + shape_str(shape()) + " is not a matrix");
}

std::size_t Tensor::cols() const {
  if (rank() == 2) return node_->shape[1];
  if (rank() == 1) return node_->shape[0];
  dim_error("cols(): tensor of shape " + shape_str(shape()) + " is not a matrix");
}

double Tensor::item() const {
  if (size() != 1) dim_error("item(): tensor of shape " + shape_str(shape()) + " is not a scalar");
  return node_->data[0];
}

double Tensor::at(std::size_t i, std::size_t j) const { return node_->data[i * cols() + j]; }

void Tensor::set_requires_grad(bool value) { node_->requires_grad = value; }

std::span<double> Tensor::grad_sink() const {
  if (node_->grad.empty()) node_->grad.assign(node_->data.size(), 0.0);
  return node_->grad;
}

void Tensor::zero_grad() {
  if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

void Tensor::backward() const {
  if (size() != 1) dim_error("backward(): loss must be a single element, got " + shape_str(shape()));
  if (!node_->requires_grad) {
    throw Error(ErrorKind::kInvalidArgument, "backward(): loss does not require grad");
  }
  // Iterative post-order DFS gives a topological order (inputs first).
  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> visited;
  std::vector<std::pair<detail::Node*, std::size_t>> stack{{node_.get(), 0}};
  visited.insert(node_.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      detail::Node* child = node->inputs[next++].get();
      if (child->requires_grad && visited.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  grad_sink()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node* node = *it;
    if (node->grad.empty()) node->grad.assign(node->data.size(), 0.0);
    if (node->backward) node->backward(node->data, node->grad);
  }
}

Tensor Tensor::detach() const { return from(shape(), node_->data, false); }

Tensor Tensor::clone() const { return from(shape(), node_->data, node_->requires_grad); }

Tensor Tensor::make_op(Shape shape, std::vector<double> data, const std::vector<Tensor>& inputs,
                       BackwardFn backward) {
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  bool track = false;
  if (g_grad_enabled) {
    for (const Tensor& in : inputs) track = track || in.requires_grad();
  }
  if (track) {
    node->requires_grad = true;
    for (const Tensor& in : inputs) node->inputs.push_back(in.node_);
    node->backward = std::move(backward);
  }
  return Tensor(std::move(node));
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

bool grad_enabled() { return g_grad_enabled; }

// ---- operations -----------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank2(a, "matmul");
  require_rank2(b, "matmul");
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  if (b.rows() != k) {
    dim_error("matmul: inner dimensions differ: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
  std::vector<double> out(m * n);
  product(view(std::span<double>(out), m, n), view(a.data(), m, k), view(b.data(), k, n), false);
  return Tensor::make_op({m, n}, std::move(out), {a, b},
                         [a, b, m, k, n](std::span<const double>, std::span<const double> g) mutable {
                           auto gm = view(g, m, n);
                           if (a.requires_grad()) {
                             product(view(a.grad_sink(), m, k), gm, view(b.data(), k, n).transpose(), true);
                           }
                           if (b.requires_grad()) {
                             product(view(b.grad_sink(), k, n), view(a.data(), m, k).transpose(), gm, true);
                           }
                         });
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  require_rank2(a, "matmul_nt");
  require_rank2(b, "matmul_nt");
  const std::size_t m = a.rows(), k = a.cols(), n = b.rows();
  if (b.cols() != k) {
    dim_error("matmul_nt: inner dimensions differ: " + shape_str(a.shape()) + " x " +
              shape_str(b.shape()) + "^T");
  }
  std::vector<double> out(m * n);
  product(view(std::span<double>(out), m, n), view(a.data(), m, k), view(b.data(), n, k).transpose(), false);
  return Tensor::make_op({m, n}, std::move(out), {a, b},
                         [a, b, m, k, n](std::span<const double>, std::span<const double> g) mutable {
                           auto gm = view(g, m, n);
                           if (a.requires_grad()) {
                             product(view(a.grad_sink(), m, k), gm, view(b.data(), n, k), true);
                           }
                           if (b.requires_grad()) {
                             product(view(b.grad_sink(), n, k), gm.transpose(), view(a.data(), m, k), true);
                           }
                         });
}

Tensor add(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    dim_error("add: shapes differ: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
  return Tensor::make_op(a.shape(), std::move(out), {a, b},
                         [a, b](std::span<const double>, std::span<const double> g) mutable {
                           for (const Tensor* t : {&a, &b}) {
                             if (!t->requires_grad()) continue;
                             auto sink = t->grad_sink();
                             for (std::size_t i = 0; i < g.size(); ++i) sink[i] += g[i];
                           }
                         });
}

Tensor add_row(const Tensor& a, const Tensor& row) {
  require_rank2(a, "add_row");
  const std::size_t m = a.rows(), n = a.cols();
  if (row.size() != n) {
    dim_error("add_row: row of " + std::to_string(row.size()) + " values for " + shape_str(a.shape()));
  }
  std::vector<double> out(a.data().begin(), a.data().end());
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] += row[j];
  }
  return Tensor::make_op(a.shape(), std::move(out), {a, row},
                         [a, row, m, n](std::span<const double>, std::span<const double> g) mutable {
                           if (a.requires_grad()) {
                             auto sink = a.grad_sink();
                             for (std::size_t i = 0; i < g.size(); ++i) sink[i] += g[i];
                           }
                           if (row.requires_grad()) {
                             auto sink = row.grad_sink();
                             for (std::size_t i = 0; i < m; ++i) {
                               for (std::size_t j = 0; j < n; ++j) sink[j] += g[i * n + j];
                             }
                           }
                         });
}

Tensor scale(const Tensor& a, double factor) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * factor;
  return Tensor::make_op(a.shape(), std::move(out), {a},
                         [a, factor](std::span<const double>, std::span<const double> g) mutable {
                           auto sink = a.grad_sink();
                           for (std::size_t i = 0; i < g.size(); ++i) sink[i] += g[i] * factor;
                         });
}

Tensor relu(const Tensor& a) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::max(0.0, a[i]);
  return Tensor::make_op(a.shape(), std::move(out), {a},
                         [a](std::span<const double>, std::span<const double> g) mutable {
                           auto sink = a.grad_sink();
                           for (std::size_t i = 0; i < g.size(); ++i) {
                             if (a[i] > 0.0) sink[i] += g[i];
                           }
                         });
}

Tensor sum(const Tensor& a) {
  double total = 0.0;
  for (double v : a.data()) total += v;
  return Tensor::make_op({}, {total}, {a}, [a](std::span<const double>, std::span<const double> g) mutable {
    auto sink = a.grad_sink();
    for (double& s : sink) s += g[0];
  });
}

Tensor concat_cols(std::span<const Tensor> parts) {
  if (parts.empty()) dim_error("concat_cols: no inputs");
  const std::size_t m = parts[0].rows();
  std::size_t n = 0;
  for (const Tensor& p : parts) {
    require_rank2(p, "concat_cols");
    if (p.rows() != m) dim_error("concat_cols: row counts differ");
    n += p.cols();
  }
  std::vector<double> out(m * n);
  std::size_t offset = 0;
  for (const Tensor& p : parts) {
    const std::size_t w = p.cols();
    for (std::size_t i = 0; i < m; ++i) {
      std::copy_n(p.data().begin() + i * w, w, out.begin() + i * n + offset);
    }
    offset += w;
  }
  std::vector<Tensor> inputs(parts.begin(), parts.end());
  return Tensor::make_op({m, n}, std::move(out), inputs,
                         [inputs, m, n](std::span<const double>, std::span<const double> g) mutable {
                           std::size_t off = 0;
                           for (Tensor& p : inputs) {
                             const std::size_t w = p.cols();
                             if (p.requires_grad()) {
                               auto sink = p.grad_sink();
                               for (std::size_t i = 0; i < m; ++i) {
                                 for (std::size_t j = 0; j < w; ++j) sink[i * w + j] += g[i * n + off + j];
                               }
                             }
                             off += w;
                           }
                         });
}

Tensor slice_cols(const Tensor& a, std::size_t start, std::size_t count) {
  require_rank2(a, "slice_cols");
  const std::size_t m = a.rows(), n = a.cols();
  if (start + count > n) dim_error("slice_cols: range exceeds " + shape_str(a.shape()));
  std::vector<double> out(m * count);
  for (std::size_t i = 0; i < m; ++i) {
    std::copy_n(a.data().begin() + i * n + start, count, out.begin() + i * count);
  }
  return Tensor::make_op({m, count}, std::move(out), {a},
                         [a, m, n, start, count](std::span<const double>, std::span<const double> g) mutable {
                           auto sink = a.grad_sink();
                           for (std::size_t i = 0; i < m; ++i) {
                             for (std::size_t j = 0; j < count; ++j) sink[i * n + start + j] += g[i * count + j];
                           }
                         });
}

Tensor concat_rows(std::span<const Tensor> parts) {
  if (parts.empty()) dim_error("concat_rows: no inputs");
  const std::size_t n = parts[0].cols();
  std::size_t m = 0;
  for (const Tensor& p : parts) {
    require_rank2(p, "concat_rows");
    if (p.cols() != n) dim_error("concat_rows: column counts differ");
    m += p.rows();
  }
  std::vector<double> out;
  out.reserve(m * n);
  for (const Tensor& p : parts) out.insert(out.end(), p.data().begin(), p.data().end());
  std::vector<Tensor> inputs(parts.begin(), parts.end());
  return Tensor::make_op({m, n}, std::move(out), inputs,
                         [inputs](std::span<const double>, std::span<const double> g) mutable {
                           std::size_t off = 0;
                           for (Tensor& p : inputs) {
                             if (p.requires_grad()) {
                               auto sink = p.grad_sink();
                               for (std::size_t i = 0; i < sink.size(); ++i) sink[i] += g[off + i];
                             }
                             off += p.size();
                           }
                         });
}

Tensor slice_rows(const Tensor& a, std::size_t start, std::size_t count) {
  require_rank2(a, "slice_rows");
  const std::size_t n = a.cols();
  if (start + count > a.rows()) dim_error("slice_rows: range exceeds " + shape_str(a.shape()));
  std::vector<double> out(a.data().begin() + start * n, a.data().begin() + (start + count) * n);
  return Tensor::make_op({count, n}, std::move(out), {a},
                         [a, start, n](std::span<const double>, std::span<const double> g) mutable {
                           auto sink = a.grad_sink();
                           for (std::size_t i = 0; i < g.size(); ++i) sink[start * n + i] += g[i];
                         });
}

Tensor gather_rows(const Tensor& table, std::span<const std::size_t> indices) {
  require_rank2(table, "gather_rows");
  const std::size_t n = table.cols();
  std::vector<double> out(indices.size() * n);
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= table.rows()) {
      dim_error("gather_rows: index " + std::to_string(indices[i]) + " outside table of " +
                std::to_string(table.rows()) + " rows");
    }
    std::copy_n(table.data().begin() + indices[i] * n, n, out.begin() + i * n);
  }
  std::vector<std::size_t> idx(indices.begin(), indices.end());
  return Tensor::make_op({idx.size(), n}, std::move(out), {table},
                         [table, idx, n](std::span<const double>, std::span<const double> g) mutable {
                           auto sink = table.grad_sink();
                           for (std::size_t i = 0; i < idx.size(); ++i) {
                             for (std::size_t j = 0; j < n; ++j) sink[idx[i] * n + j] += g[i * n + j];
                           }
                         });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  require_rank2(x, "layer_norm");
  const std::size_t m = x.rows(), n = x.cols();
  if (gain.size() != n || bias.size() != n) dim_error("layer_norm: gain/bias width mismatch");
  std::vector<double> out(m * n), xhat(m * n), inv_std(m);
  for (std::size_t i = 0; i < m; ++i) {
    const double* row = x.data().data() + i * n;
    double mean = 0.0;
    for (std::size_t j = 0; j < n; ++j) mean += row[j];
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t j = 0; j < n; ++j) var += (row[j] - mean) * (row[j] - mean);
    var /= static_cast<double>(n);
    inv_std[i] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < n; ++j) {
      xhat[i * n + j] = (row[j] - mean) * inv_std[i];
      out[i * n + j] = xhat[i * n + j] * gain[j] + bias[j];
    }
  }
  return Tensor::make_op(
      {m, n}, std::move(out), {x, gain, bias},
      [x, gain, bias, xhat = std::move(xhat), inv_std = std::move(inv_std), m, n](
          std::span<const double>, std::span<const double> g) mutable {
        if (gain.requires_grad()) {
          auto sink = gain.grad_sink();
          for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t j = 0; j < n; ++j) sink[j] += g[i * n + j] * xhat[i * n + j];
          }
        }
        if (bias.requires_grad()) {
          auto sink = bias.grad_sink();
          for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t j = 0; j < n; ++j) sink[j] += g[i * n + j];
          }
        }
        if (x.requires_grad()) {
          auto sink = x.grad_sink();
          const double inv_n = 1.0 / static_cast<double>(n);
          for (std::size_t i = 0; i < m; ++i) {
            double mean_dy = 0.0, mean_dy_xhat = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
              const double dy = g[i * n + j] * gain[j];
              mean_dy += dy;
              mean_dy_xhat += dy * xhat[i * n + j];
            }
            mean_dy *= inv_n;
            mean_dy_xhat *= inv_n;
            for (std::size_t j = 0; j < n; ++j) {
              const double dy = g[i * n + j] * gain[j];
              sink[i * n + j] += inv_std[i] * (dy - mean_dy - xhat[i * n + j] * mean_dy_xhat);
            }
          }
        }
      });
}

Tensor softmax_lastdim(const Tensor& x) {
  if (x.rank() == 0) dim_error("softmax_lastdim: scalar input");
  const std::size_t n = x.shape().back();
  if (n == 0) dim_error("softmax_lastdim: empty last dimension");
  const std::size_t m = x.size() / n;
  constexpr double kNegInf = -std::numeric_limits<double>::infinity();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < m; ++i) {
    const double* row = x.data().data() + i * n;
    double peak = kNegInf;
    bool has_nan = false;
    for (std::size_t j = 0; j < n; ++j) {
      has_nan = has_nan || std::isnan(row[j]);
      peak = std::max(peak, row[j]);
    }
    if (has_nan) {
      // Propagate so the loss turns non-finite and training can report it.
      std::fill_n(out.begin() + static_cast<std::ptrdiff_t>(i * n), n, std::numeric_limits<double>::quiet_NaN());
      continue;
    }
    if (peak == kNegInf) {
      throw Error(ErrorKind::kDomain, "softmax_lastdim: row " + std::to_string(i) + " is fully masked");
    }
    double total = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      const double e = row[j] == kNegInf ? 0.0 : std::exp(row[j] - peak);
      out[i * n + j] = e;
      total += e;
    }
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] /= total;
  }
  return Tensor::make_op(x.shape(), std::move(out), {x},
                         [x, m, n](std::span<const double> y, std::span<const double> g) mutable {
                           auto sink = x.grad_sink();
                           for (std::size_t i = 0; i < m; ++i) {
                             double dot = 0.0;
                             for (std::size_t j = 0; j < n; ++j) dot += y[i * n + j] * g[i * n + j];
                             for (std::size_t j = 0; j < n; ++j) {
                               sink[i * n + j] += y[i * n + j] * (g[i * n + j] - dot);
                             }
                           }
                         });
}

Tensor cross_entropy(const Tensor& logits, std::span<const std::size_t> targets, std::span<const bool> mask) {
  require_rank2(logits, "cross_entropy");
  const std::size_t m = logits.rows(), v = logits.cols();
  if (targets.size() != m || mask.size() != m) {
    dim_error("cross_entropy: targets/mask length must equal " + std::to_string(m));
  }
  std::size_t count = 0;
  for (std::size_t i = 0; i < m; ++i) {
    if (!mask[i]) continue;
    if (targets[i] >= v) {
      throw Error(ErrorKind::kInvalidArgument,
                  "cross_entropy: target " + std::to_string(targets[i]) + " outside vocabulary of " +
                      std::to_string(v));
    }
    ++count;
  }
  if (count == 0) throw Error(ErrorKind::kDomain, "cross_entropy: no unmasked positions");

  // Softmax rows are kept for the backward pass.
  std::vector<double> probs(m * v, 0.0);
  double total = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    if (!mask[i]) continue;
    const double* row = logits.data().data() + i * v;
    const double peak = *std::max_element(row, row + v);
    double z = 0.0;
    for (std::size_t j = 0; j < v; ++j) z += std::exp(row[j] - peak);
    const double log_z = peak + std::log(z);
    total += log_z - row[targets[i]];
    for (std::size_t j = 0; j < v; ++j) probs[i * v + j] = std::exp(row[j] - log_z);
  }
  const double inv_count = 1.0 / static_cast<double>(count);
  std::vector<std::size_t> tgt(targets.begin(), targets.end());
  std::vector<bool> msk(mask.begin(), mask.end());
  return Tensor::make_op({}, {total * inv_count}, {logits},
                         [logits, probs = std::move(probs), tgt = std::move(tgt), msk = std::move(msk), m, v,
                          inv_count](std::span<const double>, std::span<const double> g) mutable {
                           auto sink = logits.grad_sink();
                           const double s = g[0] * inv_count;
                           for (std::size_t i = 0; i < m; ++i) {
                             if (!msk[i]) continue;
                             for (std::size_t j = 0; j < v; ++j) sink[i * v + j] += s * probs[i * v + j];
                             sink[i * v + tgt[i]] -= s;
                           }
                         });
}

}  // namespace ripo
