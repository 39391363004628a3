#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace ripo {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_str(const Shape& shape);

// Receives the forward output and the gradient flowing into it; accumulates
// into the inputs captured by the closure.
using BackwardFn =
    std::function<void(std::span<const double> out, std::span<const double> out_grad)>;

namespace detail {
struct Node {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until first accumulation
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  BackwardFn backward;
};
}  // namespace detail

// Dense row-major tensor of doubles with define-by-run reverse-mode autodiff.
// Copies share the underlying buffer (handle semantics); use clone() for a
// deep copy.
class Tensor {
 public:
  Tensor();

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> data, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t rows() const;
  std::size_t cols() const;
  std::size_t size() const { return node_->data.size(); }

  std::span<const double> data() const { return node_->data; }
  // Writable view. Only meant for leaves (parameters, inputs); mutating an
  // interior node invalidates gradients computed through it.
  std::span<double> mutable_data() { return node_->data; }
  double item() const;
  double at(std::size_t i, std::size_t j) const;
  double operator[](std::size_t flat) const { return node_->data[flat]; }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool value);

  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const double> grad() const { return node_->grad; }
  // Gradient buffer, allocated (zero-filled) on first use.
  std::span<double> grad_sink() const;
  void zero_grad();
  void clear_grad() { node_->grad.clear(); }

  // Reverse-mode pass from a single-element tensor.
  void backward() const;

  Tensor detach() const;
  Tensor clone() const;
  bool same(const Tensor& other) const { return node_ == other.node_; }

  // Builds a graph node. Gradient tracking is on iff any input requires grad
  // and no NoGradGuard is active; otherwise inputs and backward are dropped.
  static Tensor make_op(Shape shape, std::vector<double> data, const std::vector<Tensor>& inputs,
                        BackwardFn backward);

 private:
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  std::shared_ptr<detail::Node> node_;
};

// Disables graph construction on this thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

// ---- operations -----------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);     // [m,k] x [k,n]
Tensor matmul_nt(const Tensor& a, const Tensor& b);  // [m,k] x [n,k]^T
Tensor add(const Tensor& a, const Tensor& b);        // same shape
Tensor add_row(const Tensor& a, const Tensor& row);  // [m,n] + [n] broadcast over rows
Tensor scale(const Tensor& a, double factor);
Tensor relu(const Tensor& a);
Tensor sum(const Tensor& a);

Tensor concat_cols(std::span<const Tensor> parts);
Tensor slice_cols(const Tensor& a, std::size_t start, std::size_t count);
Tensor concat_rows(std::span<const Tensor> parts);
Tensor slice_rows(const Tensor& a, std::size_t start, std::size_t count);

Tensor gather_rows(const Tensor& table, std::span<const std::size_t> indices);

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5);

// Row-wise softmax over the last axis of a 2-D tensor. Entries equal to
// -infinity are masked and come out as exactly 0.
Tensor softmax_lastdim(const Tensor& x);

// Mean negative log-likelihood of targets[i] under softmax(logits[i]) over
// rows where mask[i] is true.
Tensor cross_entropy(const Tensor& logits, std::span<const std::size_t> targets,
                     std::span<const bool> mask);

}  // namespace ripo
