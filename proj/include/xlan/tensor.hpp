#pragma once

// Dense 64-bit tensors with eager reverse-mode differentiation.
//
// A Tensor is a cheap handle to a node. Operations on tensors that require
// gradients record their parents and a backward closure; `backward(loss)`
// walks the recorded graph once in reverse topological order, accumulates
// into every reachable leaf's grad, and then releases the graph.

#include <cstddef>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "xlan/errors.hpp"

namespace xlan {

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

namespace detail {
struct Node;
struct Access;
}

class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<double> values, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);
  static Tensor vector(std::vector<double> values, bool requires_grad = false);
  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> values,
                       bool requires_grad = false);

  bool defined() const noexcept { return node_ != nullptr; }

  const Shape& shape() const;
  std::size_t dim() const { return shape().size(); }
  std::size_t numel() const;
  // Leading extent of a matrix; 1 for vectors.
  std::size_t rows() const;
  // Trailing extent.
  std::size_t cols() const;

  std::span<const double> values() const;
  // In-place access for leaves (optimizer updates, tests). Never mutate a
  // tensor whose values were saved by a recorded graph.
  std::span<double> mutable_values();
  std::vector<double> to_vector() const;
  double item() const;
  double at(std::size_t i) const;
  double at(std::size_t r, std::size_t c) const;

  bool requires_grad() const;
  bool is_leaf() const;
  bool has_grad() const;
  // Empty when no gradient has been accumulated yet.
  std::span<const double> grad() const;
  // Allocates a zero gradient on first use.
  std::span<double> mutable_grad();
  void zero_grad();

  // New leaf sharing this tensor's value buffer with an independent grad.
  Tensor shadow() const;
  // New leaf holding a copy of the values, outside any graph.
  Tensor detach() const;

  // Identity of the underlying node.
  const void* id() const noexcept { return node_.get(); }

 private:
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  std::shared_ptr<detail::Node> node_;

  friend struct detail::Access;
};

// Disables graph recording on the current thread while alive.
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

// Propagates d(loss)/d(.) into every reachable tensor that requires grad.
// Leaf gradients accumulate across calls until zero_grad().
void backward(const Tensor& loss);

// ---- linear algebra -------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);
// x·Wᵀ with W[out×in]; x is a vector [in] or a row batch [N×in].
Tensor linear(const Tensor& x, const Tensor& weight);
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);

// ---- elementwise ----------------------------------------------------------
// Binary ops broadcast `b` when it has the same shape as `a`, is a vector
// matching a's trailing extent, or holds a single element.

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double factor);

Tensor sigmoid(const Tensor& x);
Tensor tanh(const Tensor& x);
Tensor relu(const Tensor& x);
Tensor elu(const Tensor& x);
// elu(x) + 1: strictly positive and exactly exp(x) for x < 0.
Tensor celu_plus_one(const Tensor& x);
Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);

// ---- reductions and normalization ------------------------------------------

Tensor sum(const Tensor& x);
// Column means of a row batch [N×d] -> [d].
Tensor mean_rows(const Tensor& x);
// Softmax over the trailing axis (each row of a matrix independently).
Tensor softmax(const Tensor& x);
Tensor log_softmax(const Tensor& x);

inline constexpr double kLayerNormEps = 1e-5;
// Per-row normalization with population variance, then gain and bias.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias);

// first half ⊙ sigmoid(second half) of a vector of even length.
Tensor glu(const Tensor& x);

// ---- shape manipulation ---------------------------------------------------

Tensor reshape(const Tensor& x, Shape shape);
// Concatenate along the trailing axis; all parts share their leading extent.
Tensor concat(const std::vector<Tensor>& parts);
Tensor slice(const Tensor& x, std::size_t begin, std::size_t end);
Tensor repeat_rows(const Tensor& v, std::size_t n);
Tensor stack_rows(const std::vector<Tensor>& rows);
Tensor row(const Tensor& x, std::size_t r);
// Row `id` of an embedding table.
Tensor embedding(const Tensor& table, std::size_t id);
// out[r] = x[r, index[r]].
Tensor pick(const Tensor& x, const std::vector<std::size_t>& index);

}  // namespace xlan
