#include "xlan/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <sstream>
#include <unordered_set>

#include "xlan/kernels.hpp"

namespace xlan {

namespace detail {

struct Node {
  Shape shape;
  std::shared_ptr<std::vector<double>> data;
  std::vector<double> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  std::size_t numel() const { return data->size(); }
  std::span<double> grad_buffer() {
    if (grad.empty()) grad.assign(data->size(), 0.0);
    return grad;
  }
  std::span<const double> values() const { return *data; }
};

struct Access {
  static const std::shared_ptr<Node>& node(const Tensor& t) { return t.node_; }
  static Tensor wrap(std::shared_ptr<Node> n) { return Tensor(std::move(n)); }
};

}  // namespace detail

using detail::Access;
using detail::Node;
using NodePtr = std::shared_ptr<Node>;

namespace {

thread_local bool g_grad_enabled = true;

const NodePtr& node_of(const Tensor& t) {
  if (!t.defined()) throw ContractError("operation on an undefined tensor");
  return Access::node(t);
}

Tensor make_leaf(Shape shape, std::vector<double> values, bool requires_grad) {
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->data = std::make_shared<std::vector<double>>(std::move(values));
  n->requires_grad = requires_grad;
  return Access::wrap(std::move(n));
}

// Builds an op result. The backward closure is retained only when grad mode
// is on and some input requires grad; parents that do not are dropped.
Tensor make_result(Shape shape, std::vector<double> values, std::vector<NodePtr> inputs,
                   std::function<void(Node&)> backward_fn) {
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->data = std::make_shared<std::vector<double>>(std::move(values));
  if (g_grad_enabled) {
    const bool any = std::any_of(inputs.begin(), inputs.end(),
                                 [](const NodePtr& p) { return p->requires_grad; });
    if (any) {
      n->requires_grad = true;
      n->parents = std::move(inputs);
      n->backward_fn = std::move(backward_fn);
    }
  }
  return Access::wrap(std::move(n));
}

bool wants(const NodePtr& p) { return p->requires_grad; }

std::size_t trailing(const Shape& s) { return s.empty() ? 1 : s.back(); }

std::size_t leading(const Shape& s) {
  if (s.size() <= 1) return 1;
  return shape_numel(s) / s.back();
}

enum class Broadcast { same, row, scalar };

Broadcast classify(const Tensor& a, const Tensor& b, const char* op) {
  const auto& sa = a.shape();
  const auto& sb = b.shape();
  if (sa == sb) return Broadcast::same;
  if (b.numel() == 1) return Broadcast::scalar;
  if (sb.size() == 1 && sa.size() >= 1 && sb[0] == sa.back()) return Broadcast::row;
  throw DimensionError(std::string(op) + ": cannot broadcast " + shape_str(sb) + " onto " +
                       shape_str(sa));
}

inline std::size_t bidx(Broadcast mode, std::size_t i, std::size_t width) {
  switch (mode) {
    case Broadcast::same: return i;
    case Broadcast::row: return i % width;
    case Broadcast::scalar: return 0;
  }
  return 0;
}

template <class Fwd, class Deriv>
Tensor unary(const Tensor& x, Fwd f, Deriv dydx) {
  const auto& xn = node_of(x);
  const auto& xv = *xn->data;
  std::vector<double> out(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = f(xv[i]);
  auto xdata = xn->data;
  return make_result(xn->shape, std::move(out), {xn}, [xdata, dydx](Node& self) {
    auto& parent = *self.parents[0];
    auto g = parent.grad_buffer();
    const auto& y = *self.data;
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * dydx((*xdata)[i], y[i]);
  });
}

}  // namespace

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

// ---- Tensor ------------------------------------------------------------------

Tensor::Tensor(Shape shape, std::vector<double> values, bool requires_grad) {
  for (auto e : shape)
    if (e == 0) throw DimensionError("tensor extents must be positive, got " + shape_str(shape));
  if (shape_numel(shape) != values.size())
    throw DimensionError("tensor of shape " + shape_str(shape) + " needs " +
                         std::to_string(shape_numel(shape)) + " values, got " +
                         std::to_string(values.size()));
  *this = make_leaf(std::move(shape), std::move(values), requires_grad);
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  const auto n = shape_numel(shape);
  return Tensor(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) { return Tensor({1}, {value}, requires_grad); }

Tensor Tensor::vector(std::vector<double> values, bool requires_grad) {
  const auto n = values.size();
  return Tensor({n}, std::move(values), requires_grad);
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::vector<double> values,
                      bool requires_grad) {
  return Tensor({rows, cols}, std::move(values), requires_grad);
}

const Shape& Tensor::shape() const { return node_of(*this)->shape; }
std::size_t Tensor::numel() const { return node_of(*this)->numel(); }
std::size_t Tensor::rows() const { return leading(shape()); }
std::size_t Tensor::cols() const { return trailing(shape()); }
std::span<const double> Tensor::values() const { return *node_of(*this)->data; }
std::span<double> Tensor::mutable_values() { return *node_of(*this)->data; }
std::vector<double> Tensor::to_vector() const { return *node_of(*this)->data; }

double Tensor::item() const {
  if (numel() != 1) throw ContractError("item() on tensor of shape " + shape_str(shape()));
  return values()[0];
}

double Tensor::at(std::size_t i) const { return values()[i]; }
double Tensor::at(std::size_t r, std::size_t c) const { return values()[r * cols() + c]; }
bool Tensor::requires_grad() const { return node_of(*this)->requires_grad; }
bool Tensor::is_leaf() const { return !node_of(*this)->backward_fn; }
bool Tensor::has_grad() const { return !node_of(*this)->grad.empty(); }
std::span<const double> Tensor::grad() const { return node_of(*this)->grad; }
std::span<double> Tensor::mutable_grad() { return node_of(*this)->grad_buffer(); }

void Tensor::zero_grad() {
  auto& g = node_of(*this)->grad;
  std::fill(g.begin(), g.end(), 0.0);
}

Tensor Tensor::shadow() const {
  const auto& src = node_of(*this);
  auto n = std::make_shared<Node>();
  n->shape = src->shape;
  n->data = src->data;
  n->requires_grad = src->requires_grad;
  return Access::wrap(std::move(n));
}

Tensor Tensor::detach() const {
  const auto& src = node_of(*this);
  return make_leaf(src->shape, *src->data, false);
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }
bool grad_enabled() { return g_grad_enabled; }

// ---- backward ----------------------------------------------------------------

void backward(const Tensor& loss) {
  const auto& root = node_of(loss);
  if (root->numel() != 1)
    throw ContractError("backward needs a scalar loss, got shape " + shape_str(root->shape));
  if (!root->requires_grad) return;

  // Iterative post-order DFS gives a topological order.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack{{root.get(), 0}};
  seen.insert(root.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* p = node->parents[next++].get();
      if (p->requires_grad && !seen.count(p)) {
        seen.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  root->grad_buffer()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward_fn && !n->grad.empty()) n->backward_fn(*n);
  }
  for (Node* n : order) {
    if (!n->backward_fn) continue;
    n->backward_fn = nullptr;
    n->parents.clear();
    n->grad.clear();
    n->grad.shrink_to_fit();
  }
}

// ---- linear algebra ----------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  const auto& an = node_of(a);
  const auto& bn = node_of(b);
  if (an->shape.size() != 2 || bn->shape.size() != 2 || an->shape[1] != bn->shape[0])
    throw DimensionError("matmul: incompatible shapes " + shape_str(an->shape) + " and " +
                         shape_str(bn->shape));
  const std::size_t m = an->shape[0], k = an->shape[1], n = bn->shape[1];
  std::vector<double> out(m * n);
  kernels::parallel::gemm_nn(m, n, k, *an->data, *bn->data, out, false);
  auto ad = an->data, bd = bn->data;
  return make_result({m, n}, std::move(out), {an, bn}, [ad, bd, m, n, k](Node& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    if (wants(self.parents[0])) kernels::parallel::gemm_nt(m, k, n, self.grad, *bd, pa.grad_buffer(), true);
    if (wants(self.parents[1])) kernels::parallel::gemm_tn(k, n, m, *ad, self.grad, pb.grad_buffer(), true);
  });
}

Tensor linear(const Tensor& x, const Tensor& weight) {
  const auto& xn = node_of(x);
  const auto& wn = node_of(weight);
  if (wn->shape.size() != 2 || xn->shape.empty() || xn->shape.size() > 2 ||
      xn->shape.back() != wn->shape[1])
    throw DimensionError("linear: input " + shape_str(xn->shape) + " does not match weight " +
                         shape_str(wn->shape));
  const std::size_t rows = leading(xn->shape), in = wn->shape[1], out_dim = wn->shape[0];
  Shape shape = xn->shape.size() == 1 ? Shape{out_dim} : Shape{rows, out_dim};
  std::vector<double> out(rows * out_dim);
  kernels::parallel::gemm_nt(rows, out_dim, in, *xn->data, *wn->data, out, false);
  auto xd = xn->data, wd = wn->data;
  return make_result(std::move(shape), std::move(out), {xn, wn},
                     [xd, wd, rows, in, out_dim](Node& self) {
                       if (wants(self.parents[0]))
                         kernels::parallel::gemm_nn(rows, in, out_dim, self.grad, *wd,
                                                    self.parents[0]->grad_buffer(), true);
                       if (wants(self.parents[1]))
                         kernels::parallel::gemm_tn(out_dim, in, rows, self.grad, *xd,
                                                    self.parents[1]->grad_buffer(), true);
                     });
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  return add(linear(x, weight), bias);
}

// ---- elementwise -------------------------------------------------------------

namespace {

template <class Op, class Da, class Db>
Tensor binary(const Tensor& a, const Tensor& b, const char* name, Op op, Da da, Db db) {
  const auto mode = classify(a, b, name);
  const auto& an = node_of(a);
  const auto& bn = node_of(b);
  const auto& av = *an->data;
  const auto& bv = *bn->data;
  const std::size_t width = trailing(an->shape);
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = op(av[i], bv[bidx(mode, i, width)]);
  auto ad = an->data, bd = bn->data;
  return make_result(an->shape, std::move(out), {an, bn}, [ad, bd, mode, width, da, db](Node& self) {
    const auto& A = *ad;
    const auto& B = *bd;
    if (wants(self.parents[0])) {
      auto g = self.parents[0]->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i)
        g[i] += self.grad[i] * da(A[i], B[bidx(mode, i, width)]);
    }
    if (wants(self.parents[1])) {
      auto g = self.parents[1]->grad_buffer();
      for (std::size_t i = 0; i < A.size(); ++i) {
        const std::size_t j = bidx(mode, i, width);
        g[j] += self.grad[i] * db(A[i], B[j]);
      }
    }
  });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return binary(
      a, b, "add", [](double x, double y) { return x + y; }, [](double, double) { return 1.0; },
      [](double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary(
      a, b, "sub", [](double x, double y) { return x - y; }, [](double, double) { return 1.0; },
      [](double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary(
      a, b, "mul", [](double x, double y) { return x * y; }, [](double, double y) { return y; },
      [](double x, double) { return x; });
}

Tensor scale(const Tensor& x, double factor) {
  return unary(
      x, [factor](double v) { return v * factor; }, [factor](double, double) { return factor; });
}

Tensor sigmoid(const Tensor& x) {
  return unary(
      x,
      [](double v) {
        if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
        const double e = std::exp(v);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor tanh(const Tensor& x) {
  return unary(
      x, [](double v) { return std::tanh(v); }, [](double, double y) { return 1.0 - y * y; });
}

Tensor relu(const Tensor& x) {
  return unary(
      x, [](double v) { return v > 0 ? v : 0.0; }, [](double v, double) { return v > 0 ? 1.0 : 0.0; });
}

Tensor elu(const Tensor& x) {
  return unary(
      x, [](double v) { return v >= 0 ? v : std::expm1(v); },
      [](double v, double y) { return v >= 0 ? 1.0 : y + 1.0; });
}

Tensor celu_plus_one(const Tensor& x) {
  return unary(
      x, [](double v) { return v >= 0 ? v + 1.0 : std::exp(v); },
      [](double v, double y) { return v >= 0 ? 1.0 : y; });
}

Tensor exp(const Tensor& x) {
  return unary(
      x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Tensor log(const Tensor& x) {
  return unary(
      x, [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

// ---- reductions ----------------------------------------------------------------

Tensor sum(const Tensor& x) {
  const auto& xn = node_of(x);
  double total = 0.0;
  for (double v : *xn->data) total += v;
  return make_result({1}, {total}, {xn}, [](Node& self) {
    auto g = self.parents[0]->grad_buffer();
    for (auto& gi : g) gi += self.grad[0];
  });
}

Tensor mean_rows(const Tensor& x) {
  const auto& xn = node_of(x);
  if (xn->shape.size() != 2) throw DimensionError("mean_rows: expected a matrix, got " + shape_str(xn->shape));
  const std::size_t n = xn->shape[0], d = xn->shape[1];
  const auto& v = *xn->data;
  std::vector<double> out(d, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) out[j] += v[i * d + j];
  for (auto& o : out) o /= static_cast<double>(n);
  return make_result({d}, std::move(out), {xn}, [n, d](Node& self) {
    auto g = self.parents[0]->grad_buffer();
    const double inv = 1.0 / static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < d; ++j) g[i * d + j] += self.grad[j] * inv;
  });
}

Tensor softmax(const Tensor& x) {
  const auto& xn = node_of(x);
  if (xn->shape.empty() || xn->shape.size() > 2)
    throw DimensionError("softmax: expected a vector or matrix, got " + shape_str(xn->shape));
  const std::size_t rows = leading(xn->shape), width = trailing(xn->shape);
  const auto& v = *xn->data;
  std::vector<double> out(v.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = v.data() + r * width;
    double* o = out.data() + r * width;
    const double mx = *std::max_element(in, in + width);
    double z = 0.0;
    for (std::size_t j = 0; j < width; ++j) z += (o[j] = std::exp(in[j] - mx));
    for (std::size_t j = 0; j < width; ++j) o[j] /= z;
  }
  return make_result(xn->shape, std::move(out), {xn}, [rows, width](Node& self) {
    auto g = self.parents[0]->grad_buffer();
    const auto& y = *self.data;
    for (std::size_t r = 0; r < rows; ++r) {
      const std::size_t off = r * width;
      double dot = 0.0;
      for (std::size_t j = 0; j < width; ++j) dot += self.grad[off + j] * y[off + j];
      for (std::size_t j = 0; j < width; ++j) g[off + j] += y[off + j] * (self.grad[off + j] - dot);
    }
  });
}

Tensor log_softmax(const Tensor& x) {
  const auto& xn = node_of(x);
  if (xn->shape.empty() || xn->shape.size() > 2)
    throw DimensionError("log_softmax: expected a vector or matrix, got " + shape_str(xn->shape));
  const std::size_t rows = leading(xn->shape), width = trailing(xn->shape);
  const auto& v = *xn->data;
  std::vector<double> out(v.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = v.data() + r * width;
    double* o = out.data() + r * width;
    const double mx = *std::max_element(in, in + width);
    double z = 0.0;
    for (std::size_t j = 0; j < width; ++j) z += std::exp(in[j] - mx);
    const double lz = mx + std::log(z);
    for (std::size_t j = 0; j < width; ++j) o[j] = in[j] - lz;
  }
  return make_result(xn->shape, std::move(out), {xn}, [rows, width](Node& self) {
    auto g = self.parents[0]->grad_buffer();
    const auto& y = *self.data;
    for (std::size_t r = 0; r < rows; ++r) {
      const std::size_t off = r * width;
      double gs = 0.0;
      for (std::size_t j = 0; j < width; ++j) gs += self.grad[off + j];
      for (std::size_t j = 0; j < width; ++j)
        g[off + j] += self.grad[off + j] - std::exp(y[off + j]) * gs;
    }
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias) {
  const auto& xn = node_of(x);
  const auto& gn = node_of(gain);
  const auto& bn = node_of(bias);
  if (xn->shape.empty() || xn->shape.size() > 2)
    throw DimensionError("layer_norm: expected a vector or matrix, got " + shape_str(xn->shape));
  const std::size_t rows = leading(xn->shape), width = trailing(xn->shape);
  if (gn->shape != Shape{width} || bn->shape != Shape{width})
    throw DimensionError("layer_norm: gain " + shape_str(gn->shape) + " / bias " +
                         shape_str(bn->shape) + " do not match width " + std::to_string(width));
  const auto& v = *xn->data;
  const auto& gv = *gn->data;
  const auto& bv = *bn->data;
  auto xhat = std::make_shared<std::vector<double>>(v.size());
  auto inv_std = std::make_shared<std::vector<double>>(rows);
  std::vector<double> out(v.size());
  const double w = static_cast<double>(width);
  for (std::size_t r = 0; r < rows; ++r) {
    const std::size_t off = r * width;
    double mean = 0.0;
    for (std::size_t j = 0; j < width; ++j) mean += v[off + j];
    mean /= w;
    double var = 0.0;
    for (std::size_t j = 0; j < width; ++j) var += (v[off + j] - mean) * (v[off + j] - mean);
    var /= w;
    const double is = 1.0 / std::sqrt(var + kLayerNormEps);
    (*inv_std)[r] = is;
    for (std::size_t j = 0; j < width; ++j) {
      const double h = (v[off + j] - mean) * is;
      (*xhat)[off + j] = h;
      out[off + j] = h * gv[j] + bv[j];
    }
  }
  auto gd = gn->data;
  return make_result(xn->shape, std::move(out), {xn, gn, bn},
                     [xhat, inv_std, gd, rows, width, w](Node& self) {
                       const auto& H = *xhat;
                       const auto& G = *gd;
                       if (wants(self.parents[1])) {
                         auto dg = self.parents[1]->grad_buffer();
                         for (std::size_t i = 0; i < H.size(); ++i) dg[i % width] += self.grad[i] * H[i];
                       }
                       if (wants(self.parents[2])) {
                         auto db = self.parents[2]->grad_buffer();
                         for (std::size_t i = 0; i < H.size(); ++i) db[i % width] += self.grad[i];
                       }
                       if (wants(self.parents[0])) {
                         auto dx = self.parents[0]->grad_buffer();
                         std::vector<double> dh(width);
                         for (std::size_t r = 0; r < rows; ++r) {
                           const std::size_t off = r * width;
                           double mean_dh = 0.0, mean_dh_h = 0.0;
                           for (std::size_t j = 0; j < width; ++j) {
                             dh[j] = self.grad[off + j] * G[j];
                             mean_dh += dh[j];
                             mean_dh_h += dh[j] * H[off + j];
                           }
                           mean_dh /= w;
                           mean_dh_h /= w;
                           for (std::size_t j = 0; j < width; ++j)
                             dx[off + j] += (*inv_std)[r] * (dh[j] - mean_dh - H[off + j] * mean_dh_h);
                         }
                       }
                     });
}

Tensor glu(const Tensor& x) {
  if (x.dim() != 1 || x.numel() % 2 != 0)
    throw DimensionError("glu: expected a vector of even length, got " + shape_str(x.shape()));
  const std::size_t half = x.numel() / 2;
  return mul(slice(x, 0, half), sigmoid(slice(x, half, 2 * half)));
}

// ---- shape manipulation --------------------------------------------------------

Tensor reshape(const Tensor& x, Shape shape) {
  const auto& xn = node_of(x);
  if (shape_numel(shape) != xn->numel())
    throw DimensionError("reshape: cannot view " + shape_str(xn->shape) + " as " + shape_str(shape));
  return make_result(std::move(shape), *xn->data, {xn}, [](Node& self) {
    auto g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

Tensor concat(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ContractError("concat: no inputs");
  std::vector<NodePtr> nodes;
  nodes.reserve(parts.size());
  for (const auto& p : parts) nodes.push_back(node_of(p));
  const Shape& first = nodes.front()->shape;
  if (first.empty() || first.size() > 2)
    throw DimensionError("concat: expected vectors or matrices, got " + shape_str(first));
  const std::size_t rows = leading(first);
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const auto& n : nodes) {
    if (n->shape.size() != first.size() || leading(n->shape) != rows)
      throw DimensionError("concat: " + shape_str(n->shape) + " does not line up with " + shape_str(first));
    widths.push_back(trailing(n->shape));
    total += widths.back();
  }
  std::vector<double> out(rows * total);
  for (std::size_t r = 0; r < rows; ++r) {
    std::size_t col = 0;
    for (std::size_t p = 0; p < nodes.size(); ++p) {
      const auto& v = *nodes[p]->data;
      std::copy_n(v.begin() + static_cast<std::ptrdiff_t>(r * widths[p]), widths[p],
                  out.begin() + static_cast<std::ptrdiff_t>(r * total + col));
      col += widths[p];
    }
  }
  Shape shape = first.size() == 1 ? Shape{total} : Shape{rows, total};
  return make_result(std::move(shape), std::move(out), nodes, [rows, total, widths](Node& self) {
    std::size_t col = 0;
    for (std::size_t p = 0; p < self.parents.size(); ++p) {
      if (wants(self.parents[p])) {
        auto g = self.parents[p]->grad_buffer();
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t j = 0; j < widths[p]; ++j) g[r * widths[p] + j] += self.grad[r * total + col + j];
      }
      col += widths[p];
    }
  });
}

Tensor slice(const Tensor& x, std::size_t begin, std::size_t end) {
  const auto& xn = node_of(x);
  if (xn->shape.size() != 1 || begin >= end || end > xn->numel())
    throw DimensionError("slice: range [" + std::to_string(begin) + ", " + std::to_string(end) +
                         ") invalid for " + shape_str(xn->shape));
  const auto& v = *xn->data;
  std::vector<double> out(v.begin() + static_cast<std::ptrdiff_t>(begin),
                          v.begin() + static_cast<std::ptrdiff_t>(end));
  return make_result({end - begin}, std::move(out), {xn}, [begin](Node& self) {
    auto g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < self.grad.size(); ++i) g[begin + i] += self.grad[i];
  });
}

Tensor repeat_rows(const Tensor& v, std::size_t n) {
  const auto& vn = node_of(v);
  if (vn->shape.size() != 1 || n == 0)
    throw DimensionError("repeat_rows: expected a vector and n >= 1, got " + shape_str(vn->shape));
  const std::size_t d = vn->numel();
  std::vector<double> out;
  out.reserve(n * d);
  for (std::size_t i = 0; i < n; ++i) out.insert(out.end(), vn->data->begin(), vn->data->end());
  return make_result({n, d}, std::move(out), {vn}, [n, d](Node& self) {
    auto g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < d; ++j) g[j] += self.grad[i * d + j];
  });
}

Tensor stack_rows(const std::vector<Tensor>& rows) {
  if (rows.empty()) throw ContractError("stack_rows: no inputs");
  std::vector<NodePtr> nodes;
  for (const auto& r : rows) nodes.push_back(node_of(r));
  const std::size_t d = nodes.front()->numel();
  std::vector<double> out;
  out.reserve(rows.size() * d);
  for (const auto& n : nodes) {
    if (n->shape.size() != 1 || n->numel() != d)
      throw DimensionError("stack_rows: row " + shape_str(n->shape) + " does not match width " + std::to_string(d));
    out.insert(out.end(), n->data->begin(), n->data->end());
  }
  return make_result({rows.size(), d}, std::move(out), nodes, [d](Node& self) {
    for (std::size_t r = 0; r < self.parents.size(); ++r) {
      if (!wants(self.parents[r])) continue;
      auto g = self.parents[r]->grad_buffer();
      for (std::size_t j = 0; j < d; ++j) g[j] += self.grad[r * d + j];
    }
  });
}

Tensor row(const Tensor& x, std::size_t r) {
  const auto& xn = node_of(x);
  if (xn->shape.size() != 2 || r >= xn->shape[0])
    throw DimensionError("row: index " + std::to_string(r) + " out of range for " + shape_str(xn->shape));
  const std::size_t d = xn->shape[1];
  const auto& v = *xn->data;
  std::vector<double> out(v.begin() + static_cast<std::ptrdiff_t>(r * d),
                          v.begin() + static_cast<std::ptrdiff_t>((r + 1) * d));
  return make_result({d}, std::move(out), {xn}, [r, d](Node& self) {
    auto g = self.parents[0]->grad_buffer();
    for (std::size_t j = 0; j < d; ++j) g[r * d + j] += self.grad[j];
  });
}

Tensor embedding(const Tensor& table, std::size_t id) { return row(table, id); }

Tensor pick(const Tensor& x, const std::vector<std::size_t>& index) {
  const auto& xn = node_of(x);
  if (xn->shape.size() != 2 || index.size() != xn->shape[0])
    throw DimensionError("pick: " + std::to_string(index.size()) + " indices for " + shape_str(xn->shape));
  const std::size_t width = xn->shape[1];
  std::vector<double> out(index.size());
  for (std::size_t r = 0; r < index.size(); ++r) {
    if (index[r] >= width)
      throw DimensionError("pick: index " + std::to_string(index[r]) + " >= width " + std::to_string(width));
    out[r] = (*xn->data)[r * width + index[r]];
  }
  return make_result({index.size()}, std::move(out), {xn}, [index, width](Node& self) {
    auto g = self.parents[0]->grad_buffer();
    for (std::size_t r = 0; r < index.size(); ++r) g[r * width + index[r]] += self.grad[r];
  });
}

}  // namespace xlan
