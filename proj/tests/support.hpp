#pragma once

// Shared helpers for the unit tests: central-difference gradient checks and
// plain-loop reference math that does not touch the autograd graph.

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "xlan/tensor.hpp"

namespace xlan::testing {

using Vec = std::vector<double>;
using Mat = std::vector<Vec>;

inline std::mt19937_64& rng() {
  static std::mt19937_64 r(20240611);
  return r;
}

inline Tensor random_tensor(Shape shape, double lo = -2.0, double hi = 2.0, bool requires_grad = true,
                            std::mt19937_64* g = nullptr) {
  std::uniform_real_distribution<double> u(lo, hi);
  auto& r = g ? *g : rng();
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = u(r);
  return Tensor(std::move(shape), std::move(v), requires_grad);
}

// Largest relative error |a - n| / max(|a|, |n|, floor) over every element of
// every leaf, comparing backward() against central differences of f.
inline double grad_check(const std::function<Tensor()>& f, std::vector<Tensor> leaves, double h = 1e-5,
                         double floor = 1e-6) {
  for (auto& l : leaves) l.zero_grad();
  backward(f());
  std::vector<Vec> analytic;
  for (auto& l : leaves) {
    const auto g = l.grad();
    analytic.emplace_back(g.begin(), g.end());
    if (analytic.back().empty()) analytic.back().assign(l.numel(), 0.0);
  }
  double worst = 0.0;
  NoGradGuard no_grad;
  for (std::size_t li = 0; li < leaves.size(); ++li) {
    auto w = leaves[li].mutable_values();
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double keep = w[i];
      w[i] = keep + h;
      const double up = f().item();
      w[i] = keep - h;
      const double down = f().item();
      w[i] = keep;
      const double numeric = (up - down) / (2 * h);
      const double a = analytic[li][i];
      worst = std::max(worst, std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), floor}));
    }
  }
  return worst;
}

// Σ_i c_i · x_i with fixed random coefficients: a scalar probe with a
// nontrivial upstream gradient.
inline Tensor probe(const Tensor& x, std::uint64_t seed = 99) {
  std::mt19937_64 g(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<double> c(x.numel());
  for (auto& v : c) v = u(g);
  return sum(mul(reshape(x, {x.numel()}), Tensor::vector(std::move(c))));
}

// ---- plain-loop reference math -----------------------------------------------------

inline Mat to_mat(const Tensor& t) {
  Mat m(t.rows(), Vec(t.cols()));
  for (std::size_t r = 0; r < t.rows(); ++r)
    for (std::size_t c = 0; c < t.cols(); ++c) m[r][c] = t.at(r, c);
  return m;
}

inline Vec to_vec(const Tensor& t) { return t.to_vector(); }

inline Vec matvec(const Mat& w, const Vec& x) {
  Vec y(w.size(), 0.0);
  for (std::size_t r = 0; r < w.size(); ++r)
    for (std::size_t c = 0; c < x.size(); ++c) y[r] += w[r][c] * x[c];
  return y;
}

inline Vec cat(const Vec& a, const Vec& b) {
  Vec out = a;
  out.insert(out.end(), b.begin(), b.end());
  return out;
}

inline Vec vadd(const Vec& a, const Vec& b) {
  Vec out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] + b[i];
  return out;
}

inline Vec vmul(const Vec& a, const Vec& b) {
  Vec out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] * b[i];
  return out;
}

inline Vec apply(Vec v, double (*f)(double)) {
  for (auto& x : v) x = f(x);
  return v;
}

inline double ref_relu(double x) { return x > 0 ? x : 0.0; }
inline double ref_sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }
inline double ref_celu1(double x) { return x > 0 ? x + 1.0 : std::exp(x); }
inline double ref_exp(double x) { return std::exp(x); }
inline double ref_tanh(double x) { return std::tanh(x); }

inline Vec ref_softmax(const Vec& x) {
  const double m = *std::max_element(x.begin(), x.end());
  Vec e(x.size());
  double z = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) z += (e[i] = std::exp(x[i] - m));
  for (auto& v : e) v /= z;
  return e;
}

inline Vec ref_layer_norm(const Vec& x, const Vec& gain, const Vec& bias, double eps = 1e-5) {
  double mean = 0.0, var = 0.0;
  for (double v : x) mean += v;
  mean /= static_cast<double>(x.size());
  for (double v : x) var += (v - mean) * (v - mean);
  var /= static_cast<double>(x.size());
  Vec out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = (x[i] - mean) / std::sqrt(var + eps) * gain[i] + bias[i];
  return out;
}

inline double max_abs_diff(const Vec& a, const Vec& b) {
  double d = a.size() == b.size() ? 0.0 : INFINITY;
  for (std::size_t i = 0; i < std::min(a.size(), b.size()); ++i) d = std::max(d, std::abs(a[i] - b[i]));
  return d;
}

inline double max_abs_diff(std::span<const double> a, const Vec& b) { return max_abs_diff(Vec(a.begin(), a.end()), b); }

}  // namespace xlan::testing

#include "xlan/attention.hpp"

namespace xlan::testing {

using ActFn = double (*)(double);

inline ActFn ref_act(Activation a) {
  switch (a) {
    case Activation::relu: return ref_relu;
    case Activation::celu_plus_one: return ref_celu1;
    case Activation::exp: return ref_exp;
  }
  return ref_relu;
}

struct RefXLinear {
  Mat bilinear_keys;
  Vec beta_s, beta_c, v_hat;
};

inline RefXLinear ref_x_linear(const XLinearParams& p, const Vec& q, const Mat& keys, const Mat& values) {
  const auto act = ref_act(p.activation);
  const auto wk = to_mat(p.w_k), wqk = to_mat(p.w_qk), wbk = to_mat(p.w_bk), wb = to_mat(p.w_b),
             we = to_mat(p.w_e), wv = to_mat(p.w_v), wqv = to_mat(p.w_qv);
  RefXLinear out;
  const auto qk = apply(matvec(wqk, q), act);
  const auto qv = apply(matvec(wqv, q), act);
  const std::size_t n = keys.size();
  Vec logits(n);
  Vec descriptor(wbk.size(), 0.0);
  Mat bv(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto bk = vmul(apply(matvec(wk, keys[i]), act), qk);
    out.bilinear_keys.push_back(bk);
    const auto t = apply(matvec(wbk, bk), act);
    logits[i] = matvec(wb, t)[0];
    for (std::size_t d = 0; d < t.size(); ++d) descriptor[d] += t[d] / static_cast<double>(n);
    bv[i] = vmul(apply(matvec(wv, values[i]), act), qv);
  }
  out.beta_s = ref_softmax(logits);
  out.beta_c = apply(matvec(we, descriptor), ref_sigmoid);
  out.v_hat.assign(out.beta_c.size(), 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t d = 0; d < out.v_hat.size(); ++d) out.v_hat[d] += out.beta_s[i] * bv[i][d];
  out.v_hat = vmul(out.v_hat, out.beta_c);
  return out;
}

inline std::pair<Mat, Mat> ref_kv_update(const KVUpdateParams& p, const Vec& v_hat, const Mat& keys, const Mat& values) {
  const auto wkm = to_mat(p.w_km), wvm = to_mat(p.w_vm);
  Mat k2, v2;
  for (std::size_t i = 0; i < keys.size(); ++i) {
    k2.push_back(ref_layer_norm(vadd(apply(matvec(wkm, cat(v_hat, keys[i])), ref_relu), keys[i]), to_vec(p.key_gain),
                                to_vec(p.key_bias)));
    v2.push_back(ref_layer_norm(vadd(apply(matvec(wvm, cat(v_hat, values[i])), ref_relu), values[i]),
                                to_vec(p.value_gain), to_vec(p.value_bias)));
  }
  return {k2, v2};
}

inline double max_abs_diff(const Tensor& t, const Mat& m) {
  double d = 0.0;
  for (std::size_t r = 0; r < m.size(); ++r) d = std::max(d, max_abs_diff(row(t, r).values(), m[r]));
  return d;
}

// Random layer parameters with every gain/bias perturbed away from its init.
inline AttentionLayer random_layer(std::size_t dim, std::size_t mid, Activation act, std::mt19937_64& g) {
  AttentionLayer l{XLinearParams::init({dim, dim, dim, dim, mid}, act, g), KVUpdateParams::init(dim, dim, dim, g)};
  std::uniform_real_distribution<double> u(-0.3, 0.3);
  for (Tensor* t : {&l.update.key_gain, &l.update.key_bias, &l.update.value_gain, &l.update.value_bias})
    for (auto& v : t->mutable_values()) v += u(g);
  return l;
}

}  // namespace xlan::testing
