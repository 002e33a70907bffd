#include "xlan/attention.hpp"

#include <cmath>

namespace xlan {

namespace {

void expect_shape(const Tensor& t, const Shape& want, const char* what) {
  if (!t.defined()) throw ContractError(std::string(what) + " is not initialized");
  if (t.shape() != want)
    throw DimensionError(std::string(what) + ": expected " + shape_str(want) + ", got " +
                         shape_str(t.shape()));
}

void expect_matrix(const Tensor& t, const char* what) {
  if (!t.defined()) throw ContractError(std::string(what) + " is not initialized");
  if (t.dim() != 2) throw DimensionError(std::string(what) + ": expected a matrix, got " + shape_str(t.shape()));
}

}  // namespace

Tensor activate(Activation act, const Tensor& x) {
  switch (act) {
    case Activation::relu: return relu(x);
    case Activation::celu_plus_one: return celu_plus_one(x);
    case Activation::exp: return exp(x);
  }
  throw ContractError("unknown activation");
}

std::string to_string(Activation act) {
  switch (act) {
    case Activation::relu: return "relu";
    case Activation::celu_plus_one: return "celu_plus_one";
    case Activation::exp: return "exp";
  }
  return "?";
}

Activation parse_activation(const std::string& name) {
  if (name == "relu") return Activation::relu;
  if (name == "celu_plus_one" || name == "elu") return Activation::celu_plus_one;
  if (name == "exp") return Activation::exp;
  throw ContractError("unknown activation '" + name + "'");
}

Tensor xavier_uniform(std::size_t out, std::size_t in, Rng& rng) {
  const double s = std::sqrt(6.0 / static_cast<double>(in + out));
  std::uniform_real_distribution<double> dist(-s, s);
  std::vector<double> v(out * in);
  for (auto& x : v) x = dist(rng);
  return Tensor::matrix(out, in, std::move(v), true);
}

void AttentionInputs::validate() const {
  if (!query.defined() || !keys.defined() || !values.defined())
    throw ContractError("attention inputs are incomplete");
  if (query.dim() != 1) throw DimensionError("query must be a vector, got " + shape_str(query.shape()));
  if (keys.dim() != 2 || values.dim() != 2)
    throw DimensionError("keys/values must be row batches, got " + shape_str(keys.shape()) + " and " +
                         shape_str(values.shape()));
  if (keys.rows() != values.rows())
    throw DimensionError("key count " + std::to_string(keys.rows()) + " != value count " +
                         std::to_string(values.rows()));
}

// ---- X-Linear ------------------------------------------------------------------

XLinearParams XLinearParams::init(const XLinearDims& d, Activation act, Rng& rng) {
  XLinearParams p;
  p.w_k = xavier_uniform(d.bilinear, d.key, rng);
  p.w_qk = xavier_uniform(d.bilinear, d.query, rng);
  p.w_bk = xavier_uniform(d.mid, d.bilinear, rng);
  p.w_b = xavier_uniform(1, d.mid, rng);
  p.w_e = xavier_uniform(d.bilinear, d.mid, rng);
  p.w_v = xavier_uniform(d.bilinear, d.value, rng);
  p.w_qv = xavier_uniform(d.bilinear, d.query, rng);
  p.activation = act;
  return p;
}

XLinearDims XLinearParams::dims() const {
  return {w_qk.cols(), w_k.cols(), w_v.cols(), w_k.rows(), w_bk.rows()};
}

void XLinearParams::validate() const {
  for (const Tensor* t : {&w_k, &w_qk, &w_bk, &w_b, &w_e, &w_v, &w_qv}) expect_matrix(*t, "x-linear weight");
  const auto d = dims();
  expect_shape(w_qk, {d.bilinear, d.query}, "W_q^k");
  expect_shape(w_bk, {d.mid, d.bilinear}, "W_B^k");
  expect_shape(w_b, {1, d.mid}, "W_b");
  expect_shape(w_e, {d.bilinear, d.mid}, "W_e");
  expect_shape(w_v, {d.bilinear, d.value}, "W_v");
  expect_shape(w_qv, {d.bilinear, d.query}, "W_q^v");
}

XLinearMemory project_memory(const XLinearParams& p, const Tensor& keys, const Tensor& values) {
  p.validate();
  if (keys.dim() != 2 || values.dim() != 2 || keys.rows() != values.rows())
    throw DimensionError("keys " + shape_str(keys.shape()) + " and values " + shape_str(values.shape()) +
                         " must be row batches of equal count");
  return {activate(p.activation, linear(keys, p.w_k)), activate(p.activation, linear(values, p.w_v))};
}

XLinearResult x_linear_attend(const XLinearParams& p, const XLinearMemory& memory, const Tensor& query,
                              bool keep_trace) {
  if (query.dim() != 1 || query.numel() != p.w_qk.cols())
    throw DimensionError("x-linear query " + shape_str(query.shape()) + " does not match W_q^k " +
                         shape_str(p.w_qk.shape()));
  const std::size_t n = memory.size();

  // Spatial and channel attention from the bilinear query-key maps.
  Tensor bilinear_keys = mul(memory.key_proj, activate(p.activation, linear(query, p.w_qk)));
  Tensor transformed = activate(p.activation, linear(bilinear_keys, p.w_bk));
  Tensor spatial_logits = reshape(linear(transformed, p.w_b), {n});
  Tensor spatial = softmax(spatial_logits);
  Tensor descriptor = mean_rows(transformed);
  Tensor channel_logits = linear(descriptor, p.w_e);
  Tensor channel = sigmoid(channel_logits);

  Tensor bilinear_values = mul(memory.value_proj, activate(p.activation, linear(query, p.w_qv)));
  Tensor pooled = reshape(matmul(reshape(spatial, {1, n}), bilinear_values), {bilinear_values.cols()});

  XLinearResult out{mul(channel, pooled), std::nullopt};
  if (keep_trace) {
    out.trace = XLinearTrace{bilinear_keys.detach(), transformed.detach(),    descriptor.detach(),
                             spatial_logits.detach(), spatial.detach(),       channel_logits.detach(),
                             channel.detach(),        bilinear_values.detach()};
  }
  return out;
}

XLinearResult x_linear_attend(const XLinearParams& p, const AttentionInputs& in, bool keep_trace) {
  in.validate();
  return x_linear_attend(p, project_memory(p, in.keys, in.values), in.query, keep_trace);
}

// ---- conventional -----------------------------------------------------------------

ConvAttnParams ConvAttnParams::init(std::size_t query_dim, std::size_t key_dim, std::size_t hidden,
                                    Rng& rng) {
  ConvAttnParams p;
  p.w_a = xavier_uniform(1, hidden, rng);
  p.w_k = xavier_uniform(hidden, key_dim, rng);
  p.w_q = xavier_uniform(hidden, query_dim, rng);
  return p;
}

void ConvAttnParams::validate() const {
  for (const Tensor* t : {&w_a, &w_k, &w_q}) expect_matrix(*t, "attention weight");
  const std::size_t h = w_k.rows();
  expect_shape(w_a, {1, h}, "W_a");
  if (w_q.rows() != h)
    throw DimensionError("W_q " + shape_str(w_q.shape()) + " does not match hidden size " + std::to_string(h));
}

ConvAttnMemory project_memory(const ConvAttnParams& p, const Tensor& keys, const Tensor& values) {
  p.validate();
  if (keys.dim() != 2 || values.dim() != 2 || keys.rows() != values.rows())
    throw DimensionError("keys " + shape_str(keys.shape()) + " and values " + shape_str(values.shape()) +
                         " must be row batches of equal count");
  return {linear(keys, p.w_k), values};
}

ConvAttnResult conventional_attend(const ConvAttnParams& p, const ConvAttnMemory& memory, const Tensor& query) {
  if (query.dim() != 1 || query.numel() != p.w_q.cols())
    throw DimensionError("attention query " + shape_str(query.shape()) + " does not match W_q " +
                         shape_str(p.w_q.shape()));
  const std::size_t n = memory.key_proj.rows();
  Tensor logits = reshape(linear(tanh(add(memory.key_proj, linear(query, p.w_q))), p.w_a), {n});
  Tensor weights = softmax(logits);
  Tensor attended = reshape(matmul(reshape(weights, {1, n}), memory.values), {memory.values.cols()});
  return {attended, weights, logits};
}

ConvAttnResult conventional_attend(const ConvAttnParams& p, const AttentionInputs& in) {
  in.validate();
  return conventional_attend(p, project_memory(p, in.keys, in.values), in.query);
}

// ---- key/value updating ------------------------------------------------------------

KVUpdateParams KVUpdateParams::init(std::size_t attended_dim, std::size_t key_dim, std::size_t value_dim,
                                    Rng& rng) {
  KVUpdateParams p;
  p.w_km = xavier_uniform(key_dim, attended_dim + key_dim, rng);
  p.w_vm = xavier_uniform(value_dim, attended_dim + value_dim, rng);
  p.key_gain = Tensor::full({key_dim}, 1.0, true);
  p.key_bias = Tensor::zeros({key_dim}, true);
  p.value_gain = Tensor::full({value_dim}, 1.0, true);
  p.value_bias = Tensor::zeros({value_dim}, true);
  return p;
}

KeyValues kv_update(const KVUpdateParams& p, const Tensor& attended, const Tensor& keys, const Tensor& values) {
  if (attended.dim() != 1 || keys.dim() != 2 || values.dim() != 2 || keys.rows() != values.rows())
    throw DimensionError("kv_update: attended " + shape_str(attended.shape()) + ", keys " +
                         shape_str(keys.shape()) + ", values " + shape_str(values.shape()));
  expect_shape(p.w_km, {keys.cols(), attended.numel() + keys.cols()}, "W_m^k");
  expect_shape(p.w_vm, {values.cols(), attended.numel() + values.cols()}, "W_m^v");
  const std::size_t n = keys.rows();
  Tensor broadcast = repeat_rows(attended, n);
  Tensor k = layer_norm(add(relu(linear(concat({broadcast, keys}), p.w_km)), keys), p.key_gain, p.key_bias);
  Tensor v = layer_norm(add(relu(linear(concat({broadcast, values}), p.w_vm)), values), p.value_gain,
                        p.value_bias);
  return {k, v};
}

StackOutput stack_forward(const std::vector<AttentionLayer>& blocks, const AttentionInputs& in, bool keep_trace) {
  if (blocks.empty()) throw ContractError("stack_forward needs at least one block");
  in.validate();
  StackOutput out;
  Tensor query = in.query;
  Tensor keys = in.keys;
  Tensor values = in.values;
  for (const auto& block : blocks) {
    auto res = x_linear_attend(block.attention, project_memory(block.attention, keys, values), query, keep_trace);
    auto kv = kv_update(block.update, res.attended, keys, values);
    out.attended.push_back(res.attended);
    if (res.trace) out.traces.push_back(std::move(*res.trace));
    query = res.attended;
    keys = kv.keys;
    values = kv.values;
  }
  out.keys = keys;
  out.values = values;
  return out;
}

}  // namespace xlan
