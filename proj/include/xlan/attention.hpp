#pragma once

// Attention blocks over a set of N key/value pairs and a single query.
//
// Keys and values are carried as row batches ([N×D_k], [N×D_v]), the query as
// a vector [D_q]. The X-Linear block pools query-key and query-value pairs
// with low-rank bilinear products, derives a spatial softmax over the N pairs
// and sigmoid channel gates from a squeeze-excitation of the pooled keys, and
// returns the gated, spatially weighted sum of the bilinear values.

#include <cstddef>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "xlan/tensor.hpp"

namespace xlan {

using Rng = std::mt19937_64;

// Nonlinearity applied at every bilinear site of an X-Linear block.
enum class Activation { relu, celu_plus_one, exp };

Tensor activate(Activation act, const Tensor& x);
std::string to_string(Activation act);
Activation parse_activation(const std::string& name);

// Uniform(-s, s), s = sqrt(6 / (fan_in + fan_out)).
Tensor xavier_uniform(std::size_t out, std::size_t in, Rng& rng);

struct AttentionInputs {
  Tensor query;   // [D_q]
  Tensor keys;    // [N×D_k]
  Tensor values;  // [N×D_v]

  std::size_t size() const { return keys.rows(); }
  void validate() const;
};

struct XLinearDims {
  std::size_t query = 0;
  std::size_t key = 0;
  std::size_t value = 0;
  std::size_t bilinear = 0;  // D_B, also the width of the attended output
  std::size_t mid = 0;       // D_c
};

struct XLinearParams {
  Tensor w_k;   // [D_B×D_k]
  Tensor w_qk;  // [D_B×D_q]
  Tensor w_bk;  // [D_c×D_B]
  Tensor w_b;   // [1×D_c]
  Tensor w_e;   // [D_B×D_c]
  Tensor w_v;   // [D_B×D_v]
  Tensor w_qv;  // [D_B×D_q]
  Activation activation = Activation::relu;

  static XLinearParams init(const XLinearDims& dims, Activation act, Rng& rng);
  XLinearDims dims() const;
  void validate() const;

  template <class F>
  void for_each(F&& f) {
    f("w_k", w_k);
    f("w_qk", w_qk);
    f("w_bk", w_bk);
    f("w_b", w_b);
    f("w_e", w_e);
    f("w_v", w_v);
    f("w_qv", w_qv);
  }
};

// Everything the block computes on the way to the attended feature.
// Per-pair quantities are row batches with one row per key/value pair.
struct XLinearTrace {
  Tensor bilinear_keys;       // B^k  [N×D_B]
  Tensor transformed_keys;    // B'^k [N×D_c]
  Tensor channel_descriptor;  // mean of B'^k over pairs [D_c]
  Tensor spatial_logits;      // [N]
  Tensor spatial_weights;     // softmax of the spatial logits [N]
  Tensor channel_logits;      // [D_B]
  Tensor channel_gates;       // sigmoid of the channel logits [D_B]
  Tensor bilinear_values;     // B^v  [N×D_B]
};

// Query-independent halves of the bilinear products; reusable across queries
// against the same key/value set.
struct XLinearMemory {
  Tensor key_proj;    // act(K·W_kᵀ)  [N×D_B]
  Tensor value_proj;  // act(V·W_vᵀ)  [N×D_B]

  std::size_t size() const { return key_proj.rows(); }
};

struct XLinearResult {
  Tensor attended;  // [D_B]
  std::optional<XLinearTrace> trace;
};

XLinearMemory project_memory(const XLinearParams& p, const Tensor& keys, const Tensor& values);
XLinearResult x_linear_attend(const XLinearParams& p, const XLinearMemory& memory,
                              const Tensor& query, bool keep_trace = false);
XLinearResult x_linear_attend(const XLinearParams& p, const AttentionInputs& in,
                              bool keep_trace = false);

// Additive attention baseline: a_i = W_a·tanh(W_k k_i + W_q Q).
struct ConvAttnParams {
  Tensor w_a;  // [1×D_h]
  Tensor w_k;  // [D_h×D_k]
  Tensor w_q;  // [D_h×D_q]

  static ConvAttnParams init(std::size_t query_dim, std::size_t key_dim, std::size_t hidden,
                             Rng& rng);
  void validate() const;

  template <class F>
  void for_each(F&& f) {
    f("w_a", w_a);
    f("w_k", w_k);
    f("w_q", w_q);
  }
};

struct ConvAttnMemory {
  Tensor key_proj;  // K·W_kᵀ [N×D_h]
  Tensor values;    // [N×D_v]
};

struct ConvAttnResult {
  Tensor attended;  // [D_v]
  Tensor weights;   // [N]
  Tensor logits;    // [N]
};

ConvAttnMemory project_memory(const ConvAttnParams& p, const Tensor& keys, const Tensor& values);
ConvAttnResult conventional_attend(const ConvAttnParams& p, const ConvAttnMemory& memory,
                                   const Tensor& query);
ConvAttnResult conventional_attend(const ConvAttnParams& p, const AttentionInputs& in);

// Refreshes keys and values from the attended feature: residual + layer norm.
struct KVUpdateParams {
  Tensor w_km;  // [D_k×(D_B+D_k)]
  Tensor w_vm;  // [D_v×(D_B+D_v)]
  Tensor key_gain, key_bias;
  Tensor value_gain, value_bias;

  static KVUpdateParams init(std::size_t attended_dim, std::size_t key_dim, std::size_t value_dim,
                             Rng& rng);

  template <class F>
  void for_each(F&& f) {
    f("w_km", w_km);
    f("w_vm", w_vm);
    f("key_gain", key_gain);
    f("key_bias", key_bias);
    f("value_gain", value_gain);
    f("value_bias", value_bias);
  }
};

struct KeyValues {
  Tensor keys;
  Tensor values;
};

KeyValues kv_update(const KVUpdateParams& p, const Tensor& attended, const Tensor& keys,
                    const Tensor& values);

struct AttentionLayer {
  XLinearParams attention;
  KVUpdateParams update;
};

struct StackOutput {
  std::vector<Tensor> attended;  // one per block
  Tensor keys;
  Tensor values;
  std::vector<XLinearTrace> traces;  // filled when traces were requested
};

// Each block attends with the previous block's output as query, then updates
// the keys/values it hands to the next block.
StackOutput stack_forward(const std::vector<AttentionLayer>& blocks, const AttentionInputs& in,
                          bool keep_trace = false);

}  // namespace xlan
