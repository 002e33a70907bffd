#pragma once

// Attention LSTM sentence decoder.
//
// Each step feeds [embed(token); global image feature; h_{t-1}; c_{t-1}] to an
// LSTM cell, attends over the encoder's region features with h_t as query,
// forms the context c_t = GLU(W_c [attended; h_t] + b_c), and projects it to
// vocabulary logits.

#include <cstdint>
#include <optional>
#include <vector>

#include "xlan/attention.hpp"
#include "xlan/encoder.hpp"

namespace xlan {

using TokenId = std::uint32_t;

// Reserved vocabulary ids.
inline constexpr TokenId kPad = 0;
inline constexpr TokenId kBos = 1;
inline constexpr TokenId kEos = 2;
inline constexpr TokenId kUnk = 3;
inline constexpr std::size_t kReservedTokens = 4;

enum class AttentionKind { conventional, xlinear };

std::string to_string(AttentionKind kind);
AttentionKind parse_attention_kind(const std::string& name);

struct DecoderDims {
  std::size_t vocab = 0;
  std::size_t word = 0;
  std::size_t feature = 0;   // region / image feature width
  std::size_t hidden = 0;    // LSTM size, also the context width
  std::size_t mid = 0;       // X-Linear D_c, or the additive-attention hidden size
  std::size_t image_features = 1;  // number of encoder attended features concatenated
  AttentionKind attention = AttentionKind::xlinear;
  Activation activation = Activation::celu_plus_one;
};

struct DecoderParams {
  Tensor embed;   // [V×D_w]
  Tensor w_g;     // [D×(D·image_features)]
  Tensor lstm_w;  // [4H×(D_w+D+2H)], gate order i, f, o, g
  Tensor lstm_b;  // [4H]
  AttentionKind attention = AttentionKind::xlinear;
  XLinearParams xattn;    // used when attention == xlinear
  ConvAttnParams cattn;   // used when attention == conventional
  Tensor w_c;     // [2H×(D+H)]
  Tensor b_c;     // [2H]
  Tensor w_out;   // [V×H]
  Tensor b_out;   // [V]

  static DecoderParams init(const DecoderDims& dims, Rng& rng);

  std::size_t vocab_size() const { return embed.rows(); }
  std::size_t hidden_size() const { return w_out.cols(); }

  template <class F>
  void for_each(F&& f) {
    f("embed", embed);
    f("w_g", w_g);
    f("lstm_w", lstm_w);
    f("lstm_b", lstm_b);
    if (attention == AttentionKind::xlinear)
      xattn.for_each([&](const char* name, Tensor& t) { f(std::string("xattn.") + name, t); });
    else
      cattn.for_each([&](const char* name, Tensor& t) { f(std::string("cattn.") + name, t); });
    f("w_c", w_c);
    f("b_c", b_c);
    f("w_out", w_out);
    f("b_out", b_out);
  }
};

struct DecoderState {
  Tensor h;        // [H]
  Tensor cell;     // [H]
  Tensor context;  // previous context vector [H]
  std::size_t step = 0;
};

// Encoder-derived quantities that stay fixed across decode steps.
struct DecoderContext {
  Tensor global_feature;  // W_G · [v̂^(0); ...; v̂^(L)]
  XLinearMemory xmemory;
  ConvAttnMemory cmemory;
  std::size_t regions = 0;
};

struct StepOutput {
  Tensor logits;  // [V]
  DecoderState state;
  std::optional<XLinearTrace> trace;  // conventional attention fills only the spatial fields
};

Tensor global_image_feature(const DecoderParams& p, const EncoderOutput& enc);
DecoderContext prepare_context(const DecoderParams& p, const EncoderOutput& enc);
DecoderState init_state(const DecoderParams& p);

StepOutput decode_step(const DecoderParams& p, const DecoderState& st, TokenId token, const DecoderContext& ctx,
                       bool keep_trace = false);
StepOutput decode_step(const DecoderParams& p, const DecoderState& st, TokenId token, const EncoderOutput& enc,
                       bool keep_trace = false);

}  // namespace xlan
