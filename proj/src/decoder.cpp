#include "xlan/decoder.hpp"

namespace xlan {

std::string to_string(AttentionKind kind) {
  return kind == AttentionKind::xlinear ? "xlinear" : "conventional";
}

AttentionKind parse_attention_kind(const std::string& name) {
  if (name == "xlinear") return AttentionKind::xlinear;
  if (name == "conventional") return AttentionKind::conventional;
  throw ContractError("unknown attention kind '" + name + "'");
}

DecoderParams DecoderParams::init(const DecoderDims& d, Rng& rng) {
  DecoderParams p;
  const std::size_t h = d.hidden;
  p.embed = xavier_uniform(d.vocab, d.word, rng);
  p.w_g = xavier_uniform(d.feature, d.feature * d.image_features, rng);
  p.lstm_w = xavier_uniform(4 * h, d.word + d.feature + 2 * h, rng);
  p.lstm_b = Tensor::zeros({4 * h}, true);
  p.attention = d.attention;
  if (d.attention == AttentionKind::xlinear)
    p.xattn = XLinearParams::init({h, d.feature, d.feature, d.feature, d.mid}, d.activation, rng);
  else
    p.cattn = ConvAttnParams::init(h, d.feature, d.mid, rng);
  p.w_c = xavier_uniform(2 * h, d.feature + h, rng);
  p.b_c = Tensor::zeros({2 * h}, true);
  p.w_out = xavier_uniform(d.vocab, h, rng);
  p.b_out = Tensor::zeros({d.vocab}, true);
  return p;
}

Tensor global_image_feature(const DecoderParams& p, const EncoderOutput& enc) {
  if (enc.attended.empty()) throw ContractError("encoder output has no attended features");
  Tensor stacked = enc.attended.size() == 1 ? enc.attended.front() : concat(enc.attended);
  if (stacked.numel() != p.w_g.cols())
    throw DimensionError("global feature: " + std::to_string(enc.attended.size()) + " attended features of total width " +
                         std::to_string(stacked.numel()) + " do not match W_G " + shape_str(p.w_g.shape()));
  return linear(stacked, p.w_g);
}

DecoderContext prepare_context(const DecoderParams& p, const EncoderOutput& enc) {
  DecoderContext ctx;
  ctx.global_feature = global_image_feature(p, enc);
  ctx.regions = enc.regions.rows();
  if (p.attention == AttentionKind::xlinear)
    ctx.xmemory = project_memory(p.xattn, enc.regions, enc.regions);
  else
    ctx.cmemory = project_memory(p.cattn, enc.regions, enc.regions);
  return ctx;
}

DecoderState init_state(const DecoderParams& p) {
  const std::size_t h = p.hidden_size();
  return {Tensor::zeros({h}), Tensor::zeros({h}), Tensor::zeros({h}), 0};
}

StepOutput decode_step(const DecoderParams& p, const DecoderState& st, TokenId token, const DecoderContext& ctx,
                       bool keep_trace) {
  if (token >= p.vocab_size())
    throw ContractError("token id " + std::to_string(token) + " outside vocabulary of size " +
                        std::to_string(p.vocab_size()));
  const std::size_t h = p.hidden_size();

  Tensor input = concat({embedding(p.embed, token), ctx.global_feature, st.h, st.context});
  Tensor gates = linear(input, p.lstm_w, p.lstm_b);
  Tensor in_gate = sigmoid(slice(gates, 0, h));
  Tensor forget_gate = sigmoid(slice(gates, h, 2 * h));
  Tensor out_gate = sigmoid(slice(gates, 2 * h, 3 * h));
  Tensor candidate = tanh(slice(gates, 3 * h, 4 * h));
  Tensor cell = add(mul(forget_gate, st.cell), mul(in_gate, candidate));
  Tensor hidden = mul(out_gate, tanh(cell));

  StepOutput out;
  Tensor attended;
  if (p.attention == AttentionKind::xlinear) {
    auto res = x_linear_attend(p.xattn, ctx.xmemory, hidden, keep_trace);
    attended = res.attended;
    out.trace = std::move(res.trace);
  } else {
    auto res = conventional_attend(p.cattn, ctx.cmemory, hidden);
    attended = res.attended;
    if (keep_trace) {
      XLinearTrace tr;
      tr.spatial_logits = res.logits.detach();
      tr.spatial_weights = res.weights.detach();
      out.trace = std::move(tr);
    }
  }

  Tensor context = glu(linear(concat({attended, hidden}), p.w_c, p.b_c));
  out.logits = linear(context, p.w_out, p.b_out);
  out.state = {hidden, cell, context, st.step + 1};
  return out;
}

StepOutput decode_step(const DecoderParams& p, const DecoderState& st, TokenId token, const EncoderOutput& enc,
                       bool keep_trace) {
  return decode_step(p, st, token, prepare_context(p, enc), keep_trace);
}

}  // namespace xlan
