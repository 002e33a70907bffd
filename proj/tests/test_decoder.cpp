#include <doctest.h>

#include "support.hpp"
#include "xlan/model.hpp"

using namespace xlan;
using namespace xlan::testing;

namespace {

DecoderDims tiny_dims(AttentionKind kind = AttentionKind::xlinear) {
  return {7, 3, 4, 4, 3, 3, kind, Activation::celu_plus_one};
}

// Biases start at zero; move them so the checks see every term.
DecoderParams random_decoder(const DecoderDims& d, std::mt19937_64& g) {
  auto p = DecoderParams::init(d, g);
  std::uniform_real_distribution<double> u(-0.5, 0.5);
  for (Tensor* t : {&p.lstm_b, &p.b_c, &p.b_out})
    for (auto& v : t->mutable_values()) v = u(g);
  return p;
}

EncoderOutput fake_encoder(std::size_t features, std::size_t dim, std::size_t regions, std::mt19937_64& g) {
  EncoderOutput e;
  for (std::size_t i = 0; i < features; ++i) e.attended.push_back(random_tensor({dim}, -1, 1, false, &g));
  e.regions = random_tensor({regions, dim}, -1, 1, false, &g);
  return e;
}

std::vector<Tensor> decoder_leaves(DecoderParams& p) {
  std::vector<Tensor> out;
  p.for_each([&](const std::string&, Tensor& t) { out.push_back(t); });
  return out;
}

struct RefState {
  Vec h, c, ctx;
};

Vec ref_step(const DecoderParams& p, RefState& st, TokenId tok, const Vec& global, const Mat& regions) {
  const std::size_t hs = st.h.size();
  Vec input = cat(cat(to_vec(row(p.embed, tok)), global), cat(st.h, st.ctx));
  const auto gates = vadd(matvec(to_mat(p.lstm_w), input), to_vec(p.lstm_b));
  Vec c(hs), h(hs);
  for (std::size_t i = 0; i < hs; ++i) {
    const double ig = ref_sigmoid(gates[i]), fg = ref_sigmoid(gates[hs + i]), og = ref_sigmoid(gates[2 * hs + i]);
    const double cand = std::tanh(gates[3 * hs + i]);
    c[i] = fg * st.c[i] + ig * cand;
    h[i] = og * std::tanh(c[i]);
  }
  const auto att = ref_x_linear(p.xattn, h, regions, regions).v_hat;
  const auto pre = vadd(matvec(to_mat(p.w_c), cat(att, h)), to_vec(p.b_c));
  Vec ctx(hs);
  for (std::size_t i = 0; i < hs; ++i) ctx[i] = pre[i] * ref_sigmoid(pre[hs + i]);
  st = {h, c, ctx};
  return vadd(matvec(to_mat(p.w_out), ctx), to_vec(p.b_out));
}

}  // namespace

TEST_CASE("global image feature") {
  std::mt19937_64 g(1);
  const auto d = tiny_dims();
  auto p = random_decoder(d, g);
  const auto enc = fake_encoder(3, 4, 2, g);
  SUBCASE("zero map") {
    for (auto& v : p.w_g.mutable_values()) v = 0.0;
    const auto out = global_image_feature(p, enc);
    for (double v : out.values()) CHECK(v == 0.0);
  }
  SUBCASE("identity slice selects the mean pool") {
    auto w = p.w_g.mutable_values();
    std::fill(w.begin(), w.end(), 0.0);
    for (std::size_t i = 0; i < 4; ++i) w[i * 12 + i] = 1.0;
    CHECK(global_image_feature(p, enc).to_vector() == enc.attended[0].to_vector());
  }
  SUBCASE("concat then project") {
    Vec all;
    for (const auto& a : enc.attended) all = cat(all, to_vec(a));
    CHECK(max_abs_diff(global_image_feature(p, enc).values(), matvec(to_mat(p.w_g), all)) < 1e-12);
  }
  SUBCASE("wrong number of features") {
    CHECK_THROWS_AS(global_image_feature(p, fake_encoder(2, 4, 2, g)), DimensionError);
  }
}

TEST_CASE("init state") {
  std::mt19937_64 g(2);
  const auto p = random_decoder(tiny_dims(), g);
  const auto a = init_state(p);
  const auto b = init_state(p);
  for (const Tensor* t : {&a.h, &a.cell, &a.context}) {
    CHECK(t->numel() == 4);
    for (double v : t->values()) CHECK(v == 0.0);
  }
  CHECK(a.step == 0);
  CHECK(a.h.to_vector() == b.h.to_vector());
  CHECK(a.h.id() != b.h.id());
}

TEST_CASE("decode step") {
  std::mt19937_64 g(3);
  const auto d = tiny_dims();
  const auto p = random_decoder(d, g);
  const auto enc = fake_encoder(3, 4, 3, g);

  SUBCASE("pure function of its inputs") {
    const auto st = init_state(p);
    const auto a = decode_step(p, st, 5, enc);
    const auto b = decode_step(p, st, 5, enc);
    CHECK(a.logits.to_vector() == b.logits.to_vector());
    CHECK(a.logits.numel() == 7);
    CHECK(a.state.step == 1);
  }
  SUBCASE("fresh state is unaffected by other decodes") {
    auto other = init_state(p);
    for (TokenId t : {4u, 6u, 5u}) other = decode_step(p, other, t, enc).state;
    const auto fresh = decode_step(p, init_state(p), 4, enc);
    const auto again = decode_step(p, init_state(p), 4, enc);
    CHECK(fresh.logits.to_vector() == again.logits.to_vector());
    CHECK(other.h.to_vector() != fresh.state.h.to_vector());
  }
  SUBCASE("single region gets all the attention") {
    const auto one = fake_encoder(3, 4, 1, g);
    const auto out = decode_step(p, init_state(p), 1, one, true);
    CHECK(out.trace->spatial_weights.to_vector() == Vec{1.0});
  }
  SUBCASE("out-of-vocabulary token") { CHECK_THROWS_AS(decode_step(p, init_state(p), 7, enc), ContractError); }
  SUBCASE("two-step unroll against the reference") {
    Vec global;
    for (const auto& a : enc.attended) global = cat(global, to_vec(a));
    global = matvec(to_mat(p.w_g), global);
    RefState ref{Vec(4, 0.0), Vec(4, 0.0), Vec(4, 0.0)};
    auto st = init_state(p);
    for (TokenId tok : {kBos, TokenId{5}}) {
      const auto out = decode_step(p, st, tok, enc);
      const auto want = ref_step(p, ref, tok, global, to_mat(enc.regions));
      CHECK(max_abs_diff(out.logits.values(), want) < 1e-10);
      CHECK(max_abs_diff(out.state.h.values(), ref.h) < 1e-10);
      CHECK(max_abs_diff(out.state.cell.values(), ref.c) < 1e-10);
      CHECK(max_abs_diff(out.state.context.values(), ref.ctx) < 1e-10);
      st = out.state;
    }
  }
}

TEST_CASE("decode step gradients") {
  std::mt19937_64 g(4);
  for (auto kind : {AttentionKind::xlinear, AttentionKind::conventional}) {
    auto p = random_decoder(tiny_dims(kind), g);
    const auto enc = fake_encoder(3, 4, 3, g);
    auto st = decode_step(p, init_state(p), kBos, enc).state;
    st = {st.h.detach(), st.cell.detach(), st.context.detach(), st.step};
    auto loss = [&] { return scale(pick(reshape(log_softmax(decode_step(p, st, 5, enc).logits), {1, 7}), {4}), -1.0); };
    CHECK(grad_check(loss, decoder_leaves(p)) < 1e-4);
  }
}

TEST_CASE("conventional decoder traces spatial weights only") {
  std::mt19937_64 g(5);
  const auto p = random_decoder(tiny_dims(AttentionKind::conventional), g);
  const auto out = decode_step(p, init_state(p), kBos, fake_encoder(3, 4, 4, g), true);
  REQUIRE(out.trace);
  CHECK(out.trace->spatial_weights.numel() == 4);
  CHECK_FALSE(out.trace->channel_gates.defined());
}

TEST_CASE("teacher forcing yields one logit row per target") {
  ModelConfig cfg;
  cfg.feature_dim = 5;
  cfg.model_dim = 4;
  cfg.mid_dim = 3;
  cfg.hidden_dim = 4;
  cfg.word_dim = 3;
  cfg.vocab_size = 8;
  cfg.encoder_blocks = 2;
  const auto m = XLanModel::create(cfg, 3);
  std::mt19937_64 g(6);
  const auto regions = random_tensor({3, 5}, -1, 1, false, &g);
  for (std::size_t len : {0u, 1u, 4u}) {
    std::vector<TokenId> caption(len, 5);
    std::vector<XLinearTrace> traces;
    const auto logits = teacher_forced_logits(m, regions, caption, &traces);
    CHECK(logits.rows() == len + 1);
    CHECK(logits.cols() == 8);
    CHECK(traces.size() == len + 1);
    CHECK(caption_targets(caption).size() == len + 1);
    CHECK(caption_targets(caption).back() == kEos);
  }
}

TEST_CASE("generation never emits PAD or BOS") {
  const auto lp = generation_log_probs(Tensor::vector({50, 40, 1, 2, 3}));
  CHECK(std::isinf(lp.at(kPad)));
  CHECK(std::isinf(lp.at(kBos)));
  double total = 0.0;
  for (std::size_t i = 2; i < 5; ++i) total += std::exp(lp.at(i));
  CHECK(std::abs(total - 1.0) < 1e-12);
}

TEST_CASE("attention kind names") {
  CHECK(parse_attention_kind("xlinear") == AttentionKind::xlinear);
  CHECK(parse_attention_kind(to_string(AttentionKind::conventional)) == AttentionKind::conventional);
  CHECK_THROWS(parse_attention_kind("additive"));
}
