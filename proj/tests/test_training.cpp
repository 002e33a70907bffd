#include <doctest.h>
#include <omp.h>

#include <set>

#include "fixtures.hpp"
#include "support.hpp"

using namespace xlan;
using namespace xlan::testing;

namespace {

const Tensor kLogits = Tensor::matrix(3, 5, {0.3, -1.2, 2.0, 0.5, -0.7, 1.1, 0.0, -0.4, 0.9, 2.2, -1.5, 0.6, 0.2, -0.3, 1.4});

std::vector<Vec> snapshot(XLanModel& m) {
  std::vector<Vec> out;
  for (auto& p : m.parameters()) out.push_back(p.to_vector());
  return out;
}

std::vector<Vec> grads(XLanModel& m) {
  std::vector<Vec> out;
  for (auto& p : m.parameters()) {
    const auto g = p.grad();
    out.emplace_back(g.begin(), g.end());
    if (out.back().empty()) out.back().assign(p.numel(), 0.0);
  }
  return out;
}

std::vector<const Example*> all_train(const Dataset& d) {
  std::vector<const Example*> b;
  for (const auto& e : d.train) b.push_back(&e);
  return b;
}

double constant_reward(const std::vector<TokenId>&, const std::vector<std::vector<TokenId>>&) { return 0.25; }

}  // namespace

TEST_CASE("cross entropy oracle") {
  CHECK(cross_entropy_loss(kLogits, {2, 0, 4}, {true, true, true}).item() ==
        doctest::Approx(0.92811301312132316692).epsilon(1e-14));
  CHECK(cross_entropy_loss(kLogits, {2, 0, 4}, {true, false, true}).item() ==
        doctest::Approx(0.55092775750248388194).epsilon(1e-14));
}

TEST_CASE("cross entropy masking drops exactly one term") {
  const Vec full_rows = {cross_entropy_loss(kLogits, {2, 0, 4}, {true, false, false}).item(),
                         cross_entropy_loss(kLogits, {2, 0, 4}, {false, true, false}).item(),
                         cross_entropy_loss(kLogits, {2, 0, 4}, {false, false, true}).item()};
  const double masked = cross_entropy_loss(kLogits, {2, 0, 4}, {true, false, true}).item();
  CHECK(masked == doctest::Approx((full_rows[0] + full_rows[2]) / 2).epsilon(1e-14));
  const double all = cross_entropy_loss(kLogits, {2, 0, 4}, {true, true, true}).item();
  CHECK(all == doctest::Approx((full_rows[0] + full_rows[1] + full_rows[2]) / 3).epsilon(1e-14));
}

TEST_CASE("cross entropy contracts") {
  CHECK_THROWS_AS(cross_entropy_loss(kLogits, {2, 0, 5}, {true, true, true}), ContractError);
  CHECK_THROWS_AS(cross_entropy_loss(kLogits, {2, 0, 4}, {false, false, false}), ContractError);
  CHECK_THROWS_AS(cross_entropy_loss(kLogits, {2, 0}, {true, true}), DimensionError);
  CHECK_THROWS_AS(cross_entropy_loss(Tensor::vector({1, 2}), {0}, {true}), DimensionError);
}

TEST_CASE("cross entropy gradient") {
  auto logits = random_tensor({4, 6});
  CHECK(grad_check([&] { return cross_entropy_loss(logits, {1, 5, 0, 3}, {true, true, false, true}); }, {logits}) <
        1e-7);
}

TEST_CASE("adam oracle") {
  std::vector<Tensor> p{Tensor::vector({0.5}, true)};
  auto st = AdamState::for_params(p);
  const Vec want = {0.4900000009999999, 0.4936610360388489, 0.4902286253947743};
  const Vec g = {0.1, -0.2, 0.3};
  for (std::size_t k = 0; k < 3; ++k) {
    p[0].zero_grad();
    p[0].mutable_grad()[0] = g[k];
    adam_step(st, p, 0.01);
    CHECK(p[0].at(0) == doctest::Approx(want[k]).epsilon(1e-14));
  }
  CHECK(st.step == 3);
}

TEST_CASE("adam first step moves by lr against the gradient sign") {
  std::vector<Tensor> p{Tensor::vector({1.0, 1.0, 1.0}, true), Tensor::vector({2.0}, true)};
  auto st = AdamState::for_params(p);
  auto g = p[0].mutable_grad();
  g[0] = 3.0;
  g[1] = -1e-3;
  g[2] = 0.0;
  adam_step(st, p, 0.1);
  CHECK(p[0].at(0) == doctest::Approx(0.9).epsilon(1e-6));
  CHECK(p[0].at(1) == doctest::Approx(1.1).epsilon(1e-4));
  CHECK(p[0].at(2) == 1.0);
  CHECK(p[1].at(0) == 2.0);  // never received a gradient
}

TEST_CASE("adam rejects a mismatched state") {
  std::vector<Tensor> p{Tensor::vector({1.0}, true)};
  auto st = AdamState::for_params({});
  CHECK_THROWS_AS(adam_step(st, p, 0.1), ContractError);
}

TEST_CASE("noam schedule") {
  CHECK(noam_lr(1, 512, 4000) == doctest::Approx(1.746928107421711e-07).epsilon(1e-14));
  const double peak = noam_lr(4000, 512, 4000);
  CHECK(peak == doctest::Approx(1.0 / std::sqrt(512.0) / std::sqrt(4000.0)).epsilon(1e-14));
  for (std::uint64_t s = 1; s < 4000; s += 37) CHECK(noam_lr(s, 512, 4000) < noam_lr(s + 1, 512, 4000));
  for (std::uint64_t s = 4000; s < 9000; s += 53) CHECK(noam_lr(s, 512, 4000) > noam_lr(s + 1, 512, 4000));
  CHECK(noam_lr(16000, 512, 4000) == doctest::Approx(peak / 2).epsilon(1e-14));
  CHECK_THROWS_AS(noam_lr(0, 512, 4000), ContractError);
  CHECK_THROWS_AS(noam_lr(1, 512, 0), ContractError);
}

TEST_CASE("gradient clipping") {
  SUBCASE("3-4-5") {
    std::vector<Tensor> p{Tensor::vector({0, 0}, true)};
    p[0].mutable_grad()[0] = 3;
    p[0].mutable_grad()[1] = 4;
    CHECK(clip_gradients(p, 1.0) == doctest::Approx(0.2));
    CHECK(p[0].grad()[0] == doctest::Approx(0.6).epsilon(1e-15));
    CHECK(p[0].grad()[1] == doctest::Approx(0.8).epsilon(1e-15));
  }
  SUBCASE("under the threshold") {
    std::vector<Tensor> p{Tensor::vector({0}, true), Tensor::vector({0}, true)};
    p[0].mutable_grad()[0] = 0.3;
    p[1].mutable_grad()[0] = -0.4;
    CHECK(clip_gradients(p, 1.0) == 1.0);
    CHECK(p[0].grad()[0] == 0.3);
    CHECK(p[1].grad()[0] == -0.4);
  }
  SUBCASE("random tensors land on the threshold") {
    std::vector<Tensor> p{random_tensor({3, 4}), random_tensor({7}), Tensor::vector({1}, true)};
    for (auto& t : p)
      if (t.numel() > 1)
        for (auto& g : t.mutable_grad()) g = std::uniform_real_distribution<double>(-5, 5)(rng());
    REQUIRE(global_grad_norm(p) > 2.0);
    clip_gradients(p, 2.0);
    CHECK(global_grad_norm(p) == doctest::Approx(2.0).epsilon(1e-12));
    CHECK_FALSE(p[2].has_grad());
  }
  SUBCASE("bad threshold") {
    std::vector<Tensor> p;
    CHECK_THROWS_AS(clip_gradients(p, 0.0), ContractError);
  }
}

TEST_CASE("batch loss is the mean of item losses") {
  const auto d = tiny_toy_data();
  auto m = tiny_model(d);
  const auto batch = all_train(d);
  const double mean = batch_gradients(
      m, batch, [](const XLanModel& s, const Example& e, std::size_t) { return caption_loss(s, e); }, Exec::serial);
  const auto batch_grads = grads(m);

  double total = 0.0;
  std::vector<Vec> summed;
  for (const auto* ex : batch) {
    m.zero_grad();
    auto l = caption_loss(m, *ex);
    total += l.item();
    backward(l);
    const auto g = grads(m);
    if (summed.empty()) summed.assign(g.size(), {});
    for (std::size_t p = 0; p < g.size(); ++p) {
      summed[p].resize(g[p].size(), 0.0);
      for (std::size_t i = 0; i < g[p].size(); ++i) summed[p][i] += g[p][i] / static_cast<double>(batch.size());
    }
  }
  CHECK(mean == doctest::Approx(total / static_cast<double>(batch.size())).epsilon(1e-14));
  double worst = 0.0;
  for (std::size_t p = 0; p < summed.size(); ++p) worst = std::max(worst, max_abs_diff(batch_grads[p], summed[p]));
  CHECK(worst < 1e-12);
}

TEST_CASE("serial and parallel batch gradients are bit-identical") {
  const auto d = tiny_toy_data();
  auto m = tiny_model(d);
  const auto batch = all_train(d);
  const int threads = omp_get_max_threads();
  omp_set_num_threads(4);
  auto ce = [](const XLanModel& s, const Example& e, std::size_t) { return caption_loss(s, e); };
  const double a = batch_gradients(m, batch, ce, Exec::serial);
  const auto ga = grads(m);
  const double b = batch_gradients(m, batch, ce, Exec::parallel);
  const auto gb = grads(m);
  CHECK(a == b);
  CHECK(ga == gb);

  auto scst = [](const XLanModel& s, const Example& e, std::size_t i) {
    return scst_item_loss(s, e, bleu_reward, 6, sample_seed(3, 1, i)).loss;
  };
  batch_gradients(m, batch, scst, Exec::serial);
  const auto sa = grads(m);
  batch_gradients(m, batch, scst, Exec::parallel);
  CHECK(sa == grads(m));
  omp_set_num_threads(threads);
}

TEST_CASE("batch gradients surface item errors") {
  const auto d = tiny_toy_data();
  auto m = tiny_model(d);
  const auto batch = all_train(d);
  auto bad = [](const XLanModel& s, const Example& e, std::size_t i) {
    if (i == 3) throw ContractError("item 3");
    return caption_loss(s, e);
  };
  CHECK_THROWS_AS(batch_gradients(m, batch, bad, Exec::parallel), ContractError);
  CHECK_THROWS_AS(batch_gradients(m, {}, bad, Exec::serial), ContractError);
}

TEST_CASE("full model gradient") {
  const auto d = tiny_toy_data();
  for (std::size_t blocks : {0u, 2u}) {
    auto cfg = tiny_model_config(d.feature_dim(), d.vocab.size(), blocks);
    cfg.model_dim = 4;
    cfg.mid_dim = 3;
    cfg.hidden_dim = 3;
    cfg.word_dim = 3;
    auto m = XLanModel::create(cfg, 21);
    perturb_biases(m, 22);
    const Example& ex = d.train[0];
    CHECK(grad_check([&] { return caption_loss(m, ex); }, m.parameters()) < 1e-4);
  }
}

TEST_CASE("a train step only moves parameters that received gradient") {
  const auto d = tiny_toy_data();
  auto m = tiny_model(d);
  auto params = m.parameters();
  auto st = AdamState::for_params(params);
  batch_gradients(
      m, all_train(d), [](const XLanModel& s, const Example& e, std::size_t) { return caption_loss(s, e); },
      Exec::serial);
  const auto before = snapshot(m);
  const auto g = grads(m);
  adam_step(st, params, 1e-3);
  const auto after = snapshot(m);
  std::size_t zero = 0;
  for (std::size_t p = 0; p < g.size(); ++p)
    for (std::size_t i = 0; i < g[p].size(); ++i) {
      if (g[p][i] == 0.0) {
        ++zero;
        CHECK(after[p][i] == before[p][i]);
      } else {
        CHECK(after[p][i] != before[p][i]);
      }
    }
  CHECK(zero > 0);  // embedding rows of PAD and EOS are never inputs
}

TEST_CASE("scst log-probability matches teacher forcing") {
  const auto d = tiny_toy_data();
  auto m = tiny_model(d, 31);
  perturb_biases(m, 32);
  for (std::uint64_t seed = 0; seed < 6; ++seed) {
    const auto& ex = d.train[seed];
    m.zero_grad();
    auto item = scst_item_loss(m, ex, bleu_reward, 6, seed);
    backward(item.loss);
    const auto scst_grads = grads(m);

    auto tokens = item.record.sampled;
    const bool finished = !tokens.empty() && tokens.back() == kEos;
    if (finished) tokens.pop_back();
    const auto logits = teacher_forced_logits(m, ex.regions, tokens);
    std::vector<Tensor> picks;
    for (std::size_t t = 0; t < item.record.sampled.size(); ++t)
      picks.push_back(pick(reshape(generation_log_probs(row(logits, t)), {1, logits.cols()}),
                           {item.record.sampled[t]}));
    const auto lp = sum(concat(picks));
    CHECK(item.record.log_prob == doctest::Approx(lp.item()).epsilon(1e-12));

    const double want_loss = -item.record.advantage() * lp.item();
    CHECK(item.loss.item() == doctest::Approx(want_loss).epsilon(1e-12));
    m.zero_grad();
    backward(scale(lp, -item.record.advantage()));
    const auto tf = grads(m);
    for (std::size_t p = 0; p < tf.size(); ++p) CHECK(max_abs_diff(tf[p], scst_grads[p]) < 1e-12);

    CHECK(item.record.sample_reward ==
          bleu_reward(finished ? tokens : item.record.sampled, ex.references));
  }
}

TEST_CASE("scst greedy baseline matches greedy decoding") {
  const auto d = tiny_toy_data();
  const auto m = tiny_model(d, 41);
  const auto& ex = d.val[0];
  const auto item = scst_item_loss(m, ex, bleu_reward, 6, 9);
  const auto greedy = greedy_decode(m, encode_image(m, ex.regions), 6);
  auto want = greedy.tokens;
  if (greedy.finished) want.push_back(kEos);
  CHECK(item.record.greedy == want);
  CHECK(item.record.greedy_reward == bleu_reward(greedy.tokens, ex.references));
}

TEST_CASE("zero advantage leaves the model untouched") {
  const auto d = tiny_toy_data();
  auto m = tiny_model(d);
  auto params = m.parameters();
  auto st = AdamState::for_params(params);
  const auto before = snapshot(m);
  batch_gradients(
      m, all_train(d),
      [](const XLanModel& s, const Example& e, std::size_t i) {
        return scst_item_loss(s, e, constant_reward, 8, sample_seed(1, 1, i)).loss;
      },
      Exec::parallel);
  for (const auto& g : grads(m))
    for (double v : g) CHECK(v == 0.0);
  adam_step(st, params, 1e-2);
  CHECK(snapshot(m) == before);
}

TEST_CASE("scst batch loss") {
  const auto d = tiny_toy_data();
  const auto m = tiny_model(d);
  const auto batch = all_train(d);
  const auto b = scst_loss(m, batch, bleu_reward, 6, 4);
  REQUIRE(b.records.size() == batch.size());
  double mean = 0.0;
  for (const auto& r : b.records) mean += -r.advantage() * r.log_prob;
  CHECK(b.loss.item() == doctest::Approx(mean / static_cast<double>(batch.size())).epsilon(1e-12));
  CHECK_THROWS_AS(scst_loss(m, {}, bleu_reward, 6, 4), ContractError);
}

TEST_CASE("sample seeds") {
  std::set<std::uint64_t> seen;
  for (std::uint64_t step = 0; step < 20; ++step)
    for (std::uint64_t i = 0; i < 20; ++i) seen.insert(sample_seed(7, step, i));
  CHECK(seen.size() == 400);
  CHECK(sample_seed(7, 3, 2) == sample_seed(7, 3, 2));
  CHECK(sample_seed(7, 3, 2) != sample_seed(8, 3, 2));
}

TEST_CASE("batch indices walk seeded epoch permutations") {
  const std::size_t n = 10, b = 4;
  std::vector<std::size_t> stream;
  for (std::uint64_t step = 0; step < 10; ++step) {
    const auto idx = batch_indices(n, b, 3, step);
    CHECK(idx.size() == b);
    stream.insert(stream.end(), idx.begin(), idx.end());
  }
  for (std::size_t e = 0; e < 4; ++e) {
    std::set<std::size_t> epoch(stream.begin() + static_cast<std::ptrdiff_t>(e * n),
                                stream.begin() + static_cast<std::ptrdiff_t>((e + 1) * n));
    CHECK(epoch.size() == n);
  }
  CHECK(batch_indices(n, b, 3, 5) == batch_indices(n, b, 3, 5));
  CHECK(batch_indices(n, b, 3, 0) != batch_indices(n, b, 4, 0));
  CHECK(batch_indices(3, 7, 1, 0).size() == 7);
  CHECK_THROWS_AS(batch_indices(0, 4, 1, 0), ContractError);
}

TEST_CASE("train loop") {
  const auto d = tiny_toy_data();
  const auto cfg = tiny_train_config();

  SUBCASE("zero steps is a no-op") {
    auto m = tiny_model(d);
    const auto before = snapshot(m);
    TrainerState st;
    CHECK(train_loop(m, d, cfg, Phase::ce, 0, st).empty());
    CHECK(st.step == 0);
    CHECK(snapshot(m) == before);
  }
  SUBCASE("same seed, same run") {
    auto a = tiny_model(d), b = tiny_model(d);
    TrainerState sa, sb;
    const auto ha = train_loop(a, d, cfg, Phase::ce, 10, sa);
    const auto hb = train_loop(b, d, cfg, Phase::ce, 10, sb);
    REQUIRE(ha.size() == 10);
    for (std::size_t i = 0; i < ha.size(); ++i) {
      CHECK(ha[i].step == i + 1);
      CHECK(ha[i].loss == hb[i].loss);
      CHECK(ha[i].lr == noam_lr(i + 1, 6, cfg.warmup));
      CHECK(ha[i].metric.has_value() == ((i + 1) % 5 == 0));
      CHECK(ha[i].metric == hb[i].metric);
    }
    CHECK(snapshot(a) == snapshot(b));
  }
  SUBCASE("a different seed draws different batches") {
    auto a = tiny_model(d), b = tiny_model(d);
    TrainerState sa, sb;
    auto other = cfg;
    other.seed = cfg.seed + 1;
    const auto ha = train_loop(a, d, cfg, Phase::ce, 3, sa);
    const auto hb = train_loop(b, d, other, Phase::ce, 3, sb);
    CHECK(snapshot(a) != snapshot(b));
  }
  SUBCASE("split runs equal one run") {
    for (auto phase : {Phase::ce, Phase::scst}) {
      auto a = tiny_model(d), b = tiny_model(d);
      TrainerState sa, sb;
      auto ha = train_loop(a, d, cfg, phase, 7, sa);
      const auto tail = train_loop(a, d, cfg, phase, 5, sa);
      ha.insert(ha.end(), tail.begin(), tail.end());
      const auto hb = train_loop(b, d, cfg, phase, 12, sb);
      REQUIRE(ha.size() == hb.size());
      for (std::size_t i = 0; i < ha.size(); ++i) {
        CHECK(ha[i].loss == hb[i].loss);
        CHECK(ha[i].metric == hb[i].metric);
      }
      CHECK(snapshot(a) == snapshot(b));
      CHECK(sa.adam.m == sb.adam.m);
    }
  }
  SUBCASE("scst uses the fixed learning rate") {
    auto m = tiny_model(d);
    TrainerState st;
    for (const auto& row : train_loop(m, d, cfg, Phase::scst, 3, st)) {
      CHECK(row.lr == cfg.scst_lr);
      CHECK(row.phase == Phase::scst);
    }
  }
  SUBCASE("hooks") {
    auto m = tiny_model(d);
    TrainerState st;
    auto c = cfg;
    c.checkpoint_every = 4;
    std::vector<std::uint64_t> steps, ckpts;
    TrainHooks hooks{[&](const HistoryRow& r) { steps.push_back(r.step); },
                     [&](const XLanModel&, const TrainerState& s) { ckpts.push_back(s.step); }};
    train_loop(m, d, c, Phase::ce, 9, st, hooks);
    CHECK(steps.size() == 9);
    CHECK(ckpts == std::vector<std::uint64_t>{4, 8});
  }
  SUBCASE("empty training set") {
    auto m = tiny_model(d);
    TrainerState st;
    Dataset empty = d;
    empty.train.clear();
    CHECK_THROWS_AS(train_loop(m, empty, cfg, Phase::ce, 1, st), ContractError);
  }
  SUBCASE("invalid config") {
    auto m = tiny_model(d);
    TrainerState st;
    auto bad = cfg;
    bad.batch_size = 0;
    CHECK_THROWS_AS(train_loop(m, d, bad, Phase::ce, 1, st), ContractError);
  }
}

TEST_CASE("loss falls on the tiny task") {
  const auto d = tiny_toy_data();
  auto m = tiny_model(d);
  auto cfg = tiny_train_config();
  cfg.eval_every = 0;
  TrainerState st;
  const auto h = train_loop(m, d, cfg, Phase::ce, 60, st);
  double first = 0.0, last = 0.0;
  for (std::size_t i = 0; i < 5; ++i) {
    first += h[i].loss;
    last += h[h.size() - 1 - i].loss;
  }
  CHECK(last < 0.7 * first);
}

TEST_CASE("phase names") {
  CHECK(parse_phase("ce") == Phase::ce);
  CHECK(parse_phase(to_string(Phase::scst)) == Phase::scst);
  CHECK_THROWS_AS(parse_phase("rl"), ContractError);
}

TEST_CASE("evaluation") {
  const auto d = tiny_toy_data();
  const auto m = tiny_model(d);
  const auto r = evaluate(m, d.test, 1, 8);
  CHECK(r.examples == d.test.size());
  double ce = 0.0;
  for (const auto& ex : d.test) ce += caption_loss(m, ex).item();
  CHECK(r.ce == doctest::Approx(ce / static_cast<double>(d.test.size())).epsilon(1e-12));
  CHECK(r.bleu == mean_bleu(m, d.test, 1, 8));
  CHECK(evaluate(m, d.test, 1, 8, 2).examples == 2);
}
