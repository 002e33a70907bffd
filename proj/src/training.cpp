#include "xlan/training.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <numeric>
#include <random>

namespace xlan {

Tensor cross_entropy_loss(const Tensor& logits, const std::vector<TokenId>& targets, const std::vector<bool>& mask) {
  if (logits.dim() != 2) throw DimensionError("cross_entropy_loss: logits must be [T×V], got " + shape_str(logits.shape()));
  const std::size_t steps = logits.rows(), vocab = logits.cols();
  if (targets.size() != steps || mask.size() != steps)
    throw DimensionError("cross_entropy_loss: " + std::to_string(steps) + " logit rows, " +
                         std::to_string(targets.size()) + " targets, " + std::to_string(mask.size()) + " mask flags");
  std::size_t active = 0;
  std::vector<std::size_t> index(steps);
  for (std::size_t t = 0; t < steps; ++t) {
    if (targets[t] >= vocab)
      throw ContractError("cross_entropy_loss: target id " + std::to_string(targets[t]) + " outside vocabulary of size " +
                          std::to_string(vocab));
    index[t] = targets[t];
    active += mask[t] ? 1 : 0;
  }
  if (active == 0) throw ContractError("cross_entropy_loss: every position is masked");
  std::vector<double> weights(steps);
  for (std::size_t t = 0; t < steps; ++t) weights[t] = mask[t] ? -1.0 / static_cast<double>(active) : 0.0;
  return sum(mul(pick(log_softmax(logits), index), Tensor::vector(std::move(weights))));
}

Tensor caption_loss(const XLanModel& m, const Example& ex) {
  const auto targets = caption_targets(ex.caption);
  return cross_entropy_loss(teacher_forced_logits(m, ex.regions, ex.caption), targets,
                            std::vector<bool>(targets.size(), true));
}

// ---- optimization --------------------------------------------------------------------

AdamState AdamState::for_params(const std::vector<Tensor>& params) {
  AdamState s;
  for (const auto& p : params) {
    s.m.emplace_back(p.numel(), 0.0);
    s.v.emplace_back(p.numel(), 0.0);
  }
  return s;
}

void adam_step(AdamState& state, std::vector<Tensor>& params, double lr) {
  if (state.m.size() != params.size()) throw ContractError("adam_step: optimizer state does not match parameter list");
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto w = params[i].mutable_values();
    const auto g = params[i].grad();
    auto& m = state.m[i];
    auto& v = state.v[i];
    if (m.size() != w.size()) throw ContractError("adam_step: moment shape mismatch for parameter " + std::to_string(i));
    for (std::size_t j = 0; j < w.size(); ++j) {
      const double gj = g.empty() ? 0.0 : g[j];
      m[j] = state.beta1 * m[j] + (1.0 - state.beta1) * gj;
      v[j] = state.beta2 * v[j] + (1.0 - state.beta2) * gj * gj;
      const double mhat = m[j] / c1;
      const double vhat = v[j] / c2;
      w[j] -= lr * mhat / (std::sqrt(vhat) + state.eps);
    }
  }
}

double noam_lr(std::uint64_t step, std::size_t model_dim, std::uint64_t warmup) {
  if (step == 0) throw ContractError("noam_lr: step must be >= 1");
  if (warmup == 0 || model_dim == 0) throw ContractError("noam_lr: warmup and model_dim must be >= 1");
  const double s = static_cast<double>(step);
  return std::pow(static_cast<double>(model_dim), -0.5) *
         std::min(std::pow(s, -0.5), s * std::pow(static_cast<double>(warmup), -1.5));
}

double global_grad_norm(const std::vector<Tensor>& params) {
  double sq = 0.0;
  for (const auto& p : params)
    for (double g : p.grad()) sq += g * g;
  return std::sqrt(sq);
}

double clip_gradients(std::vector<Tensor>& params, double max_norm) {
  if (!(max_norm > 0)) throw ContractError("clip_gradients: max_norm must be positive");
  const double norm = global_grad_norm(params);
  if (norm <= max_norm) return 1.0;
  const double s = max_norm / norm;
  for (auto& p : params)
    if (p.has_grad())
      for (auto& g : p.mutable_grad()) g *= s;
  return s;
}

// ---- SCST ----------------------------------------------------------------------------------

double bleu_reward(const std::vector<TokenId>& candidate, const std::vector<std::vector<TokenId>>& references) {
  return bleu_smooth(candidate, references, 4);
}

namespace {

std::vector<TokenId> strip_eos(std::vector<TokenId> tokens) {
  if (!tokens.empty() && tokens.back() == kEos) tokens.pop_back();
  return tokens;
}

std::uint64_t mix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

}  // namespace

std::uint64_t sample_seed(std::uint64_t seed, std::uint64_t step, std::uint64_t index) {
  return mix(mix(mix(seed) ^ step) ^ index);
}

ScstItem scst_item_loss(const XLanModel& m, const Example& ex, const RewardFn& reward, std::size_t max_len,
                        std::uint64_t seed) {
  const auto enc = encode_image(m, ex.regions);
  auto sampled = sample_decode(m, enc, max_len, seed);
  Caption greedy;
  {
    NoGradGuard no_grad;
    greedy = greedy_decode(m, enc, max_len);
  }
  ScstRecord rec;
  rec.sampled = sampled.tokens;
  rec.greedy = greedy.tokens;
  if (greedy.finished) rec.greedy.push_back(kEos);
  rec.sample_reward = reward(strip_eos(sampled.tokens), ex.references);
  rec.greedy_reward = reward(greedy.tokens, ex.references);
  rec.log_prob = sampled.log_prob_sum.item();
  return {scale(sampled.log_prob_sum, -rec.advantage()), std::move(rec)};
}

ScstBatch scst_loss(const XLanModel& m, const std::vector<const Example*>& batch, const RewardFn& reward,
                    std::size_t max_len, std::uint64_t seed) {
  if (batch.empty()) throw ContractError("scst_loss: empty batch");
  ScstBatch out;
  std::vector<Tensor> losses;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    auto item = scst_item_loss(m, *batch[i], reward, max_len, sample_seed(seed, 0, i));
    losses.push_back(reshape(item.loss, {1}));
    out.records.push_back(std::move(item.record));
  }
  out.loss = scale(sum(concat(losses)), 1.0 / static_cast<double>(batch.size()));
  return out;
}

// ---- batched gradients ---------------------------------------------------------------------

double batch_gradients(XLanModel& model, const std::vector<const Example*>& batch, const ItemLoss& loss, Exec exec) {
  if (batch.empty()) throw ContractError("batch_gradients: empty batch");
  model.zero_grad();
  const std::size_t n = batch.size();
  std::vector<XLanModel> shadows;
  shadows.reserve(n);
  for (std::size_t i = 0; i < n; ++i) shadows.push_back(model.shadow());
  std::vector<double> losses(n, 0.0);
  std::vector<std::exception_ptr> errors(n);
  const double inv = 1.0 / static_cast<double>(n);

  auto run = [&](std::size_t i) {
    try {
      Tensor l = loss(shadows[i], *batch[i], i);
      losses[i] = l.item();
      backward(scale(l, inv));
    } catch (...) {
      errors[i] = std::current_exception();
    }
  };

  if (exec == Exec::parallel) {
    const auto count = static_cast<std::ptrdiff_t>(n);
#pragma omp parallel for schedule(dynamic, 1)
    for (std::ptrdiff_t i = 0; i < count; ++i) run(static_cast<std::size_t>(i));
  } else {
    for (std::size_t i = 0; i < n; ++i) run(i);
  }
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);

  auto params = model.parameters();
  for (std::size_t i = 0; i < n; ++i) {
    auto sp = shadows[i].parameters();
    for (std::size_t p = 0; p < params.size(); ++p) {
      if (!sp[p].has_grad()) continue;
      auto dst = params[p].mutable_grad();
      const auto src = sp[p].grad();
      for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += src[j];
    }
  }
  double total = 0.0;
  for (double l : losses) total += l;
  return total * inv;
}

// ---- training loop ----------------------------------------------------------------------------

std::string to_string(Phase p) { return p == Phase::ce ? "ce" : "scst"; }

Phase parse_phase(const std::string& s) {
  if (s == "ce") return Phase::ce;
  if (s == "scst") return Phase::scst;
  throw ContractError("unknown phase '" + s + "'");
}

void TrainConfig::validate() const {
  if (warmup < 1) throw ContractError("warmup steps must be >= 1");
  if (!(scst_lr > 0)) throw ContractError("SCST learning rate must be positive");
  if (batch_size == 0) throw ContractError("batch size must be >= 1");
  if (!(clip_norm > 0)) throw ContractError("clip norm must be positive");
  if (max_len == 0) throw ContractError("max_len must be >= 1");
  if (beam == 0) throw ContractError("beam must be >= 1");
}

std::vector<std::size_t> batch_indices(std::size_t dataset_size, std::size_t batch_size, std::uint64_t seed,
                                       std::uint64_t step) {
  if (dataset_size == 0) throw ContractError("batch_indices: empty dataset");
  std::vector<std::size_t> out;
  out.reserve(batch_size);
  std::uint64_t cached_epoch = ~std::uint64_t{0};
  std::vector<std::size_t> perm(dataset_size);
  for (std::size_t j = 0; j < batch_size; ++j) {
    const std::uint64_t pos = step * batch_size + j;
    const std::uint64_t epoch = pos / dataset_size;
    if (epoch != cached_epoch) {
      std::iota(perm.begin(), perm.end(), std::size_t{0});
      Rng rng(mix(seed ^ mix(epoch + 1)));
      std::shuffle(perm.begin(), perm.end(), rng);
      cached_epoch = epoch;
    }
    out.push_back(perm[pos % dataset_size]);
  }
  return out;
}

double mean_bleu(const XLanModel& m, const std::vector<Example>& examples, std::size_t beam, std::size_t max_len,
                 std::size_t limit) {
  const std::size_t n = limit ? std::min(limit, examples.size()) : examples.size();
  if (n == 0) return 0.0;
  NoGradGuard no_grad;
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto enc = encode_image(m, examples[i].regions);
    std::vector<TokenId> tokens;
    if (beam <= 1) {
      tokens = greedy_decode(m, enc, max_len).tokens;
    } else {
      auto ranked = beam_search(m, enc, beam, max_len);
      if (!ranked.empty()) tokens = ranked.front().tokens;
    }
    total += bleu_smooth(tokens, examples[i].references);
  }
  return total / static_cast<double>(n);
}

EvalResult evaluate(const XLanModel& m, const std::vector<Example>& examples, std::size_t beam, std::size_t max_len,
                    std::size_t limit) {
  EvalResult r;
  r.examples = limit ? std::min(limit, examples.size()) : examples.size();
  if (r.examples == 0) return r;
  {
    NoGradGuard no_grad;
    double ce = 0.0;
    for (std::size_t i = 0; i < r.examples; ++i) ce += caption_loss(m, examples[i]).item();
    r.ce = ce / static_cast<double>(r.examples);
  }
  r.bleu = mean_bleu(m, examples, beam, max_len, limit);
  return r;
}

std::vector<HistoryRow> train_loop(XLanModel& model, const Dataset& data, const TrainConfig& cfg, Phase phase,
                                   std::uint64_t steps, TrainerState& state, const TrainHooks& hooks) {
  cfg.validate();
  if (data.train.empty()) throw ContractError("train_loop: empty training set");
  auto params = model.parameters();
  if (state.adam.m.empty()) state.adam = AdamState::for_params(params);

  const std::uint64_t stream = phase == Phase::ce ? cfg.seed : mix(cfg.seed ^ 0x5c57ULL);
  std::vector<HistoryRow> history;
  for (std::uint64_t k = 0; k < steps; ++k) {
    const std::uint64_t step = state.step + 1;
    const auto idx = batch_indices(data.train.size(), cfg.batch_size, stream, step - 1);
    std::vector<const Example*> batch;
    for (auto i : idx) batch.push_back(&data.train[i]);

    double loss;
    if (phase == Phase::ce) {
      loss = batch_gradients(
          model, batch, [](const XLanModel& m, const Example& ex, std::size_t) { return caption_loss(m, ex); },
          cfg.exec);
    } else {
      const std::size_t max_len = cfg.max_len;
      loss = batch_gradients(
          model, batch,
          [&](const XLanModel& m, const Example& ex, std::size_t i) {
            return scst_item_loss(m, ex, bleu_reward, max_len, sample_seed(stream, step, i)).loss;
          },
          cfg.exec);
    }
    clip_gradients(params, cfg.clip_norm);
    const double lr = phase == Phase::ce ? noam_lr(step, model.config.model_dim, cfg.warmup) : cfg.scst_lr;
    adam_step(state.adam, params, lr);
    state.step = step;

    HistoryRow row{step, phase, loss, lr, std::nullopt};
    if (cfg.eval_every && step % cfg.eval_every == 0 && !data.val.empty())
      row.metric = mean_bleu(model, data.val, 1, cfg.max_len, cfg.eval_examples);
    history.push_back(row);
    if (hooks.on_step) hooks.on_step(row);
    if (hooks.on_checkpoint && cfg.checkpoint_every && step % cfg.checkpoint_every == 0)
      hooks.on_checkpoint(model, state);
  }
  return history;
}

}  // namespace xlan
