#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "xlan/data.hpp"
#include "xlan/inference.hpp"
#include "xlan/model.hpp"

namespace xlan {

// Mean over unmasked rows of -log softmax(logits[t])[targets[t]].
Tensor cross_entropy_loss(const Tensor& logits, const std::vector<TokenId>& targets, const std::vector<bool>& mask);

// Teacher-forced caption loss for one example (all positions unmasked).
Tensor caption_loss(const XLanModel& m, const Example& ex);

struct AdamState {
  std::vector<std::vector<double>> m;  // first moments, one per parameter
  std::vector<std::vector<double>> v;  // second moments
  std::uint64_t step = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  static AdamState for_params(const std::vector<Tensor>& params);
};

// Bias-corrected Adam update in place. Parameters without a gradient are treated as zero-gradient.
void adam_step(AdamState& state, std::vector<Tensor>& params, double lr);

// model_dim^-0.5 · min(step^-0.5, step · warmup^-1.5)
double noam_lr(std::uint64_t step, std::size_t model_dim, std::uint64_t warmup);

// Rescales all gradients so their global L2 norm is at most max_norm; returns the scale applied.
double clip_gradients(std::vector<Tensor>& params, double max_norm);
double global_grad_norm(const std::vector<Tensor>& params);

// ---- self-critical sequence training -------------------------------------------

using RewardFn =
    std::function<double(const std::vector<TokenId>& candidate, const std::vector<std::vector<TokenId>>& references)>;

double bleu_reward(const std::vector<TokenId>& candidate, const std::vector<std::vector<TokenId>>& references);

struct ScstRecord {
  std::vector<TokenId> sampled;  // as emitted, including a final EOS when produced
  std::vector<TokenId> greedy;
  double sample_reward = 0.0;
  double greedy_reward = 0.0;
  double log_prob = 0.0;  // Σ_t log p(sampled_t)
  double advantage() const { return sample_reward - greedy_reward; }
};

struct ScstItem {
  Tensor loss;
  ScstRecord record;
};

// -(r(sample) - r(greedy)) · Σ_t log p(sampled_t); the greedy pass records no graph.
ScstItem scst_item_loss(const XLanModel& m, const Example& ex, const RewardFn& reward, std::size_t max_len,
                        std::uint64_t sample_seed);

struct ScstBatch {
  Tensor loss;  // mean over items
  std::vector<ScstRecord> records;
};

ScstBatch scst_loss(const XLanModel& m, const std::vector<const Example*>& batch, const RewardFn& reward,
                    std::size_t max_len, std::uint64_t seed);

// Per-sample seed used by SCST for item `index` of training step `step`.
std::uint64_t sample_seed(std::uint64_t seed, std::uint64_t step, std::uint64_t index);

// ---- batched gradients ------------------------------------------------------------

enum class Exec { serial, parallel };

using ItemLoss = std::function<Tensor(const XLanModel& shadow, const Example& ex, std::size_t index)>;

// Zeroes the model's gradients, then computes each item's loss on its own
// shadow of the parameters (OpenMP-parallel over items when `exec` is
// parallel), backpropagates loss/B, and reduces the per-item gradients into
// the model in item order. Both paths produce bit-identical gradients.
// Returns the mean item loss.
double batch_gradients(XLanModel& model, const std::vector<const Example*>& batch, const ItemLoss& loss, Exec exec);

// ---- training loop --------------------------------------------------------------------

enum class Phase { ce, scst };
std::string to_string(Phase p);
Phase parse_phase(const std::string& s);

struct TrainConfig {
  std::size_t batch_size = 16;
  std::uint64_t warmup = 200;
  std::uint64_t ce_steps = 2000;
  double scst_lr = 1e-5;
  std::uint64_t scst_steps = 500;
  std::size_t beam = 3;
  double clip_norm = 5.0;
  std::uint64_t seed = 7;
  std::size_t max_len = 20;
  std::uint64_t eval_every = 100;
  std::size_t eval_examples = 50;
  std::uint64_t checkpoint_every = 0;  // 0: no periodic checkpoints
  Exec exec = Exec::parallel;

  void validate() const;
};

struct HistoryRow {
  std::uint64_t step = 0;
  Phase phase = Phase::ce;
  double loss = 0.0;
  double lr = 0.0;
  std::optional<double> metric;
};

struct TrainerState {
  AdamState adam;
  std::uint64_t step = 0;  // optimizer steps taken in the current phase
};

struct TrainHooks {
  std::function<void(const HistoryRow&)> on_step;
  std::function<void(const XLanModel&, const TrainerState&)> on_checkpoint;
};

// Runs `steps` optimizer steps of `phase` starting from `state`. Batches,
// SCST samples and evaluation subsets derive from (cfg.seed, step), so a
// resumed run continues exactly where an uninterrupted one would be.
std::vector<HistoryRow> train_loop(XLanModel& model, const Dataset& data, const TrainConfig& cfg, Phase phase,
                                   std::uint64_t steps, TrainerState& state, const TrainHooks& hooks = {});

// Indices of the training batch used at `step`: epochs are seeded permutations.
std::vector<std::size_t> batch_indices(std::size_t dataset_size, std::size_t batch_size, std::uint64_t seed,
                                       std::uint64_t step);

// Mean teacher-forced CE and mean greedy (beam = 1) or beam BLEU over examples.
struct EvalResult {
  double ce = 0.0;
  double bleu = 0.0;
  std::size_t examples = 0;
};

EvalResult evaluate(const XLanModel& m, const std::vector<Example>& examples, std::size_t beam, std::size_t max_len,
                    std::size_t limit = 0);
double mean_bleu(const XLanModel& m, const std::vector<Example>& examples, std::size_t beam, std::size_t max_len,
                 std::size_t limit = 0);

}  // namespace xlan
