#pragma once

// Small models and toy datasets shared by the model-level tests.

#include "xlan/training.hpp"

namespace xlan::testing {

inline ToyTaskSpec tiny_toy_spec() {
  ToyTaskSpec s;
  s.slots = 2;
  s.colors = 2;
  s.shapes = 2;
  s.noise = 0.1;
  s.train = 10;
  s.val = 3;
  s.test = 3;
  s.seed = 5;
  return s;
}

inline Dataset tiny_toy_data(std::size_t min_count = 1) { return make_dataset(gen_toy_dataset(tiny_toy_spec()), min_count); }

inline ModelConfig tiny_model_config(std::size_t feature_dim, std::size_t vocab, std::size_t blocks = 1) {
  ModelConfig c;
  c.feature_dim = feature_dim;
  c.model_dim = 6;
  c.mid_dim = 4;
  c.hidden_dim = 5;
  c.word_dim = 4;
  c.vocab_size = vocab;
  c.encoder_blocks = blocks;
  return c;
}

inline XLanModel tiny_model(const Dataset& d, std::uint64_t seed = 11, std::size_t blocks = 1) {
  return XLanModel::create(tiny_model_config(d.feature_dim(), d.vocab.size(), blocks), seed);
}

inline TrainConfig tiny_train_config() {
  TrainConfig c;
  c.batch_size = 4;
  c.warmup = 10;
  c.max_len = 8;
  c.eval_every = 5;
  c.eval_examples = 3;
  c.beam = 2;
  return c;
}

// Moves every zero-initialised vector (biases, norm shifts) off zero so tests exercise the full affine maps.
inline void perturb_biases(XLanModel& m, std::uint64_t seed) {
  std::mt19937_64 g(seed);
  std::uniform_real_distribution<double> u(-0.3, 0.3);
  m.for_each_param([&](const std::string&, Tensor& t) {
    if (t.dim() != 1) return;
    bool all_zero = true;
    for (double v : t.values()) all_zero = all_zero && v == 0.0;
    if (all_zero)
      for (auto& v : t.mutable_values()) v = u(g);
  });
}

}  // namespace xlan::testing
