#pragma once

// Run configuration in a plain key=value format:
//
//   # comment
//   model_dim = 32
//   attention = xlinear
//
// One assignment per line, whitespace around '=' ignored, blank lines and
// lines starting with '#' skipped. Unknown keys are rejected.
//
// Model:    model_dim mid_dim hidden_dim word_dim encoder_blocks attention elu
// Training: batch_size warmup ce_steps scst_lr scst_steps beam clip_norm seed
//           max_len eval_every eval_examples checkpoint_every exec
// Data:     min_count toy_slots toy_colors toy_shapes toy_noise toy_train
//           toy_val toy_test toy_seed

#include <filesystem>
#include <map>
#include <string>

#include "xlan/data.hpp"
#include "xlan/model.hpp"
#include "xlan/training.hpp"

namespace xlan {

struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  ToyTaskSpec toy;
  std::size_t min_count = 6;

  void validate() const;
};

std::map<std::string, std::string> parse_key_values(const std::string& text, const std::string& source);
std::string format_key_values(const std::map<std::string, std::string>& kv);

// Applies the assignments on top of `base`; throws ConfigError on unknown keys or bad values.
RunConfig apply_config(RunConfig base, const std::map<std::string, std::string>& kv);
std::map<std::string, std::string> config_to_map(const RunConfig& cfg);

RunConfig load_config(const std::filesystem::path& path, RunConfig base = {});

std::string to_string(Exec e);
Exec parse_exec(const std::string& s);

}  // namespace xlan
