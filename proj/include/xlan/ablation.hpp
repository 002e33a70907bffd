#pragma once

// The encoder/decoder ablation grid: conventional vs X-Linear decoder
// attention, 0..4 encoder blocks, and ELU on/off. The ELU switch is paired
// with the X-Linear decoder; conventional rows appear once per block count
// and run with ELU off in the encoder too.

#include <functional>
#include <string>
#include <vector>

#include "xlan/config.hpp"

namespace xlan {

struct AblationVariant {
  AttentionKind attention = AttentionKind::xlinear;
  bool elu = true;
  std::size_t encoder_blocks = 0;

  std::string label() const;
};

struct AblationRow {
  AblationVariant variant;
  double ce = 0.0;    // held-out teacher-forced cross entropy
  double bleu = 0.0;  // held-out BLEU-4 with the configured beam
  double final_train_loss = 0.0;
};

inline constexpr std::size_t kMaxEncoderBlocks = 4;

std::vector<AblationVariant> ablation_grid(std::size_t max_blocks = kMaxEncoderBlocks);

// Trains every variant from scratch on the CE objective for `steps` steps and
// evaluates on the test split (first `eval_limit` examples, 0 for all).
std::vector<AblationRow> run_ablation(const Dataset& data, const RunConfig& base, std::uint64_t steps,
                                      std::size_t eval_limit,
                                      const std::function<void(const AblationRow&)>& on_row = {});

std::string ablation_table(const std::vector<AblationRow>& rows);
std::string ablation_csv(const std::vector<AblationRow>& rows);

}  // namespace xlan
