#include "xlan/ablation.hpp"

#include <cstdio>

namespace xlan {

std::string AblationVariant::label() const {
  std::string s = to_string(attention) + "/blocks=" + std::to_string(encoder_blocks);
  if (attention == AttentionKind::xlinear) s += elu ? "/elu" : "/relu";
  return s;
}

std::vector<AblationVariant> ablation_grid(std::size_t max_blocks) {
  std::vector<AblationVariant> grid;
  for (std::size_t b = 0; b <= max_blocks; ++b) grid.push_back({AttentionKind::conventional, false, b});
  for (bool elu : {false, true})
    for (std::size_t b = 0; b <= max_blocks; ++b) grid.push_back({AttentionKind::xlinear, elu, b});
  return grid;
}

std::vector<AblationRow> run_ablation(const Dataset& data, const RunConfig& base, std::uint64_t steps,
                                      std::size_t eval_limit, const std::function<void(const AblationRow&)>& on_row) {
  std::vector<AblationRow> rows;
  for (const auto& v : ablation_grid()) {
    RunConfig cfg = base;
    cfg.model.decoder_attention = v.attention;
    cfg.model.elu = v.elu;
    cfg.model.encoder_blocks = v.encoder_blocks;
    cfg.model.feature_dim = data.feature_dim();
    cfg.model.vocab_size = data.vocab.size();
    cfg.train.eval_every = 0;
    auto model = XLanModel::create(cfg.model, cfg.train.seed);
    TrainerState state;
    const auto history = train_loop(model, data, cfg.train, Phase::ce, steps, state);
    const auto ev = evaluate(model, data.test, cfg.train.beam, cfg.train.max_len, eval_limit);
    AblationRow row{v, ev.ce, ev.bleu, history.empty() ? 0.0 : history.back().loss};
    if (on_row) on_row(row);
    rows.push_back(row);
  }
  return rows;
}

std::string ablation_table(const std::vector<AblationRow>& rows) {
  std::string out = "| decoder attention | elu | encoder blocks | test CE | test BLEU-4 |\n";
  out += "|---|---|---|---|---|\n";
  char buf[160];
  for (const auto& r : rows) {
    const bool xl = r.variant.attention == AttentionKind::xlinear;
    std::snprintf(buf, sizeof buf, "| %s | %s | %zu | %.4f | %.4f |\n", to_string(r.variant.attention).c_str(),
                  xl ? (r.variant.elu ? "on" : "off") : "-", r.variant.encoder_blocks, r.ce, r.bleu);
    out += buf;
  }
  return out;
}

std::string ablation_csv(const std::vector<AblationRow>& rows) {
  std::string out = "attention,elu,encoder_blocks,ce,bleu,final_train_loss\n";
  char buf[200];
  for (const auto& r : rows) {
    const bool xl = r.variant.attention == AttentionKind::xlinear;
    std::snprintf(buf, sizeof buf, "%s,%s,%zu,%.17g,%.17g,%.17g\n", to_string(r.variant.attention).c_str(),
                  xl ? (r.variant.elu ? "on" : "off") : "-", r.variant.encoder_blocks, r.ce, r.bleu,
                  r.final_train_loss);
    out += buf;
  }
  return out;
}

}  // namespace xlan
