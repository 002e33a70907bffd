#include "xlan/cli.hpp"

#include <charconv>
#include <filesystem>
#include <fstream>
#include <optional>
#include <ostream>

#include <CLI11.hpp>

#include "xlan/ablation.hpp"
#include "xlan/checkpoint.hpp"
#include "xlan/config.hpp"
#include "xlan/inference.hpp"
#include "xlan/trace.hpp"

namespace fs = std::filesystem;

namespace xlan {

namespace {

std::string num(double x) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, ptr);
}

RunConfig base_config(const std::optional<std::string>& path) {
  return path ? load_config(*path) : RunConfig{};
}

Dataset obtain_data(const std::optional<std::string>& dir, const RunConfig& cfg) {
  if (dir) return load_dataset(*dir);
  return make_dataset(gen_toy_dataset(cfg.toy), cfg.min_count);
}

const std::vector<Example>& split_of(const Dataset& d, const std::string& split) {
  if (split == "train") return d.train;
  if (split == "val") return d.val;
  if (split == "test") return d.test;
  throw ConfigError("unknown split '" + split + "'");
}

void check_compatible(const Checkpoint& ck, const Dataset& data) {
  if (ck.vocab.tokens != data.vocab.tokens)
    throw ContractError("the checkpoint's vocabulary differs from the dataset's vocabulary");
  if (!data.train.empty() && ck.config.model.feature_dim != data.feature_dim())
    throw ContractError("the checkpoint expects " + std::to_string(ck.config.model.feature_dim) +
                        "-dim region features, the dataset has " + std::to_string(data.feature_dim()));
}

// ---- train -----------------------------------------------------------------------------

struct TrainArgs {
  std::optional<std::string> config, data, init, resume, phase, attention, elu, exec;
  std::optional<std::size_t> encoder_blocks, batch_size;
  std::optional<std::uint64_t> seed, steps;
  std::string out = "run";
};

void write_log_row(std::ostream& log, const HistoryRow& r) {
  log << r.step << ',' << to_string(r.phase) << ',' << num(r.loss) << ',' << num(r.lr) << ','
      << (r.metric ? num(*r.metric) : std::string()) << '\n';
  log.flush();
}

int cmd_train(const TrainArgs& a, std::ostream& out) {
  RunConfig cfg = base_config(a.config);
  Phase phase = a.phase ? parse_phase(*a.phase) : Phase::ce;
  std::optional<Checkpoint> start;
  if (a.resume) {
    if (a.init) throw ConfigError("--resume and --init are mutually exclusive");
    start = load_checkpoint(*a.resume);
    if (a.phase && phase != start->phase)
      throw ConfigError("--phase " + *a.phase + " conflicts with the checkpoint's phase " + to_string(start->phase));
    cfg = start->config;
    phase = start->phase;
  } else {
    if (a.init) {
      start = load_checkpoint(*a.init);
      start->state = TrainerState{};
      // the checkpoint's run settings apply unless a config file replaces them
      if (!a.config) cfg = start->config;
      cfg.model = start->config.model;
      if (a.encoder_blocks || a.attention || a.elu)
        throw ConfigError("--init fixes the architecture; drop --encoder-blocks, --attention and --elu");
    }
    if (a.encoder_blocks) cfg.model.encoder_blocks = *a.encoder_blocks;
    if (a.attention) cfg.model.decoder_attention = parse_attention_kind(*a.attention);
    if (a.elu) cfg.model.elu = *a.elu == "on";
    if (a.seed) cfg.train.seed = *a.seed;
    if (a.batch_size) cfg.train.batch_size = *a.batch_size;
  }
  if (a.exec) cfg.train.exec = parse_exec(*a.exec);
  cfg.validate();

  const Dataset data = obtain_data(a.data, cfg);
  if (start) {
    check_compatible(*start, data);
  } else {
    cfg.model.feature_dim = data.feature_dim();
    cfg.model.vocab_size = data.vocab.size();
  }
  XLanModel model = start ? start->model : XLanModel::create(cfg.model, cfg.train.seed);
  TrainerState state = start ? start->state : TrainerState{};
  const std::uint64_t target = a.steps.value_or(phase == Phase::ce ? cfg.train.ce_steps : cfg.train.scst_steps);
  const std::uint64_t remaining = target > state.step ? target - state.step : 0;

  fs::create_directories(a.out);
  const fs::path log_path = fs::path(a.out) / "log.csv";
  const bool append = a.resume && fs::exists(log_path);
  std::ofstream log(log_path, append ? std::ios::app : std::ios::trunc);
  if (!log) throw FormatError("cannot write " + log_path.string());
  if (!append) log << "step,phase,loss,lr,metric\n";

  auto snapshot = [&](const XLanModel& m, const TrainerState& s) {
    return Checkpoint{cfg, phase, s, data.vocab, m};
  };
  TrainHooks hooks;
  hooks.on_step = [&](const HistoryRow& r) { write_log_row(log, r); };
  hooks.on_checkpoint = [&](const XLanModel& m, const TrainerState& s) {
    save_checkpoint(fs::path(a.out) / ("ckpt-" + std::to_string(s.step) + ".ckpt"), snapshot(m, s));
  };
  const auto history = train_loop(model, data, cfg.train, phase, remaining, state, hooks);
  const fs::path final_path = fs::path(a.out) / "model.ckpt";
  save_checkpoint(final_path, snapshot(model, state));

  out << "phase " << to_string(phase) << ": " << history.size() << " steps (now at step " << state.step << ")";
  if (!history.empty()) out << ", last loss " << num(history.back().loss);
  out << "\ncheckpoint " << final_path.string() << "\nlog " << log_path.string() << "\n";
  return kExitOk;
}

// ---- eval / infer / dump-attention -----------------------------------------------------------

struct ModelArgs {
  std::string model;
  std::optional<std::string> data;
  std::string split = "test";
  std::optional<std::size_t> beam, max_len, limit, index;
  std::optional<std::string> features, out;
};

struct Loaded {
  Checkpoint ck;
  Dataset data;
};

Loaded load_model_and_data(const ModelArgs& a) {
  Loaded l{load_checkpoint(a.model), {}};
  l.data = obtain_data(a.data, l.ck.config);
  check_compatible(l.ck, l.data);
  return l;
}

int cmd_eval(const ModelArgs& a, std::ostream& out) {
  const auto l = load_model_and_data(a);
  const auto& examples = split_of(l.data, a.split);
  const auto beam = a.beam.value_or(l.ck.config.train.beam);
  const auto ev =
      evaluate(l.ck.model, examples, beam, a.max_len.value_or(l.ck.config.train.max_len), a.limit.value_or(0));
  out << "split " << a.split << " examples " << ev.examples << " beam " << beam << " ce " << num(ev.ce) << " bleu4 "
      << num(ev.bleu) << "\n";
  return kExitOk;
}

void print_caption(std::ostream& out, const std::string& id, const Vocabulary& vocab, const Caption& c) {
  out << id << '\t' << vocab.join(c.tokens) << '\t' << num(c.score) << '\n';
}

int cmd_infer(const ModelArgs& a, std::ostream& out) {
  const auto max_len = [&](const Checkpoint& ck) { return a.max_len.value_or(ck.config.train.max_len); };
  auto caption = [&](const Checkpoint& ck, const Tensor& regions) {
    NoGradGuard no_grad;
    const auto enc = encode_image(ck.model, regions);
    const auto ranked = beam_search(ck.model, enc, a.beam.value_or(ck.config.train.beam), max_len(ck));
    return ranked.empty() ? Caption{} : ranked.front();
  };
  if (a.features) {
    const auto ck = load_checkpoint(a.model);
    const auto f = read_region_features(*a.features);
    if (f.dim != ck.config.model.feature_dim)
      throw ContractError("feature file has " + std::to_string(f.dim) + "-dim regions, the model expects " +
                          std::to_string(ck.config.model.feature_dim));
    print_caption(out, fs::path(*a.features).stem().string(), ck.vocab, caption(ck, Tensor({f.regions, f.dim}, f.values)));
    return kExitOk;
  }
  const auto l = load_model_and_data(a);
  const auto& examples = split_of(l.data, a.split);
  std::size_t begin = 0, end = std::min(examples.size(), a.limit.value_or(10));
  if (a.index) {
    if (*a.index >= examples.size())
      throw ConfigError("--index " + std::to_string(*a.index) + " outside split of " + std::to_string(examples.size()));
    begin = *a.index;
    end = begin + 1;
  }
  for (std::size_t i = begin; i < end; ++i) print_caption(out, examples[i].id, l.data.vocab, caption(l.ck, examples[i].regions));
  return kExitOk;
}

int cmd_dump(const ModelArgs& a, std::ostream& out) {
  const auto l = load_model_and_data(a);
  const auto& examples = split_of(l.data, a.split);
  const auto index = a.index.value_or(0);
  if (index >= examples.size())
    throw ConfigError("--index " + std::to_string(index) + " outside split of " + std::to_string(examples.size()));
  dump_attention(l.ck.model, examples[index], l.data.vocab, a.max_len.value_or(l.ck.config.train.max_len), *a.out);
  out << "wrote attention trace for " << examples[index].id << " to " << *a.out << "\n";
  return kExitOk;
}

// ---- gen-data / ablate ---------------------------------------------------------------------------

struct GenArgs {
  std::optional<std::string> config;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> train, val, test, min_count;
  std::optional<double> noise;
};

int cmd_gen(const GenArgs& a, std::ostream& out) {
  RunConfig cfg = base_config(a.config);
  if (a.seed) cfg.toy.seed = *a.seed;
  if (a.train) cfg.toy.train = *a.train;
  if (a.val) cfg.toy.val = *a.val;
  if (a.test) cfg.toy.test = *a.test;
  if (a.noise) cfg.toy.noise = *a.noise;
  if (a.min_count) cfg.min_count = *a.min_count;
  cfg.validate();
  write_dataset(a.out, gen_toy_dataset(cfg.toy), cfg.min_count);
  out << "wrote " << cfg.toy.train << "/" << cfg.toy.val << "/" << cfg.toy.test << " train/val/test examples to " << a.out
      << "\n";
  return kExitOk;
}

struct AblateArgs {
  std::optional<std::string> config, data, out, exec;
  std::optional<std::uint64_t> steps, seed;
  std::optional<std::size_t> limit;
};

int cmd_ablate(const AblateArgs& a, std::ostream& out) {
  RunConfig cfg = base_config(a.config);
  if (a.seed) cfg.train.seed = *a.seed;
  if (a.exec) cfg.train.exec = parse_exec(*a.exec);
  cfg.validate();
  const Dataset data = obtain_data(a.data, cfg);
  const auto steps = a.steps.value_or(cfg.train.ce_steps);
  const auto rows = run_ablation(data, cfg, steps, a.limit.value_or(0), [&](const AblationRow& r) {
    out << "# " << r.variant.label() << " ce " << num(r.ce) << " bleu4 " << num(r.bleu) << "\n";
    out.flush();
  });
  out << ablation_table(rows);
  if (a.out) {
    std::ofstream f(*a.out, std::ios::trunc);
    if (!f) throw FormatError("cannot write " + *a.out);
    f << ablation_csv(rows);
  }
  return kExitOk;
}

void add_model_options(CLI::App* cmd, ModelArgs& a) {
  cmd->add_option("--model", a.model, "Checkpoint to load")->required();
  cmd->add_option("--data", a.data, "Dataset directory (default: regenerate the toy task from the checkpoint's config)");
  cmd->add_option("--split", a.split, "train, val or test")->check(CLI::IsMember({"train", "val", "test"}));
  cmd->add_option("--max-len", a.max_len, "Maximum caption length")->check(CLI::PositiveNumber);
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"X-Linear attention captioning: data generation, training, evaluation and inspection", "xlan"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Show help for every subcommand");

  GenArgs gen;
  auto* gen_cmd = app.add_subcommand("gen-data", "Write the synthetic attribute-captioning dataset");
  gen_cmd->add_option("--out", gen.out, "Output directory")->required();
  gen_cmd->add_option("--config", gen.config, "key=value config file");
  gen_cmd->add_option("--seed", gen.seed, "Dataset seed");
  gen_cmd->add_option("--train", gen.train, "Training examples");
  gen_cmd->add_option("--val", gen.val, "Validation examples");
  gen_cmd->add_option("--test", gen.test, "Test examples");
  gen_cmd->add_option("--noise", gen.noise, "Feature noise standard deviation")->check(CLI::NonNegativeNumber);
  gen_cmd->add_option("--min-count", gen.min_count, "Vocabulary frequency threshold")->check(CLI::PositiveNumber);

  TrainArgs tr;
  auto* train_cmd = app.add_subcommand("train", "Train with cross entropy or self-critical sequence training");
  train_cmd->add_option("--phase", tr.phase, "ce or scst")->check(CLI::IsMember({"ce", "scst"}));
  train_cmd->add_option("--encoder-blocks", tr.encoder_blocks, "X-Linear layers in the encoder")
      ->check(CLI::Range(std::size_t{0}, kMaxEncoderBlocks));
  train_cmd->add_option("--attention", tr.attention, "Decoder attention")
      ->check(CLI::IsMember({"conventional", "xlinear"}));
  train_cmd->add_option("--elu", tr.elu, "ELU-based activation in X-Linear blocks")->check(CLI::IsMember({"on", "off"}));
  train_cmd->add_option("--seed", tr.seed, "Run seed (initialization, shuffling, sampling)");
  train_cmd->add_option("--config", tr.config, "key=value config file");
  train_cmd->add_option("--data", tr.data, "Dataset directory (default: generate the toy task in memory)");
  train_cmd->add_option("--out", tr.out, "Output directory for log.csv and checkpoints");
  train_cmd->add_option("--steps", tr.steps, "Total optimizer steps for this phase");
  train_cmd->add_option("--batch-size", tr.batch_size, "Examples per step")->check(CLI::PositiveNumber);
  train_cmd->add_option("--init", tr.init, "Start from this checkpoint's parameters with a fresh optimizer");
  train_cmd->add_option("--resume", tr.resume, "Continue the run saved in this checkpoint");
  train_cmd->add_option("--exec", tr.exec, "Batch execution: serial or parallel")
      ->check(CLI::IsMember({"serial", "parallel"}));

  ModelArgs ev;
  auto* eval_cmd = app.add_subcommand("eval", "Report held-out cross entropy and BLEU-4");
  add_model_options(eval_cmd, ev);
  eval_cmd->add_option("--beam", ev.beam, "Beam size")->check(CLI::PositiveNumber);
  eval_cmd->add_option("--limit", ev.limit, "Evaluate only the first N examples");

  ModelArgs inf;
  auto* infer_cmd = app.add_subcommand("infer", "Caption examples with beam search");
  add_model_options(infer_cmd, inf);
  infer_cmd->add_option("--beam", inf.beam, "Beam size")->check(CLI::PositiveNumber);
  infer_cmd->add_option("--index", inf.index, "Caption only this example of the split");
  infer_cmd->add_option("--limit", inf.limit, "Caption the first N examples (default 10)");
  infer_cmd->add_option("--features", inf.features, "Caption a single .xlrf region feature file");

  ModelArgs dump;
  auto* dump_cmd = app.add_subcommand("dump-attention", "Write the decoder attention trace of one example as JSON");
  add_model_options(dump_cmd, dump);
  dump_cmd->add_option("--index", dump.index, "Example index within the split (default 0)");
  dump_cmd->add_option("--out", dump.out, "Output JSON path")->required();

  AblateArgs ab;
  auto* ablate_cmd = app.add_subcommand("ablate", "Train and compare every encoder/decoder attention variant");
  ablate_cmd->add_option("--config", ab.config, "key=value config file");
  ablate_cmd->add_option("--data", ab.data, "Dataset directory (default: generate the toy task in memory)");
  ablate_cmd->add_option("--steps", ab.steps, "CE steps per variant");
  ablate_cmd->add_option("--seed", ab.seed, "Run seed");
  ablate_cmd->add_option("--limit", ab.limit, "Evaluate on the first N test examples");
  ablate_cmd->add_option("--out", ab.out, "Also write the table as CSV");
  ablate_cmd->add_option("--exec", ab.exec, "Batch execution: serial or parallel")
      ->check(CLI::IsMember({"serial", "parallel"}));

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n" << "run with --help for usage\n";
    return kExitUsage;
  }

  try {
    if (gen_cmd->parsed()) return cmd_gen(gen, out);
    if (train_cmd->parsed()) return cmd_train(tr, out);
    if (eval_cmd->parsed()) return cmd_eval(ev, out);
    if (infer_cmd->parsed()) return cmd_infer(inf, out);
    if (dump_cmd->parsed()) return cmd_dump(dump, out);
    if (ablate_cmd->parsed()) return cmd_ablate(ab, out);
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitFailure;
  }
  return kExitUsage;
}

}  // namespace xlan
