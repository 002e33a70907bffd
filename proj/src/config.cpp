#include "xlan/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

namespace xlan {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <class T>
T parse_number(const std::string& key, const std::string& v) {
  T out{};
  const auto* end = v.data() + v.size();
  auto [ptr, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc{} || ptr != end)
    throw ConfigError("config key '" + key + "': cannot parse '" + v + "' as a number");
  return out;
}

bool parse_switch(const std::string& key, const std::string& v) {
  if (v == "on" || v == "true" || v == "1") return true;
  if (v == "off" || v == "false" || v == "0") return false;
  throw ConfigError("config key '" + key + "' expects on/off, got '" + v + "'");
}

std::string fmt_double(double x) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, ptr);
}

using Setter = std::function<void(RunConfig&, const std::string&, const std::string&)>;

template <class T, class Field>
Setter number(Field field) {
  return [field](RunConfig& c, const std::string& k, const std::string& v) { field(c) = parse_number<T>(k, v); };
}

const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> table = {
      {"feature_dim", number<std::size_t>([](RunConfig& c) -> auto& { return c.model.feature_dim; })},
      {"vocab_size", number<std::size_t>([](RunConfig& c) -> auto& { return c.model.vocab_size; })},
      {"model_dim", number<std::size_t>([](RunConfig& c) -> auto& { return c.model.model_dim; })},
      {"mid_dim", number<std::size_t>([](RunConfig& c) -> auto& { return c.model.mid_dim; })},
      {"hidden_dim", number<std::size_t>([](RunConfig& c) -> auto& { return c.model.hidden_dim; })},
      {"word_dim", number<std::size_t>([](RunConfig& c) -> auto& { return c.model.word_dim; })},
      {"encoder_blocks", number<std::size_t>([](RunConfig& c) -> auto& { return c.model.encoder_blocks; })},
      {"attention",
       [](RunConfig& c, const std::string&, const std::string& v) {
         try {
           c.model.decoder_attention = parse_attention_kind(v);
         } catch (const std::exception& e) {
           throw ConfigError(e.what());
         }
       }},
      {"elu", [](RunConfig& c, const std::string& k, const std::string& v) { c.model.elu = parse_switch(k, v); }},
      {"batch_size", number<std::size_t>([](RunConfig& c) -> auto& { return c.train.batch_size; })},
      {"warmup", number<std::uint64_t>([](RunConfig& c) -> auto& { return c.train.warmup; })},
      {"ce_steps", number<std::uint64_t>([](RunConfig& c) -> auto& { return c.train.ce_steps; })},
      {"scst_lr", number<double>([](RunConfig& c) -> auto& { return c.train.scst_lr; })},
      {"scst_steps", number<std::uint64_t>([](RunConfig& c) -> auto& { return c.train.scst_steps; })},
      {"beam", number<std::size_t>([](RunConfig& c) -> auto& { return c.train.beam; })},
      {"clip_norm", number<double>([](RunConfig& c) -> auto& { return c.train.clip_norm; })},
      {"seed", number<std::uint64_t>([](RunConfig& c) -> auto& { return c.train.seed; })},
      {"max_len", number<std::size_t>([](RunConfig& c) -> auto& { return c.train.max_len; })},
      {"eval_every", number<std::uint64_t>([](RunConfig& c) -> auto& { return c.train.eval_every; })},
      {"eval_examples", number<std::size_t>([](RunConfig& c) -> auto& { return c.train.eval_examples; })},
      {"checkpoint_every", number<std::uint64_t>([](RunConfig& c) -> auto& { return c.train.checkpoint_every; })},
      {"exec", [](RunConfig& c, const std::string&, const std::string& v) { c.train.exec = parse_exec(v); }},
      {"min_count", number<std::size_t>([](RunConfig& c) -> auto& { return c.min_count; })},
      {"toy_slots", number<std::size_t>([](RunConfig& c) -> auto& { return c.toy.slots; })},
      {"toy_colors", number<std::size_t>([](RunConfig& c) -> auto& { return c.toy.colors; })},
      {"toy_shapes", number<std::size_t>([](RunConfig& c) -> auto& { return c.toy.shapes; })},
      {"toy_noise", number<double>([](RunConfig& c) -> auto& { return c.toy.noise; })},
      {"toy_train", number<std::size_t>([](RunConfig& c) -> auto& { return c.toy.train; })},
      {"toy_val", number<std::size_t>([](RunConfig& c) -> auto& { return c.toy.val; })},
      {"toy_test", number<std::size_t>([](RunConfig& c) -> auto& { return c.toy.test; })},
      {"toy_seed", number<std::uint64_t>([](RunConfig& c) -> auto& { return c.toy.seed; })},
  };
  return table;
}

}  // namespace

std::string to_string(Exec e) { return e == Exec::serial ? "serial" : "parallel"; }

Exec parse_exec(const std::string& s) {
  if (s == "serial") return Exec::serial;
  if (s == "parallel") return Exec::parallel;
  throw ConfigError("exec must be serial or parallel, got '" + s + "'");
}

void RunConfig::validate() const {
  try {
    model.validate();
    train.validate();
    toy.validate();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError(e.what());
  }
  if (min_count == 0) throw ConfigError("min_count must be >= 1");
}

std::map<std::string, std::string> parse_key_values(const std::string& text, const std::string& source) {
  std::map<std::string, std::string> kv;
  std::istringstream in(text);
  std::string line;
  for (std::size_t lineno = 1; std::getline(in, line); ++lineno) {
    const auto t = trim(line);
    if (t.empty() || t.front() == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos)
      throw ConfigError(source + ":" + std::to_string(lineno) + ": expected key = value, got '" + t + "'");
    const auto key = trim(t.substr(0, eq));
    const auto value = trim(t.substr(eq + 1));
    if (key.empty()) throw ConfigError(source + ":" + std::to_string(lineno) + ": empty key");
    if (!kv.emplace(key, value).second)
      throw ConfigError(source + ":" + std::to_string(lineno) + ": duplicate key '" + key + "'");
  }
  return kv;
}

std::string format_key_values(const std::map<std::string, std::string>& kv) {
  std::string out;
  for (const auto& [k, v] : kv) out += k + " = " + v + "\n";
  return out;
}

RunConfig apply_config(RunConfig base, const std::map<std::string, std::string>& kv) {
  const auto& table = setters();
  for (const auto& [k, v] : kv) {
    auto it = table.find(k);
    if (it == table.end()) throw ConfigError("unknown config key '" + k + "'");
    it->second(base, k, v);
  }
  base.validate();
  return base;
}

std::map<std::string, std::string> config_to_map(const RunConfig& c) {
  auto kv = c.model.to_map();
  kv["batch_size"] = std::to_string(c.train.batch_size);
  kv["warmup"] = std::to_string(c.train.warmup);
  kv["ce_steps"] = std::to_string(c.train.ce_steps);
  kv["scst_lr"] = fmt_double(c.train.scst_lr);
  kv["scst_steps"] = std::to_string(c.train.scst_steps);
  kv["beam"] = std::to_string(c.train.beam);
  kv["clip_norm"] = fmt_double(c.train.clip_norm);
  kv["seed"] = std::to_string(c.train.seed);
  kv["max_len"] = std::to_string(c.train.max_len);
  kv["eval_every"] = std::to_string(c.train.eval_every);
  kv["eval_examples"] = std::to_string(c.train.eval_examples);
  kv["checkpoint_every"] = std::to_string(c.train.checkpoint_every);
  kv["exec"] = to_string(c.train.exec);
  kv["min_count"] = std::to_string(c.min_count);
  kv["toy_slots"] = std::to_string(c.toy.slots);
  kv["toy_colors"] = std::to_string(c.toy.colors);
  kv["toy_shapes"] = std::to_string(c.toy.shapes);
  kv["toy_noise"] = fmt_double(c.toy.noise);
  kv["toy_train"] = std::to_string(c.toy.train);
  kv["toy_val"] = std::to_string(c.toy.val);
  kv["toy_test"] = std::to_string(c.toy.test);
  kv["toy_seed"] = std::to_string(c.toy.seed);
  return kv;
}

RunConfig load_config(const std::filesystem::path& path, RunConfig base) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return apply_config(std::move(base), parse_key_values(ss.str(), path.string()));
}

}  // namespace xlan
