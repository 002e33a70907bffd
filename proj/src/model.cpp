#include "xlan/model.hpp"

#include <limits>

namespace xlan {

namespace {

std::size_t get_size(const std::map<std::string, std::string>& kv, const std::string& key, std::size_t fallback) {
  auto it = kv.find(key);
  if (it == kv.end()) return fallback;
  try {
    std::size_t used = 0;
    const auto v = std::stoull(it->second, &used);
    if (used != it->second.size()) throw std::invalid_argument(key);
    return static_cast<std::size_t>(v);
  } catch (const std::exception&) {
    throw ContractError("config key '" + key + "' expects a non-negative integer, got '" + it->second + "'");
  }
}

bool get_bool(const std::map<std::string, std::string>& kv, const std::string& key, bool fallback) {
  auto it = kv.find(key);
  if (it == kv.end()) return fallback;
  const auto& v = it->second;
  if (v == "on" || v == "true" || v == "1") return true;
  if (v == "off" || v == "false" || v == "0") return false;
  throw ContractError("config key '" + key + "' expects on/off, got '" + v + "'");
}

}  // namespace

std::map<std::string, std::string> ModelConfig::to_map() const {
  return {{"feature_dim", std::to_string(feature_dim)},
          {"model_dim", std::to_string(model_dim)},
          {"mid_dim", std::to_string(mid_dim)},
          {"hidden_dim", std::to_string(hidden_dim)},
          {"word_dim", std::to_string(word_dim)},
          {"vocab_size", std::to_string(vocab_size)},
          {"encoder_blocks", std::to_string(encoder_blocks)},
          {"attention", to_string(decoder_attention)},
          {"elu", elu ? "on" : "off"}};
}

ModelConfig ModelConfig::from_map(const std::map<std::string, std::string>& kv) {
  ModelConfig c;
  c.feature_dim = get_size(kv, "feature_dim", c.feature_dim);
  c.model_dim = get_size(kv, "model_dim", c.model_dim);
  c.mid_dim = get_size(kv, "mid_dim", c.mid_dim);
  c.hidden_dim = get_size(kv, "hidden_dim", c.hidden_dim);
  c.word_dim = get_size(kv, "word_dim", c.word_dim);
  c.vocab_size = get_size(kv, "vocab_size", c.vocab_size);
  c.encoder_blocks = get_size(kv, "encoder_blocks", c.encoder_blocks);
  if (auto it = kv.find("attention"); it != kv.end()) c.decoder_attention = parse_attention_kind(it->second);
  c.elu = get_bool(kv, "elu", c.elu);
  c.validate();
  return c;
}

void ModelConfig::validate() const {
  if (feature_dim == 0 || model_dim == 0 || mid_dim == 0 || hidden_dim == 0 || word_dim == 0)
    throw ContractError("model dimensions must be positive");
  if (vocab_size <= kReservedTokens) throw ContractError("vocabulary must hold more than the reserved tokens");
}

XLanModel XLanModel::create(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  Rng rng(seed);
  XLanModel m;
  m.config = config;
  m.in_w = xavier_uniform(config.model_dim, config.feature_dim, rng);
  m.in_b = Tensor::zeros({config.model_dim}, true);
  m.encoder = EncoderParams::init(config.encoder_blocks, config.model_dim, config.mid_dim, config.activation(), rng);
  DecoderDims dd;
  dd.vocab = config.vocab_size;
  dd.word = config.word_dim;
  dd.feature = config.model_dim;
  dd.hidden = config.hidden_dim;
  dd.mid = config.mid_dim;
  dd.image_features = config.encoder_blocks + 1;
  dd.attention = config.decoder_attention;
  dd.activation = config.activation();
  m.decoder = DecoderParams::init(dd, rng);
  return m;
}

void XLanModel::for_each_param(const std::function<void(const std::string&, Tensor&)>& f) {
  f("in_w", in_w);
  f("in_b", in_b);
  for (std::size_t i = 0; i < encoder.layers.size(); ++i) {
    const std::string prefix = "encoder." + std::to_string(i) + ".";
    encoder.layers[i].attention.for_each([&](const char* n, Tensor& t) { f(prefix + "attn." + n, t); });
    encoder.layers[i].update.for_each([&](const char* n, Tensor& t) { f(prefix + "kv." + n, t); });
  }
  decoder.for_each([&](const std::string& n, Tensor& t) { f("decoder." + n, t); });
}

std::vector<Tensor> XLanModel::parameters() {
  std::vector<Tensor> out;
  for_each_param([&](const std::string&, Tensor& t) { out.push_back(t); });
  return out;
}

std::vector<std::string> XLanModel::parameter_names() {
  std::vector<std::string> out;
  for_each_param([&](const std::string& n, Tensor&) { out.push_back(n); });
  return out;
}

std::size_t XLanModel::parameter_count() {
  std::size_t n = 0;
  for_each_param([&](const std::string&, Tensor& t) { n += t.numel(); });
  return n;
}

void XLanModel::zero_grad() {
  for_each_param([](const std::string&, Tensor& t) { t.zero_grad(); });
}

XLanModel XLanModel::shadow() const {
  XLanModel copy = *this;
  copy.for_each_param([](const std::string&, Tensor& t) { t = t.shadow(); });
  return copy;
}

Tensor project_regions(const XLanModel& m, const Tensor& raw_regions) {
  if (!raw_regions.defined() || raw_regions.dim() != 2)
    throw ContractError("region features must be a non-empty [N×F] batch");
  if (raw_regions.cols() != m.config.feature_dim)
    throw DimensionError("region feature width " + std::to_string(raw_regions.cols()) + " != configured " +
                         std::to_string(m.config.feature_dim));
  return relu(linear(raw_regions, m.in_w, m.in_b));
}

EncoderOutput encode_image(const XLanModel& m, const Tensor& raw_regions, bool keep_trace) {
  return encode(m.encoder, project_regions(m, raw_regions), keep_trace);
}

std::vector<TokenId> caption_targets(const std::vector<TokenId>& caption) {
  std::vector<TokenId> t(caption);
  t.push_back(kEos);
  return t;
}

Tensor teacher_forced_logits(const XLanModel& m, const Tensor& raw_regions, const std::vector<TokenId>& caption,
                             std::vector<XLinearTrace>* traces) {
  const auto enc = encode_image(m, raw_regions);
  const auto ctx = prepare_context(m.decoder, enc);
  auto state = init_state(m.decoder);
  std::vector<Tensor> rows;
  rows.reserve(caption.size() + 1);
  TokenId input = kBos;
  for (std::size_t t = 0; t <= caption.size(); ++t) {
    auto step = decode_step(m.decoder, state, input, ctx, traces != nullptr);
    rows.push_back(step.logits);
    if (traces) traces->push_back(std::move(*step.trace));
    state = std::move(step.state);
    if (t < caption.size()) input = caption[t];
  }
  return stack_rows(rows);
}

Tensor generation_log_probs(const Tensor& logits) {
  std::vector<double> ban(logits.cols(), 0.0);
  ban[kPad] = -std::numeric_limits<double>::infinity();
  ban[kBos] = -std::numeric_limits<double>::infinity();
  return log_softmax(add(logits, Tensor::vector(std::move(ban))));
}

}  // namespace xlan
