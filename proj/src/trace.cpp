#include "xlan/trace.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "binary_io.hpp"
#include "xlan/inference.hpp"

namespace xlan {

using nlohmann::json;

AttentionTrace trace_attention(const XLanModel& m, const Example& ex, const Vocabulary& vocab, std::size_t max_len) {
  NoGradGuard no_grad;
  const auto enc = encode_image(m, ex.regions);
  const auto cap = greedy_decode(m, enc, max_len, true);

  AttentionTrace tr;
  tr.example = ex.id;
  tr.attention = m.config.decoder_attention;
  tr.regions = ex.regions.rows();
  tr.caption = vocab.join(cap.tokens);
  for (std::size_t t = 0; t < cap.traces.size(); ++t) {
    const auto& x = cap.traces[t];
    TraceStep s;
    s.token = t < cap.tokens.size() ? cap.tokens[t] : kEos;
    s.word = s.token < vocab.size() ? vocab.tokens[s.token] : "<" + std::to_string(s.token) + ">";
    s.beta_s = x.spatial_weights.to_vector();
    s.argmax_region = static_cast<std::size_t>(std::max_element(s.beta_s.begin(), s.beta_s.end()) - s.beta_s.begin());
    if (x.channel_gates.defined()) {
      const auto g = x.channel_gates.values();
      ChannelSummary c{g[0], 0.0, g[0]};
      for (double v : g) {
        c.min = std::min(c.min, v);
        c.max = std::max(c.max, v);
        c.mean += v;
      }
      c.mean /= static_cast<double>(g.size());
      s.beta_c = c;
    }
    tr.steps.push_back(std::move(s));
  }
  return tr;
}

std::string trace_to_json(const AttentionTrace& tr) {
  json steps = json::array();
  for (std::size_t t = 0; t < tr.steps.size(); ++t) {
    const auto& s = tr.steps[t];
    json js = {{"t", t}, {"token", s.word}, {"token_id", s.token}, {"beta_s", s.beta_s}};
    js["beta_c"] = s.beta_c ? json{{"min", s.beta_c->min}, {"mean", s.beta_c->mean}, {"max", s.beta_c->max}} : json();
    js["argmax_region"] = s.argmax_region;
    steps.push_back(std::move(js));
  }
  json doc = {{"format", "xlan-attention-trace"},
              {"version", kTraceVersion},
              {"example", tr.example},
              {"attention", to_string(tr.attention)},
              {"regions", tr.regions},
              {"caption", tr.caption},
              {"steps", std::move(steps)}};
  return doc.dump(2) + "\n";
}

AttentionTrace trace_from_json(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::exception& e) {
    throw FormatError(std::string("attention trace: ") + e.what());
  }
  try {
    const auto format = doc.at("format").get<std::string>();
    if (format != "xlan-attention-trace")
      throw FormatError("attention trace: expected format \"xlan-attention-trace\", found \"" + format + "\"");
    const auto version = doc.at("version").get<int>();
    if (version != kTraceVersion)
      throw FormatError("attention trace: expected version " + std::to_string(kTraceVersion) + ", found " +
                        std::to_string(version));
    AttentionTrace tr;
    tr.example = doc.at("example").get<std::string>();
    tr.attention = parse_attention_kind(doc.at("attention").get<std::string>());
    tr.regions = doc.at("regions").get<std::size_t>();
    tr.caption = doc.at("caption").get<std::string>();
    for (const auto& js : doc.at("steps")) {
      TraceStep s;
      s.token = js.at("token_id").get<TokenId>();
      s.word = js.at("token").get<std::string>();
      s.beta_s = js.at("beta_s").get<std::vector<double>>();
      if (!js.at("beta_c").is_null()) {
        const auto& c = js.at("beta_c");
        s.beta_c = ChannelSummary{c.at("min").get<double>(), c.at("mean").get<double>(), c.at("max").get<double>()};
      }
      s.argmax_region = js.at("argmax_region").get<std::size_t>();
      tr.steps.push_back(std::move(s));
    }
    return tr;
  } catch (const json::exception& e) {
    throw FormatError(std::string("attention trace: ") + e.what());
  }
}

void dump_attention(const XLanModel& m, const Example& ex, const Vocabulary& vocab, std::size_t max_len,
                    const std::filesystem::path& out_path) {
  bin::write_file_atomic(out_path, trace_to_json(trace_attention(m, ex, vocab, max_len)));
}

AttentionTrace read_trace(const std::filesystem::path& path) { return trace_from_json(bin::read_file(path)); }

double replay_trace(const XLanModel& m, const Example& ex, const AttentionTrace& trace) {
  NoGradGuard no_grad;
  std::vector<TokenId> inputs;
  for (const auto& s : trace.steps)
    if (s.token != kEos) inputs.push_back(s.token);
  std::vector<XLinearTrace> traces;
  teacher_forced_logits(m, ex.regions, inputs, &traces);
  if (traces.size() < trace.steps.size()) throw ContractError("replay_trace: trace is longer than the replay");
  double worst = 0.0;
  for (std::size_t t = 0; t < trace.steps.size(); ++t) {
    const auto got = traces[t].spatial_weights.values();
    const auto& want = trace.steps[t].beta_s;
    if (got.size() != want.size()) throw DimensionError("replay_trace: region count differs at step " + std::to_string(t));
    for (std::size_t i = 0; i < got.size(); ++i) worst = std::max(worst, std::abs(got[i] - want[i]));
  }
  return worst;
}

}  // namespace xlan
