#include "xlan/inference.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <random>

namespace xlan {

namespace {

bool emittable(TokenId t) { return t != kPad && t != kBos; }

struct Hypothesis {
  std::vector<TokenId> tokens;  // includes a trailing EOS once finished
  double log_prob = 0.0;
  DecoderState state;
};

Caption to_caption(const std::vector<TokenId>& generated, double log_prob) {
  Caption c;
  c.steps = generated.size();
  c.finished = !generated.empty() && generated.back() == kEos;
  c.tokens.assign(generated.begin(), generated.end() - (c.finished ? 1 : 0));
  c.log_prob = log_prob;
  c.score = c.steps ? log_prob / static_cast<double>(c.steps) : 0.0;
  return c;
}

}  // namespace

Caption greedy_decode(const XLanModel& m, const EncoderOutput& enc, std::size_t max_len, bool keep_trace) {
  if (max_len == 0) throw ContractError("greedy_decode: max_len must be >= 1");
  NoGradGuard no_grad;
  const auto ctx = prepare_context(m.decoder, enc);
  auto state = init_state(m.decoder);
  std::vector<TokenId> generated;
  std::vector<XLinearTrace> traces;
  double total = 0.0;
  TokenId input = kBos;
  for (std::size_t t = 0; t < max_len; ++t) {
    auto step = decode_step(m.decoder, state, input, ctx, keep_trace);
    const Tensor lp_t = generation_log_probs(step.logits);
    const auto lp = lp_t.values();
    TokenId best = kEos;
    double best_lp = -std::numeric_limits<double>::infinity();
    for (TokenId tok = 0; tok < lp.size(); ++tok) {
      if (emittable(tok) && lp[tok] > best_lp) {
        best = tok;
        best_lp = lp[tok];
      }
    }
    if (keep_trace) traces.push_back(std::move(*step.trace));
    total += best_lp;
    generated.push_back(best);
    state = std::move(step.state);
    if (best == kEos) break;
    input = best;
  }
  auto c = to_caption(generated, total);
  c.traces = std::move(traces);
  return c;
}

std::vector<Caption> beam_search(const XLanModel& m, const EncoderOutput& enc, std::size_t beam, std::size_t max_len) {
  if (beam == 0) throw ContractError("beam_search: beam must be >= 1");
  if (max_len == 0) throw ContractError("beam_search: max_len must be >= 1");
  NoGradGuard no_grad;
  const auto ctx = prepare_context(m.decoder, enc);

  std::vector<Hypothesis> live{{{}, 0.0, init_state(m.decoder)}};
  std::vector<Caption> pool;

  struct Candidate {
    std::size_t parent;
    TokenId token;
    double log_prob;
    double step_log_prob;
  };

  for (std::size_t t = 0; t < max_len && !live.empty(); ++t) {
    const std::size_t width = beam - pool.size();
    if (width == 0) break;
    std::vector<Candidate> cands;
    std::vector<DecoderState> next_states;
    for (std::size_t h = 0; h < live.size(); ++h) {
      const TokenId input = live[h].tokens.empty() ? kBos : live[h].tokens.back();
      auto step = decode_step(m.decoder, live[h].state, input, ctx);
      const Tensor lp_t = generation_log_probs(step.logits);
      const auto lp = lp_t.values();
      for (TokenId tok = 0; tok < lp.size(); ++tok)
        if (emittable(tok)) cands.push_back({h, tok, live[h].log_prob + lp[tok], lp[tok]});
      next_states.push_back(std::move(step.state));
    }
    auto better = [&](const Candidate& a, const Candidate& b) {
      if (a.log_prob != b.log_prob) return a.log_prob > b.log_prob;
      const auto& pa = live[a.parent].tokens;
      const auto& pb = live[b.parent].tokens;
      if (pa != pb) return pa < pb;
      // same prefix: a rounded tie in the sum must not hide a strict step-level order
      if (a.step_log_prob != b.step_log_prob) return a.step_log_prob > b.step_log_prob;
      return a.token < b.token;
    };
    const std::size_t keep = std::min(width, cands.size());
    std::partial_sort(cands.begin(), cands.begin() + static_cast<std::ptrdiff_t>(keep), cands.end(), better);

    std::vector<Hypothesis> next;
    for (std::size_t i = 0; i < keep; ++i) {
      const auto& c = cands[i];
      auto tokens = live[c.parent].tokens;
      tokens.push_back(c.token);
      if (c.token == kEos || t + 1 == max_len)
        pool.push_back(to_caption(tokens, c.log_prob));
      else
        next.push_back({std::move(tokens), c.log_prob, next_states[c.parent]});
    }
    live = std::move(next);
  }

  std::stable_sort(pool.begin(), pool.end(), [](const Caption& a, const Caption& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.tokens < b.tokens;
  });
  if (pool.size() > beam) pool.resize(beam);
  return pool;
}

SampledCaption sample_decode(const XLanModel& m, const EncoderOutput& enc, std::size_t max_len, std::uint64_t seed) {
  if (max_len == 0) throw ContractError("sample_decode: max_len must be >= 1");
  Rng rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const auto ctx = prepare_context(m.decoder, enc);
  auto state = init_state(m.decoder);
  SampledCaption out;
  std::vector<Tensor> picked;
  TokenId input = kBos;
  for (std::size_t t = 0; t < max_len; ++t) {
    auto step = decode_step(m.decoder, state, input, ctx);
    Tensor lp = generation_log_probs(step.logits);
    const auto v = lp.values();
    const double u = unit(rng);
    double acc = 0.0;
    TokenId chosen = kEos;
    TokenId last_valid = kEos;
    bool found = false;
    for (TokenId tok = 0; tok < v.size(); ++tok) {
      if (!emittable(tok)) continue;
      last_valid = tok;
      acc += std::exp(v[tok]);
      if (u < acc) {
        chosen = tok;
        found = true;
        break;
      }
    }
    if (!found) chosen = last_valid;  // rounding left the cumulative sum just below u
    picked.push_back(pick(reshape(lp, {1, lp.numel()}), {chosen}));
    out.tokens.push_back(chosen);
    state = std::move(step.state);
    if (chosen == kEos) break;
    input = chosen;
  }
  out.log_prob_sum = sum(concat(picked));
  return out;
}

double bleu_smooth(const std::vector<TokenId>& candidate, const std::vector<std::vector<TokenId>>& references,
                   std::size_t max_n) {
  if (candidate.empty() || references.empty() || max_n == 0) return 0.0;
  using Gram = std::vector<TokenId>;
  auto count = [](const std::vector<TokenId>& s, std::size_t n) {
    std::map<Gram, std::size_t> c;
    for (std::size_t i = 0; i + n <= s.size(); ++i) ++c[Gram(s.begin() + static_cast<std::ptrdiff_t>(i),
                                                             s.begin() + static_cast<std::ptrdiff_t>(i + n))];
    return c;
  };

  double log_sum = 0.0;
  for (std::size_t n = 1; n <= max_n; ++n) {
    const auto cand = count(candidate, n);
    std::map<Gram, std::size_t> max_ref;
    for (const auto& ref : references)
      for (const auto& [g, c] : count(ref, n)) max_ref[g] = std::max(max_ref[g], c);
    std::size_t matched = 0, total = 0;
    for (const auto& [g, c] : cand) {
      total += c;
      auto it = max_ref.find(g);
      if (it != max_ref.end()) matched += std::min(c, it->second);
    }
    double p;
    if (n == 1)
      p = static_cast<double>(matched) / static_cast<double>(total);
    else
      p = (static_cast<double>(matched) + 1.0) / (static_cast<double>(total) + 1.0);  // 1 when no n-grams exist
    if (p <= 0.0) return 0.0;
    log_sum += std::log(p);
  }

  const double c = static_cast<double>(candidate.size());
  double r = static_cast<double>(references.front().size());
  for (const auto& ref : references) {
    const double len = static_cast<double>(ref.size());
    if (std::abs(len - c) < std::abs(r - c) || (std::abs(len - c) == std::abs(r - c) && len < r)) r = len;
  }
  const double bp = c > r ? 1.0 : std::exp(1.0 - r / c);
  return bp * std::exp(log_sum / static_cast<double>(max_n));
}

}  // namespace xlan
