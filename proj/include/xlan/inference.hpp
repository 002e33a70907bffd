#pragma once

#include <cstdint>
#include <vector>

#include "xlan/model.hpp"

namespace xlan {

struct Caption {
  std::vector<TokenId> tokens;        // BOS/EOS stripped
  std::vector<XLinearTrace> traces;   // one per decode step, when requested
  double log_prob = 0.0;              // sum over generated tokens, EOS included
  std::size_t steps = 0;              // generated tokens, EOS included
  double score = 0.0;                 // log_prob / steps
  bool finished = false;              // ended with EOS
};

// Argmax decoding; ties go to the lowest token id.
Caption greedy_decode(const XLanModel& m, const EncoderOutput& enc, std::size_t max_len, bool keep_trace = false);

// Length-capped beam search ranked by mean log-probability. A hypothesis that
// emits EOS retires to the finished pool and the live beam shrinks by one
// slot, so beam = 1 reproduces greedy decoding. Returns at most `beam`
// hypotheses, best first.
std::vector<Caption> beam_search(const XLanModel& m, const EncoderOutput& enc, std::size_t beam, std::size_t max_len);

// Multinomial sampling at temperature 1. With grad mode on, `log_prob_sum`
// carries the graph of Σ_t log p(token_t).
struct SampledCaption {
  std::vector<TokenId> tokens;
  Tensor log_prob_sum;
};

SampledCaption sample_decode(const XLanModel& m, const EncoderOutput& enc, std::size_t max_len, std::uint64_t seed);

// Sentence BLEU with add-one smoothing on n >= 2 precisions and the brevity
// penalty against the closest reference length.
double bleu_smooth(const std::vector<TokenId>& candidate, const std::vector<std::vector<TokenId>>& references,
                   std::size_t max_n = 4);

}  // namespace xlan
