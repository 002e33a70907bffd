#pragma once

// Attention trace export. A trace is a JSON document:
//
//   {
//     "format": "xlan-attention-trace",
//     "version": 1,
//     "example": "<image id>",
//     "attention": "xlinear" | "conventional",
//     "regions": N,
//     "caption": "<decoded words>",
//     "steps": [
//       { "t": 0,
//         "token": "<word>", "token_id": 5,
//         "beta_s": [N spatial weights over region rows],
//         "beta_c": {"min": .., "mean": .., "max": ..} | null,
//         "argmax_region": i },
//       ...
//     ]
//   }
//
// One step per generated token, EOS included. beta_c is null for the
// conventional decoder, which has no channel gates. Region indices refer to
// rows of the example's feature matrix.

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "xlan/data.hpp"
#include "xlan/model.hpp"

namespace xlan {

inline constexpr int kTraceVersion = 1;

struct ChannelSummary {
  double min = 0.0;
  double mean = 0.0;
  double max = 0.0;
};

struct TraceStep {
  TokenId token = 0;
  std::string word;
  std::vector<double> beta_s;
  std::optional<ChannelSummary> beta_c;
  std::size_t argmax_region = 0;
};

struct AttentionTrace {
  std::string example;
  AttentionKind attention = AttentionKind::xlinear;
  std::size_t regions = 0;
  std::string caption;
  std::vector<TraceStep> steps;
};

// Greedy-decodes the example and records the decoder attention of every step.
AttentionTrace trace_attention(const XLanModel& m, const Example& ex, const Vocabulary& vocab, std::size_t max_len);

std::string trace_to_json(const AttentionTrace& trace);
AttentionTrace trace_from_json(const std::string& text);

void dump_attention(const XLanModel& m, const Example& ex, const Vocabulary& vocab, std::size_t max_len,
                    const std::filesystem::path& out_path);
AttentionTrace read_trace(const std::filesystem::path& path);

// Feeds the trace's tokens back through the model under teacher forcing and
// returns the largest absolute difference from the recorded β^s.
double replay_trace(const XLanModel& m, const Example& ex, const AttentionTrace& trace);

}  // namespace xlan
