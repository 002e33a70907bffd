#pragma once

#include <vector>

#include "xlan/attention.hpp"

namespace xlan {

// (1+M) X-Linear layers over the region set. An empty layer list is the
// attention-free encoder used by the ablation grid: regions pass through and
// only the mean pool is produced.
struct EncoderParams {
  std::vector<AttentionLayer> layers;

  static EncoderParams init(std::size_t layers, std::size_t dim, std::size_t mid, Activation act, Rng& rng);
  std::size_t depth() const { return layers.size(); }
};

struct EncoderOutput {
  std::vector<Tensor> attended;  // mean pool followed by one feature per layer
  Tensor regions;                // final values [N×D]
  std::vector<XLinearTrace> traces;
};

EncoderOutput encode(const EncoderParams& p, const Tensor& regions, bool keep_trace = false);

}  // namespace xlan
