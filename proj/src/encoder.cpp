#include "xlan/encoder.hpp"

namespace xlan {

EncoderParams EncoderParams::init(std::size_t layers, std::size_t dim, std::size_t mid, Activation act, Rng& rng) {
  EncoderParams p;
  const XLinearDims dims{dim, dim, dim, dim, mid};
  for (std::size_t i = 0; i < layers; ++i)
    p.layers.push_back({XLinearParams::init(dims, act, rng), KVUpdateParams::init(dim, dim, dim, rng)});
  return p;
}

EncoderOutput encode(const EncoderParams& p, const Tensor& regions, bool keep_trace) {
  if (!regions.defined() || regions.dim() != 2)
    throw ContractError("encode: regions must be a non-empty row batch");
  EncoderOutput out;
  Tensor pooled = mean_rows(regions);
  out.attended.push_back(pooled);
  if (p.layers.empty()) {
    out.regions = regions;
    return out;
  }
  auto stack = stack_forward(p.layers, {pooled, regions, regions}, keep_trace);
  out.attended.insert(out.attended.end(), stack.attended.begin(), stack.attended.end());
  out.regions = stack.values;
  out.traces = std::move(stack.traces);
  return out;
}

}  // namespace xlan
