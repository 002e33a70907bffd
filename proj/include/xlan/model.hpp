#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "xlan/decoder.hpp"
#include "xlan/encoder.hpp"

namespace xlan {

struct ModelConfig {
  std::size_t feature_dim = 15;    // raw region feature width
  std::size_t model_dim = 32;      // projected region width, D_k = D_v = D_B
  std::size_t mid_dim = 16;        // D_c
  std::size_t hidden_dim = 64;     // LSTM size
  std::size_t word_dim = 32;
  std::size_t vocab_size = 14;
  std::size_t encoder_blocks = 4;  // 1+M X-Linear layers; 0 disables encoder attention
  AttentionKind decoder_attention = AttentionKind::xlinear;
  bool elu = true;                 // celu_plus_one at every bilinear site instead of relu

  Activation activation() const { return elu ? Activation::celu_plus_one : Activation::relu; }
  std::map<std::string, std::string> to_map() const;
  static ModelConfig from_map(const std::map<std::string, std::string>& kv);
  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

// The full captioning model: region projection, encoder and decoder.
struct XLanModel {
  ModelConfig config;
  Tensor in_w;  // [D×F]
  Tensor in_b;  // [D]
  EncoderParams encoder;
  DecoderParams decoder;

  static XLanModel create(const ModelConfig& config, std::uint64_t seed);

  // Visits every learnable tensor in a fixed order with a stable name.
  void for_each_param(const std::function<void(const std::string&, Tensor&)>& f);
  std::vector<Tensor> parameters();
  std::vector<std::string> parameter_names();
  std::size_t parameter_count();
  void zero_grad();

  // Same parameter values (shared buffers), independent gradients.
  XLanModel shadow() const;
};

// relu(raw · W_inᵀ + b_in)
Tensor project_regions(const XLanModel& m, const Tensor& raw_regions);
EncoderOutput encode_image(const XLanModel& m, const Tensor& raw_regions, bool keep_trace = false);

// Logits [T×V] for inputs [BOS, y_1..y_{T-1}] when predicting [y_1..y_{T-1}, EOS].
Tensor teacher_forced_logits(const XLanModel& m, const Tensor& raw_regions, const std::vector<TokenId>& caption,
                             std::vector<XLinearTrace>* traces = nullptr);

// Targets for a caption: the tokens followed by EOS.
std::vector<TokenId> caption_targets(const std::vector<TokenId>& caption);

// Log-probabilities used for generation: PAD and BOS are never emitted.
Tensor generation_log_probs(const Tensor& logits);

}  // namespace xlan
