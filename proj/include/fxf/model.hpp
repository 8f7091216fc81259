#pragma once

#include <cstddef>
#include <cstdint>

#include "fxf/data.hpp"
#include "fxf/decoder.hpp"
#include "fxf/encoder.hpp"
#include "fxf/heads.hpp"
#include "fxf/nn.hpp"

namespace fxf {

struct ModelConfig {
  std::size_t height = 64;
  std::size_t width = 64;
  ScaleChannels encoder_channels{16, 32, 64, 128};
  DecoderConfig decoder;
  HeadConfig heads;
  /// Final task-to-face refinement in the head; never built for no-cross-attn.
  bool refine = true;

  /// Validates every part; throws ConfigError or ShapeError.
  void validate() const;
  bool refine_active() const { return refine && decoder.mode != Ablation::no_cross_attn; }
  DataSpec data_spec() const { return {height, width, heads}; }
};

/// Encoder, fusion, task-token table, decoder and heads under one registry.
/// The margin-softmax class weights live in the same registry as
/// "loss.recognition.weight" so they are trained and checkpointed with the
/// rest of the model.
template <typename T>
class FaceXFormer {
 public:
  explicit FaceXFormer(const ModelConfig& cfg);
  FaceXFormer(const FaceXFormer&) = delete;
  FaceXFormer& operator=(const FaceXFormer&) = delete;

  /// Fresh initialization from `seed`.
  void initialize(std::uint64_t seed);

  /// pixels [B, 3, H, W] -> face tokens [B, (H/4)(W/4), D]
  Tensor<T> backbone(const Tensor<T>& pixels) const;
  DecoderState<T> decode(const Tensor<T>& face, DecoderProbe<T>* probe = nullptr) const;
  TaskPredictions<T> heads(const DecoderState<T>& state, const TaskSelection& selection) const;

  TaskPredictions<T> forward(const Tensor<T>& pixels, const TaskSelection& selection,
                             DecoderProbe<T>* probe = nullptr) const;

  const ModelConfig& config() const { return cfg_; }
  ParamRegistry<T>& params() { return params_; }
  const ParamRegistry<T>& params() const { return params_; }
  const TokenLayout& layout() const { return head_.layout; }
  const Tensor<T>& token_table() const { return tokens_; }
  const Tensor<T>& class_weights() const { return class_weights_; }

 private:
  ModelConfig cfg_;
  ParamRegistry<T> params_;
  ToyEncoder<T> encoder_;
  MlpFusion<T> fusion_;
  Tensor<T> tokens_;
  FaceXDecoder<T> decoder_;
  UnifiedHead<T> head_;
  Tensor<T> class_weights_;
};

}  // namespace fxf
