#include "fxf/model.hpp"

#include "fxf/error.hpp"

namespace fxf {

void ModelConfig::validate() const {
  data_spec().validate();
  decoder.validate();
  decoder.attention.validate();
  for (std::size_t c : encoder_channels)
    if (c == 0) throw ConfigError("encoder channels must be positive");
}

template <typename T>
FaceXFormer<T>::FaceXFormer(const ModelConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  const std::size_t d = cfg_.decoder.attention.model_dim;
  encoder_ = ToyEncoder<T>(params_, "encoder", cfg_.encoder_channels);
  fusion_ = MlpFusion<T>(params_, "fusion", cfg_.encoder_channels, d);
  const TokenLayout layout(cfg_.heads.seg_classes);
  tokens_ = params_.declare("tokens", {layout.total(), d}, InitScheme::xavier_uniform);
  decoder_ = FaceXDecoder<T>(params_, "decoder", cfg_.decoder);
  head_ = UnifiedHead<T>(params_, "head", cfg_.heads, cfg_.decoder.attention, cfg_.refine_active());
  class_weights_ = params_.declare("loss.recognition.weight", {cfg_.heads.num_identities, cfg_.heads.embed_dim},
                                   InitScheme::xavier_uniform);
}

template <typename T>
void FaceXFormer<T>::initialize(std::uint64_t seed) {
  Rng rng(seed);
  init_params(params_, rng);
}

template <typename T>
Tensor<T> FaceXFormer<T>::backbone(const Tensor<T>& pixels) const {
  validate_image(pixels);
  if (pixels.shape()[2] != cfg_.height || pixels.shape()[3] != cfg_.width) {
    throw ShapeError("model built for " + std::to_string(cfg_.height) + "x" + std::to_string(cfg_.width) +
                     " images, got " + to_string(pixels.shape()));
  }
  return fusion_(encoder_.forward(pixels));
}

template <typename T>
DecoderState<T> FaceXFormer<T>::decode(const Tensor<T>& face, DecoderProbe<T>* probe) const {
  return decoder_(face, tokens_, probe);
}

template <typename T>
TaskPredictions<T> FaceXFormer<T>::heads(const DecoderState<T>& state, const TaskSelection& selection) const {
  return head_(state.tasks, state.face, cfg_.height, cfg_.width, selection);
}

template <typename T>
TaskPredictions<T> FaceXFormer<T>::forward(const Tensor<T>& pixels, const TaskSelection& selection,
                                           DecoderProbe<T>* probe) const {
  return heads(decode(backbone(pixels), probe), selection);
}

template class FaceXFormer<float>;
template class FaceXFormer<double>;

}  // namespace fxf
