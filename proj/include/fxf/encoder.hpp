#pragma once

#include <array>
#include <cstddef>
#include <string>
#include <vector>

#include "fxf/nn.hpp"
#include "fxf/tensor.hpp"

namespace fxf {

inline constexpr std::size_t kNumScales = 4;
using ScaleChannels = std::array<std::size_t, kNumScales>;

/// Throws ShapeError unless pixels is [B, 3, H, W] with H and W divisible by 32.
template <typename T>
void validate_image(const Tensor<T>& pixels);

/// A backbone producing four feature maps at strides 4, 8, 16, 32.
template <typename T>
class EncoderInterface {
 public:
  virtual ~EncoderInterface() = default;
  /// pixels [B, 3, H, W] -> S_i [B, D_i, H / 2^(i+2), W / 2^(i+2)]
  virtual std::vector<Tensor<T>> forward(const Tensor<T>& pixels) const = 0;
  virtual ScaleChannels channels() const = 0;
};

/// Stride-2 3x3 convolutions with GELU: two at the first stage, one at each
/// later stage.
template <typename T>
class ToyEncoder final : public EncoderInterface<T> {
 public:
  ToyEncoder() = default;
  ToyEncoder(ParamRegistry<T>& reg, const std::string& prefix, ScaleChannels channels = {16, 32, 64, 128});

  std::vector<Tensor<T>> forward(const Tensor<T>& pixels) const override;
  ScaleChannels channels() const override { return channels_; }

  struct Conv {
    Tensor<T> weight;
    Tensor<T> bias;
  };
  const std::vector<Conv>& convs() const { return convs_; }

 private:
  ScaleChannels channels_{};
  std::vector<Conv> convs_;
};

/// conv2d followed by a per-channel bias.
template <typename T>
Tensor<T> conv2d_bias(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias,
                      std::size_t stride, std::size_t padding);

/// Projects each scale to D_t, resizes it to the grid of the first scale,
/// concatenates along channels and fuses with a 4·D_t -> D_t linear layer.
/// Projection runs before the resize; both are linear and the resize weights
/// sum to one, so the result equals resize-then-project at lower cost.
template <typename T>
struct MlpFusion {
  MlpFusion() = default;
  MlpFusion(ParamRegistry<T>& reg, const std::string& prefix, ScaleChannels in_channels, std::size_t model_dim);

  /// scales: 4 maps [B, D_i, h_i, w_i] -> [B, h_0 * w_0, D_t]
  Tensor<T> operator()(const std::vector<Tensor<T>>& scales) const;

  ScaleChannels in_channels{};
  std::size_t model_dim = 0;
  std::array<Linear<T>, kNumScales> proj;
  Linear<T> fuse;
};

/// Parameter count of MlpFusion for the given widths.
std::size_t fusion_param_count(const ScaleChannels& in_channels, std::size_t model_dim);

}  // namespace fxf
