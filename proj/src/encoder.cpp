#include "fxf/encoder.hpp"

#include "fxf/error.hpp"
#include "fxf/ops.hpp"

namespace fxf {

template <typename T>
void validate_image(const Tensor<T>& pixels) {
  const Shape& s = pixels.shape();
  if (s.size() != 4 || s[1] != 3) throw ShapeError("image must be [B, 3, H, W], got " + to_string(s));
  if (s[2] % 32 != 0 || s[3] % 32 != 0) {
    throw ShapeError("image height and width must be divisible by 32, got " + to_string(s));
  }
}

template <typename T>
Tensor<T> conv2d_bias(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias,
                      std::size_t stride, std::size_t padding) {
  Tensor<T> y = conv2d(x, weight, stride, padding);
  return add(y, reshape(bias, {bias.numel(), 1, 1}));
}

template <typename T>
ToyEncoder<T>::ToyEncoder(ParamRegistry<T>& reg, const std::string& prefix, ScaleChannels channels)
    : channels_(channels) {
  std::size_t in = 3;
  auto add_conv = [&](std::size_t out) {
    std::string name = prefix + ".conv" + std::to_string(convs_.size());
    convs_.push_back(Conv{reg.declare(name + ".weight", {out, in, 3, 3}, InitScheme::xavier_uniform),
                          reg.declare(name + ".bias", {out}, InitScheme::zeros)});
    in = out;
  };
  add_conv(channels[0]);
  for (std::size_t c : channels) add_conv(c);
}

template <typename T>
std::vector<Tensor<T>> ToyEncoder<T>::forward(const Tensor<T>& pixels) const {
  validate_image(pixels);
  std::vector<Tensor<T>> scales;
  Tensor<T> x = pixels;
  for (std::size_t i = 0; i < convs_.size(); ++i) {
    x = gelu(conv2d_bias(x, convs_[i].weight, convs_[i].bias, 2, 1));
    if (i >= 1) scales.push_back(x);
  }
  return scales;
}

template <typename T>
MlpFusion<T>::MlpFusion(ParamRegistry<T>& reg, const std::string& prefix, ScaleChannels in,
                        std::size_t dim)
    : in_channels(in), model_dim(dim) {
  for (std::size_t i = 0; i < kNumScales; ++i) {
    proj[i] = Linear<T>(reg, prefix + ".proj" + std::to_string(i), in[i], dim);
  }
  fuse = Linear<T>(reg, prefix + ".fuse", kNumScales * dim, dim);
}

template <typename T>
Tensor<T> MlpFusion<T>::operator()(const std::vector<Tensor<T>>& scales) const {
  if (scales.size() != kNumScales) {
    throw ShapeError("fusion expects 4 scales, got " + std::to_string(scales.size()));
  }
  const std::size_t b = scales[0].dim() == 4 ? scales[0].shape()[0] : 0;
  for (std::size_t i = 0; i < kNumScales; ++i) {
    const Shape& s = scales[i].shape();
    if (s.size() != 4 || s[0] != b || s[1] != in_channels[i]) {
      throw ShapeError("fusion scale " + std::to_string(i) + " must be [" + std::to_string(b) + ", " +
                       std::to_string(in_channels[i]) + ", h, w], got " + to_string(s));
    }
  }
  const std::size_t h = scales[0].shape()[2];
  const std::size_t w = scales[0].shape()[3];
  std::vector<Tensor<T>> projected;
  for (std::size_t i = 0; i < kNumScales; ++i) {
    const Shape& s = scales[i].shape();
    Tensor<T> tokens = reshape(permute(scales[i], {0, 2, 3, 1}), {b, s[2] * s[3], s[1]});
    Tensor<T> p = proj[i](tokens);
    if (s[2] != h || s[3] != w) {
      Tensor<T> grid = permute(reshape(p, {b, s[2], s[3], model_dim}), {0, 3, 1, 2});
      p = reshape(permute(bilinear_resize(grid, h, w), {0, 2, 3, 1}), {b, h * w, model_dim});
    }
    projected.push_back(p);
  }
  return fuse(concat(projected, -1));
}

std::size_t fusion_param_count(const ScaleChannels& in_channels, std::size_t model_dim) {
  std::size_t n = 0;
  for (std::size_t c : in_channels) n += c * model_dim + model_dim;
  return n + kNumScales * model_dim * model_dim + model_dim;
}

#define FXF_INSTANTIATE_ENCODER(T)                                                                   \
  template void validate_image<T>(const Tensor<T>&);                                                 \
  template Tensor<T> conv2d_bias<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, std::size_t, \
                                    std::size_t);                                                    \
  template class ToyEncoder<T>;                                                                      \
  template struct MlpFusion<T>;

FXF_INSTANTIATE_ENCODER(float)
FXF_INSTANTIATE_ENCODER(double)

}  // namespace fxf
