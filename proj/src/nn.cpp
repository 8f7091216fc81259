#include "fxf/nn.hpp"

#include <cmath>

#include "fxf/error.hpp"
#include "kernels.hpp"

namespace fxf {

template <typename T>
Tensor<T> ParamRegistry<T>::declare(const std::string& name, Shape shape, InitScheme scheme) {
  if (index_.count(name)) throw std::invalid_argument("duplicate parameter name: " + name);
  Tensor<T> t = Tensor<T>::zeros(std::move(shape), true);
  index_[name] = entries_.size();
  entries_.push_back(Entry{name, t, scheme});
  return t;
}

template <typename T>
const Tensor<T>& ParamRegistry<T>::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("unknown parameter: " + name);
  return entries_[it->second].tensor;
}

template <typename T>
std::size_t ParamRegistry<T>::total_elements() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.tensor.numel();
  return n;
}

template <typename T>
std::vector<std::pair<std::string, Tensor<T>>> ParamRegistry<T>::named() const {
  std::vector<std::pair<std::string, Tensor<T>>> out;
  for (const auto& e : entries_) out.emplace_back(e.name, e.tensor);
  return out;
}

template <typename T>
void ParamRegistry<T>::zero_grad() {
  for (auto& e : entries_) e.tensor.zero_grad();
}

double xavier_bound(const Shape& shape) {
  if (shape.size() < 2) throw ShapeError("xavier init needs a tensor of rank >= 2, got " + to_string(shape));
  double receptive = 1.0;
  for (std::size_t i = 2; i < shape.size(); ++i) receptive *= static_cast<double>(shape[i]);
  double fan_out = static_cast<double>(shape[0]) * receptive;
  double fan_in = static_cast<double>(shape[1]) * receptive;
  return std::sqrt(6.0 / (fan_in + fan_out));
}

template <typename T>
void init_params(ParamRegistry<T>& registry, Rng& rng) {
  for (const auto& e : registry.entries()) {
    Tensor<T> t = e.tensor;
    auto data = t.mutable_data();
    switch (e.scheme) {
      case InitScheme::zeros:
        std::fill(data.begin(), data.end(), T(0));
        break;
      case InitScheme::ones:
        std::fill(data.begin(), data.end(), T(1));
        break;
      case InitScheme::xavier_uniform: {
        double bound = xavier_bound(t.shape());
        for (auto& v : data) v = static_cast<T>(rng.uniform(-bound, bound));
        break;
      }
    }
    t.zero_grad();
  }
}

void AttentionConfig::validate() const {
  if (model_dim == 0 || num_heads == 0 || model_dim % num_heads != 0) {
    throw ShapeError("attention model_dim " + std::to_string(model_dim) +
                     " must be a positive multiple of num_heads " + std::to_string(num_heads));
  }
}

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias) {
  if (weight.dim() != 2 || x.dim() < 1 || x.shape().back() != weight.shape()[1] ||
      bias.numel() != weight.shape()[0]) {
    throw ShapeError("linear shape mismatch: x " + to_string(x.shape()) + ", weight " +
                     to_string(weight.shape()) + ", bias " + to_string(bias.shape()));
  }
  std::size_t in = weight.shape()[1];
  std::size_t out = weight.shape()[0];
  std::size_t rows = x.numel() / in;
  std::vector<T> wt(in * out);
  kernels::transpose(weight.data().data(), wt.data(), out, in);
  std::vector<T> y(rows * out);
  auto bd = bias.data();
  for (std::size_t r = 0; r < rows; ++r) std::copy(bd.begin(), bd.end(), y.begin() + r * out);
  kernels::gemm_nn(x.data().data(), wt.data(), y.data(), rows, in, out);
  Shape out_shape = x.shape();
  out_shape.back() = out;
  auto xn = x.node();
  auto wn = weight.node();
  auto bn = bias.node();
  return detail::record_op<T>("linear", {x, weight, bias}, Tensor<T>(out_shape, std::move(y)),
                              [xn, wn, bn, rows, in, out](std::span<const T> g) {
    if (xn->requires_grad) {
      auto gx = detail::grad_buffer(*xn);
      kernels::gemm_nn(g.data(), wn->data.data(), gx.data(), rows, out, in);
    }
    if (wn->requires_grad) {
      auto gw = detail::grad_buffer(*wn);
      kernels::gemm_tn(g.data(), xn->data.data(), gw.data(), rows, out, in);
    }
    if (bn->requires_grad) {
      auto gb = detail::grad_buffer(*bn);
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < out; ++j) gb[j] += g[r * out + j];
    }
  });
}

template <typename T>
Linear<T>::Linear(ParamRegistry<T>& reg, const std::string& prefix, std::size_t in, std::size_t out)
    : weight(reg.declare(prefix + ".weight", {out, in}, InitScheme::xavier_uniform)),
      bias(reg.declare(prefix + ".bias", {out}, InitScheme::zeros)) {}

template <typename T>
LayerNorm<T>::LayerNorm(ParamRegistry<T>& reg, const std::string& prefix, std::size_t dim)
    : gamma(reg.declare(prefix + ".gamma", {dim}, InitScheme::ones)),
      beta(reg.declare(prefix + ".beta", {dim}, InitScheme::zeros)) {}

template <typename T>
MultiHeadAttention<T>::MultiHeadAttention(ParamRegistry<T>& reg, const std::string& prefix,
                                          AttentionConfig config)
    : cfg(config) {
  cfg.validate();
  q_proj = Linear<T>(reg, prefix + ".q_proj", cfg.model_dim, cfg.model_dim);
  k_proj = Linear<T>(reg, prefix + ".k_proj", cfg.model_dim, cfg.model_dim);
  v_proj = Linear<T>(reg, prefix + ".v_proj", cfg.model_dim, cfg.model_dim);
  o_proj = Linear<T>(reg, prefix + ".o_proj", cfg.model_dim, cfg.model_dim);
}

template <typename T>
Tensor<T> MultiHeadAttention<T>::operator()(const Tensor<T>& q_in, const Tensor<T>& kv_in,
                                            AttentionProbe<T>* probe) const {
  const std::size_t d = cfg.model_dim;
  if (q_in.dim() != 3 || kv_in.dim() != 3 || q_in.shape()[2] != d || kv_in.shape()[2] != d ||
      q_in.shape()[0] != kv_in.shape()[0]) {
    throw ShapeError("attention expects [B, L, " + std::to_string(d) + "] inputs, got " +
                     to_string(q_in.shape()) + " and " + to_string(kv_in.shape()));
  }
  const std::size_t b = q_in.shape()[0];
  const std::size_t lq = q_in.shape()[1];
  const std::size_t lk = kv_in.shape()[1];
  const std::size_t h = cfg.num_heads;
  const std::size_t hd = cfg.head_dim();

  auto split_heads = [&](const Tensor<T>& x, std::size_t len) {
    return permute(reshape(x, {b, len, h, hd}), {0, 2, 1, 3});
  };
  Tensor<T> q = split_heads(q_proj(q_in), lq);
  Tensor<T> k = split_heads(k_proj(kv_in), lk);
  Tensor<T> v = split_heads(v_proj(kv_in), lk);

  Tensor<T> scores = scale(matmul(q, transpose(k, -1, -2)), T(1) / std::sqrt(T(hd)));
  Tensor<T> attn = softmax(scores, -1);
  if (probe) probe->weights = attn.clone();
  Tensor<T> ctx = reshape(permute(matmul(attn, v), {0, 2, 1, 3}), {b, lq, d});
  return o_proj(ctx);
}

template <typename T>
FeedForward<T>::FeedForward(ParamRegistry<T>& reg, const std::string& prefix, std::size_t dim,
                            std::size_t mult)
    : fc1(reg, prefix + ".fc1", dim, dim * mult), fc2(reg, prefix + ".fc2", dim * mult, dim) {}

#define FXF_INSTANTIATE_NN(T)                                                              \
  template class ParamRegistry<T>;                                                         \
  template void init_params<T>(ParamRegistry<T>&, Rng&);                                   \
  template Tensor<T> linear<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);      \
  template struct Linear<T>;                                                               \
  template struct LayerNorm<T>;                                                            \
  template struct MultiHeadAttention<T>;                                                   \
  template struct FeedForward<T>;

FXF_INSTANTIATE_NN(float)
FXF_INSTANTIATE_NN(double)

}  // namespace fxf
