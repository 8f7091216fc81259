#pragma once

#include <cstddef>
#include <map>
#include <string>
#include <vector>

#include "fxf/ops.hpp"
#include "fxf/tensor.hpp"

namespace fxf {

enum class InitScheme { xavier_uniform, zeros, ones };

/// Named trainable tensors in declaration order.
template <typename T>
class ParamRegistry {
 public:
  struct Entry {
    std::string name;
    Tensor<T> tensor;
    InitScheme scheme;
  };

  /// Declares a new zero-filled parameter; names must be unique.
  Tensor<T> declare(const std::string& name, Shape shape, InitScheme scheme);

  const Tensor<T>& get(const std::string& name) const;
  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  const std::vector<Entry>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }
  std::size_t total_elements() const;
  std::vector<std::pair<std::string, Tensor<T>>> named() const;
  void zero_grad();

 private:
  std::vector<Entry> entries_;
  std::map<std::string, std::size_t> index_;
};

/// Weights get Xavier-uniform values (bound sqrt(6 / (fan_in + fan_out))),
/// biases zero, norm gains one. For a weight of shape [out, in, k...] the
/// fans are in*prod(k) and out*prod(k).
template <typename T>
void init_params(ParamRegistry<T>& registry, Rng& rng);

double xavier_bound(const Shape& shape);

struct AttentionConfig {
  std::size_t model_dim = 32;
  std::size_t num_heads = 2;

  std::size_t head_dim() const { return model_dim / num_heads; }
  /// Throws ShapeError unless model_dim is a positive multiple of num_heads.
  void validate() const;
};

/// x · Wᵀ + b over the last axis; weight is [out, in], bias [out].
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias);

template <typename T>
struct Linear {
  Linear() = default;
  Linear(ParamRegistry<T>& reg, const std::string& prefix, std::size_t in, std::size_t out);
  Tensor<T> operator()(const Tensor<T>& x) const { return linear(x, weight, bias); }

  Tensor<T> weight;
  Tensor<T> bias;
};

template <typename T>
struct LayerNorm {
  LayerNorm() = default;
  LayerNorm(ParamRegistry<T>& reg, const std::string& prefix, std::size_t dim);
  Tensor<T> operator()(const Tensor<T>& x) const { return layer_norm(x, gamma, beta, eps); }

  Tensor<T> gamma;
  Tensor<T> beta;
  T eps = T(1e-5);
};

/// Receives per-head attention weights [B, heads, Lq, Lk] when passed to
/// MultiHeadAttention::operator().
template <typename T>
struct AttentionProbe {
  Tensor<T> weights;
};

/// softmax(Q_h K_hᵀ / sqrt(head_dim)) V_h per head, heads concatenated and
/// output-projected. No masking.
template <typename T>
struct MultiHeadAttention {
  MultiHeadAttention() = default;
  MultiHeadAttention(ParamRegistry<T>& reg, const std::string& prefix, AttentionConfig cfg);

  /// q_in [B, Lq, D], kv_in [B, Lk, D] -> [B, Lq, D]
  Tensor<T> operator()(const Tensor<T>& q_in, const Tensor<T>& kv_in,
                       AttentionProbe<T>* probe = nullptr) const;

  AttentionConfig cfg;
  Linear<T> q_proj, k_proj, v_proj, o_proj;
};

/// linear(D -> mult*D) -> gelu -> linear(-> D)
template <typename T>
struct FeedForward {
  FeedForward() = default;
  FeedForward(ParamRegistry<T>& reg, const std::string& prefix, std::size_t dim, std::size_t mult);
  Tensor<T> operator()(const Tensor<T>& x) const { return fc2(gelu(fc1(x))); }

  Linear<T> fc1, fc2;
};

}  // namespace fxf
