#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include "fxf/nn.hpp"
#include "fxf/tensor.hpp"

namespace fxf {

/// Decoder variants compared in the component ablation.
enum class Ablation {
  no_cross_attn,        // TSA + FFN only
  standard_cross_attn,  // TSA + TFCA
  bidirectional,        // TSA + TFCA + FTCA
};

std::string_view ablation_name(Ablation mode);
/// Throws ConfigError for unknown names.
Ablation parse_ablation(std::string_view name);

struct DecoderConfig {
  std::size_t num_layers = 2;
  AttentionConfig attention;
  std::size_t ffn_mult = 2;
  Ablation mode = Ablation::bidirectional;

  /// Throws ConfigError if num_layers is zero or ffn_mult is zero.
  void validate() const;
};

template <typename T>
struct DecoderState {
  Tensor<T> tasks;  // [B, K, D]
  Tensor<T> face;   // [B, L, D]
};

/// Pre-norm residual attention: q + MHA(norm(q), norm(kv)). Self-attention
/// shares one norm between query and key/value.
template <typename T>
struct AttentionBlock {
  AttentionBlock() = default;
  AttentionBlock(ParamRegistry<T>& reg, const std::string& prefix, const AttentionConfig& cfg, bool self);

  Tensor<T> operator()(const Tensor<T>& q, const Tensor<T>& kv, AttentionProbe<T>* probe = nullptr) const;

  bool self = false;
  LayerNorm<T> q_norm;
  LayerNorm<T> kv_norm;
  MultiHeadAttention<T> attn;
};

/// Pre-norm residual feed-forward: x + FFN(norm(x)).
template <typename T>
struct FfnBlock {
  FfnBlock() = default;
  FfnBlock(ParamRegistry<T>& reg, const std::string& prefix, std::size_t dim, std::size_t mult);

  Tensor<T> operator()(const Tensor<T>& x) const { return add(x, ffn(norm(x))); }

  LayerNorm<T> norm;
  FeedForward<T> ffn;
};

/// Attention weights captured from one decoder pass, one entry per executed
/// attention sublayer in execution order.
template <typename T>
struct DecoderProbe {
  struct Record {
    std::string name;
    Tensor<T> weights;
  };
  std::vector<Record> records;
};

/// One FaceX layer: TSA -> FFN(tasks) -> TFCA -> FFN(tasks) -> FTCA -> FFN(face).
/// Blocks absent from the ablation mode declare no parameters.
template <typename T>
struct FaceXLayer {
  FaceXLayer() = default;
  FaceXLayer(ParamRegistry<T>& reg, const std::string& prefix, const DecoderConfig& cfg);

  DecoderState<T> task_self_attention(const DecoderState<T>& s, AttentionProbe<T>* probe = nullptr) const;
  DecoderState<T> task_to_face(const DecoderState<T>& s, AttentionProbe<T>* probe = nullptr) const;
  DecoderState<T> face_to_task(const DecoderState<T>& s, AttentionProbe<T>* probe = nullptr) const;
  DecoderState<T> forward(const DecoderState<T>& s, DecoderProbe<T>* probe = nullptr) const;

  Ablation mode = Ablation::bidirectional;
  AttentionBlock<T> tsa;
  FfnBlock<T> tsa_ffn;
  AttentionBlock<T> tfca;
  FfnBlock<T> tfca_ffn;
  AttentionBlock<T> ftca;
  FfnBlock<T> face_ffn;
};

template <typename T>
struct FaceXDecoder {
  FaceXDecoder() = default;
  FaceXDecoder(ParamRegistry<T>& reg, const std::string& prefix, const DecoderConfig& cfg);

  /// face [B, L, D], token table [K, D] -> final (T̂, F̂)
  DecoderState<T> operator()(const Tensor<T>& face, const Tensor<T>& token_table,
                             DecoderProbe<T>* probe = nullptr) const;

  DecoderConfig cfg;
  std::vector<FaceXLayer<T>> layers;
};

}  // namespace fxf
