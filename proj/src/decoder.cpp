#include "fxf/decoder.hpp"

#include "fxf/error.hpp"
#include "fxf/ops.hpp"

namespace fxf {

std::string_view ablation_name(Ablation mode) {
  switch (mode) {
    case Ablation::no_cross_attn: return "no-cross-attn";
    case Ablation::standard_cross_attn: return "standard-cross-attn";
    case Ablation::bidirectional: return "bidirectional";
  }
  return "unknown";
}

Ablation parse_ablation(std::string_view name) {
  for (Ablation m : {Ablation::no_cross_attn, Ablation::standard_cross_attn, Ablation::bidirectional})
    if (ablation_name(m) == name) return m;
  throw ConfigError("unknown ablation mode: " + std::string(name));
}

void DecoderConfig::validate() const {
  if (num_layers == 0) throw ConfigError("decoder needs at least one layer");
  if (ffn_mult == 0) throw ConfigError("ffn_mult must be positive");
  attention.validate();
}

template <typename T>
AttentionBlock<T>::AttentionBlock(ParamRegistry<T>& reg, const std::string& prefix,
                                  const AttentionConfig& cfg, bool is_self)
    : self(is_self) {
  q_norm = LayerNorm<T>(reg, prefix + (self ? ".norm" : ".q_norm"), cfg.model_dim);
  if (!self) kv_norm = LayerNorm<T>(reg, prefix + ".kv_norm", cfg.model_dim);
  attn = MultiHeadAttention<T>(reg, prefix + ".attn", cfg);
}

template <typename T>
Tensor<T> AttentionBlock<T>::operator()(const Tensor<T>& q, const Tensor<T>& kv,
                                        AttentionProbe<T>* probe) const {
  Tensor<T> qn = q_norm(q);
  Tensor<T> kvn = self ? qn : kv_norm(kv);
  return add(q, attn(qn, kvn, probe));
}

template <typename T>
FfnBlock<T>::FfnBlock(ParamRegistry<T>& reg, const std::string& prefix, std::size_t dim, std::size_t mult)
    : norm(reg, prefix + ".norm", dim), ffn(reg, prefix + ".ffn", dim, mult) {}

template <typename T>
FaceXLayer<T>::FaceXLayer(ParamRegistry<T>& reg, const std::string& prefix, const DecoderConfig& cfg)
    : mode(cfg.mode) {
  const std::size_t d = cfg.attention.model_dim;
  tsa = AttentionBlock<T>(reg, prefix + ".tsa", cfg.attention, true);
  tsa_ffn = FfnBlock<T>(reg, prefix + ".tsa_ffn", d, cfg.ffn_mult);
  if (mode == Ablation::no_cross_attn) return;
  tfca = AttentionBlock<T>(reg, prefix + ".tfca", cfg.attention, false);
  tfca_ffn = FfnBlock<T>(reg, prefix + ".tfca_ffn", d, cfg.ffn_mult);
  if (mode == Ablation::standard_cross_attn) return;
  ftca = AttentionBlock<T>(reg, prefix + ".ftca", cfg.attention, false);
  face_ffn = FfnBlock<T>(reg, prefix + ".face_ffn", d, cfg.ffn_mult);
}

template <typename T>
DecoderState<T> FaceXLayer<T>::task_self_attention(const DecoderState<T>& s, AttentionProbe<T>* probe) const {
  return {tsa(s.tasks, s.tasks, probe), s.face};
}

template <typename T>
DecoderState<T> FaceXLayer<T>::task_to_face(const DecoderState<T>& s, AttentionProbe<T>* probe) const {
  if (mode == Ablation::no_cross_attn) throw ConfigError("TFCA is disabled in no-cross-attn mode");
  return {tfca(s.tasks, s.face, probe), s.face};
}

template <typename T>
DecoderState<T> FaceXLayer<T>::face_to_task(const DecoderState<T>& s, AttentionProbe<T>* probe) const {
  if (mode != Ablation::bidirectional) throw ConfigError("FTCA is only present in bidirectional mode");
  return {s.tasks, ftca(s.face, s.tasks, probe)};
}

template <typename T>
DecoderState<T> FaceXLayer<T>::forward(const DecoderState<T>& in, DecoderProbe<T>* probe) const {
  AttentionProbe<T> p;
  AttentionProbe<T>* pp = probe ? &p : nullptr;
  auto record = [&](const char* name) {
    if (probe) probe->records.push_back({name, p.weights});
  };
  DecoderState<T> s = task_self_attention(in, pp);
  record("tsa");
  s.tasks = tsa_ffn(s.tasks);
  if (mode == Ablation::no_cross_attn) return s;
  s = task_to_face(s, pp);
  record("tfca");
  s.tasks = tfca_ffn(s.tasks);
  if (mode == Ablation::standard_cross_attn) return s;
  s = face_to_task(s, pp);
  record("ftca");
  s.face = face_ffn(s.face);
  return s;
}

template <typename T>
FaceXDecoder<T>::FaceXDecoder(ParamRegistry<T>& reg, const std::string& prefix, const DecoderConfig& config)
    : cfg(config) {
  cfg.validate();
  for (std::size_t i = 0; i < cfg.num_layers; ++i)
    layers.emplace_back(reg, prefix + ".layer" + std::to_string(i), cfg);
}

template <typename T>
DecoderState<T> FaceXDecoder<T>::operator()(const Tensor<T>& face, const Tensor<T>& token_table,
                                            DecoderProbe<T>* probe) const {
  const std::size_t d = cfg.attention.model_dim;
  if (face.dim() != 3 || face.shape()[2] != d || token_table.dim() != 2 || token_table.shape()[1] != d) {
    throw ShapeError("decoder expects face [B, L, " + std::to_string(d) + "] and tokens [K, " +
                     std::to_string(d) + "], got " + to_string(face.shape()) + " and " +
                     to_string(token_table.shape()));
  }
  const std::size_t b = face.shape()[0];
  DecoderState<T> s{broadcast_to(token_table, {b, token_table.shape()[0], d}), face};
  for (const auto& layer : layers) s = layer.forward(s, probe);
  return s;
}

#define FXF_INSTANTIATE_DECODER(T)   \
  template struct AttentionBlock<T>; \
  template struct FfnBlock<T>;       \
  template struct FaceXLayer<T>;     \
  template struct FaceXDecoder<T>;

FXF_INSTANTIATE_DECODER(float)
FXF_INSTANTIATE_DECODER(double)

}  // namespace fxf
