#include "fxf/profile.hpp"

#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <numeric>
#include <ostream>

#include "fxf/error.hpp"

namespace fxf {

std::string_view component_name(Component c) {
  switch (c) {
    case Component::backbone: return "backbone";
    case Component::decoder: return "decoder";
    case Component::heads: return "heads";
  }
  return "?";
}

std::uint64_t FlopsReport::component(Component c) const {
  std::uint64_t s = 0;
  for (const auto& op : ops)
    if (op.component == c) s += op.flops;
  return s;
}

std::uint64_t FlopsReport::total() const {
  std::uint64_t s = 0;
  for (const auto& op : ops) s += op.flops;
  return s;
}

std::uint64_t FlopsReport::matching(std::string_view prefix) const {
  std::uint64_t s = 0;
  for (const auto& op : ops)
    if (std::string_view(op.name).starts_with(prefix)) s += op.flops;
  return s;
}

std::map<std::string, std::uint64_t> FlopsReport::by_kind() const {
  std::map<std::string, std::uint64_t> m;
  for (const auto& op : ops) m[op.kind] += op.flops;
  return m;
}

namespace {

using u64 = std::uint64_t;

class Counter {
 public:
  Counter(FlopsReport& r, Component c) : report_(r), component_(c) {}

  void op(const std::string& name, const char* kind, u64 flops) {
    report_.ops.push_back({name, component_, kind, flops});
  }
  void linear(const std::string& name, u64 rows, u64 in, u64 out) { op(name, "linear", linear_flops(rows, in, out)); }
  void layer_norm(const std::string& name, u64 elems) { op(name, "layer_norm", flop_cost::kLayerNorm * elems); }
  void gelu(const std::string& name, u64 elems) { op(name, "gelu", flop_cost::kGelu * elems); }
  void add(const std::string& name, u64 elems) { op(name, "add", flop_cost::kAdd * elems); }
  void softmax(const std::string& name, u64 elems) { op(name, "softmax", flop_cost::kSoftmax * elems); }

  /// MultiHeadAttention: q_len queries over kv_len keys, per batch row.
  void attention(const std::string& p, u64 b, u64 q_len, u64 kv_len, const AttentionConfig& a) {
    const u64 d = a.model_dim;
    const u64 hd = a.head_dim();
    const u64 h = a.num_heads;
    linear(p + ".q_proj", b * q_len, d, d);
    linear(p + ".k_proj", b * kv_len, d, d);
    linear(p + ".v_proj", b * kv_len, d, d);
    op(p + ".qk", "matmul", b * h * matmul_flops(q_len, hd, kv_len));
    softmax(p + ".softmax", b * h * q_len * kv_len);
    op(p + ".av", "matmul", b * h * matmul_flops(q_len, kv_len, hd));
    linear(p + ".o_proj", b * q_len, d, d);
  }

  /// AttentionBlock: pre-norm residual attention.
  void attention_block(const std::string& p, u64 b, u64 q_len, u64 kv_len, const AttentionConfig& a, bool self) {
    const u64 d = a.model_dim;
    layer_norm(p + ".q_norm", b * q_len * d);
    if (!self) layer_norm(p + ".kv_norm", b * kv_len * d);
    attention(p + ".attn", b, q_len, kv_len, a);
    add(p + ".residual", b * q_len * d);
  }

  void ffn_block(const std::string& p, u64 rows, u64 d, u64 mult) {
    layer_norm(p + ".norm", rows * d);
    linear(p + ".ffn.fc1", rows, d, mult * d);
    gelu(p + ".ffn.gelu", rows * mult * d);
    linear(p + ".ffn.fc2", rows, mult * d, d);
    add(p + ".residual", rows * d);
  }

  void mlp(const std::string& p, u64 rows, u64 in, u64 hidden, u64 out) {
    linear(p + ".fc1", rows, in, hidden);
    gelu(p + ".gelu", rows * hidden);
    linear(p + ".fc2", rows, hidden, out);
  }

 private:
  FlopsReport& report_;
  Component component_;
};

}  // namespace

FlopsReport count_flops(const ModelConfig& cfg, const Geometry& g) {
  if (g.batch == 0 || g.height == 0 || g.width == 0 || g.height % 32 != 0 || g.width % 32 != 0) {
    throw ShapeError("FLOPs geometry must be a positive batch and a size divisible by 32, got batch " +
                     std::to_string(g.batch) + " " + std::to_string(g.height) + "x" + std::to_string(g.width));
  }
  cfg.validate();
  FlopsReport r;
  r.geometry = g;
  const u64 b = g.batch;
  const u64 d = cfg.decoder.attention.model_dim;
  const u64 gh = g.height / 4;
  const u64 gw = g.width / 4;
  const u64 l = gh * gw;

  {
    Counter c(r, Component::backbone);
    u64 in = 3, h = g.height, w = g.width;
    std::vector<u64> outs{cfg.encoder_channels[0]};
    outs.insert(outs.end(), cfg.encoder_channels.begin(), cfg.encoder_channels.end());
    std::vector<std::array<u64, 2>> grids;
    for (std::size_t i = 0; i < outs.size(); ++i) {
      h = (h + 1) / 2;
      w = (w + 1) / 2;
      const std::string p = "encoder.conv" + std::to_string(i);
      c.op(p, "conv2d", b * conv2d_flops(outs[i], in, 3, 3, h, w));
      c.add(p + ".bias", b * outs[i] * h * w);
      c.gelu(p + ".gelu", b * outs[i] * h * w);
      if (i >= 1) grids.push_back({h, w});
      in = outs[i];
    }
    for (std::size_t i = 0; i < kNumScales; ++i) {
      const std::string p = "fusion.proj" + std::to_string(i);
      c.linear(p, b * grids[i][0] * grids[i][1], cfg.encoder_channels[i], d);
      if (grids[i][0] != gh || grids[i][1] != gw) c.op(p + ".resize", "bilinear", flop_cost::kBilinear * b * d * l);
    }
    c.linear("fusion.fuse", b * l, kNumScales * d, d);
  }

  const TokenLayout layout(cfg.heads.seg_classes);
  const u64 k = layout.total();
  {
    Counter c(r, Component::decoder);
    const auto& a = cfg.decoder.attention;
    const u64 mult = cfg.decoder.ffn_mult;
    for (std::size_t i = 0; i < cfg.decoder.num_layers; ++i) {
      const std::string p = "decoder.layer" + std::to_string(i);
      c.attention_block(p + ".tsa", b, k, k, a, true);
      c.ffn_block(p + ".tsa_ffn", b * k, d, mult);
      if (cfg.decoder.mode == Ablation::no_cross_attn) continue;
      c.attention_block(p + ".tfca", b, k, l, a, false);
      c.ffn_block(p + ".tfca_ffn", b * k, d, mult);
      if (cfg.decoder.mode == Ablation::standard_cross_attn) continue;
      c.attention_block(p + ".ftca", b, l, k, a, false);
      c.ffn_block(p + ".face_ffn", b * l, d, mult);
    }
  }

  {
    Counter c(r, Component::heads);
    const HeadConfig& hc = cfg.heads;
    const u64 hid = hc.hidden;
    const bool refine = cfg.refine_active();
    for (Task t : kAllTasks) {
      const std::string p = "head." + std::string(task_name(t));
      const u64 n = layout.count(t);
      if (refine) c.attention_block(p + ".refine", b, n, l, cfg.decoder.attention, false);
      switch (t) {
        case Task::parsing:
          c.op(p + ".token_face", "matmul", b * matmul_flops(n, d, l));
          c.op(p + ".resize", "bilinear", flop_cost::kBilinear * b * n * g.height * g.width);
          break;
        case Task::landmarks: {
          const u64 cells = hc.heatmap_side * hc.heatmap_side;
          c.mlp(p, b * n, d, hid, cells);
          c.softmax(p + ".soft_argmax.softmax", b * n * cells);
          c.op(p + ".soft_argmax.expectation", "matmul", matmul_flops(b * n, cells, 2));
          break;
        }
        case Task::headpose: c.mlp(p, b * n, d, hid, 1); break;
        case Task::age:
          c.mlp(p, b, d, hid, hc.age_bins);
          c.softmax(p + ".expectation.softmax", b * hc.age_bins);
          c.op(p + ".expectation", "matmul", matmul_flops(b, hc.age_bins, 1));
          break;
        case Task::recognition:
          c.mlp(p, b, d, hid, hc.embed_dim);
          c.op(p + ".l2_normalize", "l2_normalize", flop_cost::kL2Norm * b * hc.embed_dim);
          break;
        default: c.mlp(p, b, d, hid, hc.classes(t)); break;
      }
    }
  }
  return r;
}

template <typename T>
ParamCounts count_params(const FaceXFormer<T>& model) {
  ParamCounts pc;
  for (const auto& e : model.params().entries()) {
    const std::string_view n = e.name;
    const std::size_t count = e.tensor.numel();
    if (n.starts_with("encoder.") || n.starts_with("fusion.")) {
      pc.backbone += count;
    } else if (n.starts_with("decoder.") || n == "tokens") {
      pc.decoder += count;
    } else {
      pc.heads += count;
    }
  }
  return pc;
}

LatencyStats summarize(std::vector<double> s) {
  if (s.empty()) throw DomainError("latency summary needs at least one sample");
  std::sort(s.begin(), s.end());
  const std::size_t n = s.size();
  const double median = 0.5 * (s[(n - 1) / 2] + s[n / 2]);
  const std::size_t rank = (9 * n + 9) / 10;  // ceil(0.9 n)
  return {median, s[std::max<std::size_t>(rank, 1) - 1]};
}

namespace {

std::string compiler_id() {
#if defined(__clang__)
  return "clang " __clang_version__;
#elif defined(__GNUC__)
  return "gcc " __VERSION__;
#else
  return "unknown";
#endif
}

template <typename T>
Tensor<T> bench_pixels(const Geometry& g) {
  Rng rng(0xbe7c);
  std::vector<T> v(g.batch * 3 * g.height * g.width);
  for (auto& x : v) x = static_cast<T>(rng.uniform(-1.0, 1.0));
  return Tensor<T>({g.batch, 3, g.height, g.width}, std::move(v));
}

}  // namespace

template <typename T>
LatencyReport bench_latency(const FaceXFormer<T>& model, const Geometry& g, const BenchOptions& opts) {
  if (opts.reps < 30 || opts.warmup < 5) {
    throw ConfigError("latency benchmark needs at least 30 repetitions and 5 warmups, got " +
                      std::to_string(opts.reps) + " and " + std::to_string(opts.warmup));
  }
  if (g.batch == 0 || g.height != model.config().height || g.width != model.config().width) {
    throw ShapeError("benchmark geometry " + std::to_string(g.height) + "x" + std::to_string(g.width) +
                     " does not match the model's " + std::to_string(model.config().height) + "x" +
                     std::to_string(model.config().width));
  }
  NoGradGuard no_grad;
  const Tensor<T> pixels = bench_pixels<T>(g);
  const TaskSelection sel = select_all(g.batch);
  using clock = std::chrono::steady_clock;
  auto ms = [](clock::time_point a, clock::time_point b) {
    return std::chrono::duration<double, std::milli>(b - a).count();
  };

  for (std::size_t i = 0; i < opts.warmup; ++i) (void)model.forward(pixels, sel);

  std::vector<double> e2e, parts[3];
  for (std::size_t i = 0; i < opts.reps; ++i) {
    auto t0 = clock::now();
    (void)model.forward(pixels, sel);
    auto t1 = clock::now();
    e2e.push_back(ms(t0, t1));

    t0 = clock::now();
    const Tensor<T> face = model.backbone(pixels);
    t1 = clock::now();
    const DecoderState<T> state = model.decode(face);
    const auto t2 = clock::now();
    (void)model.heads(state, sel);
    const auto t3 = clock::now();
    parts[0].push_back(ms(t0, t1));
    parts[1].push_back(ms(t1, t2));
    parts[2].push_back(ms(t2, t3));
  }

  LatencyReport r;
  r.geometry = g;
  for (std::size_t c = 0; c < 3; ++c) r.components[c] = summarize(parts[c]);
  r.end_to_end = summarize(e2e);
  r.fps = 1000.0 / r.end_to_end.median_ms;
  r.reps = opts.reps;
  r.warmup = opts.warmup;
  r.precision = sizeof(T) == 4 ? "f32" : "f64";
  r.workers = 1;
  r.compiler = compiler_id();
  return r;
}

namespace {

std::string printf_string(const char* fmt, auto... args) {
  char buf[256];
  std::snprintf(buf, sizeof(buf), fmt, args...);
  return buf;
}

}  // namespace

std::string format_flops(const FlopsReport& r) {
  std::string out;
  out += printf_string("FLOPs for batch %zu at %zux%zu\n", r.geometry.batch, r.geometry.height, r.geometry.width);
  out += printf_string("convention: multiply-add = 2; per element softmax %llu, layer norm %llu, gelu %llu, "
                       "bilinear %llu, l2 norm %llu, add %llu\n",
                       static_cast<unsigned long long>(flop_cost::kSoftmax),
                       static_cast<unsigned long long>(flop_cost::kLayerNorm),
                       static_cast<unsigned long long>(flop_cost::kGelu),
                       static_cast<unsigned long long>(flop_cost::kBilinear),
                       static_cast<unsigned long long>(flop_cost::kL2Norm),
                       static_cast<unsigned long long>(flop_cost::kAdd));
  const double total = static_cast<double>(r.total());
  for (Component c : kAllComponents) {
    const u64 f = r.component(c);
    out += printf_string("  %-10s %16llu  (%5.1f%%)\n", std::string(component_name(c)).c_str(),
                         static_cast<unsigned long long>(f), total > 0 ? 100.0 * static_cast<double>(f) / total : 0.0);
  }
  out += printf_string("  %-10s %16llu\n", "total", static_cast<unsigned long long>(r.total()));
  out += "by kind:\n";
  for (const auto& [kind, f] : r.by_kind())
    out += printf_string("  %-12s %16llu\n", kind.c_str(), static_cast<unsigned long long>(f));
  return out;
}

std::string format_latency(const LatencyReport& r) {
  std::string out;
  out += printf_string("latency for batch %zu at %zux%zu, %s, %zu reps after %zu warmups, %zu worker\n",
                       r.geometry.batch, r.geometry.height, r.geometry.width, r.precision.c_str(), r.reps, r.warmup,
                       r.workers);
  for (Component c : kAllComponents) {
    const auto& s = r.components[static_cast<std::size_t>(c)];
    out += printf_string("  %-10s median %9.3f ms  p90 %9.3f ms\n", std::string(component_name(c)).c_str(),
                         s.median_ms, s.p90_ms);
  }
  out += printf_string("  %-10s median %9.3f ms  p90 %9.3f ms\n", "total", r.end_to_end.median_ms,
                       r.end_to_end.p90_ms);
  out += printf_string("  fps %.2f\n", r.fps);
  return out;
}

void write_flops_records(std::ostream& out, const FlopsReport& r) {
  using nlohmann::json;
  out << json{{"record", "flops_convention"},
              {"multiply_add", 2},
              {"softmax", flop_cost::kSoftmax},
              {"layer_norm", flop_cost::kLayerNorm},
              {"gelu", flop_cost::kGelu},
              {"bilinear", flop_cost::kBilinear},
              {"l2_normalize", flop_cost::kL2Norm},
              {"add", flop_cost::kAdd}}
             .dump()
      << '\n';
  for (const auto& op : r.ops) {
    out << json{{"record", "flops_op"},
                {"name", op.name},
                {"component", component_name(op.component)},
                {"kind", op.kind},
                {"flops", op.flops}}
               .dump()
        << '\n';
  }
  for (Component c : kAllComponents) {
    out << json{{"record", "flops_component"}, {"component", component_name(c)}, {"flops", r.component(c)}}.dump()
        << '\n';
  }
  out << json{{"record", "flops_total"},
              {"batch", r.geometry.batch},
              {"height", r.geometry.height},
              {"width", r.geometry.width},
              {"flops", r.total()}}
             .dump()
      << '\n';
}

void write_latency_records(std::ostream& out, const LatencyReport& r) {
  using nlohmann::json;
  for (Component c : kAllComponents) {
    const auto& s = r.components[static_cast<std::size_t>(c)];
    out << json{{"record", "latency"}, {"component", component_name(c)}, {"median_ms", s.median_ms}, {"p90_ms", s.p90_ms}}
               .dump()
        << '\n';
  }
  out << json{{"record", "latency"},
              {"component", "total"},
              {"median_ms", r.end_to_end.median_ms},
              {"p90_ms", r.end_to_end.p90_ms}}
             .dump()
      << '\n';
  out << json{{"record", "latency_meta"},
              {"batch", r.geometry.batch},
              {"height", r.geometry.height},
              {"width", r.geometry.width},
              {"reps", r.reps},
              {"warmup", r.warmup},
              {"precision", r.precision},
              {"workers", r.workers},
              {"compiler", r.compiler},
              {"fps", r.fps}}
             .dump()
      << '\n';
}

template ParamCounts count_params<float>(const FaceXFormer<float>&);
template ParamCounts count_params<double>(const FaceXFormer<double>&);
template LatencyReport bench_latency<float>(const FaceXFormer<float>&, const Geometry&, const BenchOptions&);
template LatencyReport bench_latency<double>(const FaceXFormer<double>&, const Geometry&, const BenchOptions&);

}  // namespace fxf
