#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "fxf/model.hpp"

namespace fxf {

/// FLOP convention. A multiply-add counts as 2. Element-wise costs:
namespace flop_cost {
inline constexpr std::uint64_t kSoftmax = 5;    // scale, max-subtract, exp, sum, divide
inline constexpr std::uint64_t kLayerNorm = 5;  // mean, centre, square-sum, normalize, affine
inline constexpr std::uint64_t kGelu = 8;
inline constexpr std::uint64_t kBilinear = 7;   // per output element: 4 multiplies, 3 adds
inline constexpr std::uint64_t kL2Norm = 3;     // square, accumulate, divide
inline constexpr std::uint64_t kAdd = 1;        // residual and bias adds
}  // namespace flop_cost

/// [m, k] x [k, n]
constexpr std::uint64_t matmul_flops(std::uint64_t m, std::uint64_t k, std::uint64_t n) { return 2 * m * k * n; }

/// `rows` vectors through an in -> out layer, bias included.
constexpr std::uint64_t linear_flops(std::uint64_t rows, std::uint64_t in, std::uint64_t out) {
  return matmul_flops(rows, in, out) + rows * out;
}

/// Multiply-adds of one convolution, bias excluded.
constexpr std::uint64_t conv2d_flops(std::uint64_t c_out, std::uint64_t c_in, std::uint64_t kh, std::uint64_t kw,
                                     std::uint64_t h_out, std::uint64_t w_out) {
  return 2 * c_out * c_in * kh * kw * h_out * w_out;
}

enum class Component { backbone, decoder, heads };
inline constexpr std::array<Component, 3> kAllComponents{Component::backbone, Component::decoder, Component::heads};
std::string_view component_name(Component c);

struct Geometry {
  std::size_t batch = 1;
  std::size_t height = 64;
  std::size_t width = 64;
};

struct OpCount {
  std::string name;  // e.g. decoder.layer0.tfca.attn.qk
  Component component;
  std::string kind;  // linear, matmul, softmax, conv2d, ...
  std::uint64_t flops = 0;
};

struct FlopsReport {
  Geometry geometry;
  std::vector<OpCount> ops;  // execution order

  std::uint64_t component(Component c) const;
  std::uint64_t total() const;
  /// Sum over ops whose name starts with `prefix`.
  std::uint64_t matching(std::string_view prefix) const;
  std::map<std::string, std::uint64_t> by_kind() const;
};

/// Analytic FLOPs of one inference forward pass with every task head active.
/// The SO(3) projection's 3x3 SVD is not counted. Throws ShapeError when the
/// geometry is not a multiple of 32.
FlopsReport count_flops(const ModelConfig& cfg, const Geometry& geometry);

struct ParamCounts {
  std::size_t backbone = 0;
  std::size_t decoder = 0;  // decoder layers and the task-token table
  std::size_t heads = 0;    // unified head and the margin-softmax class weights
  std::size_t total() const { return backbone + decoder + heads; }
};

template <typename T>
ParamCounts count_params(const FaceXFormer<T>& model);

struct LatencyStats {
  double median_ms = 0.0;
  double p90_ms = 0.0;
};

/// Median (mean of the middle pair for even counts) and nearest-rank p90.
/// Throws DomainError on an empty sample.
LatencyStats summarize(std::vector<double> samples_ms);

struct BenchOptions {
  std::size_t reps = 30;
  std::size_t warmup = 5;
};

struct LatencyReport {
  Geometry geometry;
  std::array<LatencyStats, 3> components;  // by Component
  LatencyStats end_to_end;
  double fps = 0.0;  // 1000 / end_to_end.median_ms, batches per second
  std::size_t reps = 0;
  std::size_t warmup = 0;
  std::string precision;
  std::size_t workers = 1;
  std::string compiler;
};

/// Each repetition times an uninstrumented forward pass, then the backbone,
/// decoder and heads separately. Gradients are not recorded. Throws
/// ConfigError for reps < 30 or warmup < 5 and ShapeError when the geometry
/// differs from the model's image size.
template <typename T>
LatencyReport bench_latency(const FaceXFormer<T>& model, const Geometry& geometry, const BenchOptions& opts);

std::string format_flops(const FlopsReport& report);
std::string format_latency(const LatencyReport& report);

/// One JSON object per line; see the README for the record schema.
void write_flops_records(std::ostream& out, const FlopsReport& report);
void write_latency_records(std::ostream& out, const LatencyReport& report);

}  // namespace fxf
