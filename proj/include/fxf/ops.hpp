#pragma once

#include <cstddef>
#include <optional>
#include <vector>

#include "fxf/tensor.hpp"

// Differentiable tensor operations. Binary elementwise ops broadcast with
// trailing-dimension alignment; negative axes count from the back.
namespace fxf {

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> neg(const Tensor<T>& x);
template <typename T>
Tensor<T> scale(const Tensor<T>& x, T factor);
template <typename T>
Tensor<T> add_scalar(const Tensor<T>& x, T value);

template <typename T>
Tensor<T> relu(const Tensor<T>& x);
/// Exact (erf-based) GELU.
template <typename T>
Tensor<T> gelu(const Tensor<T>& x);
template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x);
template <typename T>
Tensor<T> exp(const Tensor<T>& x);
/// Natural log; throws DomainError on non-positive input.
template <typename T>
Tensor<T> log(const Tensor<T>& x);
template <typename T>
Tensor<T> sqrt(const Tensor<T>& x);
/// Subgradient 0 at the origin.
template <typename T>
Tensor<T> abs(const Tensor<T>& x);
template <typename T>
Tensor<T> square(const Tensor<T>& x);

template <typename T>
Tensor<T> softmax(const Tensor<T>& x, int axis);
template <typename T>
Tensor<T> log_softmax(const Tensor<T>& x, int axis);

/// Normalizes over the last axis: (x - mean) / sqrt(var + eps) * gamma + beta.
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps);

/// Reductions drop the reduced axis; without an axis the result has shape {1}.
template <typename T>
Tensor<T> sum(const Tensor<T>& x, std::optional<int> axis = std::nullopt);
template <typename T>
Tensor<T> mean(const Tensor<T>& x, std::optional<int> axis = std::nullopt);
/// Backward routes the gradient to the first maximal element.
template <typename T>
Tensor<T> max(const Tensor<T>& x, std::optional<int> axis = std::nullopt);

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape);
template <typename T>
Tensor<T> permute(const Tensor<T>& x, const std::vector<std::size_t>& axes);
template <typename T>
Tensor<T> transpose(const Tensor<T>& x, int axis_a, int axis_b);
template <typename T>
Tensor<T> slice(const Tensor<T>& x, int axis, std::size_t start, std::size_t length);
template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, int axis);
/// Gathers entries along the leading axis.
template <typename T>
Tensor<T> index_select(const Tensor<T>& x, const std::vector<std::size_t>& indices);
template <typename T>
Tensor<T> broadcast_to(const Tensor<T>& x, const Shape& shape);

/// Cross-correlation of x [B, Cin, H, W] with w [Cout, Cin, kh, kw].
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, std::size_t stride, std::size_t padding);

/// Bilinear resize of [B, C, H, W] with align_corners = false.
template <typename T>
Tensor<T> bilinear_resize(const Tensor<T>& x, std::size_t out_h, std::size_t out_w);

/// Shape produced by trailing-aligned broadcasting; throws ShapeError.
Shape broadcast_shapes(const Shape& a, const Shape& b);

}  // namespace fxf
