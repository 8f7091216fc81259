#include "fxf/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include "fxf/error.hpp"
#include "kernels.hpp"

namespace fxf {

namespace {

std::size_t normalize_axis(int axis, std::size_t rank, const Shape& shape) {
  int r = static_cast<int>(rank);
  int a = axis < 0 ? axis + r : axis;
  if (a < 0 || a >= r) {
    throw ShapeError("invalid axis " + std::to_string(axis) + " for shape " + to_string(shape));
  }
  return static_cast<std::size_t>(a);
}

// outer x len x inner decomposition around one axis.
struct AxisSplit {
  std::size_t outer = 1, len = 1, inner = 1;
};

AxisSplit split_at(const Shape& shape, std::size_t axis) {
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.len = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

Shape drop_axis(const Shape& shape, std::size_t axis) {
  Shape out;
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i != axis) out.push_back(shape[i]);
  }
  if (out.empty()) out.push_back(1);
  return out;
}

// For every flat index of `out_shape`, the flat index of the broadcast source
// with shape `in_shape` (trailing-aligned).
std::vector<std::size_t> broadcast_map(const Shape& out_shape, const Shape& in_shape) {
  std::size_t rank = out_shape.size();
  std::size_t offset = rank - in_shape.size();
  std::vector<std::size_t> in_strides(rank, 0);
  std::size_t stride = 1;
  for (std::size_t i = in_shape.size(); i-- > 0;) {
    if (in_shape[i] != 1) in_strides[offset + i] = stride;
    stride *= in_shape[i];
  }
  std::size_t n = numel(out_shape);
  std::vector<std::size_t> map(n);
  std::vector<std::size_t> idx(rank, 0);
  std::size_t src = 0;
  for (std::size_t flat = 0; flat < n; ++flat) {
    map[flat] = src;
    for (std::size_t d = rank; d-- > 0;) {
      ++idx[d];
      src += in_strides[d];
      if (idx[d] < out_shape[d]) break;
      src -= in_strides[d] * idx[d];
      idx[d] = 0;
    }
  }
  return map;
}

// True when `small` equals the trailing dims of `big`, so the source index is
// flat % numel(small).
bool is_suffix(const Shape& big, const Shape& small) {
  if (small.size() > big.size()) return false;
  std::size_t off = big.size() - small.size();
  for (std::size_t i = 0; i < small.size(); ++i) {
    if (small[i] != big[off + i]) return false;
  }
  return true;
}

struct BroadcastPlan {
  Shape out;
  std::vector<std::size_t> map_a, map_b;  // empty when the operand is a suffix
  std::size_t na, nb;

  std::size_t a(std::size_t i) const { return map_a.empty() ? i % na : map_a[i]; }
  std::size_t b(std::size_t i) const { return map_b.empty() ? i % nb : map_b[i]; }
};

BroadcastPlan plan_broadcast(const Shape& sa, const Shape& sb) {
  BroadcastPlan p;
  p.out = broadcast_shapes(sa, sb);
  p.na = numel(sa);
  p.nb = numel(sb);
  if (!is_suffix(p.out, sa)) p.map_a = broadcast_map(p.out, sa);
  if (!is_suffix(p.out, sb)) p.map_b = broadcast_map(p.out, sb);
  return p;
}

template <typename T, typename F, typename DA, typename DB>
Tensor<T> binary_op(const char* name, const Tensor<T>& a, const Tensor<T>& b, F f, DA da, DB db) {
  auto plan = std::make_shared<BroadcastPlan>(plan_broadcast(a.shape(), b.shape()));
  std::size_t n = numel(plan->out);
  std::vector<T> out(n);
  auto ad = a.data();
  auto bd = b.data();
  if (a.shape() == b.shape()) {
    for (std::size_t i = 0; i < n; ++i) out[i] = f(ad[i], bd[i]);
  } else {
    for (std::size_t i = 0; i < n; ++i) out[i] = f(ad[plan->a(i)], bd[plan->b(i)]);
  }
  Tensor<T> result(plan->out, std::move(out));
  auto an = a.node();
  auto bn = b.node();
  return detail::record_op<T>(name, {a, b}, result, [an, bn, plan, da, db](std::span<const T> g) {
    const auto& av = an->data;
    const auto& bv = bn->data;
    if (an->requires_grad) {
      auto ga = detail::grad_buffer(*an);
      for (std::size_t i = 0; i < g.size(); ++i) {
        std::size_t ia = plan->a(i), ib = plan->b(i);
        ga[ia] += da(g[i], av[ia], bv[ib]);
      }
    }
    if (bn->requires_grad) {
      auto gb = detail::grad_buffer(*bn);
      for (std::size_t i = 0; i < g.size(); ++i) {
        std::size_t ia = plan->a(i), ib = plan->b(i);
        gb[ib] += db(g[i], av[ia], bv[ib]);
      }
    }
  });
}

// y = f(x) with dy/dx expressed through (x, y).
template <typename T, typename F, typename D>
Tensor<T> unary_op(const char* name, const Tensor<T>& x, F f, D dfdx) {
  auto xd = x.data();
  std::vector<T> out(xd.size());
  for (std::size_t i = 0; i < xd.size(); ++i) out[i] = f(xd[i]);
  Tensor<T> result(x.shape(), std::move(out));
  auto xn = x.node();
  auto yn = result.node();
  std::weak_ptr<TensorNode<T>> yw = yn;
  return detail::record_op<T>(name, {x}, result, [xn, yw, dfdx](std::span<const T> g) {
    auto y = yw.lock();
    auto gx = detail::grad_buffer(*xn);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * dfdx(xn->data[i], y->data[i]);
  });
}

}  // namespace

Shape broadcast_shapes(const Shape& a, const Shape& b) {
  std::size_t rank = std::max(a.size(), b.size());
  Shape out(rank);
  for (std::size_t i = 0; i < rank; ++i) {
    std::size_t da = i < rank - a.size() ? 1 : a[i - (rank - a.size())];
    std::size_t db = i < rank - b.size() ? 1 : b[i - (rank - b.size())];
    if (da != db && da != 1 && db != 1) {
      throw ShapeError("cannot broadcast shapes " + to_string(a) + " and " + to_string(b));
    }
    out[i] = std::max(da, db);
  }
  return out;
}

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.dim() < 2 || b.dim() < 2 || a.shape()[a.dim() - 1] != b.shape()[b.dim() - 2]) {
    throw ShapeError("matmul shape mismatch: " + to_string(a.shape()) + " x " + to_string(b.shape()));
  }
  std::size_t m = a.shape()[a.dim() - 2];
  std::size_t k = a.shape()[a.dim() - 1];
  std::size_t n = b.shape()[b.dim() - 1];
  Shape a_batch(a.shape().begin(), a.shape().end() - 2);
  Shape b_batch(b.shape().begin(), b.shape().end() - 2);
  Shape batch;
  try {
    batch = broadcast_shapes(a_batch.empty() ? Shape{1} : a_batch, b_batch.empty() ? Shape{1} : b_batch);
  } catch (const ShapeError&) {
    throw ShapeError("matmul batch mismatch: " + to_string(a.shape()) + " x " + to_string(b.shape()));
  }
  std::size_t nbatch = numel(batch);
  auto amap = std::make_shared<std::vector<std::size_t>>(
      broadcast_map(batch, a_batch.empty() ? Shape{1} : a_batch));
  auto bmap = std::make_shared<std::vector<std::size_t>>(
      broadcast_map(batch, b_batch.empty() ? Shape{1} : b_batch));

  Shape out_shape = (a_batch.empty() && b_batch.empty()) ? Shape{} : batch;
  out_shape.push_back(m);
  out_shape.push_back(n);
  std::vector<T> out(nbatch * m * n, T(0));
  auto ad = a.data();
  auto bd = b.data();
  for (std::size_t i = 0; i < nbatch; ++i) {
    kernels::gemm_nn(ad.data() + (*amap)[i] * m * k, bd.data() + (*bmap)[i] * k * n,
                     out.data() + i * m * n, m, k, n);
  }
  Tensor<T> result(out_shape, std::move(out));
  auto an = a.node();
  auto bn = b.node();
  return detail::record_op<T>("matmul", {a, b}, result,
                              [an, bn, amap, bmap, m, k, n](std::span<const T> g) {
    std::size_t nb = amap->size();
    if (an->requires_grad) {
      auto ga = detail::grad_buffer(*an);
      std::vector<T> bt(k * n);
      for (std::size_t i = 0; i < nb; ++i) {
        kernels::transpose(bn->data.data() + (*bmap)[i] * k * n, bt.data(), k, n);
        kernels::gemm_nn(g.data() + i * m * n, bt.data(), ga.data() + (*amap)[i] * m * k, m, n, k);
      }
    }
    if (bn->requires_grad) {
      auto gb = detail::grad_buffer(*bn);
      for (std::size_t i = 0; i < nb; ++i) {
        kernels::gemm_tn(an->data.data() + (*amap)[i] * m * k, g.data() + i * m * n,
                         gb.data() + (*bmap)[i] * k * n, m, k, n);
      }
    }
  });
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return binary_op<T>(
      "add", a, b, [](T x, T y) { return x + y; }, [](T g, T, T) { return g; },
      [](T g, T, T) { return g; });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return binary_op<T>(
      "sub", a, b, [](T x, T y) { return x - y; }, [](T g, T, T) { return g; },
      [](T g, T, T) { return -g; });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  return binary_op<T>(
      "mul", a, b, [](T x, T y) { return x * y; }, [](T g, T, T y) { return g * y; },
      [](T g, T x, T) { return g * x; });
}

template <typename T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) {
  return binary_op<T>(
      "div", a, b, [](T x, T y) { return x / y; }, [](T g, T, T y) { return g / y; },
      [](T g, T x, T y) { return -g * x / (y * y); });
}

template <typename T>
Tensor<T> neg(const Tensor<T>& x) {
  return unary_op<T>("neg", x, [](T v) { return -v; }, [](T, T) { return T(-1); });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T factor) {
  return unary_op<T>(
      "scale", x, [factor](T v) { return v * factor; }, [factor](T, T) { return factor; });
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& x, T value) {
  return unary_op<T>(
      "add_scalar", x, [value](T v) { return v + value; }, [](T, T) { return T(1); });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  return unary_op<T>(
      "relu", x, [](T v) { return v > T(0) ? v : T(0); },
      [](T v, T) { return v > T(0) ? T(1) : T(0); });
}

template <typename T>
Tensor<T> gelu(const Tensor<T>& x) {
  constexpr T inv_sqrt2 = T(0.70710678118654752440);
  constexpr T inv_sqrt_2pi = T(0.39894228040143267794);
  return unary_op<T>(
      "gelu", x, [](T v) { return T(0.5) * v * (T(1) + std::erf(v * inv_sqrt2)); },
      [](T v, T) {
        return T(0.5) * (T(1) + std::erf(v * inv_sqrt2)) + v * inv_sqrt_2pi * std::exp(T(-0.5) * v * v);
      });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  return unary_op<T>(
      "sigmoid", x,
      [](T v) {
        if (v >= T(0)) return T(1) / (T(1) + std::exp(-v));
        T e = std::exp(v);
        return e / (T(1) + e);
      },
      [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
Tensor<T> exp(const Tensor<T>& x) {
  return unary_op<T>("exp", x, [](T v) { return std::exp(v); }, [](T, T y) { return y; });
}

template <typename T>
Tensor<T> log(const Tensor<T>& x) {
  for (T v : x.data()) {
    if (!(v > T(0))) throw DomainError("log of non-positive value " + std::to_string(v));
  }
  return unary_op<T>("log", x, [](T v) { return std::log(v); }, [](T v, T) { return T(1) / v; });
}

template <typename T>
Tensor<T> sqrt(const Tensor<T>& x) {
  for (T v : x.data()) {
    if (v < T(0)) throw DomainError("sqrt of negative value " + std::to_string(v));
  }
  return unary_op<T>(
      "sqrt", x, [](T v) { return std::sqrt(v); }, [](T, T y) { return T(0.5) / y; });
}

template <typename T>
Tensor<T> abs(const Tensor<T>& x) {
  return unary_op<T>(
      "abs", x, [](T v) { return std::abs(v); },
      [](T v, T) { return v > T(0) ? T(1) : (v < T(0) ? T(-1) : T(0)); });
}

template <typename T>
Tensor<T> square(const Tensor<T>& x) {
  return unary_op<T>("square", x, [](T v) { return v * v; }, [](T v, T) { return T(2) * v; });
}

template <typename T>
Tensor<T> softmax(const Tensor<T>& x, int axis) {
  std::size_t ax = normalize_axis(axis, x.dim(), x.shape());
  AxisSplit s = split_at(x.shape(), ax);
  auto xd = x.data();
  std::vector<T> out(xd.size());
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t in = 0; in < s.inner; ++in) {
      std::size_t base = o * s.len * s.inner + in;
      T mx = xd[base];
      for (std::size_t l = 1; l < s.len; ++l) mx = std::max(mx, xd[base + l * s.inner]);
      T total = T(0);
      for (std::size_t l = 0; l < s.len; ++l) {
        T e = std::exp(xd[base + l * s.inner] - mx);
        out[base + l * s.inner] = e;
        total += e;
      }
      for (std::size_t l = 0; l < s.len; ++l) out[base + l * s.inner] /= total;
    }
  }
  Tensor<T> result(x.shape(), std::move(out));
  auto xn = x.node();
  std::weak_ptr<TensorNode<T>> yw = result.node();
  return detail::record_op<T>("softmax", {x}, result, [xn, yw, s](std::span<const T> g) {
    auto y = yw.lock();
    auto gx = detail::grad_buffer(*xn);
    const auto& yd = y->data;
    for (std::size_t o = 0; o < s.outer; ++o) {
      for (std::size_t in = 0; in < s.inner; ++in) {
        std::size_t base = o * s.len * s.inner + in;
        T dot = T(0);
        for (std::size_t l = 0; l < s.len; ++l) dot += g[base + l * s.inner] * yd[base + l * s.inner];
        for (std::size_t l = 0; l < s.len; ++l) {
          std::size_t i = base + l * s.inner;
          gx[i] += yd[i] * (g[i] - dot);
        }
      }
    }
  });
}

template <typename T>
Tensor<T> log_softmax(const Tensor<T>& x, int axis) {
  std::size_t ax = normalize_axis(axis, x.dim(), x.shape());
  AxisSplit s = split_at(x.shape(), ax);
  auto xd = x.data();
  std::vector<T> out(xd.size());
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t in = 0; in < s.inner; ++in) {
      std::size_t base = o * s.len * s.inner + in;
      T mx = xd[base];
      for (std::size_t l = 1; l < s.len; ++l) mx = std::max(mx, xd[base + l * s.inner]);
      T total = T(0);
      for (std::size_t l = 0; l < s.len; ++l) total += std::exp(xd[base + l * s.inner] - mx);
      T lse = mx + std::log(total);
      for (std::size_t l = 0; l < s.len; ++l) out[base + l * s.inner] = xd[base + l * s.inner] - lse;
    }
  }
  Tensor<T> result(x.shape(), std::move(out));
  auto xn = x.node();
  std::weak_ptr<TensorNode<T>> yw = result.node();
  return detail::record_op<T>("log_softmax", {x}, result, [xn, yw, s](std::span<const T> g) {
    auto y = yw.lock();
    auto gx = detail::grad_buffer(*xn);
    const auto& yd = y->data;
    for (std::size_t o = 0; o < s.outer; ++o) {
      for (std::size_t in = 0; in < s.inner; ++in) {
        std::size_t base = o * s.len * s.inner + in;
        T gsum = T(0);
        for (std::size_t l = 0; l < s.len; ++l) gsum += g[base + l * s.inner];
        for (std::size_t l = 0; l < s.len; ++l) {
          std::size_t i = base + l * s.inner;
          gx[i] += g[i] - std::exp(yd[i]) * gsum;
        }
      }
    }
  });
}

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps) {
  if (x.dim() < 1) throw ShapeError("layer_norm on empty shape");
  std::size_t d = x.shape().back();
  if (gamma.numel() != d || beta.numel() != d) {
    throw ShapeError("layer_norm: gamma/beta " + to_string(gamma.shape()) + "/" +
                     to_string(beta.shape()) + " do not match last axis of " + to_string(x.shape()));
  }
  if (!(eps > T(0))) throw DomainError("layer_norm: eps must be positive");
  std::size_t rows = x.numel() / d;
  auto xd = x.data();
  auto gd = gamma.data();
  auto bd = beta.data();
  auto xhat = std::make_shared<std::vector<T>>(x.numel());
  auto rstd = std::make_shared<std::vector<T>>(rows);
  std::vector<T> out(x.numel());
  for (std::size_t r = 0; r < rows; ++r) {
    const T* row = xd.data() + r * d;
    T mu = T(0);
    for (std::size_t j = 0; j < d; ++j) mu += row[j];
    mu /= T(d);
    T var = T(0);
    for (std::size_t j = 0; j < d; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= T(d);
    T rs = T(1) / std::sqrt(var + eps);
    (*rstd)[r] = rs;
    for (std::size_t j = 0; j < d; ++j) {
      T h = (row[j] - mu) * rs;
      (*xhat)[r * d + j] = h;
      out[r * d + j] = h * gd[j] + bd[j];
    }
  }
  Tensor<T> result(x.shape(), std::move(out));
  auto xn = x.node();
  auto gn = gamma.node();
  auto bn = beta.node();
  return detail::record_op<T>("layer_norm", {x, gamma, beta}, result,
                              [xn, gn, bn, xhat, rstd, rows, d](std::span<const T> g) {
    if (gn->requires_grad) {
      auto gg = detail::grad_buffer(*gn);
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < d; ++j) gg[j] += g[r * d + j] * (*xhat)[r * d + j];
    }
    if (bn->requires_grad) {
      auto gb = detail::grad_buffer(*bn);
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < d; ++j) gb[j] += g[r * d + j];
    }
    if (xn->requires_grad) {
      auto gx = detail::grad_buffer(*xn);
      const auto& gam = gn->data;
      for (std::size_t r = 0; r < rows; ++r) {
        T mean_g = T(0), mean_gx = T(0);
        for (std::size_t j = 0; j < d; ++j) {
          T gh = g[r * d + j] * gam[j];
          mean_g += gh;
          mean_gx += gh * (*xhat)[r * d + j];
        }
        mean_g /= T(d);
        mean_gx /= T(d);
        for (std::size_t j = 0; j < d; ++j) {
          T gh = g[r * d + j] * gam[j];
          gx[r * d + j] += (*rstd)[r] * (gh - mean_g - (*xhat)[r * d + j] * mean_gx);
        }
      }
    }
  });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x, std::optional<int> axis) {
  auto xd = x.data();
  if (!axis) {
    T total = T(0);
    for (T v : xd) total += v;
    auto xn = x.node();
    return detail::record_op<T>("sum", {x}, Tensor<T>::scalar(total), [xn](std::span<const T> g) {
      auto gx = detail::grad_buffer(*xn);
      for (auto& v : gx) v += g[0];
    });
  }
  std::size_t ax = normalize_axis(*axis, x.dim(), x.shape());
  AxisSplit s = split_at(x.shape(), ax);
  std::vector<T> out(s.outer * s.inner, T(0));
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t l = 0; l < s.len; ++l)
      for (std::size_t in = 0; in < s.inner; ++in)
        out[o * s.inner + in] += xd[(o * s.len + l) * s.inner + in];
  auto xn = x.node();
  return detail::record_op<T>("sum", {x}, Tensor<T>(drop_axis(x.shape(), ax), std::move(out)),
                              [xn, s](std::span<const T> g) {
    auto gx = detail::grad_buffer(*xn);
    for (std::size_t o = 0; o < s.outer; ++o)
      for (std::size_t l = 0; l < s.len; ++l)
        for (std::size_t in = 0; in < s.inner; ++in)
          gx[(o * s.len + l) * s.inner + in] += g[o * s.inner + in];
  });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x, std::optional<int> axis) {
  std::size_t n = axis ? x.size(*axis) : x.numel();
  return scale(sum(x, axis), T(1) / T(n));
}

template <typename T>
Tensor<T> max(const Tensor<T>& x, std::optional<int> axis) {
  auto xd = x.data();
  Shape out_shape{1};
  AxisSplit s{1, x.numel(), 1};
  if (axis) {
    std::size_t ax = normalize_axis(*axis, x.dim(), x.shape());
    s = split_at(x.shape(), ax);
    out_shape = drop_axis(x.shape(), ax);
  }
  auto arg = std::make_shared<std::vector<std::size_t>>(s.outer * s.inner);
  std::vector<T> out(s.outer * s.inner);
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t in = 0; in < s.inner; ++in) {
      std::size_t best = o * s.len * s.inner + in;
      for (std::size_t l = 1; l < s.len; ++l) {
        std::size_t i = (o * s.len + l) * s.inner + in;
        if (xd[i] > xd[best]) best = i;
      }
      (*arg)[o * s.inner + in] = best;
      out[o * s.inner + in] = xd[best];
    }
  }
  auto xn = x.node();
  return detail::record_op<T>("max", {x}, Tensor<T>(out_shape, std::move(out)),
                              [xn, arg](std::span<const T> g) {
    auto gx = detail::grad_buffer(*xn);
    for (std::size_t i = 0; i < arg->size(); ++i) gx[(*arg)[i]] += g[i];
  });
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  if (numel(shape) != x.numel()) {
    throw ShapeError("cannot reshape " + to_string(x.shape()) + " to " + to_string(shape));
  }
  auto xd = x.data();
  Tensor<T> result(std::move(shape), std::vector<T>(xd.begin(), xd.end()));
  auto xn = x.node();
  return detail::record_op<T>("reshape", {x}, result, [xn](std::span<const T> g) {
    auto gx = detail::grad_buffer(*xn);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
  });
}

template <typename T>
Tensor<T> permute(const Tensor<T>& x, const std::vector<std::size_t>& axes) {
  std::size_t rank = x.dim();
  if (axes.size() != rank) throw ShapeError("permute: wrong number of axes for " + to_string(x.shape()));
  std::vector<bool> seen(rank, false);
  for (std::size_t a : axes) {
    if (a >= rank || seen[a]) throw ShapeError("permute: invalid axis order");
    seen[a] = true;
  }
  const Shape& in = x.shape();
  Shape out_shape(rank);
  std::vector<std::size_t> in_strides(rank);
  std::size_t stride = 1;
  for (std::size_t d = rank; d-- > 0;) {
    in_strides[d] = stride;
    stride *= in[d];
  }
  std::vector<std::size_t> src_strides(rank);
  for (std::size_t d = 0; d < rank; ++d) {
    out_shape[d] = in[axes[d]];
    src_strides[d] = in_strides[axes[d]];
  }
  std::size_t n = x.numel();
  auto map = std::make_shared<std::vector<std::size_t>>(n);
  std::vector<std::size_t> idx(rank, 0);
  std::size_t src = 0;
  for (std::size_t flat = 0; flat < n; ++flat) {
    (*map)[flat] = src;
    for (std::size_t d = rank; d-- > 0;) {
      ++idx[d];
      src += src_strides[d];
      if (idx[d] < out_shape[d]) break;
      src -= src_strides[d] * idx[d];
      idx[d] = 0;
    }
  }
  auto xd = x.data();
  std::vector<T> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = xd[(*map)[i]];
  auto xn = x.node();
  return detail::record_op<T>("permute", {x}, Tensor<T>(out_shape, std::move(out)),
                              [xn, map](std::span<const T> g) {
    auto gx = detail::grad_buffer(*xn);
    for (std::size_t i = 0; i < g.size(); ++i) gx[(*map)[i]] += g[i];
  });
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& x, int axis_a, int axis_b) {
  std::size_t a = normalize_axis(axis_a, x.dim(), x.shape());
  std::size_t b = normalize_axis(axis_b, x.dim(), x.shape());
  std::vector<std::size_t> axes(x.dim());
  std::iota(axes.begin(), axes.end(), std::size_t{0});
  std::swap(axes[a], axes[b]);
  return permute(x, axes);
}

template <typename T>
Tensor<T> slice(const Tensor<T>& x, int axis, std::size_t start, std::size_t length) {
  std::size_t ax = normalize_axis(axis, x.dim(), x.shape());
  AxisSplit s = split_at(x.shape(), ax);
  if (length == 0 || start + length > s.len) {
    throw ShapeError("slice [" + std::to_string(start) + ", " + std::to_string(start + length) +
                     ") out of range for axis of size " + std::to_string(s.len));
  }
  Shape out_shape = x.shape();
  out_shape[ax] = length;
  auto xd = x.data();
  std::vector<T> out(s.outer * length * s.inner);
  for (std::size_t o = 0; o < s.outer; ++o) {
    std::copy_n(xd.data() + (o * s.len + start) * s.inner, length * s.inner,
                out.data() + o * length * s.inner);
  }
  auto xn = x.node();
  return detail::record_op<T>("slice", {x}, Tensor<T>(out_shape, std::move(out)),
                              [xn, s, start, length](std::span<const T> g) {
    auto gx = detail::grad_buffer(*xn);
    for (std::size_t o = 0; o < s.outer; ++o) {
      T* dst = gx.data() + (o * s.len + start) * s.inner;
      const T* src = g.data() + o * length * s.inner;
      for (std::size_t i = 0; i < length * s.inner; ++i) dst[i] += src[i];
    }
  });
}

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, int axis) {
  if (parts.empty()) throw ShapeError("concat of zero tensors");
  const Shape& first = parts[0].shape();
  std::size_t ax = normalize_axis(axis, first.size(), first);
  Shape out_shape = first;
  out_shape[ax] = 0;
  for (const auto& p : parts) {
    if (p.dim() != first.size()) throw ShapeError("concat: rank mismatch");
    for (std::size_t d = 0; d < first.size(); ++d) {
      if (d != ax && p.shape()[d] != first[d]) {
        throw ShapeError("concat: shapes " + to_string(first) + " and " + to_string(p.shape()) +
                         " differ off the concat axis");
      }
    }
    out_shape[ax] += p.shape()[ax];
  }
  AxisSplit so = split_at(out_shape, ax);
  std::vector<T> out(numel(out_shape));
  auto offsets = std::make_shared<std::vector<std::size_t>>();
  std::size_t off = 0;
  for (const auto& p : parts) {
    offsets->push_back(off);
    std::size_t len = p.shape()[ax];
    auto pd = p.data();
    for (std::size_t o = 0; o < so.outer; ++o) {
      std::copy_n(pd.data() + o * len * so.inner, len * so.inner,
                  out.data() + (o * so.len + off) * so.inner);
    }
    off += len;
  }
  std::vector<std::shared_ptr<TensorNode<T>>> nodes;
  for (const auto& p : parts) nodes.push_back(p.node());
  return detail::record_op<T>("concat", parts, Tensor<T>(out_shape, std::move(out)),
                              [nodes, offsets, so, ax](std::span<const T> g) {
    for (std::size_t k = 0; k < nodes.size(); ++k) {
      auto& node = *nodes[k];
      if (!node.requires_grad) continue;
      auto gp = detail::grad_buffer(node);
      std::size_t len = node.shape[ax];
      for (std::size_t o = 0; o < so.outer; ++o) {
        const T* src = g.data() + (o * so.len + (*offsets)[k]) * so.inner;
        T* dst = gp.data() + o * len * so.inner;
        for (std::size_t i = 0; i < len * so.inner; ++i) dst[i] += src[i];
      }
    }
  });
}

template <typename T>
Tensor<T> index_select(const Tensor<T>& x, const std::vector<std::size_t>& indices) {
  if (indices.empty()) throw ShapeError("index_select with no indices");
  std::size_t rows = x.shape()[0];
  std::size_t row = x.numel() / rows;
  for (std::size_t i : indices) {
    if (i >= rows) throw ShapeError("index_select: index " + std::to_string(i) + " out of range");
  }
  Shape out_shape = x.shape();
  out_shape[0] = indices.size();
  auto xd = x.data();
  std::vector<T> out(indices.size() * row);
  for (std::size_t k = 0; k < indices.size(); ++k) {
    std::copy_n(xd.data() + indices[k] * row, row, out.data() + k * row);
  }
  auto xn = x.node();
  auto idx = std::make_shared<std::vector<std::size_t>>(indices);
  return detail::record_op<T>("index_select", {x}, Tensor<T>(out_shape, std::move(out)),
                              [xn, idx, row](std::span<const T> g) {
    auto gx = detail::grad_buffer(*xn);
    for (std::size_t k = 0; k < idx->size(); ++k) {
      T* dst = gx.data() + (*idx)[k] * row;
      const T* src = g.data() + k * row;
      for (std::size_t j = 0; j < row; ++j) dst[j] += src[j];
    }
  });
}

template <typename T>
Tensor<T> broadcast_to(const Tensor<T>& x, const Shape& shape) {
  if (broadcast_shapes(x.shape(), shape) != shape) {
    throw ShapeError("cannot broadcast " + to_string(x.shape()) + " to " + to_string(shape));
  }
  auto map = std::make_shared<std::vector<std::size_t>>(broadcast_map(shape, x.shape()));
  auto xd = x.data();
  std::vector<T> out(map->size());
  for (std::size_t i = 0; i < map->size(); ++i) out[i] = xd[(*map)[i]];
  auto xn = x.node();
  return detail::record_op<T>("broadcast_to", {x}, Tensor<T>(shape, std::move(out)),
                              [xn, map](std::span<const T> g) {
    auto gx = detail::grad_buffer(*xn);
    for (std::size_t i = 0; i < g.size(); ++i) gx[(*map)[i]] += g[i];
  });
}

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, std::size_t stride, std::size_t padding) {
  if (x.dim() != 4 || w.dim() != 4 || x.shape()[1] != w.shape()[1]) {
    throw ShapeError("conv2d shape mismatch: input " + to_string(x.shape()) + ", weight " +
                     to_string(w.shape()));
  }
  if (stride == 0) throw ShapeError("conv2d: stride must be >= 1");
  kernels::ConvGeometry geo{x.shape()[1], x.shape()[2], x.shape()[3], w.shape()[2], w.shape()[3],
                            stride, padding, 0, 0};
  if (geo.kh > geo.h + 2 * padding || geo.kw > geo.w + 2 * padding) {
    throw ShapeError("conv2d: kernel " + to_string(w.shape()) + " larger than padded input " +
                     to_string(x.shape()));
  }
  geo.out_h = (geo.h + 2 * padding - geo.kh) / stride + 1;
  geo.out_w = (geo.w + 2 * padding - geo.kw) / stride + 1;
  std::size_t batch = x.shape()[0];
  std::size_t cout = w.shape()[0];
  std::size_t patch = geo.cin * geo.kh * geo.kw;
  std::size_t plane = geo.out_h * geo.out_w;
  std::size_t in_plane = geo.cin * geo.h * geo.w;

  std::vector<T> cols(patch * plane);
  std::vector<T> out(batch * cout * plane, T(0));
  auto xd = x.data();
  auto wd = w.data();
  for (std::size_t b = 0; b < batch; ++b) {
    kernels::im2col(xd.data() + b * in_plane, geo, cols.data());
    kernels::gemm_nn(wd.data(), cols.data(), out.data() + b * cout * plane, cout, patch, plane);
  }
  auto xn = x.node();
  auto wn = w.node();
  return detail::record_op<T>(
      "conv2d", {x, w}, Tensor<T>({batch, cout, geo.out_h, geo.out_w}, std::move(out)),
      [xn, wn, geo, batch, cout, patch, plane, in_plane](std::span<const T> g) {
        std::vector<T> cols(patch * plane);
        std::vector<T> wt;
        if (xn->requires_grad) {
          wt.resize(patch * cout);
          kernels::transpose(wn->data.data(), wt.data(), cout, patch);
        }
        for (std::size_t b = 0; b < batch; ++b) {
          const T* gb = g.data() + b * cout * plane;
          if (wn->requires_grad) {
            auto gw = detail::grad_buffer(*wn);
            kernels::im2col(xn->data.data() + b * in_plane, geo, cols.data());
            // dW[cout, patch] += G[cout, plane] * cols^T
            std::vector<T> colst(plane * patch);
            kernels::transpose(cols.data(), colst.data(), patch, plane);
            kernels::gemm_nn(gb, colst.data(), gw.data(), cout, plane, patch);
          }
          if (xn->requires_grad) {
            auto gx = detail::grad_buffer(*xn);
            std::fill(cols.begin(), cols.end(), T(0));
            kernels::gemm_nn(wt.data(), gb, cols.data(), patch, cout, plane);
            kernels::col2im(cols.data(), geo, gx.data() + b * in_plane);
          }
        }
      });
}

template <typename T>
Tensor<T> bilinear_resize(const Tensor<T>& x, std::size_t out_h, std::size_t out_w) {
  if (x.dim() != 4) throw ShapeError("bilinear_resize expects [B, C, H, W], got " + to_string(x.shape()));
  if (out_h == 0 || out_w == 0) throw ShapeError("bilinear_resize: output size must be >= 1");
  std::size_t planes = x.shape()[0] * x.shape()[1];
  std::size_t in_h = x.shape()[2];
  std::size_t in_w = x.shape()[3];
  Shape out_shape{x.shape()[0], x.shape()[1], out_h, out_w};
  if (in_h == out_h && in_w == out_w) {
    auto xd = x.data();
    auto xn = x.node();
    return detail::record_op<T>("bilinear_resize", {x},
                                Tensor<T>(out_shape, std::vector<T>(xd.begin(), xd.end())),
                                [xn](std::span<const T> g) {
      auto gx = detail::grad_buffer(*xn);
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    });
  }
  struct Tap {
    std::size_t i0, i1;
    T w1;
  };
  auto taps = [](std::size_t in, std::size_t out) {
    std::vector<Tap> t(out);
    double ratio = static_cast<double>(in) / static_cast<double>(out);
    for (std::size_t o = 0; o < out; ++o) {
      double src = std::max(0.0, ratio * (static_cast<double>(o) + 0.5) - 0.5);
      std::size_t i0 = std::min(static_cast<std::size_t>(src), in - 1);
      std::size_t i1 = std::min(i0 + 1, in - 1);
      t[o] = Tap{i0, i1, static_cast<T>(src - static_cast<double>(i0))};
    }
    return t;
  };
  auto ty = std::make_shared<std::vector<Tap>>(taps(in_h, out_h));
  auto tx = std::make_shared<std::vector<Tap>>(taps(in_w, out_w));
  auto xd = x.data();
  std::vector<T> out(planes * out_h * out_w);
  for (std::size_t p = 0; p < planes; ++p) {
    const T* src = xd.data() + p * in_h * in_w;
    T* dst = out.data() + p * out_h * out_w;
    for (std::size_t oy = 0; oy < out_h; ++oy) {
      const Tap& a = (*ty)[oy];
      for (std::size_t ox = 0; ox < out_w; ++ox) {
        const Tap& b = (*tx)[ox];
        T top = src[a.i0 * in_w + b.i0] * (T(1) - b.w1) + src[a.i0 * in_w + b.i1] * b.w1;
        T bot = src[a.i1 * in_w + b.i0] * (T(1) - b.w1) + src[a.i1 * in_w + b.i1] * b.w1;
        dst[oy * out_w + ox] = top * (T(1) - a.w1) + bot * a.w1;
      }
    }
  }
  auto xn = x.node();
  return detail::record_op<T>("bilinear_resize", {x}, Tensor<T>(out_shape, std::move(out)),
                              [xn, ty, tx, planes, in_h, in_w, out_h, out_w](std::span<const T> g) {
    auto gx = detail::grad_buffer(*xn);
    for (std::size_t p = 0; p < planes; ++p) {
      T* dst = gx.data() + p * in_h * in_w;
      const T* src = g.data() + p * out_h * out_w;
      for (std::size_t oy = 0; oy < out_h; ++oy) {
        const Tap& a = (*ty)[oy];
        for (std::size_t ox = 0; ox < out_w; ++ox) {
          const Tap& b = (*tx)[ox];
          T v = src[oy * out_w + ox];
          dst[a.i0 * in_w + b.i0] += v * (T(1) - a.w1) * (T(1) - b.w1);
          dst[a.i0 * in_w + b.i1] += v * (T(1) - a.w1) * b.w1;
          dst[a.i1 * in_w + b.i0] += v * a.w1 * (T(1) - b.w1);
          dst[a.i1 * in_w + b.i1] += v * a.w1 * b.w1;
        }
      }
    }
  });
}

#define FXF_INSTANTIATE_OPS(T)                                                                     \
  template Tensor<T> matmul<T>(const Tensor<T>&, const Tensor<T>&);                                \
  template Tensor<T> add<T>(const Tensor<T>&, const Tensor<T>&);                                   \
  template Tensor<T> sub<T>(const Tensor<T>&, const Tensor<T>&);                                   \
  template Tensor<T> mul<T>(const Tensor<T>&, const Tensor<T>&);                                   \
  template Tensor<T> div<T>(const Tensor<T>&, const Tensor<T>&);                                   \
  template Tensor<T> neg<T>(const Tensor<T>&);                                                     \
  template Tensor<T> scale<T>(const Tensor<T>&, T);                                                \
  template Tensor<T> add_scalar<T>(const Tensor<T>&, T);                                           \
  template Tensor<T> relu<T>(const Tensor<T>&);                                                    \
  template Tensor<T> gelu<T>(const Tensor<T>&);                                                    \
  template Tensor<T> sigmoid<T>(const Tensor<T>&);                                                 \
  template Tensor<T> exp<T>(const Tensor<T>&);                                                     \
  template Tensor<T> log<T>(const Tensor<T>&);                                                     \
  template Tensor<T> sqrt<T>(const Tensor<T>&);                                                    \
  template Tensor<T> abs<T>(const Tensor<T>&);                                                     \
  template Tensor<T> square<T>(const Tensor<T>&);                                                  \
  template Tensor<T> softmax<T>(const Tensor<T>&, int);                                            \
  template Tensor<T> log_softmax<T>(const Tensor<T>&, int);                                        \
  template Tensor<T> layer_norm<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, T);       \
  template Tensor<T> sum<T>(const Tensor<T>&, std::optional<int>);                                 \
  template Tensor<T> mean<T>(const Tensor<T>&, std::optional<int>);                                \
  template Tensor<T> max<T>(const Tensor<T>&, std::optional<int>);                                 \
  template Tensor<T> reshape<T>(const Tensor<T>&, Shape);                                          \
  template Tensor<T> permute<T>(const Tensor<T>&, const std::vector<std::size_t>&);                \
  template Tensor<T> transpose<T>(const Tensor<T>&, int, int);                                     \
  template Tensor<T> slice<T>(const Tensor<T>&, int, std::size_t, std::size_t);                    \
  template Tensor<T> concat<T>(const std::vector<Tensor<T>>&, int);                                \
  template Tensor<T> index_select<T>(const Tensor<T>&, const std::vector<std::size_t>&);           \
  template Tensor<T> broadcast_to<T>(const Tensor<T>&, const Shape&);                              \
  template Tensor<T> conv2d<T>(const Tensor<T>&, const Tensor<T>&, std::size_t, std::size_t);      \
  template Tensor<T> bilinear_resize<T>(const Tensor<T>&, std::size_t, std::size_t);

FXF_INSTANTIATE_OPS(float)
FXF_INSTANTIATE_OPS(double)

}  // namespace fxf
