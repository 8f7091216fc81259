#pragma once

// Dense inner loops shared by the op implementations. Eigen runs single
// threaded here, so results depend only on the inputs.

#include <Eigen/Core>

#include <cstddef>

namespace fxf::kernels {

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// C[m, n] += A[m, k] * B[k, n]
template <typename T>
void gemm_nn(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
  using Map = Eigen::Map<RowMatrix<T>>;
  using ConstMap = Eigen::Map<const RowMatrix<T>>;
  const auto rows = static_cast<Eigen::Index>(m), inner = static_cast<Eigen::Index>(k),
             cols = static_cast<Eigen::Index>(n);
  Map(c, rows, cols).noalias() += ConstMap(a, rows, inner) * ConstMap(b, inner, cols);
}

/// C[k, n] += A[m, k]^T * B[m, n]
template <typename T>
void gemm_tn(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
  using Map = Eigen::Map<RowMatrix<T>>;
  using ConstMap = Eigen::Map<const RowMatrix<T>>;
  const auto rows = static_cast<Eigen::Index>(m), inner = static_cast<Eigen::Index>(k),
             cols = static_cast<Eigen::Index>(n);
  Map(c, inner, cols).noalias() += ConstMap(a, rows, inner).transpose() * ConstMap(b, rows, cols);
}

/// dst[cols, rows] = src[rows, cols]^T
template <typename T>
void transpose(const T* src, T* dst, std::size_t rows, std::size_t cols) {
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) dst[c * rows + r] = src[r * cols + c];
}

struct ConvGeometry {
  std::size_t cin, h, w, kh, kw, stride, pad, out_h, out_w;
};

/// cols[cin*kh*kw, out_h*out_w] from one [cin, h, w] image.
template <typename T>
void im2col(const T* img, const ConvGeometry& g, T* cols) {
  std::size_t plane = g.out_h * g.out_w;
  for (std::size_t c = 0; c < g.cin; ++c) {
    for (std::size_t ky = 0; ky < g.kh; ++ky) {
      for (std::size_t kx = 0; kx < g.kw; ++kx) {
        T* row = cols + ((c * g.kh + ky) * g.kw + kx) * plane;
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          long iy = static_cast<long>(oy * g.stride + ky) - static_cast<long>(g.pad);
          for (std::size_t ox = 0; ox < g.out_w; ++ox) {
            long ix = static_cast<long>(ox * g.stride + kx) - static_cast<long>(g.pad);
            bool inside = iy >= 0 && ix >= 0 && iy < static_cast<long>(g.h) && ix < static_cast<long>(g.w);
            row[oy * g.out_w + ox] =
                inside ? img[(c * g.h + static_cast<std::size_t>(iy)) * g.w + static_cast<std::size_t>(ix)] : T(0);
          }
        }
      }
    }
  }
}

/// Scatter-add of im2col columns back into a [cin, h, w] image gradient.
template <typename T>
void col2im(const T* cols, const ConvGeometry& g, T* img) {
  std::size_t plane = g.out_h * g.out_w;
  for (std::size_t c = 0; c < g.cin; ++c) {
    for (std::size_t ky = 0; ky < g.kh; ++ky) {
      for (std::size_t kx = 0; kx < g.kw; ++kx) {
        const T* row = cols + ((c * g.kh + ky) * g.kw + kx) * plane;
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          long iy = static_cast<long>(oy * g.stride + ky) - static_cast<long>(g.pad);
          if (iy < 0 || iy >= static_cast<long>(g.h)) continue;
          for (std::size_t ox = 0; ox < g.out_w; ++ox) {
            long ix = static_cast<long>(ox * g.stride + kx) - static_cast<long>(g.pad);
            if (ix < 0 || ix >= static_cast<long>(g.w)) continue;
            img[(c * g.h + static_cast<std::size_t>(iy)) * g.w + static_cast<std::size_t>(ix)] +=
                row[oy * g.out_w + ox];
          }
        }
      }
    }
  }
}

}  // namespace fxf::kernels
