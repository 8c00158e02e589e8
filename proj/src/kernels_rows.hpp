#pragma once

// Per-row kernel bodies shared by the serial and OpenMP drivers so both
// perform the identical sequence of floating-point operations.

#include <cstddef>

#include "cwt/kernels.hpp"

namespace cwt::kernels::rows {

inline constexpr std::size_t kRowBlock = 4;
inline constexpr std::size_t kColTile = 256;

inline std::size_t row_blocks(const GemmDims& d) { return (d.m + kRowBlock - 1) / kRowBlock; }

// Rows [kRowBlock * blk, ...) of c = op(a) * b with b stored k x n. Every
// output element is summed over p in ascending order, so the blocking does not
// change the result.
inline void gemm_block(bool trans_a, const GemmDims& d, const double* a, const double* b, double* c,
                       bool accumulate, std::size_t blk) {
  const std::size_t i0 = blk * kRowBlock;
  const std::size_t rows = i0 + kRowBlock <= d.m ? kRowBlock : d.m - i0;
  if (!accumulate) {
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t j = 0; j < d.n; ++j) c[(i0 + r) * d.n + j] = 0.0;
    }
  }
  const auto a_at = [&](std::size_t i, std::size_t p) { return trans_a ? a[p * d.m + i] : a[i * d.k + p]; };
  for (std::size_t j0 = 0; j0 < d.n; j0 += kColTile) {
    const std::size_t j1 = j0 + kColTile < d.n ? j0 + kColTile : d.n;
    if (rows == kRowBlock) {
      double* c0 = c + i0 * d.n;
      double* c1 = c0 + d.n;
      double* c2 = c1 + d.n;
      double* c3 = c2 + d.n;
      for (std::size_t p = 0; p < d.k; ++p) {
        const double a0 = a_at(i0, p), a1 = a_at(i0 + 1, p), a2 = a_at(i0 + 2, p), a3 = a_at(i0 + 3, p);
        const double* brow = b + p * d.n;
#pragma omp simd
        for (std::size_t j = j0; j < j1; ++j) {
          const double bj = brow[j];
          c0[j] += a0 * bj;
          c1[j] += a1 * bj;
          c2[j] += a2 * bj;
          c3[j] += a3 * bj;
        }
      }
    } else {
      for (std::size_t r = 0; r < rows; ++r) {
        double* crow = c + (i0 + r) * d.n;
        for (std::size_t p = 0; p < d.k; ++p) {
          const double aip = a_at(i0 + r, p);
          const double* brow = b + p * d.n;
#pragma omp simd
          for (std::size_t j = j0; j < j1; ++j) crow[j] += aip * brow[j];
        }
      }
    }
  }
}

// Copies row r of src (rows x cols) into column r of dst (cols x rows).
inline void transpose_row(const double* src, double* dst, std::size_t rows, std::size_t cols,
                          std::size_t r) {
  for (std::size_t j = 0; j < cols; ++j) dst[j * rows + r] = src[r * cols + j];
}

// Row (c, ky, kx) of the column matrix.
inline void im2col_row(const ConvGeom& g, const double* image, double* cols, std::size_t row) {
  const std::size_t k = g.kernel;
  const std::size_t c = row / (k * k);
  const std::size_t ky = (row / k) % k;
  const std::size_t kx = row % k;
  const long pad = static_cast<long>(g.pad());
  const long h = static_cast<long>(g.height);
  const long w = static_cast<long>(g.width);
  double* out = cols + row * g.pixels();
  const double* plane = image + c * g.pixels();
  for (long y = 0; y < h; ++y) {
    const long sy = y + static_cast<long>(ky) - pad;
    for (long x = 0; x < w; ++x) {
      const long sx = x + static_cast<long>(kx) - pad;
      const bool inside = sy >= 0 && sy < h && sx >= 0 && sx < w;
      out[y * w + x] = inside ? plane[sy * w + sx] : 0.0;
    }
  }
}

// Accumulates every column row of channel c back into image plane c.
inline void col2im_channel(const ConvGeom& g, const double* cols, double* image, std::size_t c) {
  const std::size_t k = g.kernel;
  const long pad = static_cast<long>(g.pad());
  const long h = static_cast<long>(g.height);
  const long w = static_cast<long>(g.width);
  double* plane = image + c * g.pixels();
  for (std::size_t ky = 0; ky < k; ++ky) {
    for (std::size_t kx = 0; kx < k; ++kx) {
      const double* in = cols + ((c * k + ky) * k + kx) * g.pixels();
      for (long y = 0; y < h; ++y) {
        const long sy = y + static_cast<long>(ky) - pad;
        if (sy < 0 || sy >= h) continue;
        for (long x = 0; x < w; ++x) {
          const long sx = x + static_cast<long>(kx) - pad;
          if (sx < 0 || sx >= w) continue;
          plane[sy * w + sx] += in[y * w + x];
        }
      }
    }
  }
}

}  // namespace cwt::kernels::rows
