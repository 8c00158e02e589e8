#pragma once

#include <cstddef>
#include <span>

// Dense compute kernels. Each kernel has a serial reference implementation and
// an OpenMP implementation. The parallel versions only partition independent
// output rows, so both produce bit-identical results.
namespace cwt::kernels {

enum class Exec { serial, parallel };

void set_exec(Exec mode);
Exec exec();
// Worker cap: CWT_THREADS when set, otherwise the OpenMP default.
int max_threads();

struct GemmDims {
  std::size_t m;
  std::size_t n;
  std::size_t k;
};

// Spatial geometry of a same-padded, stride-1 convolution.
struct ConvGeom {
  std::size_t channels;
  std::size_t height;
  std::size_t width;
  std::size_t kernel;  // odd

  std::size_t pad() const { return kernel / 2; }
  std::size_t col_rows() const { return channels * kernel * kernel; }
  std::size_t pixels() const { return height * width; }
};

// c (m x n) = op(a) * op(b), or += when accumulate is set.
// op(a) is m x k: a is stored m x k, or k x m when trans_a.
// op(b) is k x n: b is stored k x n, or n x k when trans_b.
void gemm(bool trans_a, bool trans_b, GemmDims dims, std::span<const double> a,
          std::span<const double> b, std::span<double> c, bool accumulate);
void im2col(const ConvGeom& g, std::span<const double> image, std::span<double> cols);
// Scatter-adds columns back into image (image must be pre-zeroed by caller).
void col2im(const ConvGeom& g, std::span<const double> cols, std::span<double> image);

namespace serial {
void gemm(bool trans_a, bool trans_b, GemmDims dims, std::span<const double> a,
          std::span<const double> b, std::span<double> c, bool accumulate);
void im2col(const ConvGeom& g, std::span<const double> image, std::span<double> cols);
void col2im(const ConvGeom& g, std::span<const double> cols, std::span<double> image);
}  // namespace serial

namespace parallel {
void gemm(bool trans_a, bool trans_b, GemmDims dims, std::span<const double> a,
          std::span<const double> b, std::span<double> c, bool accumulate);
void im2col(const ConvGeom& g, std::span<const double> image, std::span<double> cols);
void col2im(const ConvGeom& g, std::span<const double> cols, std::span<double> image);
}  // namespace parallel

}  // namespace cwt::kernels
