#include <omp.h>

#include <vector>

#include "cwt/kernels.hpp"
#include "kernels_rows.hpp"

namespace cwt::kernels::parallel {

namespace {
// Below this many multiply-adds the fork/join overhead dominates.
constexpr std::size_t kMinParallelWork = 1 << 15;
}

void gemm(bool trans_a, bool trans_b, GemmDims dims, std::span<const double> a,
          std::span<const double> b, std::span<double> c, bool accumulate) {
  const bool wide = dims.m * dims.n * dims.k >= kMinParallelWork;
  const int threads = wide ? max_threads() : 1;
  const double* bp = b.data();
  std::vector<double> bt;
  if (trans_b) {
    bt.resize(dims.k * dims.n);
    const long n_rows = static_cast<long>(dims.n);
#pragma omp parallel for schedule(static) num_threads(threads)
    for (long r = 0; r < n_rows; ++r) {
      rows::transpose_row(b.data(), bt.data(), dims.n, dims.k, static_cast<std::size_t>(r));
    }
    bp = bt.data();
  }
  const long blocks = static_cast<long>(rows::row_blocks(dims));
#pragma omp parallel for schedule(static) num_threads(threads)
  for (long blk = 0; blk < blocks; ++blk) {
    rows::gemm_block(trans_a, dims, a.data(), bp, c.data(), accumulate, static_cast<std::size_t>(blk));
  }
}

void im2col(const ConvGeom& g, std::span<const double> image, std::span<double> cols) {
  const long n = static_cast<long>(g.col_rows());
#pragma omp parallel for schedule(static) num_threads(max_threads())
  for (long r = 0; r < n; ++r) rows::im2col_row(g, image.data(), cols.data(), static_cast<std::size_t>(r));
}

void col2im(const ConvGeom& g, std::span<const double> cols, std::span<double> image) {
  const long n = static_cast<long>(g.channels);
#pragma omp parallel for schedule(static) num_threads(max_threads())
  for (long c = 0; c < n; ++c) rows::col2im_channel(g, cols.data(), image.data(), static_cast<std::size_t>(c));
}

}  // namespace cwt::kernels::parallel
