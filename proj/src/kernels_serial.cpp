#include <vector>

#include "cwt/kernels.hpp"
#include "kernels_rows.hpp"

namespace cwt::kernels::serial {

void gemm(bool trans_a, bool trans_b, GemmDims dims, std::span<const double> a,
          std::span<const double> b, std::span<double> c, bool accumulate) {
  const double* bp = b.data();
  std::vector<double> bt;
  if (trans_b) {
    bt.resize(dims.k * dims.n);
    for (std::size_t r = 0; r < dims.n; ++r) rows::transpose_row(b.data(), bt.data(), dims.n, dims.k, r);
    bp = bt.data();
  }
  for (std::size_t blk = 0; blk < rows::row_blocks(dims); ++blk) {
    rows::gemm_block(trans_a, dims, a.data(), bp, c.data(), accumulate, blk);
  }
}

void im2col(const ConvGeom& g, std::span<const double> image, std::span<double> cols) {
  for (std::size_t r = 0; r < g.col_rows(); ++r) rows::im2col_row(g, image.data(), cols.data(), r);
}

void col2im(const ConvGeom& g, std::span<const double> cols, std::span<double> image) {
  for (std::size_t c = 0; c < g.channels; ++c) rows::col2im_channel(g, cols.data(), image.data(), c);
}

}  // namespace cwt::kernels::serial
