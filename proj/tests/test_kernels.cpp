#include <doctest.h>

#include <vector>

#include "cwt/kernels.hpp"
#include "cwt/rng.hpp"

using namespace cwt;
namespace k = cwt::kernels;

namespace {

std::vector<double> random_values(std::size_t n, std::uint64_t seed) {
  CounterRng rng(seed);
  std::vector<double> v(n);
  for (double& x : v) x = rng.normal();
  return v;
}

}  // namespace

TEST_CASE("gemm: serial matches a naive triple loop, parallel matches serial exactly") {
  for (bool ta : {false, true}) {
    for (bool tb : {false, true}) {
      const k::GemmDims d{7, 300, 13};
      const auto a = random_values(d.m * d.k, 1), b = random_values(d.k * d.n, 2);
      std::vector<double> naive(d.m * d.n, 0.0);
      for (std::size_t i = 0; i < d.m; ++i) {
        for (std::size_t j = 0; j < d.n; ++j) {
          for (std::size_t p = 0; p < d.k; ++p) {
            const double av = ta ? a[p * d.m + i] : a[i * d.k + p];
            const double bv = tb ? b[j * d.k + p] : b[p * d.n + j];
            naive[i * d.n + j] += av * bv;
          }
        }
      }
      std::vector<double> s(d.m * d.n, 1.0), p(d.m * d.n, 1.0);
      k::serial::gemm(ta, tb, d, a, b, s, false);
      k::parallel::gemm(ta, tb, d, a, b, p, false);
      for (std::size_t i = 0; i < s.size(); ++i) {
        CHECK(s[i] == doctest::Approx(naive[i]).epsilon(1e-12));
        CHECK(s[i] == p[i]);
      }
    }
  }
}

TEST_CASE("im2col and col2im agree between serial and parallel") {
  const k::ConvGeom g{3, 6, 5, 3};
  const auto image = random_values(g.channels * g.pixels(), 3);
  std::vector<double> cs(g.col_rows() * g.pixels()), cp(cs.size());
  k::serial::im2col(g, image, cs);
  k::parallel::im2col(g, image, cp);
  CHECK(cs == cp);
  std::vector<double> is(image.size(), 0.0), ip(image.size(), 0.0);
  k::serial::col2im(g, cs, is);
  k::parallel::col2im(g, cs, ip);
  CHECK(is == ip);
  // Interior pixel is covered by all 9 taps.
  CHECK(is[1 * g.width + 1] == doctest::Approx(9.0 * image[1 * g.width + 1]));
}
