#include "cwt/kernels.hpp"

#include <omp.h>

#include <atomic>
#include <cstdlib>
#include <string>

namespace cwt::kernels {

namespace {

std::atomic<Exec> g_exec{Exec::parallel};

int threads_from_env() {
  if (const char* env = std::getenv("CWT_THREADS")) {
    try {
      const int n = std::stoi(env);
      if (n > 0) return n;
    } catch (const std::exception&) {
    }
  }
  return omp_get_max_threads();
}

}  // namespace

void set_exec(Exec mode) { g_exec.store(mode); }

Exec exec() { return g_exec.load(); }

int max_threads() {
  static const int cap = threads_from_env();
  // Nested regions (parallel evaluation episodes) run their kernels serially.
  return omp_in_parallel() ? 1 : cap;
}

void gemm(bool trans_a, bool trans_b, GemmDims dims, std::span<const double> a,
          std::span<const double> b, std::span<double> c, bool accumulate) {
  if (exec() == Exec::parallel && max_threads() > 1) {
    parallel::gemm(trans_a, trans_b, dims, a, b, c, accumulate);
  } else {
    serial::gemm(trans_a, trans_b, dims, a, b, c, accumulate);
  }
}

void im2col(const ConvGeom& g, std::span<const double> image, std::span<double> cols) {
  if (exec() == Exec::parallel && max_threads() > 1) {
    parallel::im2col(g, image, cols);
  } else {
    serial::im2col(g, image, cols);
  }
}

void col2im(const ConvGeom& g, std::span<const double> cols, std::span<double> image) {
  if (exec() == Exec::parallel && max_threads() > 1) {
    parallel::col2im(g, cols, image);
  } else {
    serial::col2im(g, cols, image);
  }
}

}  // namespace cwt::kernels
