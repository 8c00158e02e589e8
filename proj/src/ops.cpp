#include "cwt/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "cwt/kernels.hpp"

namespace cwt {

namespace {

using detail::Node;
using NodePtr = std::shared_ptr<Node>;

Tensor make_op(Shape shape, std::vector<double> data, std::vector<Tensor> inputs, const char* name,
               std::function<void(Node&)> backward_fn) {
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  node->op = name;
  node->is_leaf = false;
  bool needs = false;
  if (grad_enabled()) {
    for (const Tensor& t : inputs) needs = needs || t.requires_grad();
  }
  if (needs) {
    node->requires_grad = true;
    node->parents.reserve(inputs.size());
    for (const Tensor& t : inputs) node->parents.push_back(t.node());
    node->backward_fn = std::move(backward_fn);
  }
  return Tensor::from_node(std::move(node));
}

bool wants(const Node& self, std::size_t parent) { return self.parents[parent]->requires_grad; }

void require_matrix(const Tensor& t, const char* op) {
  if (t.rank() != 2) throw ShapeError(std::string(op) + ": expected a matrix, got " + shape_str(t.shape()));
}

void require_same(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_matrix(a, "matmul");
  require_matrix(b, "matmul");
  const std::size_t m = a.dim(0), k = a.dim(1), p = b.dim(1);
  if (b.dim(0) != k) {
    throw ShapeError("matmul: inner dimensions disagree for " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
  std::vector<double> out(m * p);
  kernels::gemm(false, false, {m, p, k}, a.data(), b.data(), out, false);
  return make_op({m, p}, std::move(out), {a, b}, "matmul", [m, k, p](Node& self) {
    const Node& pa = *self.parents[0];
    const Node& pb = *self.parents[1];
    if (wants(self, 0)) {
      std::vector<double> da(m * k);
      kernels::gemm(false, true, {m, k, p}, self.grad, pb.data, da, false);
      self.parents[0]->accumulate(da);
    }
    if (wants(self, 1)) {
      std::vector<double> db(k * p);
      kernels::gemm(true, false, {k, p, m}, pa.data, self.grad, db, false);
      self.parents[1]->accumulate(db);
    }
  });
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  require_matrix(a, "matmul_nt");
  require_matrix(b, "matmul_nt");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(0);
  if (b.dim(1) != k) {
    throw ShapeError("matmul_nt: inner dimensions disagree for " + shape_str(a.shape()) + " x " +
                     shape_str(b.shape()) + "^T");
  }
  std::vector<double> out(m * n);
  kernels::gemm(false, true, {m, n, k}, a.data(), b.data(), out, false);
  return make_op({m, n}, std::move(out), {a, b}, "matmul_nt", [m, k, n](Node& self) {
    const Node& pa = *self.parents[0];
    const Node& pb = *self.parents[1];
    if (wants(self, 0)) {
      std::vector<double> da(m * k);
      kernels::gemm(false, false, {m, k, n}, self.grad, pb.data, da, false);
      self.parents[0]->accumulate(da);
    }
    if (wants(self, 1)) {
      std::vector<double> db(n * k);
      kernels::gemm(true, false, {n, k, m}, self.grad, pa.data, db, false);
      self.parents[1]->accumulate(db);
    }
  });
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same(a, b, "add");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) + b.at(i);
  return make_op(a.shape(), std::move(out), {a, b}, "add", [](Node& self) {
    if (wants(self, 0)) self.parents[0]->accumulate(self.grad);
    if (wants(self, 1)) self.parents[1]->accumulate(self.grad);
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same(a, b, "sub");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) - b.at(i);
  return make_op(a.shape(), std::move(out), {a, b}, "sub", [](Node& self) {
    if (wants(self, 0)) self.parents[0]->accumulate(self.grad);
    if (wants(self, 1)) {
      std::vector<double> neg(self.grad.size());
      for (std::size_t i = 0; i < neg.size(); ++i) neg[i] = -self.grad[i];
      self.parents[1]->accumulate(neg);
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same(a, b, "mul");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) * b.at(i);
  return make_op(a.shape(), std::move(out), {a, b}, "mul", [](Node& self) {
    const auto& av = self.parents[0]->data;
    const auto& bv = self.parents[1]->data;
    std::vector<double> g(self.grad.size());
    if (wants(self, 0)) {
      for (std::size_t i = 0; i < g.size(); ++i) g[i] = self.grad[i] * bv[i];
      self.parents[0]->accumulate(g);
    }
    if (wants(self, 1)) {
      for (std::size_t i = 0; i < g.size(); ++i) g[i] = self.grad[i] * av[i];
      self.parents[1]->accumulate(g);
    }
  });
}

Tensor scale(const Tensor& x, double factor) {
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.at(i) * factor;
  return make_op(x.shape(), std::move(out), {x}, "scale", [factor](Node& self) {
    std::vector<double> g(self.grad.size());
    for (std::size_t i = 0; i < g.size(); ++i) g[i] = self.grad[i] * factor;
    self.parents[0]->accumulate(g);
  });
}

Tensor add_bias(const Tensor& x, const Tensor& bias) {
  require_matrix(x, "add_bias");
  const std::size_t m = x.dim(0), n = x.dim(1);
  if (bias.numel() != n) {
    throw ShapeError("add_bias: bias " + shape_str(bias.shape()) + " does not match rows of " + shape_str(x.shape()));
  }
  std::vector<double> out(m * n);
  const auto xv = x.data();
  const auto bv = bias.data();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = xv[i * n + j] + bv[j];
  }
  return make_op({m, n}, std::move(out), {x, bias}, "add_bias", [m, n](Node& self) {
    if (wants(self, 0)) self.parents[0]->accumulate(self.grad);
    if (wants(self, 1)) {
      std::vector<double> g(n, 0.0);
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) g[j] += self.grad[i * n + j];
      }
      self.parents[1]->accumulate(g);
    }
  });
}

Tensor relu(const Tensor& x) {
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.at(i) > 0.0 ? x.at(i) : 0.0;
  return make_op(x.shape(), std::move(out), {x}, "relu", [](Node& self) {
    std::vector<double> g(self.grad.size());
    for (std::size_t i = 0; i < g.size(); ++i) g[i] = self.data[i] > 0.0 ? self.grad[i] : 0.0;
    self.parents[0]->accumulate(g);
  });
}

Tensor sum(const Tensor& x) {
  const auto xv = x.data();
  const double total = std::accumulate(xv.begin(), xv.end(), 0.0);
  return make_op({1}, {total}, {x}, "sum", [](Node& self) {
    std::vector<double> g(self.parents[0]->data.size(), self.grad[0]);
    self.parents[0]->accumulate(g);
  });
}

Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.numel())); }

Tensor softmax_rows(const Tensor& x) {
  require_matrix(x, "softmax_rows");
  const std::size_t m = x.dim(0), n = x.dim(1);
  const auto xv = x.data();
  std::vector<double> out(m * n);
  for (std::size_t i = 0; i < m; ++i) {
    const double* row = xv.data() + i * n;
    double* o = out.data() + i * n;
    const double peak = *std::max_element(row, row + n);
    double total = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      o[j] = std::exp(row[j] - peak);
      total += o[j];
    }
    for (std::size_t j = 0; j < n; ++j) o[j] /= total;
  }
  return make_op({m, n}, std::move(out), {x}, "softmax_rows", [m, n](Node& self) {
    std::vector<double> g(m * n);
    for (std::size_t i = 0; i < m; ++i) {
      const double* y = self.data.data() + i * n;
      const double* dy = self.grad.data() + i * n;
      double dot = 0.0;
      for (std::size_t j = 0; j < n; ++j) dot += dy[j] * y[j];
      for (std::size_t j = 0; j < n; ++j) g[i * n + j] = y[j] * (dy[j] - dot);
    }
    self.parents[0]->accumulate(g);
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  require_matrix(x, "layer_norm");
  if (!(eps > 0.0)) throw ConfigError("layer_norm: eps must be positive");
  const std::size_t m = x.dim(0), n = x.dim(1);
  if (gamma.numel() != n || beta.numel() != n) {
    throw ShapeError("layer_norm: affine parameters " + shape_str(gamma.shape()) + ", " + shape_str(beta.shape()) +
                     " do not match " + shape_str(x.shape()));
  }
  const auto xv = x.data();
  const auto gv = gamma.data();
  const auto bv = beta.data();
  std::vector<double> normed(m * n);
  std::vector<double> inv_std(m);
  std::vector<double> out(m * n);
  for (std::size_t i = 0; i < m; ++i) {
    const double* row = xv.data() + i * n;
    double mu = 0.0;
    for (std::size_t j = 0; j < n; ++j) mu += row[j];
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t j = 0; j < n; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<double>(n);
    inv_std[i] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < n; ++j) {
      normed[i * n + j] = (row[j] - mu) * inv_std[i];
      out[i * n + j] = gv[j] * normed[i * n + j] + bv[j];
    }
  }
  return make_op({m, n}, std::move(out), {x, gamma, beta}, "layer_norm",
                 [m, n, normed = std::move(normed), inv_std = std::move(inv_std)](Node& self) {
                   const auto& gv = self.parents[1]->data;
                   if (wants(self, 0)) {
                     std::vector<double> g(m * n);
                     std::vector<double> dxhat(n);
                     for (std::size_t i = 0; i < m; ++i) {
                       double mean_d = 0.0, mean_dx = 0.0;
                       for (std::size_t j = 0; j < n; ++j) {
                         dxhat[j] = self.grad[i * n + j] * gv[j];
                         mean_d += dxhat[j];
                         mean_dx += dxhat[j] * normed[i * n + j];
                       }
                       mean_d /= static_cast<double>(n);
                       mean_dx /= static_cast<double>(n);
                       for (std::size_t j = 0; j < n; ++j) {
                         g[i * n + j] = inv_std[i] * (dxhat[j] - mean_d - normed[i * n + j] * mean_dx);
                       }
                     }
                     self.parents[0]->accumulate(g);
                   }
                   if (wants(self, 1) || wants(self, 2)) {
                     std::vector<double> dg(n, 0.0), db(n, 0.0);
                     for (std::size_t i = 0; i < m; ++i) {
                       for (std::size_t j = 0; j < n; ++j) {
                         dg[j] += self.grad[i * n + j] * normed[i * n + j];
                         db[j] += self.grad[i * n + j];
                       }
                     }
                     if (wants(self, 1)) self.parents[1]->accumulate(dg);
                     if (wants(self, 2)) self.parents[2]->accumulate(db);
                   }
                 });
}

Tensor cross_entropy_smoothed(const Tensor& logits, std::span<const int> labels, double epsilon) {
  require_matrix(logits, "cross_entropy_smoothed");
  if (!(epsilon >= 0.0 && epsilon < 1.0)) throw ConfigError("cross_entropy_smoothed: epsilon must lie in [0, 1)");
  const std::size_t rows = logits.dim(0), classes = logits.dim(1);
  if (labels.size() != rows) {
    throw ShapeError("cross_entropy_smoothed: " + std::to_string(labels.size()) + " labels for " +
                     std::to_string(rows) + " rows");
  }
  for (std::size_t i = 0; i < rows; ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= classes) {
      throw ConfigError("cross_entropy_smoothed: label " + std::to_string(labels[i]) + " at index " +
                        std::to_string(i) + " outside [0, " + std::to_string(classes) + ")");
    }
  }
  const double on = classes > 1 ? 1.0 - epsilon : 1.0;
  const double off = classes > 1 ? epsilon / static_cast<double>(classes - 1) : 0.0;
  const auto lv = logits.data();
  std::vector<double> probs(rows * classes);
  double total = 0.0;
  for (std::size_t i = 0; i < rows; ++i) {
    const double* row = lv.data() + i * classes;
    double* p = probs.data() + i * classes;
    const double peak = *std::max_element(row, row + classes);
    double z = 0.0;
    for (std::size_t c = 0; c < classes; ++c) z += std::exp(row[c] - peak);
    const double log_z = peak + std::log(z);
    for (std::size_t c = 0; c < classes; ++c) {
      const double log_p = row[c] - log_z;
      p[c] = std::exp(log_p);
      const double target = static_cast<int>(c) == labels[i] ? on : off;
      if (target != 0.0) total -= target * log_p;
    }
  }
  const double inv_rows = 1.0 / static_cast<double>(rows);
  std::vector<int> label_copy(labels.begin(), labels.end());
  return make_op({1}, {total * inv_rows}, {logits}, "cross_entropy_smoothed",
                 [rows, classes, on, off, inv_rows, probs = std::move(probs),
                  label_copy = std::move(label_copy)](Node& self) {
                   const double scale_g = self.grad[0] * inv_rows;
                   std::vector<double> g(rows * classes);
                   for (std::size_t i = 0; i < rows; ++i) {
                     for (std::size_t c = 0; c < classes; ++c) {
                       const double target = static_cast<int>(c) == label_copy[i] ? on : off;
                       g[i * classes + c] = scale_g * (probs[i * classes + c] - target);
                     }
                   }
                   self.parents[0]->accumulate(g);
                 });
}

Tensor dropout(const Tensor& x, double rate, bool train, CounterRng& rng) {
  if (!(rate >= 0.0 && rate < 1.0)) throw ConfigError("dropout: rate must lie in [0, 1)");
  if (!train || rate == 0.0) return x;
  const double keep_scale = 1.0 / (1.0 - rate);
  std::vector<double> mask(x.numel());
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < mask.size(); ++i) {
    mask[i] = rng.uniform() < rate ? 0.0 : keep_scale;
    out[i] = x.at(i) * mask[i];
  }
  return make_op(x.shape(), std::move(out), {x}, "dropout", [mask = std::move(mask)](Node& self) {
    std::vector<double> g(mask.size());
    for (std::size_t i = 0; i < g.size(); ++i) g[i] = self.grad[i] * mask[i];
    self.parents[0]->accumulate(g);
  });
}

Tensor slice_cols(const Tensor& x, std::size_t begin, std::size_t end) {
  require_matrix(x, "slice_cols");
  const std::size_t m = x.dim(0), n = x.dim(1);
  if (begin >= end || end > n) {
    throw ShapeError("slice_cols: range [" + std::to_string(begin) + ", " + std::to_string(end) +
                     ") invalid for " + shape_str(x.shape()));
  }
  const std::size_t w = end - begin;
  std::vector<double> out(m * w);
  const auto xv = x.data();
  for (std::size_t i = 0; i < m; ++i) {
    std::copy_n(xv.data() + i * n + begin, w, out.data() + i * w);
  }
  return make_op({m, w}, std::move(out), {x}, "slice_cols", [m, n, w, begin](Node& self) {
    std::vector<double> g(m * n, 0.0);
    for (std::size_t i = 0; i < m; ++i) {
      std::copy_n(self.grad.data() + i * w, w, g.data() + i * n + begin);
    }
    self.parents[0]->accumulate(g);
  });
}

Tensor concat_cols(std::span<const Tensor> parts) {
  if (parts.empty()) throw ShapeError("concat_cols: nothing to concatenate");
  const std::size_t m = parts[0].dim(0);
  std::vector<std::size_t> offsets;
  std::size_t total = 0;
  for (const Tensor& p : parts) {
    require_matrix(p, "concat_cols");
    if (p.dim(0) != m) throw ShapeError("concat_cols: row mismatch " + shape_str(p.shape()));
    offsets.push_back(total);
    total += p.dim(1);
  }
  std::vector<double> out(m * total);
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const std::size_t w = parts[k].dim(1);
    const auto pv = parts[k].data();
    for (std::size_t i = 0; i < m; ++i) std::copy_n(pv.data() + i * w, w, out.data() + i * total + offsets[k]);
  }
  std::vector<Tensor> inputs(parts.begin(), parts.end());
  return make_op({m, total}, std::move(out), inputs, "concat_cols", [m, total, offsets](Node& self) {
    for (std::size_t k = 0; k < self.parents.size(); ++k) {
      if (!wants(self, k)) continue;
      const std::size_t w = self.parents[k]->shape[1];
      std::vector<double> g(m * w);
      for (std::size_t i = 0; i < m; ++i) std::copy_n(self.grad.data() + i * total + offsets[k], w, g.data() + i * w);
      self.parents[k]->accumulate(g);
    }
  });
}

Tensor concat_rows(std::span<const Tensor> parts) {
  if (parts.empty()) throw ShapeError("concat_rows: nothing to concatenate");
  const std::size_t n = parts[0].dim(1);
  std::vector<std::size_t> offsets;
  std::size_t rows = 0;
  for (const Tensor& p : parts) {
    require_matrix(p, "concat_rows");
    if (p.dim(1) != n) throw ShapeError("concat_rows: column mismatch " + shape_str(p.shape()));
    offsets.push_back(rows * n);
    rows += p.dim(0);
  }
  if (parts.size() == 1) return parts[0];
  std::vector<double> out;
  out.reserve(rows * n);
  for (const Tensor& p : parts) out.insert(out.end(), p.data().begin(), p.data().end());
  std::vector<Tensor> inputs(parts.begin(), parts.end());
  return make_op({rows, n}, std::move(out), inputs, "concat_rows", [offsets](Node& self) {
    for (std::size_t k = 0; k < self.parents.size(); ++k) {
      if (!wants(self, k)) continue;
      const std::size_t len = self.parents[k]->data.size();
      self.parents[k]->accumulate(std::span<const double>(self.grad.data() + offsets[k], len));
    }
  });
}

Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  if (x.rank() != 4 || weight.rank() != 4) {
    throw ShapeError("conv2d: expected 4-d input and weight, got " + shape_str(x.shape()) + " and " +
                     shape_str(weight.shape()));
  }
  const std::size_t batch = x.dim(0), channels = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::size_t out_ch = weight.dim(0), k = weight.dim(2);
  if (weight.dim(1) != channels || weight.dim(3) != k || k % 2 == 0) {
    throw ShapeError("conv2d: weight " + shape_str(weight.shape()) + " incompatible with input " + shape_str(x.shape()));
  }
  if (bias.numel() != out_ch) throw ShapeError("conv2d: bias " + shape_str(bias.shape()) + " needs " + std::to_string(out_ch) + " entries");
  const kernels::ConvGeom geom{channels, h, w, k};
  const std::size_t hw = geom.pixels();
  const std::size_t in_plane = channels * hw;
  const std::size_t out_plane = out_ch * hw;
  std::vector<double> out(batch * out_plane);
  std::vector<double> cols(geom.col_rows() * hw);
  const auto xv = x.data();
  const auto bv = bias.data();
  for (std::size_t b = 0; b < batch; ++b) {
    kernels::im2col(geom, xv.subspan(b * in_plane, in_plane), cols);
    std::span<double> dst(out.data() + b * out_plane, out_plane);
    for (std::size_t o = 0; o < out_ch; ++o) std::fill_n(dst.data() + o * hw, hw, bv[o]);
    kernels::gemm(false, false, {out_ch, hw, geom.col_rows()}, weight.data(), cols, dst, true);
  }
  return make_op({batch, out_ch, h, w}, std::move(out), {x, weight, bias}, "conv2d",
                 [geom, batch, out_ch, hw, in_plane, out_plane](Node& self) {
                   const auto& xv = self.parents[0]->data;
                   const auto& wv = self.parents[1]->data;
                   const std::size_t crow = geom.col_rows();
                   std::vector<double> cols(crow * hw);
                   std::vector<double> dcols(crow * hw);
                   std::vector<double> dw(out_ch * crow, 0.0);
                   std::vector<double> db(out_ch, 0.0);
                   std::vector<double> dx(wants(self, 0) ? batch * in_plane : 0, 0.0);
                   for (std::size_t b = 0; b < batch; ++b) {
                     std::span<const double> dy(self.grad.data() + b * out_plane, out_plane);
                     for (std::size_t o = 0; o < out_ch; ++o) {
                       for (std::size_t p = 0; p < hw; ++p) db[o] += dy[o * hw + p];
                     }
                     if (wants(self, 1)) {
                       kernels::im2col(geom, std::span<const double>(xv).subspan(b * in_plane, in_plane), cols);
                       kernels::gemm(false, true, {out_ch, crow, hw}, dy, cols, dw, true);
                     }
                     if (wants(self, 0)) {
                       kernels::gemm(true, false, {crow, hw, out_ch}, wv, dy, dcols, false);
                       kernels::col2im(geom, dcols, std::span<double>(dx).subspan(b * in_plane, in_plane));
                     }
                   }
                   if (wants(self, 0)) self.parents[0]->accumulate(dx);
                   if (wants(self, 1)) self.parents[1]->accumulate(dw);
                   if (wants(self, 2)) self.parents[2]->accumulate(db);
                 });
}

Tensor pixel_rows(const Tensor& x) {
  if (x.rank() != 4) throw ShapeError("pixel_rows: expected [N x C x H x W], got " + shape_str(x.shape()));
  const std::size_t batch = x.dim(0), channels = x.dim(1), hw = x.dim(2) * x.dim(3);
  std::vector<double> out(batch * hw * channels);
  const auto xv = x.data();
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t c = 0; c < channels; ++c) {
      const double* plane = xv.data() + (b * channels + c) * hw;
      for (std::size_t p = 0; p < hw; ++p) out[(b * hw + p) * channels + c] = plane[p];
    }
  }
  return make_op({batch * hw, channels}, std::move(out), {x}, "pixel_rows", [batch, channels, hw](Node& self) {
    std::vector<double> g(batch * channels * hw);
    for (std::size_t b = 0; b < batch; ++b) {
      for (std::size_t c = 0; c < channels; ++c) {
        double* plane = g.data() + (b * channels + c) * hw;
        for (std::size_t p = 0; p < hw; ++p) plane[p] = self.grad[(b * hw + p) * channels + c];
      }
    }
    self.parents[0]->accumulate(g);
  });
}

}  // namespace cwt
