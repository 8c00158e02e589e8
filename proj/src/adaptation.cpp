#include "cwt/adaptation.hpp"

#include <cmath>

#include "cwt/ops.hpp"
#include "cwt/optim.hpp"

namespace cwt {

namespace {

void check_alignment(std::span<const FeatureMap> support, std::span<const Mask> masks) {
  if (support.empty()) throw ConfigError("classifier: support set is empty");
  if (support.size() != masks.size()) {
    throw ShapeError("classifier: " + std::to_string(support.size()) + " feature maps but " +
                     std::to_string(masks.size()) + " masks");
  }
  const std::size_t d = support.front().dim();
  for (std::size_t i = 0; i < support.size(); ++i) {
    if (support[i].dim() != d) throw ShapeError("classifier: support feature widths differ");
    if (support[i].features.dim(0) != masks[i].labels.size()) {
      throw ShapeError("classifier: support image " + std::to_string(i) + " has " +
                       std::to_string(support[i].features.dim(0)) + " feature rows but " +
                       std::to_string(masks[i].labels.size()) + " mask pixels");
    }
  }
}

std::vector<double> stacked_features(std::span<const FeatureMap> support) {
  std::vector<double> out;
  for (const auto& fm : support) out.insert(out.end(), fm.features.data().begin(), fm.features.data().end());
  return out;
}

std::vector<int> stacked_labels(std::span<const Mask> masks) {
  std::vector<int> out;
  for (const auto& m : masks) {
    for (std::uint8_t l : m.labels) out.push_back(l ? 1 : 0);
  }
  return out;
}

}  // namespace

std::string init_name(ClassifierInit init) {
  return init == ClassifierInit::random_normal ? "random_normal" : "prototype";
}

ClassifierInit parse_init(const std::string& name) {
  if (name == "random_normal") return ClassifierInit::random_normal;
  if (name == "prototype") return ClassifierInit::prototype;
  throw ConfigError("unknown classifier init '" + name + "'");
}

ClassifierWeights init_classifier(std::span<const FeatureMap> support, std::span<const Mask> masks,
                                  ClassifierInit mode, CounterRng& rng, double init_std) {
  check_alignment(support, masks);
  const std::size_t d = support.front().dim();
  if (mode == ClassifierInit::random_normal) return {Tensor::randn({2, d}, rng, init_std)};

  std::vector<double> sums(2 * d, 0.0);
  std::size_t counts[2] = {0, 0};
  for (std::size_t k = 0; k < support.size(); ++k) {
    const auto f = support[k].features.data();
    const auto& labels = masks[k].labels;
    for (std::size_t p = 0; p < labels.size(); ++p) {
      const std::size_t row = labels[p] ? 1 : 0;
      ++counts[row];
      for (std::size_t j = 0; j < d; ++j) sums[row * d + j] += f[p * d + j];
    }
  }
  if (counts[1] == 0) throw ConfigError("classifier: prototype init needs at least one foreground pixel");
  for (std::size_t row = 0; row < 2; ++row) {
    if (counts[row] == 0) continue;
    for (std::size_t j = 0; j < d; ++j) sums[row * d + j] /= static_cast<double>(counts[row]);
  }
  return {Tensor({2, d}, std::move(sums))};
}

Tensor support_prototypes(std::span<const Tensor> features, std::span<const Mask> masks) {
  if (features.empty() || features.size() != masks.size()) {
    throw ShapeError("support_prototypes: need one mask per feature map");
  }
  std::size_t total = 0;
  std::size_t counts[2] = {0, 0};
  for (std::size_t k = 0; k < masks.size(); ++k) {
    if (features[k].dim(0) != masks[k].labels.size()) throw ShapeError("support_prototypes: mask/feature mismatch");
    total += masks[k].labels.size();
    for (std::uint8_t l : masks[k].labels) ++counts[l ? 1 : 0];
  }
  if (counts[1] == 0) throw ConfigError("support_prototypes: no foreground pixels");
  std::vector<double> weights(2 * total, 0.0);
  std::size_t offset = 0;
  for (const auto& m : masks) {
    for (std::size_t p = 0; p < m.labels.size(); ++p) {
      const std::size_t row = m.labels[p] ? 1 : 0;
      weights[row * total + offset + p] = 1.0 / static_cast<double>(counts[row]);
    }
    offset += m.labels.size();
  }
  return matmul(Tensor({2, total}, std::move(weights)), concat_rows(features));
}

ClassifierWeights fit_classifier_inner(const ClassifierWeights& w0, std::span<const FeatureMap> support,
                                       std::span<const Mask> masks, const InnerLoopConfig& cfg) {
  check_alignment(support, masks);
  if (cfg.iterations < 0) throw ConfigError("inner loop: iterations must be nonnegative");
  const std::size_t d = support.front().dim();
  if (w0.w.rank() != 2 || w0.w.dim(0) != 2 || w0.w.dim(1) != d) {
    throw ShapeError("inner loop: classifier " + shape_str(w0.w.shape()) + " does not match feature width " +
                     std::to_string(d));
  }
  Tensor w = w0.w.detach();
  if (cfg.iterations == 0) return {w};

  GradModeGuard grad_on(true);
  std::vector<double> stacked = stacked_features(support);
  const std::size_t rows = stacked.size() / d;
  const Tensor x({rows, d}, std::move(stacked));
  const std::vector<int> labels = stacked_labels(masks);
  w.set_requires_grad(true);
  Sgd opt({w}, {cfg.lr, cfg.momentum, cfg.weight_decay});
  for (int it = 0; it < cfg.iterations; ++it) {
    const Tensor loss = cross_entropy_smoothed(matmul_nt(x, w), labels, 0.0);
    backward(loss);
    opt.step();
  }
  w.set_requires_grad(false);
  return {w};
}

void CwtOptions::validate() const {
  if (feature_dim == 0 || latent_dim == 0 || heads == 0) throw ConfigError("cwt: dimensions must be positive");
  if (latent_dim % heads != 0) {
    throw ConfigError("cwt: latent_dim " + std::to_string(latent_dim) + " is not divisible by " +
                      std::to_string(heads) + " heads");
  }
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("cwt: dropout must lie in [0, 1)");
  if (!(ln_eps > 0.0)) throw ConfigError("cwt: ln_eps must be positive");
  if (!(ln_gamma_init > 0.0)) throw ConfigError("cwt: ln_gamma_init must be positive");
}

CwtParams CwtParams::init(const CwtOptions& options, CounterRng& rng) {
  options.validate();
  const std::size_t d = options.feature_dim, da = options.latent_dim;
  const double proj_std = 1.0 / std::sqrt(static_cast<double>(d));
  CwtParams p;
  p.options = options;
  p.wq = Tensor::randn({d, da}, rng, proj_std).set_requires_grad(true);
  p.wk = Tensor::randn({d, da}, rng, proj_std).set_requires_grad(true);
  p.wv = Tensor::randn({d, da}, rng, proj_std).set_requires_grad(true);
  p.psi_w = Tensor::randn({da, d}, rng, options.psi_init_std).set_requires_grad(true);
  p.psi_b = Tensor({d}, 0.0).set_requires_grad(true);
  p.ln_gamma = Tensor({d}, options.ln_gamma_init).set_requires_grad(true);
  p.ln_beta = Tensor({d}, 0.0).set_requires_grad(true);
  return p;
}

std::vector<Tensor> CwtParams::trainable() const {
  std::vector<Tensor> out{wq};
  if (!options.shared_qkv) {
    out.push_back(wk);
    out.push_back(wv);
  }
  out.push_back(psi_w);
  out.push_back(psi_b);
  if (options.layer_norm) {
    out.push_back(ln_gamma);
    out.push_back(ln_beta);
  }
  return out;
}

std::vector<std::pair<std::string, Tensor>> CwtParams::named_tensors() const {
  return {{"wq", wq},       {"wk", wk},         {"wv", wv},          {"psi.weight", psi_w},
          {"psi.bias", psi_b}, {"ln.gamma", ln_gamma}, {"ln.beta", ln_beta}};
}

CwtParams CwtParams::clone() const {
  CwtParams p;
  p.options = options;
  const auto copy = [](const Tensor& t) { return t.detach().set_requires_grad(true); };
  p.wq = copy(wq);
  p.wk = copy(wk);
  p.wv = copy(wv);
  p.psi_w = copy(psi_w);
  p.psi_b = copy(psi_b);
  p.ln_gamma = copy(ln_gamma);
  p.ln_beta = copy(ln_beta);
  return p;
}

ClassifierWeights cwt_forward(const ClassifierWeights& w, const Tensor& features, const CwtParams& params,
                              bool train, CounterRng& rng) {
  const CwtOptions& o = params.options;
  const std::size_t d = o.feature_dim;
  if (w.w.rank() != 2 || w.w.dim(0) != 2 || w.w.dim(1) != d) {
    throw ShapeError("cwt: classifier " + shape_str(w.w.shape()) + " incompatible with feature_dim " + std::to_string(d));
  }
  if (features.rank() != 2 || features.dim(1) != d) {
    throw ShapeError("cwt: features " + shape_str(features.shape()) + " incompatible with feature_dim " + std::to_string(d));
  }
  const Tensor& wk = o.shared_qkv ? params.wq : params.wk;
  const Tensor& wv = o.shared_qkv ? params.wq : params.wv;
  const Tensor query = matmul(w.w, params.wq);
  const Tensor key = matmul(features, wk);
  const Tensor value = matmul(features, wv);

  const std::size_t head_dim = o.latent_dim / o.heads;
  const double score_scale =
      1.0 / std::sqrt(static_cast<double>(o.full_width_scaling ? o.latent_dim : head_dim));
  std::vector<Tensor> heads;
  heads.reserve(o.heads);
  for (std::size_t h = 0; h < o.heads; ++h) {
    const bool whole = o.heads == 1;
    const Tensor qh = whole ? query : slice_cols(query, h * head_dim, (h + 1) * head_dim);
    const Tensor kh = whole ? key : slice_cols(key, h * head_dim, (h + 1) * head_dim);
    const Tensor vh = whole ? value : slice_cols(value, h * head_dim, (h + 1) * head_dim);
    const Tensor attn = softmax_rows(scale(matmul_nt(qh, kh), score_scale));
    heads.push_back(matmul(attn, vh));
  }
  Tensor mixed = heads.size() == 1 ? heads.front() : concat_cols(heads);
  mixed = dropout(mixed, o.dropout, train, rng);
  const Tensor update = add_bias(matmul(mixed, params.psi_w), params.psi_b);
  const Tensor residual = add(w.w, update);
  if (!o.layer_norm) return {residual};
  return {layer_norm(residual, params.ln_gamma, params.ln_beta, o.ln_eps)};
}

ClassifierWeights cwt_forward(const ClassifierWeights& w, const FeatureMap& query, const CwtParams& params, bool train,
                              CounterRng& rng) {
  return cwt_forward(w, query.features, params, train, rng);
}

ClassifierWeights cwt_forward_support_variant(const ClassifierWeights& w, std::span<const FeatureMap> support,
                                              const CwtParams& params, bool train, CounterRng& rng) {
  if (support.empty()) throw ConfigError("cwt: support variant needs at least one support image");
  std::vector<Tensor> parts;
  for (const auto& fm : support) parts.push_back(fm.features);
  return cwt_forward(w, concat_rows(parts), params, train, rng);
}

PixelPrediction predict_pixels(const ClassifierWeights& w, const FeatureMap& features) {
  if (w.w.rank() != 2 || w.w.dim(0) != 2 || w.w.dim(1) != features.dim()) {
    throw ShapeError("predict: classifier " + shape_str(w.w.shape()) + " vs features " +
                     shape_str(features.features.shape()));
  }
  PixelPrediction out;
  out.logits = matmul_nt(features.features, w.w);
  out.mask = Mask{features.height, features.width, std::vector<std::uint8_t>(features.pixels(), 0)};
  const auto l = out.logits.data();
  for (std::size_t i = 0; i < features.pixels(); ++i) out.mask.labels[i] = l[2 * i + 1] > l[2 * i] ? 1 : 0;
  return out;
}

}  // namespace cwt
