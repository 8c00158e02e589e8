#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "cwt/backbone.hpp"
#include "cwt/rng.hpp"
#include "cwt/taskgen.hpp"
#include "cwt/tensor.hpp"

namespace cwt {

// Binary pixel classifier without bias. Row 0 scores background, row 1
// foreground.
struct ClassifierWeights {
  Tensor w;  // [2 x d]

  std::size_t feature_dim() const { return w.dim(1); }
};

enum class ClassifierInit { random_normal, prototype };

std::string init_name(ClassifierInit init);
ClassifierInit parse_init(const std::string& name);

struct InnerLoopConfig {
  int iterations = 50;
  double lr = 0.1;
  double momentum = 0.0;
  double weight_decay = 0.0;
  ClassifierInit init = ClassifierInit::random_normal;
  double init_std = 0.01;
  std::uint64_t seed = 0;
};

ClassifierWeights init_classifier(std::span<const FeatureMap> support, std::span<const Mask> masks,
                                  ClassifierInit mode, CounterRng& rng, double init_std = 0.01);

// Differentiable masked means of the support features: [2 x d] with row 0 the
// background prototype and row 1 the foreground prototype.
Tensor support_prototypes(std::span<const Tensor> features, std::span<const Mask> masks);

// Full-batch SGD on the unsmoothed pixel cross-entropy over every support
// pixel. The returned weights are a fresh leaf; features are never updated.
ClassifierWeights fit_classifier_inner(const ClassifierWeights& w0, std::span<const FeatureMap> support,
                                       std::span<const Mask> masks, const InnerLoopConfig& cfg);

struct CwtOptions {
  std::size_t feature_dim = 32;  // d
  std::size_t latent_dim = 64;   // d_a
  std::size_t heads = 4;
  double dropout = 0.1;
  bool shared_qkv = false;           // one projection for Query, Key and Value
  bool full_width_scaling = false;   // scale scores by sqrt(d_a) instead of sqrt(d_a / heads)
  bool layer_norm = true;
  double ln_eps = 1e-5;
  double psi_init_std = 0.01;
  double ln_gamma_init = 1.0;

  void validate() const;
};

struct CwtParams {
  CwtOptions options;
  Tensor wq;        // [d x d_a]
  Tensor wk;        // [d x d_a]
  Tensor wv;        // [d x d_a]
  Tensor psi_w;     // [d_a x d]
  Tensor psi_b;     // [d]
  Tensor ln_gamma;  // [d]
  Tensor ln_beta;   // [d]

  static CwtParams init(const CwtOptions& options, CounterRng& rng);

  // Tensors updated by the outer loop (wk and wv are omitted when shared).
  std::vector<Tensor> trainable() const;
  std::vector<std::pair<std::string, Tensor>> named_tensors() const;
  CwtParams clone() const;
};

// Query-conditioned update of the classifier weights:
//   per head j: A_j = softmax(w Wq_j (F Wk_j)^T / sqrt(d_a / h)),  H_j = A_j F Wv_j
//   w* = LayerNorm(w + psi(dropout(concat_j H_j)))
// w is consumed as a constant; gradients flow to every CwtParams tensor.
ClassifierWeights cwt_forward(const ClassifierWeights& w, const FeatureMap& query, const CwtParams& params,
                              bool train, CounterRng& rng);
ClassifierWeights cwt_forward(const ClassifierWeights& w, const Tensor& features, const CwtParams& params,
                              bool train, CounterRng& rng);

// Same block with the support pixels (all shots concatenated) as Key/Value.
ClassifierWeights cwt_forward_support_variant(const ClassifierWeights& w, std::span<const FeatureMap> support,
                                              const CwtParams& params, bool train, CounterRng& rng);

struct PixelPrediction {
  Tensor logits;  // [n x 2]
  Mask mask;      // argmax, ties to background
};

PixelPrediction predict_pixels(const ClassifierWeights& w, const FeatureMap& features);

}  // namespace cwt
