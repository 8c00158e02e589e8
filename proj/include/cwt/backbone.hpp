#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "cwt/optim.hpp"
#include "cwt/taskgen.hpp"
#include "cwt/tensor.hpp"

namespace cwt {

struct BackboneArch {
  std::size_t in_channels = kImageChannels;
  std::size_t hidden = 16;
  std::size_t feature_dim = 32;
};

struct ConvLayer {
  Tensor weight;  // [out x in x 3 x 3]
  Tensor bias;    // [out]
};

// Three-layer encoder plus two-layer decoder, all 3x3 same-padded convolutions,
// so the feature map keeps the input resolution. ReLU follows every layer but
// the last.
struct BackboneParams {
  BackboneArch arch;
  std::vector<ConvLayer> layers;

  static BackboneParams init(const BackboneArch& arch, CounterRng& rng);
  // With zero biases; used by tests that need a translation-invariant net.
  static BackboneParams init_zero_bias(const BackboneArch& arch, CounterRng& rng);

  std::vector<Tensor> tensors() const;
  std::vector<std::pair<std::string, Tensor>> named_tensors() const;
  BackboneParams clone() const;
  std::size_t feature_dim() const { return arch.feature_dim; }
};

// Per-pixel features; row i is pixel (i / width, i % width).
struct FeatureMap {
  Tensor features;  // [n x d]
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t source_id = 0;

  std::size_t pixels() const { return height * width; }
  std::size_t dim() const { return features.dim(1); }
};

// [N x 3 x H x W] -> [N x d x H x W]
Tensor backbone_forward(const BackboneParams& params, const Tensor& images);

// Stacks sample images into one [N x 3 x H x W] batch.
Tensor stack_images(const std::vector<const SegSample*>& samples);

FeatureMap encode(const BackboneParams& params, const SegSample& sample);

// Read-only backbone. Its tensors are frozen: they never require gradients
// and any optimizer constructed over them throws.
class FrozenBackbone {
 public:
  explicit FrozenBackbone(BackboneParams params);

  const BackboneParams& params() const { return params_; }
  FeatureMap encode(const SegSample& sample) const;
  bool is_frozen() const;
  // SHA-256 of the serialized parameter payload.
  std::string hash() const;

 private:
  BackboneParams params_;
};

FrozenBackbone freeze(BackboneParams params);

struct PretrainConfig {
  int epochs = 12;
  int batch_size = 8;
  double lr = 2.5e-3;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  double label_smoothing = 0.1;
  ScheduleKind schedule = ScheduleKind::cosine;
  double flip_prob = 0.5;
  std::uint64_t seed = 0;
};

struct PretrainResult {
  BackboneParams backbone;
  Tensor head_weight;  // [d x (C_base + 1)], discarded after stage one
  Tensor head_bias;
  std::vector<int> base_classes;
  std::vector<double> epoch_loss;
  std::vector<std::string> log;
};

// Supervised (C_base + 1)-way pixel classification on base-class samples.
PretrainResult pretrain(const Dataset& train_set, const std::vector<int>& base_classes, const BackboneArch& arch,
                        const PretrainConfig& cfg);

// Pixel accuracy of the pretraining head on the given samples.
double pretrain_pixel_accuracy(const PretrainResult& result, const std::vector<SegSample>& samples);

// Mirrors image and mask about the vertical axis.
SegSample flip_horizontal(const SegSample& sample);
SegSample horizontal_flip(const SegSample& sample, double flip_prob, CounterRng& rng);

// Little-endian f64 payload of every parameter in layer order.
std::vector<std::uint8_t> serialize_tensors(const std::vector<Tensor>& tensors);

}  // namespace cwt
