#include "cwt/backbone.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <map>
#include <numeric>
#include <sstream>

#include "cwt/hash.hpp"
#include "cwt/ops.hpp"

namespace cwt {

namespace {

constexpr std::size_t kKernel = 3;

std::vector<std::pair<std::size_t, std::size_t>> layer_channels(const BackboneArch& a) {
  return {{a.in_channels, a.hidden},
          {a.hidden, a.hidden},
          {a.hidden, a.hidden},
          {a.hidden, a.feature_dim},
          {a.feature_dim, a.feature_dim}};
}

BackboneParams make_params(const BackboneArch& arch, CounterRng& rng, bool zero_bias) {
  if (arch.in_channels == 0 || arch.hidden == 0 || arch.feature_dim == 0) {
    throw ConfigError("backbone: channel counts must be positive");
  }
  BackboneParams p;
  p.arch = arch;
  const auto chans = layer_channels(arch);
  for (std::size_t i = 0; i < chans.size(); ++i) {
    const auto [in, out] = chans[i];
    const double fan_in = static_cast<double>(in * kKernel * kKernel);
    const bool last = i + 1 == chans.size();
    const double stddev = std::sqrt((last ? 1.0 : 2.0) / fan_in);
    ConvLayer layer;
    layer.weight = Tensor::randn({out, in, kKernel, kKernel}, rng, stddev).set_requires_grad(true);
    layer.bias = Tensor({out}, zero_bias ? 0.0 : 0.01).set_requires_grad(true);
    p.layers.push_back(std::move(layer));
  }
  return p;
}

}  // namespace

BackboneParams BackboneParams::init(const BackboneArch& arch, CounterRng& rng) { return make_params(arch, rng, false); }

BackboneParams BackboneParams::init_zero_bias(const BackboneArch& arch, CounterRng& rng) {
  return make_params(arch, rng, true);
}

std::vector<Tensor> BackboneParams::tensors() const {
  std::vector<Tensor> out;
  for (const auto& l : layers) {
    out.push_back(l.weight);
    out.push_back(l.bias);
  }
  return out;
}

std::vector<std::pair<std::string, Tensor>> BackboneParams::named_tensors() const {
  std::vector<std::pair<std::string, Tensor>> out;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const std::string stem = (i < 3 ? "encoder." : "decoder.") + std::to_string(i < 3 ? i : i - 3);
    out.emplace_back(stem + ".weight", layers[i].weight);
    out.emplace_back(stem + ".bias", layers[i].bias);
  }
  return out;
}

BackboneParams BackboneParams::clone() const {
  BackboneParams p;
  p.arch = arch;
  for (const auto& l : layers) {
    ConvLayer c{l.weight.detach(), l.bias.detach()};
    c.weight.set_requires_grad(true);
    c.bias.set_requires_grad(true);
    p.layers.push_back(std::move(c));
  }
  return p;
}

Tensor backbone_forward(const BackboneParams& params, const Tensor& images) {
  if (images.rank() != 4 || images.dim(1) != params.arch.in_channels) {
    throw ShapeError("backbone: expected [N x " + std::to_string(params.arch.in_channels) + " x H x W], got " +
                     shape_str(images.shape()));
  }
  // Pixel values in [0, 1] are centered and scaled to roughly unit spread.
  Tensor x = sub(scale(images, 4.0), Tensor(images.shape(), 2.0));
  for (std::size_t i = 0; i < params.layers.size(); ++i) {
    x = conv2d(x, params.layers[i].weight, params.layers[i].bias);
    if (i + 1 < params.layers.size()) x = relu(x);
  }
  return x;
}

Tensor stack_images(const std::vector<const SegSample*>& samples) {
  if (samples.empty()) throw ShapeError("stack_images: empty batch");
  const Shape& first = samples.front()->image.shape();
  std::vector<double> data;
  data.reserve(samples.size() * shape_numel(first));
  for (const SegSample* s : samples) {
    if (s->image.shape() != first) {
      throw ShapeError("stack_images: mixed image shapes " + shape_str(first) + " and " + shape_str(s->image.shape()));
    }
    data.insert(data.end(), s->image.data().begin(), s->image.data().end());
  }
  return Tensor({samples.size(), first[0], first[1], first[2]}, std::move(data));
}

FeatureMap encode(const BackboneParams& params, const SegSample& sample) {
  const Tensor& img = sample.image;
  if (img.rank() != 3) throw ShapeError("encode: image must be [C x H x W], got " + shape_str(img.shape()));
  const Tensor batch({1, img.dim(0), img.dim(1), img.dim(2)}, std::vector<double>(img.data().begin(), img.data().end()));
  FeatureMap fm;
  fm.features = pixel_rows(backbone_forward(params, batch));
  fm.height = img.dim(1);
  fm.width = img.dim(2);
  fm.source_id = sample.id;
  return fm;
}

FrozenBackbone::FrozenBackbone(BackboneParams params) : params_(std::move(params)) {
  for (Tensor& t : params_.tensors()) t.freeze();
}

FeatureMap FrozenBackbone::encode(const SegSample& sample) const {
  NoGradGuard no_grad;
  return cwt::encode(params_, sample);
}

bool FrozenBackbone::is_frozen() const {
  const auto ts = params_.tensors();
  return !ts.empty() && std::all_of(ts.begin(), ts.end(), [](const Tensor& t) { return t.frozen(); });
}

std::string FrozenBackbone::hash() const { return sha256_hex(serialize_tensors(params_.tensors())); }

FrozenBackbone freeze(BackboneParams params) { return FrozenBackbone(std::move(params)); }

std::vector<std::uint8_t> serialize_tensors(const std::vector<Tensor>& tensors) {
  static_assert(std::endian::native == std::endian::little, "payload encoding assumes a little-endian host");
  std::vector<std::uint8_t> out;
  for (const Tensor& t : tensors) {
    const auto d = t.data();
    const std::size_t offset = out.size();
    out.resize(offset + d.size() * sizeof(double));
    std::memcpy(out.data() + offset, d.data(), d.size() * sizeof(double));
  }
  return out;
}

SegSample flip_horizontal(const SegSample& sample) {
  SegSample out = sample;
  const std::size_t c = sample.image.dim(0), h = sample.image.dim(1), w = sample.image.dim(2);
  std::vector<double> img(c * h * w);
  const auto src = sample.image.data();
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) img[(ch * h + y) * w + x] = src[(ch * h + y) * w + (w - 1 - x)];
    }
  }
  out.image = Tensor(sample.image.shape(), std::move(img));
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) out.mask.labels[y * w + x] = sample.mask.labels[y * w + (w - 1 - x)];
  }
  return out;
}

SegSample horizontal_flip(const SegSample& sample, double flip_prob, CounterRng& rng) {
  return rng.bernoulli(flip_prob) ? flip_horizontal(sample) : sample;
}

namespace {

std::vector<int> pixel_labels(const SegSample& s, const std::map<int, int>& class_index) {
  std::vector<int> labels(s.mask.labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const int id = s.mask.labels[i];
    if (id == 0) {
      labels[i] = 0;
      continue;
    }
    const auto it = class_index.find(id);
    if (it == class_index.end()) {
      throw ConfigError("pretrain: sample " + std::to_string(s.id) + " has label " + std::to_string(id) +
                        " outside the base classes");
    }
    labels[i] = it->second;
  }
  return labels;
}

std::map<int, int> index_classes(const std::vector<int>& base_classes) {
  std::map<int, int> idx;
  for (std::size_t i = 0; i < base_classes.size(); ++i) idx[base_classes[i]] = static_cast<int>(i) + 1;
  return idx;
}

}  // namespace

PretrainResult pretrain(const Dataset& train_set, const std::vector<int>& base_classes, const BackboneArch& arch,
                        const PretrainConfig& cfg) {
  if (train_set.samples.empty()) throw ConfigError("pretrain: empty training set");
  if (cfg.epochs < 0 || cfg.batch_size < 1) throw ConfigError("pretrain: epochs >= 0 and batch_size >= 1 required");
  const auto class_index = index_classes(base_classes);
  std::vector<std::vector<int>> labels;
  labels.reserve(train_set.samples.size());
  for (const auto& s : train_set.samples) labels.push_back(pixel_labels(s, class_index));

  CounterRng rng(cfg.seed);
  CounterRng init_rng = rng.split(1);
  CounterRng order_rng = rng.split(2);
  CounterRng flip_rng = rng.split(3);

  PretrainResult result;
  result.base_classes = base_classes;
  result.backbone = BackboneParams::init(arch, init_rng);
  const std::size_t num_out = base_classes.size() + 1;
  result.head_weight =
      Tensor::randn({arch.feature_dim, num_out}, init_rng, std::sqrt(1.0 / static_cast<double>(arch.feature_dim)))
          .set_requires_grad(true);
  result.head_bias = Tensor({num_out}, 0.0).set_requires_grad(true);

  std::vector<Tensor> params = result.backbone.tensors();
  params.push_back(result.head_weight);
  params.push_back(result.head_bias);
  Sgd opt(params, {cfg.lr, cfg.momentum, cfg.weight_decay});

  const std::size_t n = train_set.samples.size();
  const std::size_t batch = static_cast<std::size_t>(cfg.batch_size);
  const std::size_t steps_per_epoch = (n + batch - 1) / batch;
  const ScheduleSpec schedule{cfg.lr, std::max<std::size_t>(1, steps_per_epoch * static_cast<std::size_t>(cfg.epochs)),
                              cfg.schedule};
  {
    std::ostringstream line;
    line << "pretrain lr=" << cfg.lr << " momentum=" << cfg.momentum << " weight_decay=" << cfg.weight_decay
         << " label_smoothing=" << cfg.label_smoothing
         << " schedule=" << (cfg.schedule == ScheduleKind::cosine ? "cosine" : "constant")
         << " flip_prob=" << cfg.flip_prob << " epochs=" << cfg.epochs << " batch_size=" << cfg.batch_size
         << " base_classes=" << base_classes.size();
    result.log.push_back(line.str());
  }

  std::vector<std::size_t> order(n);
  std::size_t step = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    order_rng.shuffle(std::span<std::size_t>(order));
    double loss_total = 0.0;
    std::size_t loss_count = 0;
    for (std::size_t start = 0; start < n; start += batch) {
      const std::size_t stop = std::min(n, start + batch);
      std::vector<SegSample> flipped;
      flipped.reserve(stop - start);
      std::vector<int> batch_labels;
      for (std::size_t i = start; i < stop; ++i) {
        const SegSample& s = train_set.samples[order[i]];
        if (flip_rng.bernoulli(cfg.flip_prob)) {
          flipped.push_back(flip_horizontal(s));
          const auto l = pixel_labels(flipped.back(), class_index);
          batch_labels.insert(batch_labels.end(), l.begin(), l.end());
        } else {
          flipped.push_back(s);
          batch_labels.insert(batch_labels.end(), labels[order[i]].begin(), labels[order[i]].end());
        }
      }
      std::vector<const SegSample*> ptrs;
      for (const auto& s : flipped) ptrs.push_back(&s);
      const Tensor features = pixel_rows(backbone_forward(result.backbone, stack_images(ptrs)));
      const Tensor logits = add_bias(matmul(features, result.head_weight), result.head_bias);
      const Tensor loss = cross_entropy_smoothed(logits, batch_labels, cfg.label_smoothing);
      backward(loss);
      opt.set_learning_rate(schedule_lr(schedule, std::min(step, schedule.total_steps)));
      opt.step();
      ++step;
      loss_total += loss.item();
      ++loss_count;
    }
    const double epoch_loss = loss_total / static_cast<double>(std::max<std::size_t>(1, loss_count));
    result.epoch_loss.push_back(epoch_loss);
    std::ostringstream line;
    line << "epoch " << epoch + 1 << " loss=" << epoch_loss
         << " lr_end=" << schedule_lr(schedule, std::min(step, schedule.total_steps));
    result.log.push_back(line.str());
  }
  for (Tensor& t : params) t.zero_grad();
  return result;
}

double pretrain_pixel_accuracy(const PretrainResult& result, const std::vector<SegSample>& samples) {
  NoGradGuard no_grad;
  const auto class_index = index_classes(result.base_classes);
  std::size_t correct = 0, total = 0;
  for (const auto& s : samples) {
    const auto labels = pixel_labels(s, class_index);
    const FeatureMap fm = encode(result.backbone, s);
    const Tensor logits = add_bias(matmul(fm.features, result.head_weight), result.head_bias);
    const std::size_t k = logits.dim(1);
    for (std::size_t i = 0; i < labels.size(); ++i) {
      const auto row = logits.data().subspan(i * k, k);
      const auto best = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
      correct += best == labels[i];
      ++total;
    }
  }
  return total ? static_cast<double>(correct) / static_cast<double>(total) : 0.0;
}

}  // namespace cwt
