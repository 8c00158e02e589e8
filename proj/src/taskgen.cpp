#include "cwt/taskgen.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <set>

namespace cwt {

namespace {

constexpr int kArchetypesPerDomain = 6;
constexpr int kTexturesPerDomain = 3;

using Rgb = std::array<double, 3>;

Rgb hsv_to_rgb(double h, double s, double v) {
  h = h - std::floor(h);
  const double sector = h * 6.0;
  const int i = static_cast<int>(sector) % 6;
  const double f = sector - std::floor(sector);
  const double p = v * (1.0 - s);
  const double q = v * (1.0 - s * f);
  const double t = v * (1.0 - s * (1.0 - f));
  switch (i) {
    case 0: return {v, t, p};
    case 1: return {q, v, p};
    case 2: return {p, v, t};
    case 3: return {p, q, v};
    case 4: return {t, p, v};
    default: return {v, p, q};
  }
}

// (u, v) are object-local coordinates scaled so the object radius is 1.
bool inside_archetype(int archetype, double u, double v) {
  const double r = std::hypot(u, v);
  switch (archetype) {
    case 0: return r <= 1.0;                                            // disk
    case 1: return std::max(std::abs(u), std::abs(v)) <= 0.8;            // square
    case 2: return v <= 0.7 && v >= -0.9 && std::abs(u) <= 0.9 * (v + 0.9) / 1.6;  // triangle
    case 3: return r <= 1.0 && r >= 0.5;                                 // ring
    case 4: return (std::abs(u) <= 0.3 && std::abs(v) <= 0.95) ||
                   (std::abs(v) <= 0.3 && std::abs(u) <= 0.95);          // plus
    case 5: return std::abs(u) + std::abs(v) <= 1.0;                     // diamond
    case 6: {                                                            // star
      const double theta = std::atan2(v, u);
      return r <= 0.6 + 0.35 * std::cos(5.0 * theta);
    }
    case 7: return std::max(std::abs(u) * 0.866 + std::abs(v) * 0.5, std::abs(v)) <= 0.85;  // hexagon
    case 8: return r <= 1.0 && (u - 0.45) * (u - 0.45) + v * v > 0.49;   // crescent
    case 9: return u * u + 4.0 * v * v <= 1.0;                           // ellipse
    case 10: return (u >= -0.9 && u <= -0.3 && std::abs(v) <= 0.9) ||
                    (v >= 0.3 && v <= 0.9 && std::abs(u) <= 0.9);        // L
    case 11: return (std::abs(u - v) <= 0.4 || std::abs(u + v) <= 0.4) &&
                    std::max(std::abs(u), std::abs(v)) <= 0.9;           // saltire
    default: return false;
  }
}

// Pattern intensity in {0, 1} at object-local pixel offsets (lx, ly).
double texture_value(int texture, double lx, double ly) {
  const auto band = [](double x, double period) {
    const double m = std::fmod(std::floor(x / period), 2.0);
    return m == 0.0 ? 1.0 : 0.0;
  };
  switch (texture) {
    case 0: return 1.0;                                  // solid
    case 1: return band(ly + 64.0, 2.0);                 // horizontal stripes
    case 2: return band(lx + 64.0, 2.0) * band(ly + 64.0, 2.0) > 0.0 ? 1.0 : 0.0;  // dots
    case 3: return band(lx + 64.0, 3.0) == band(ly + 64.0, 3.0) ? 1.0 : 0.0;     // checker
    case 4: return band(std::hypot(lx, ly), 2.0);        // concentric rings
    case 5: {                                            // speckle
      const auto qx = static_cast<std::uint64_t>(std::floor(lx + 64.0));
      const auto qy = static_cast<std::uint64_t>(std::floor(ly + 64.0));
      return (mix64(qx * 131 + qy * 7919 + 17) & 1) ? 1.0 : 0.0;
    }
    default: return 1.0;
  }
}

struct Canvas {
  std::size_t size;
  std::vector<double> pixels;  // [3 x H x W]
  std::vector<std::uint8_t> labels;

  explicit Canvas(std::size_t s) : size(s), pixels(kImageChannels * s * s, 0.0), labels(s * s, 0) {}
  void set(std::size_t y, std::size_t x, const Rgb& c) {
    for (std::size_t ch = 0; ch < kImageChannels; ++ch) pixels[(ch * size + y) * size + x] = c[ch];
  }
};

struct Placement {
  double cx, cy, radius, angle;
};

Placement draw_placement(const DatasetSpec& spec, CounterRng& rng, bool centered) {
  const auto& var = spec.variation;
  const double size = spec.image_size;
  const double s = rng.uniform(var.scale_range.lo, var.scale_range.hi);
  const double radius = std::max(1.0, s * size / 2.0);
  const double jx = rng.uniform(-1.0, 1.0);
  const double jy = rng.uniform(-1.0, 1.0);
  const double angle = rng.uniform(-1.0, 1.0) * var.rotation_range;
  double cx = size / 2.0 - 0.5;
  double cy = size / 2.0 - 0.5;
  if (centered) {
    cx += jx * var.position_jitter * size;
    cy += jy * var.position_jitter * size;
  } else {
    cx = rng.uniform(0.15, 0.85) * size;
    cy = rng.uniform(0.15, 0.85) * size;
  }
  cx = std::clamp(cx, 1.0, size - 2.0);
  cy = std::clamp(cy, 1.0, size - 2.0);
  return {cx, cy, radius, angle};
}

Rgb class_color(Domain domain, const ClassAppearance& look, double color_jitter, CounterRng& rng) {
  const double hue = look.hue + 0.5 * color_jitter * rng.uniform(-1.0, 1.0);
  const double value = std::clamp(0.85 + 0.3 * color_jitter * rng.uniform(-1.0, 1.0), 0.3, 1.0);
  const double sat = domain == Domain::shapesA ? 0.8 : 0.55;
  return hsv_to_rgb(hue, sat, value);
}

void paint_object(Canvas& canvas, Domain domain, int class_id, const Placement& p, const Rgb& color) {
  const ClassAppearance look = class_appearance(domain, class_id);
  const double cos_a = std::cos(p.angle);
  const double sin_a = std::sin(p.angle);
  for (std::size_t y = 0; y < canvas.size; ++y) {
    for (std::size_t x = 0; x < canvas.size; ++x) {
      const double dx = static_cast<double>(x) - p.cx;
      const double dy = static_cast<double>(y) - p.cy;
      const double lx = cos_a * dx + sin_a * dy;
      const double ly = -sin_a * dx + cos_a * dy;
      if (!inside_archetype(look.archetype, lx / p.radius, ly / p.radius)) continue;
      const double shade = texture_value(look.texture, lx, ly) > 0.0 ? 1.0 : 0.45;
      canvas.set(y, x, {color[0] * shade, color[1] * shade, color[2] * shade});
      canvas.labels[y * canvas.size + x] = static_cast<std::uint8_t>(class_id);
    }
  }
}

void paint_background(Canvas& canvas, Domain domain, double jitter, CounterRng& rng) {
  // Scene tint: hue is free, saturation and brightness spread grow with jitter.
  const double hue = rng.uniform();
  const double sat = (domain == Domain::shapesA ? 0.45 : 0.3) * jitter * rng.uniform();
  const double base_v = domain == Domain::shapesA ? 0.25 : 0.6;
  const double value = std::clamp(base_v + 0.2 * jitter * rng.uniform(-1.0, 1.0), 0.05, 0.95);
  const Rgb base = hsv_to_rgb(hue, sat, value);
  const double grad_angle = rng.uniform(0.0, 2.0 * std::numbers::pi);
  const double grad_amp = 0.1 * jitter;
  const double noise = (domain == Domain::shapesA ? 0.03 : 0.06) * jitter;
  const double n = static_cast<double>(canvas.size);
  for (std::size_t y = 0; y < canvas.size; ++y) {
    for (std::size_t x = 0; x < canvas.size; ++x) {
      const double t = ((static_cast<double>(x) / n - 0.5) * std::cos(grad_angle) +
                        (static_cast<double>(y) / n - 0.5) * std::sin(grad_angle));
      Rgb c;
      for (std::size_t ch = 0; ch < 3; ++ch) {
        c[ch] = base[ch] + grad_amp * t + noise * rng.normal();
      }
      canvas.set(y, x, c);
    }
  }
}

void occlude(Canvas& canvas, int class_id, const Placement& p, CounterRng& rng) {
  const double half = p.radius * rng.uniform(0.4, 0.8);
  const double ox = p.cx + rng.uniform(-1.0, 1.0) * p.radius;
  const double oy = p.cy + rng.uniform(-1.0, 1.0) * p.radius;
  std::vector<std::size_t> hit;
  std::size_t remaining = 0;
  for (std::size_t y = 0; y < canvas.size; ++y) {
    for (std::size_t x = 0; x < canvas.size; ++x) {
      const bool covered = std::abs(static_cast<double>(x) - ox) <= half && std::abs(static_cast<double>(y) - oy) <= half;
      if (covered) {
        hit.push_back(y * canvas.size + x);
      } else if (canvas.labels[y * canvas.size + x] == class_id) {
        ++remaining;
      }
    }
  }
  if (remaining == 0) return;  // never erase the target completely
  for (std::size_t idx : hit) {
    canvas.labels[idx] = 0;
    canvas.set(idx / canvas.size, idx % canvas.size, {0.5, 0.5, 0.5});
  }
}

SegSample finish(Canvas&& canvas, std::size_t id, int primary) {
  SegSample s;
  s.id = id;
  s.primary_class = primary;
  for (double& v : canvas.pixels) v = static_cast<double>(static_cast<float>(std::clamp(v, 0.0, 1.0)));
  s.image = Tensor({kImageChannels, canvas.size, canvas.size}, std::move(canvas.pixels));
  s.mask = Mask{canvas.size, canvas.size, std::move(canvas.labels)};
  std::set<int> present;
  for (std::uint8_t l : s.mask.labels) {
    if (l) present.insert(l);
  }
  s.class_set.assign(present.begin(), present.end());
  return s;
}

SegSample render_sample(const DatasetSpec& spec, int class_id, std::size_t id, CounterRng rng) {
  const auto& var = spec.variation;
  const auto size = static_cast<std::size_t>(spec.image_size);
  for (int attempt = 0;; ++attempt) {
    Canvas canvas(size);
    paint_background(canvas, spec.domain, var.color_jitter, rng);
    if (spec.num_classes > 1 && rng.bernoulli(var.distractor_prob)) {
      int other = 1 + static_cast<int>(rng.uniform_index(static_cast<std::size_t>(spec.num_classes - 1)));
      if (other >= class_id) ++other;
      const Placement dp = draw_placement(spec, rng, false);
      paint_object(canvas, spec.domain, other, dp,
                   class_color(spec.domain, class_appearance(spec.domain, other), var.color_jitter, rng));
    }
    const Placement p = draw_placement(spec, rng, true);
    paint_object(canvas, spec.domain, class_id, p,
                 class_color(spec.domain, class_appearance(spec.domain, class_id), var.color_jitter, rng));
    if (rng.bernoulli(var.occlusion_prob)) occlude(canvas, class_id, p, rng);
    const auto fg = std::count(canvas.labels.begin(), canvas.labels.end(), static_cast<std::uint8_t>(class_id));
    if (fg > 0 || attempt >= 16) return finish(std::move(canvas), id, class_id);
  }
}

}  // namespace

std::string domain_name(Domain d) { return d == Domain::shapesA ? "shapesA" : "shapesB"; }

Domain parse_domain(const std::string& name) {
  if (name == "shapesA") return Domain::shapesA;
  if (name == "shapesB") return Domain::shapesB;
  throw ConfigError("unknown domain '" + name + "' (expected shapesA or shapesB)");
}

VariationKnobs VariationKnobs::none(double scale) {
  VariationKnobs k;
  k.scale_range = {scale, scale};
  return k;
}

VariationKnobs VariationKnobs::low() {
  VariationKnobs k;
  k.scale_range = {0.45, 0.6};
  k.position_jitter = 0.05;
  k.rotation_range = 0.1;
  k.color_jitter = 0.1;
  k.occlusion_prob = 0.0;
  k.distractor_prob = 0.1;
  return k;
}

VariationKnobs VariationKnobs::high() {
  VariationKnobs k;
  k.scale_range = {0.3, 0.8};
  k.position_jitter = 0.2;
  k.rotation_range = std::numbers::pi;
  k.color_jitter = 1.0;
  k.occlusion_prob = 0.3;
  k.distractor_prob = 0.2;
  return k;
}

void DatasetSpec::validate() const {
  if (num_classes < 1) throw ConfigError("dataset: num_classes must be positive");
  if (num_classes > 255) throw ConfigError("dataset: at most 255 classes fit in a u8 mask");
  if (images_per_class < 1) throw ConfigError("dataset: images_per_class must be positive");
  if (image_size < 4) throw ConfigError("dataset: image_size must be at least 4");
  const auto& v = variation;
  if (!(v.scale_range.lo > 0.0) || v.scale_range.hi < v.scale_range.lo || v.scale_range.hi > 1.0) {
    throw ConfigError("dataset: scale_range must satisfy 0 < lo <= hi <= 1");
  }
  const auto unit = [](double x) { return x >= 0.0 && x <= 1.0; };
  if (!unit(v.position_jitter) || !unit(v.color_jitter) || !unit(v.occlusion_prob) || !unit(v.distractor_prob)) {
    throw ConfigError("dataset: jitter amplitudes and probabilities must lie in [0, 1]");
  }
  if (v.rotation_range < 0.0) throw ConfigError("dataset: rotation_range must be nonnegative");
}

std::size_t Mask::count(std::uint8_t value) const {
  return static_cast<std::size_t>(std::count(labels.begin(), labels.end(), value));
}

bool SegSample::contains(int class_id) const {
  return std::binary_search(class_set.begin(), class_set.end(), class_id);
}

std::vector<int> Dataset::class_ids() const {
  std::set<int> ids;
  for (const auto& s : samples) ids.insert(s.class_set.begin(), s.class_set.end());
  return {ids.begin(), ids.end()};
}

std::vector<std::size_t> Dataset::samples_with(int class_id) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (samples[i].contains(class_id)) out.push_back(i);
  }
  return out;
}

ClassAppearance class_appearance(Domain domain, int class_id) {
  const int i = class_id - 1;
  const int offset = domain == Domain::shapesA ? 0 : kArchetypesPerDomain;
  const int tex_offset = domain == Domain::shapesA ? 0 : kTexturesPerDomain;
  ClassAppearance look;
  look.texture = tex_offset + i % kTexturesPerDomain;
  look.archetype = offset + (i / kTexturesPerDomain) % kArchetypesPerDomain;
  const double group = static_cast<double>(i / (kTexturesPerDomain * kArchetypesPerDomain));
  look.hue = 0.07 + 0.381966 * i + 0.05 * group;
  look.hue -= std::floor(look.hue);
  return look;
}

std::vector<int> archetype_bank(Domain domain) {
  std::vector<int> bank;
  const int offset = domain == Domain::shapesA ? 0 : kArchetypesPerDomain;
  for (int a = 0; a < kArchetypesPerDomain; ++a) bank.push_back(offset + a);
  return bank;
}

Dataset generate_dataset(const DatasetSpec& spec) {
  spec.validate();
  Dataset ds;
  ds.spec = spec;
  const CounterRng root(spec.seed);
  const auto per_class = static_cast<std::size_t>(spec.images_per_class);
  ds.samples.reserve(static_cast<std::size_t>(spec.num_classes) * per_class);
  for (int c = 1; c <= spec.num_classes; ++c) {
    for (std::size_t j = 0; j < per_class; ++j) {
      const std::size_t id = static_cast<std::size_t>(c - 1) * per_class + j;
      ds.samples.push_back(render_sample(spec, c, id, root.split(id)));
    }
  }
  return ds;
}

ClassSplit assign_classes(const std::vector<int>& class_ids, const SplitSpec& split) {
  if (split.num_splits < 1 || split.split_index < 0 || split.split_index >= split.num_splits) {
    throw ConfigError("split: index " + std::to_string(split.split_index) + " invalid for " +
                      std::to_string(split.num_splits) + " splits");
  }
  ClassSplit out;
  for (int c : class_ids) {
    if ((c - 1) % split.num_splits == split.split_index) {
      out.novel_classes.push_back(c);
    } else {
      out.base_classes.push_back(c);
    }
  }
  return out;
}

Dataset restrict_classes(const Dataset& ds, const std::vector<int>& keep) {
  Dataset out;
  out.spec = ds.spec;
  const std::set<int> allowed(keep.begin(), keep.end());
  for (const auto& s : ds.samples) {
    const bool relevant = std::any_of(s.class_set.begin(), s.class_set.end(), [&](int c) { return allowed.count(c); });
    if (!relevant) continue;
    SegSample copy = s;
    bool relabel = false;
    for (int c : s.class_set) relabel = relabel || !allowed.count(c);
    if (relabel) {
      for (auto& l : copy.mask.labels) {
        if (l && !allowed.count(l)) l = 0;
      }
      std::vector<int> kept;
      for (int c : s.class_set) {
        if (allowed.count(c)) kept.push_back(c);
      }
      copy.class_set = std::move(kept);
    }
    out.samples.push_back(std::move(copy));
  }
  return out;
}

SplitPools split_classes(const Dataset& dataset, const SplitSpec& split) {
  std::vector<int> all;
  for (int c = 1; c <= dataset.spec.num_classes; ++c) all.push_back(c);
  SplitPools pools;
  pools.classes = assign_classes(all, split);
  pools.base = restrict_classes(dataset, pools.classes.base_classes);
  pools.novel = restrict_classes(dataset, pools.classes.novel_classes);
  return pools;
}

Mask binarize_mask(const Mask& mask, int class_id) {
  Mask out{mask.height, mask.width, std::vector<std::uint8_t>(mask.labels.size(), 0)};
  for (std::size_t i = 0; i < mask.labels.size(); ++i) out.labels[i] = mask.labels[i] == class_id ? 1 : 0;
  return out;
}

EpisodeTask sample_episode(const Dataset& pool, const std::vector<int>& class_pool, std::size_t shots,
                           std::size_t queries, CounterRng& rng) {
  if (class_pool.empty()) throw ConfigError("sample_episode: empty class pool");
  if (shots < 1 || queries < 1) throw ConfigError("sample_episode: need at least one support and one query");
  std::vector<int> candidates = class_pool;
  while (!candidates.empty()) {
    const std::size_t pick = rng.uniform_index(candidates.size());
    const int c = candidates[pick];
    std::vector<std::size_t> members = pool.samples_with(c);
    if (members.size() < shots + queries) {
      candidates.erase(candidates.begin() + static_cast<long>(pick));
      continue;
    }
    // Partial Fisher-Yates: the first shots + queries entries are a uniform draw.
    for (std::size_t i = 0; i < shots + queries; ++i) {
      const std::size_t j = i + rng.uniform_index(members.size() - i);
      std::swap(members[i], members[j]);
    }
    EpisodeTask task;
    task.class_id = c;
    for (std::size_t i = 0; i < shots + queries; ++i) {
      SegSample s = pool.samples[members[i]];
      s.mask = binarize_mask(s.mask, c);
      s.class_set = {1};
      (i < shots ? task.support : task.query).push_back(std::move(s));
    }
    return task;
  }
  throw ConfigError("sample_episode: no class has " + std::to_string(shots + queries) + " samples");
}

}  // namespace cwt
