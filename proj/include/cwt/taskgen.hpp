#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "cwt/rng.hpp"
#include "cwt/tensor.hpp"

namespace cwt {

enum class Domain { shapesA, shapesB };

std::string domain_name(Domain d);
Domain parse_domain(const std::string& name);

struct Range {
  double lo = 0.0;
  double hi = 0.0;
};

// Per-sample appearance variation. All-zero widths render every sample of a
// class identically.
struct VariationKnobs {
  Range scale_range{0.5, 0.5};  // object radius as a fraction of half the image size
  double position_jitter = 0.0; // max center offset as a fraction of image size
  double rotation_range = 0.0;  // max |rotation| in radians
  double color_jitter = 0.0;    // hue/brightness perturbation amplitude, also drives background noise
  double occlusion_prob = 0.0;
  double distractor_prob = 0.0; // chance of a second object from another class

  static VariationKnobs none(double scale = 0.5);
  static VariationKnobs low();
  static VariationKnobs high();
};

struct DatasetSpec {
  Domain domain = Domain::shapesA;
  int num_classes = 12;
  int images_per_class = 60;
  int image_size = 32;
  VariationKnobs variation = VariationKnobs::high();
  std::uint64_t seed = 0;

  void validate() const;
};

inline constexpr std::size_t kImageChannels = 3;

struct Mask {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> labels;  // row-major class ids, 0 = background

  std::uint8_t at(std::size_t y, std::size_t x) const { return labels[y * width + x]; }
  std::size_t count(std::uint8_t value) const;
};

struct SegSample {
  std::size_t id = 0;          // unique within its dataset
  int primary_class = 0;
  Tensor image;                // [3 x H x W], values in [0, 1]
  Mask mask;
  std::vector<int> class_set;  // sorted foreground ids present in mask

  bool contains(int class_id) const;
};

struct Dataset {
  DatasetSpec spec;
  std::vector<SegSample> samples;

  std::vector<int> class_ids() const;
  // Indices of samples whose mask contains class_id.
  std::vector<std::size_t> samples_with(int class_id) const;
};

// Archetype identifiers used to render a class; banks for shapesA and shapesB
// are disjoint.
struct ClassAppearance {
  int archetype = 0;
  int texture = 0;
  double hue = 0.0;
};
ClassAppearance class_appearance(Domain domain, int class_id);
std::vector<int> archetype_bank(Domain domain);

Dataset generate_dataset(const DatasetSpec& spec);

struct SplitSpec {
  int split_index = 0;
  int num_splits = 4;
};

struct ClassSplit {
  std::vector<int> base_classes;
  std::vector<int> novel_classes;
};

ClassSplit assign_classes(const std::vector<int>& class_ids, const SplitSpec& split);

struct SplitPools {
  ClassSplit classes;
  Dataset base;
  Dataset novel;
};

// Novel classes are those with index == split_index (mod num_splits). Each
// subset keeps the samples containing one of its classes; pixels of classes
// outside the subset are relabelled as background.
SplitPools split_classes(const Dataset& dataset, const SplitSpec& split);

// Samples containing any of `keep`, with every other class relabelled as
// background.
Dataset restrict_classes(const Dataset& dataset, const std::vector<int>& keep);

Mask binarize_mask(const Mask& mask, int class_id);

struct EpisodeTask {
  int class_id = 0;
  std::vector<SegSample> support;  // masks binarized to {0, 1}
  std::vector<SegSample> query;
};

// Draws a class uniformly from class_pool, then K + Q distinct samples
// containing it. Classes without enough samples are skipped in favour of
// another draw; throws when no class can supply K + Q samples.
EpisodeTask sample_episode(const Dataset& pool, const std::vector<int>& class_pool, std::size_t shots,
                           std::size_t queries, CounterRng& rng);

}  // namespace cwt
