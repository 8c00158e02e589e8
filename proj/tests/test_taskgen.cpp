#include <doctest.h>

#include <algorithm>
#include <set>

#include "cwt/taskgen.hpp"

using namespace cwt;

namespace {

DatasetSpec small_spec(std::uint64_t seed = 1) {
  DatasetSpec s;
  s.num_classes = 12;
  s.images_per_class = 6;
  s.image_size = 16;
  s.seed = seed;
  return s;
}

}  // namespace

TEST_CASE("generation is deterministic per seed and differs across seeds") {
  const Dataset a = generate_dataset(small_spec(1));
  const Dataset b = generate_dataset(small_spec(1));
  const Dataset c = generate_dataset(small_spec(2));
  REQUIRE(a.samples.size() == b.samples.size());
  bool differs = false;
  for (std::size_t i = 0; i < a.samples.size(); ++i) {
    CHECK(a.samples[i].mask.labels == b.samples[i].mask.labels);
    const auto x = a.samples[i].image.data(), y = b.samples[i].image.data();
    CHECK(std::equal(x.begin(), x.end(), y.begin()));
    differs = differs || a.samples[i].mask.labels != c.samples[i].mask.labels;
  }
  CHECK(differs);
}

TEST_CASE("sample invariants: mask classes are in class_set, extents match, pixels in [0, 1]") {
  const Dataset d = generate_dataset(small_spec());
  CHECK(d.class_ids().size() == 12);
  for (const auto& s : d.samples) {
    CHECK(s.image.dim(1) == s.mask.height);
    CHECK(s.image.dim(2) == s.mask.width);
    std::set<int> present;
    for (auto l : s.mask.labels) {
      if (l) present.insert(l);
    }
    CHECK(std::vector<int>(present.begin(), present.end()) == s.class_set);
    CHECK(s.contains(s.primary_class));
    for (double v : s.image.data()) {
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
    }
  }
}

TEST_CASE("class splits are disjoint and cover every class") {
  const Dataset d = generate_dataset(small_spec());
  for (int k = 0; k < 4; ++k) {
    const SplitPools p = split_classes(d, {k, 4});
    CHECK(p.classes.novel_classes.size() == 3);
    CHECK(p.classes.base_classes.size() == 9);
    for (int c : p.classes.novel_classes) {
      CHECK(std::find(p.classes.base_classes.begin(), p.classes.base_classes.end(), c) ==
            p.classes.base_classes.end());
    }
    for (const auto& s : p.novel.samples) {
      for (int c : s.class_set) {
        CHECK(std::find(p.classes.novel_classes.begin(), p.classes.novel_classes.end(), c) !=
              p.classes.novel_classes.end());
      }
    }
  }
}

TEST_CASE("episodes: K distinct supports, binarized masks, class from the pool") {
  const Dataset d = generate_dataset(small_spec());
  CounterRng rng(9);
  for (int i = 0; i < 20; ++i) {
    const EpisodeTask t = sample_episode(d, {2, 5, 7}, 5, 1, rng);
    CHECK(t.support.size() == 5);
    CHECK(t.query.size() == 1);
    std::set<std::size_t> ids;
    for (const auto& s : t.support) ids.insert(s.id);
    ids.insert(t.query.front().id);
    CHECK(ids.size() == 6);
    CHECK((t.class_id == 2 || t.class_id == 5 || t.class_id == 7));
    for (const auto& s : t.support) {
      CHECK(s.mask.count(1) > 0);
      CHECK(s.mask.count(0) + s.mask.count(1) == s.mask.labels.size());
    }
  }
}

TEST_CASE("domains use disjoint archetype banks") {
  const auto a = archetype_bank(Domain::shapesA), b = archetype_bank(Domain::shapesB);
  for (int x : a) CHECK(std::find(b.begin(), b.end(), x) == b.end());
}

TEST_CASE("invalid specs are rejected") {
  DatasetSpec s = small_spec();
  s.num_classes = 0;
  CHECK_THROWS_AS(generate_dataset(s), ConfigError);
  s = small_spec();
  s.variation.occlusion_prob = 1.5;
  CHECK_THROWS_AS(generate_dataset(s), ConfigError);
}
