#include <doctest.h>

#include "cwt/meta.hpp"

using namespace cwt;

namespace {

DatasetSpec small_spec() {
  DatasetSpec s;
  s.num_classes = 12;
  s.images_per_class = 6;
  s.image_size = 12;
  s.seed = 4;
  return s;
}

BackboneArch small_arch() { return {kImageChannels, 4, 8}; }

CwtOptions small_cwt() {
  CwtOptions o;
  o.feature_dim = 8;
  o.latent_dim = 8;
  o.heads = 2;
  return o;
}

Mask half_mask(std::size_t n) {
  Mask m{n, n, std::vector<std::uint8_t>(n * n, 0)};
  for (std::size_t i = 0; i < n * n / 2; ++i) m.labels[i] = 1;
  return m;
}

}  // namespace

TEST_CASE("all-foreground prediction against a half mask scores 0.5") {
  const Mask truth = half_mask(32);
  const Mask pred{32, 32, std::vector<std::uint8_t>(1024, 1)};
  EpisodeRecord r = score_mask(pred, truth);
  CHECK(r.fg_intersection == 512);
  CHECK(r.fg_union == 1024);
  CHECK(r.fg_iou == 0.5);
  r.class_id = 3;
  CHECK(miou({&r, 1}) == 0.5);
}

TEST_CASE("mIoU is the unweighted class mean of summed counts") {
  std::vector<EpisodeRecord> recs(3);
  recs[0] = {0, 0, 1, 2, 10, 0, 0, 0.2, 0.0};
  recs[1] = {0, 1, 1, 2, 10, 0, 0, 0.2, 0.0};
  recs[2] = {0, 2, 2, 8, 10, 0, 0, 0.8, 0.0};
  CHECK(miou(recs) == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(iou_from_counts(0, 0) == 1.0);
  CHECK(iou_from_counts(0, 5) == 0.0);
}

TEST_CASE("meta_train with zero epochs returns the initialization") {
  const Dataset d = generate_dataset(small_spec());
  const SplitPools pools = split_classes(d, {0, 4});
  CounterRng rng(1);
  const FrozenBackbone bb(BackboneParams::init(small_arch(), rng));
  FeatureCache cache(bb);
  const CwtParams init = CwtParams::init(small_cwt(), rng);
  MetaTrainConfig cfg;
  cfg.epochs = 0;
  const MetaTrainResult r = meta_train(cache, pools.base, pools.classes.base_classes, init, cfg);
  CHECK(cwt_hash(r.cwt) == cwt_hash(init));
  CHECK(r.episode_loss.empty());
}

TEST_CASE("meta_train records one loss per episode and leaves the backbone untouched") {
  const Dataset d = generate_dataset(small_spec());
  const SplitPools pools = split_classes(d, {0, 4});
  CounterRng rng(2);
  const FrozenBackbone bb(BackboneParams::init(small_arch(), rng));
  const std::string before = bb.hash();
  FeatureCache cache(bb);
  MetaTrainConfig cfg;
  cfg.epochs = 2;
  cfg.episodes_per_epoch = 5;
  cfg.outer_lr = 0.1;
  cfg.inner.iterations = 5;
  const CwtParams init = CwtParams::init(small_cwt(), rng);
  const MetaTrainResult r = meta_train(cache, pools.base, pools.classes.base_classes, init, cfg);
  CHECK(r.episode_loss.size() == 10);
  CHECK(cwt_hash(r.cwt) != cwt_hash(init));
  CHECK(bb.hash() == before);
}

TEST_CASE("whole-model episode uses brute-force support prototypes") {
  const Dataset d = generate_dataset(small_spec());
  CounterRng rng(3);
  const BackboneParams bb = BackboneParams::init(small_arch(), rng);
  const EpisodeTask task = sample_episode(d, {1, 2, 3}, 2, 1, rng);
  const WholeModelStep step = whole_model_episode(bb, task);
  std::vector<double> sums(16, 0.0);
  int counts[2] = {0, 0};
  for (const auto& s : task.support) {
    const FeatureMap fm = encode(bb, s);
    for (std::size_t p = 0; p < fm.pixels(); ++p) {
      const int row = s.mask.labels[p];
      ++counts[row];
      for (std::size_t j = 0; j < 8; ++j) sums[row * 8 + j] += fm.features.at(p, j);
    }
  }
  for (int row = 0; row < 2; ++row) {
    for (std::size_t j = 0; j < 8; ++j) {
      CHECK(step.prototypes.at(row, j) == doctest::Approx(sums[row * 8 + j] / counts[row]).epsilon(1e-10));
    }
  }
}

TEST_CASE("whole-model training at lr 0 leaves the backbone unchanged") {
  const Dataset d = generate_dataset(small_spec());
  const SplitPools pools = split_classes(d, {0, 4});
  CounterRng rng(4);
  const BackboneParams bb = BackboneParams::init(small_arch(), rng);
  MetaTrainConfig cfg;
  cfg.epochs = 1;
  cfg.episodes_per_epoch = 3;
  cfg.outer_lr = 0.0;
  const WholeModelResult r = meta_train_whole_model(bb, pools.base, pools.classes.base_classes, cfg);
  CHECK(FrozenBackbone(r.backbone.clone()).hash() == FrozenBackbone(bb.clone()).hash());
}

TEST_CASE("meta_test refuses overlapping class lists and is deterministic") {
  const Dataset d = generate_dataset(small_spec());
  const SplitPools pools = split_classes(d, {0, 4});
  CounterRng rng(5);
  const FrozenBackbone bb(BackboneParams::init(small_arch(), rng));
  FeatureCache cache(bb);
  InnerLoopConfig inner;
  inner.iterations = 5;
  const EvalModel model{&cache, nullptr, AblationMode::classifier_only, inner};
  EvalProtocol p;
  p.trials = 2;
  p.episodes_per_trial = 6;
  CHECK_THROWS_AS(meta_test(model, pools.novel, pools.classes.novel_classes, pools.classes.novel_classes, p),
                  ConfigError);
  const EvalReport a = meta_test(model, pools.novel, pools.classes.novel_classes, pools.classes.base_classes, p);
  const EvalReport b = meta_test(model, pools.novel, pools.classes.novel_classes, pools.classes.base_classes, p);
  CHECK(a.mean_miou == b.mean_miou);
  CHECK(a.per_trial_miou == b.per_trial_miou);
  CHECK(a.episodes.size() == 12);
  CHECK(a.params_unchanged);
}

TEST_CASE("cross-domain eval on the training domain matches meta_test") {
  const Dataset d = generate_dataset(small_spec());
  const SplitPools pools = split_classes(d, {0, 4});
  CounterRng rng(6);
  const FrozenBackbone bb(BackboneParams::init(small_arch(), rng));
  FeatureCache cache(bb);
  InnerLoopConfig inner;
  inner.iterations = 5;
  const EvalModel model{&cache, nullptr, AblationMode::classifier_only, inner};
  EvalProtocol p;
  p.trials = 1;
  p.episodes_per_trial = 8;
  const EvalReport in = meta_test(model, pools.novel, pools.classes.novel_classes, pools.classes.base_classes, p);
  const EvalReport cross = cross_domain_eval(model, d, Domain::shapesA, pools.classes.base_classes, p);
  CHECK(in.mean_miou == cross.mean_miou);
}

TEST_CASE("an oracle predictor scores 1.0") {
  const Dataset d = generate_dataset(small_spec());
  EvalProtocol p;
  p.trials = 1;
  p.episodes_per_trial = 5;
  const EvalReport r = evaluate_episodes(d, {1, 2, 3}, p, [](const EpisodeTask& t, CounterRng&) {
    std::vector<Mask> out;
    for (const auto& q : t.query) out.push_back(q.mask);
    return out;
  });
  CHECK(r.mean_miou == 1.0);
}
