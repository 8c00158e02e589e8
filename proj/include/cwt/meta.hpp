#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <mutex>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "cwt/adaptation.hpp"
#include "cwt/backbone.hpp"
#include "cwt/taskgen.hpp"

namespace cwt {

enum class AblationMode { full_cwt, classifier_only, whole_model_meta, attend_support };

std::string mode_name(AblationMode mode);
AblationMode parse_mode(const std::string& name);

enum class AttentionSource { query, support };

enum class OuterOptimizer { sgd, adam };

std::string optimizer_name(OuterOptimizer o);
OuterOptimizer parse_optimizer(const std::string& name);

struct MetaTrainConfig {
  int epochs = 20;
  int episodes_per_epoch = 200;
  double outer_lr = 1e-3;
  OuterOptimizer optimizer = OuterOptimizer::sgd;  // plain SGD: no momentum, no weight decay
  InnerLoopConfig inner;
  std::size_t shots = 1;
  std::size_t queries = 1;
  std::uint64_t seed = 0;
  AttentionSource attend = AttentionSource::query;

  void validate() const;
};

// Memoized features of a frozen backbone, keyed by sample id. One cache per
// dataset. Lookups are thread-safe.
class FeatureCache {
 public:
  explicit FeatureCache(const FrozenBackbone& backbone) : backbone_(&backbone) {}

  const FeatureMap& get(const SegSample& sample);
  void warm(const Dataset& pool);
  const FrozenBackbone& backbone() const { return *backbone_; }
  std::size_t size() const;

 private:
  const FrozenBackbone* backbone_;
  mutable std::mutex mutex_;
  std::unordered_map<std::size_t, FeatureMap> entries_;
};

struct MetaTrainResult {
  CwtParams cwt;
  std::vector<double> episode_loss;
  std::vector<std::string> log;
};

// Outer loop: one optimizer step on the CWT per episode. The backbone and the
// fitted classifier are constants.
MetaTrainResult meta_train(FeatureCache& cache, const Dataset& base_pool, const std::vector<int>& classes,
                           const CwtParams& init, const MetaTrainConfig& cfg);

struct WholeModelStep {
  Tensor loss;
  Tensor prototypes;  // [2 x d], row 0 background
};

// Query loss of a prototype classifier, differentiable into the backbone.
WholeModelStep whole_model_episode(const BackboneParams& backbone, const EpisodeTask& task);

struct WholeModelResult {
  BackboneParams backbone;
  std::vector<double> episode_loss;
};

WholeModelResult meta_train_whole_model(const BackboneParams& start, const Dataset& base_pool,
                                        const std::vector<int>& classes, const MetaTrainConfig& cfg);

struct EvalProtocol {
  int trials = 5;
  int episodes_per_trial = 1000;
  std::size_t shots = 1;
  std::uint64_t seed_base = 0;
  bool include_background = false;
  bool parallel = false;

  void validate() const;
};

struct EpisodeRecord {
  int trial = 0;
  int episode = 0;
  int class_id = 0;
  std::uint64_t fg_intersection = 0;
  std::uint64_t fg_union = 0;
  std::uint64_t bg_intersection = 0;
  std::uint64_t bg_union = 0;
  double fg_iou = 0.0;
  double bg_iou = 0.0;
};

// Foreground/background counts of a binary prediction against a binary mask.
EpisodeRecord score_mask(const Mask& predicted, const Mask& truth);

double iou_from_counts(std::uint64_t intersection, std::uint64_t union_count);

// Per class: summed intersections over summed unions; then the unweighted mean
// over classes. Background counts as one extra class when included.
double miou(std::span<const EpisodeRecord> records, bool include_background = false);

struct ClassIou {
  int class_id = 0;
  std::uint64_t intersection = 0;
  std::uint64_t union_count = 0;
  std::size_t episodes = 0;
  double iou = 0.0;
};

std::vector<ClassIou> per_class_iou(std::span<const EpisodeRecord> records);

struct EvalReport {
  std::string mode;
  std::vector<double> per_trial_miou;
  double mean_miou = 0.0;
  double ci95 = 0.0;  // half-width over trials
  std::vector<ClassIou> per_class;
  double background_iou = 0.0;
  std::vector<EpisodeRecord> episodes;
  std::string fingerprint;
  std::string backbone_hash;
  std::string cwt_hash;
  bool params_unchanged = true;
};

// Predicts one binary mask per query image of the task. The rng is private to
// the episode.
using EpisodePredictor = std::function<std::vector<Mask>(const EpisodeTask& task, CounterRng& rng)>;

// Episodes are drawn sequentially per trial from seed_base + trial, so the
// episode set does not depend on the thread count.
EvalReport evaluate_episodes(const Dataset& pool, const std::vector<int>& classes, const EvalProtocol& protocol,
                             const EpisodePredictor& predictor);

struct EvalModel {
  FeatureCache* cache = nullptr;   // over the evaluation pool
  const CwtParams* cwt = nullptr;  // unused by classifier_only and whole_model_meta
  AblationMode mode = AblationMode::full_cwt;
  InnerLoopConfig inner;
};

EpisodePredictor make_predictor(const EvalModel& model);

// Throws ConfigError when a novel class is also a training class.
EvalReport meta_test(const EvalModel& model, const Dataset& novel_pool, const std::vector<int>& novel_classes,
                     const std::vector<int>& training_classes, const EvalProtocol& protocol);

// Evaluation on another domain. Training classes are removed only when the
// target domain matches the training domain.
EvalReport cross_domain_eval(const EvalModel& model, const Dataset& target, Domain training_domain,
                             const std::vector<int>& training_classes, const EvalProtocol& protocol);

std::string cwt_hash(const CwtParams& params);

}  // namespace cwt
