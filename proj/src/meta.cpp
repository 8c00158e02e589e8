#include "cwt/meta.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <set>
#include <sstream>

#include <omp.h>

#include "cwt/hash.hpp"
#include "cwt/kernels.hpp"
#include "cwt/ops.hpp"
#include "cwt/optim.hpp"

namespace cwt {

namespace {

std::vector<int> mask_labels(const Mask& m) {
  std::vector<int> out(m.labels.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = m.labels[i] ? 1 : 0;
  return out;
}

struct SupportView {
  std::vector<FeatureMap> features;
  std::vector<Mask> masks;
};

SupportView support_view(FeatureCache& cache, const EpisodeTask& task) {
  SupportView v;
  for (const auto& s : task.support) {
    v.features.push_back(cache.get(s));
    v.masks.push_back(s.mask);
  }
  return v;
}

ClassifierWeights fitted_classifier(const SupportView& v, const InnerLoopConfig& inner, CounterRng& rng) {
  const ClassifierWeights w0 = init_classifier(v.features, v.masks, inner.init, rng, inner.init_std);
  return fit_classifier_inner(w0, v.features, v.masks, inner);
}

class OuterStep {
 public:
  OuterStep(std::vector<Tensor> params, const MetaTrainConfig& cfg) {
    if (cfg.optimizer == OuterOptimizer::adam) {
      adam_.emplace(std::move(params), AdamOptions{cfg.outer_lr});
    } else {
      sgd_.emplace(std::move(params), SgdOptions{cfg.outer_lr, 0.0, 0.0});
    }
  }
  void step() {
    if (adam_) adam_->step();
    else sgd_->step();
  }

 private:
  std::optional<Sgd> sgd_;
  std::optional<Adam> adam_;
};

std::string describe(const InnerLoopConfig& c) {
  std::ostringstream out;
  out << "iterations=" << c.iterations << " lr=" << c.lr << " momentum=" << c.momentum
      << " weight_decay=" << c.weight_decay << " init=" << init_name(c.init) << " init_std=" << c.init_std;
  return out.str();
}

double mean_of(const std::vector<double>& v) {
  return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

}  // namespace

std::string optimizer_name(OuterOptimizer o) { return o == OuterOptimizer::adam ? "adam" : "sgd"; }

OuterOptimizer parse_optimizer(const std::string& name) {
  if (name == "sgd") return OuterOptimizer::sgd;
  if (name == "adam") return OuterOptimizer::adam;
  throw ConfigError("unknown optimizer '" + name + "' (expected sgd or adam)");
}

std::string mode_name(AblationMode mode) {
  switch (mode) {
    case AblationMode::full_cwt: return "full_cwt";
    case AblationMode::classifier_only: return "classifier_only";
    case AblationMode::whole_model_meta: return "whole_model_meta";
    case AblationMode::attend_support: return "attend_support";
  }
  return "?";
}

AblationMode parse_mode(const std::string& name) {
  for (auto m : {AblationMode::full_cwt, AblationMode::classifier_only, AblationMode::whole_model_meta,
                 AblationMode::attend_support}) {
    if (mode_name(m) == name) return m;
  }
  throw ConfigError("unknown mode '" + name + "'");
}

void MetaTrainConfig::validate() const {
  if (epochs < 0 || episodes_per_epoch < 0) throw ConfigError("meta_train: epochs and episodes must be nonnegative");
  if (!(outer_lr >= 0.0)) throw ConfigError("meta_train: outer_lr must be nonnegative");
  if (shots == 0 || queries == 0) throw ConfigError("meta_train: shots and queries must be positive");
  if (inner.iterations < 0) throw ConfigError("meta_train: inner iterations must be nonnegative");
}

void EvalProtocol::validate() const {
  if (trials < 1) throw ConfigError("eval: trials must be at least 1");
  if (episodes_per_trial < 1) throw ConfigError("eval: episodes_per_trial must be at least 1");
  if (shots == 0) throw ConfigError("eval: shots must be positive");
}

const FeatureMap& FeatureCache::get(const SegSample& sample) {
  std::lock_guard lock(mutex_);
  auto it = entries_.find(sample.id);
  if (it == entries_.end()) it = entries_.emplace(sample.id, backbone_->encode(sample)).first;
  return it->second;
}

void FeatureCache::warm(const Dataset& pool) {
  for (const auto& s : pool.samples) get(s);
}

std::size_t FeatureCache::size() const {
  std::lock_guard lock(mutex_);
  return entries_.size();
}

MetaTrainResult meta_train(FeatureCache& cache, const Dataset& base_pool, const std::vector<int>& classes,
                           const CwtParams& init, const MetaTrainConfig& cfg) {
  cfg.validate();
  if (!cache.backbone().is_frozen()) throw FrozenError("meta_train: backbone must be frozen");
  if (cache.backbone().params().feature_dim() != init.options.feature_dim) {
    throw ConfigError("meta_train: backbone feature_dim " + std::to_string(cache.backbone().params().feature_dim()) +
                      " != cwt feature_dim " + std::to_string(init.options.feature_dim));
  }
  MetaTrainResult result{init.clone(), {}, {}};
  {
    std::ostringstream line;
    line << "meta_train epochs=" << cfg.epochs << " episodes_per_epoch=" << cfg.episodes_per_epoch
         << " outer_lr=" << cfg.outer_lr << " optimizer=" << optimizer_name(cfg.optimizer) << " shots=" << cfg.shots << " queries=" << cfg.queries
         << " attend=" << (cfg.attend == AttentionSource::query ? "query" : "support") << " inner: " << describe(cfg.inner);
    result.log.push_back(line.str());
  }
  if (cfg.epochs == 0 || cfg.episodes_per_epoch == 0) return result;

  const CounterRng root(cfg.seed);
  CounterRng episode_rng = root.split(1);
  CounterRng init_rng = CounterRng(cfg.inner.seed).split(2);
  CounterRng dropout_rng = root.split(3);
  OuterStep opt(result.cwt.trainable(), cfg);
  GradModeGuard grad_on(true);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    double total = 0.0;
    for (int e = 0; e < cfg.episodes_per_epoch; ++e) {
      const EpisodeTask task = sample_episode(base_pool, classes, cfg.shots, cfg.queries, episode_rng);
      const SupportView support = support_view(cache, task);
      const ClassifierWeights w = fitted_classifier(support, cfg.inner, init_rng);

      std::vector<Tensor> losses;
      for (const auto& q : task.query) {
        const FeatureMap& fq = cache.get(q);
        const ClassifierWeights adapted =
            cfg.attend == AttentionSource::query
                ? cwt_forward(w, fq, result.cwt, true, dropout_rng)
                : cwt_forward_support_variant(w, support.features, result.cwt, true, dropout_rng);
        const auto labels = mask_labels(q.mask);
        losses.push_back(cross_entropy_smoothed(matmul_nt(fq.features, adapted.w), labels, 0.0));
      }
      Tensor loss = losses.front();
      for (std::size_t i = 1; i < losses.size(); ++i) loss = add(loss, losses[i]);
      if (losses.size() > 1) loss = scale(loss, 1.0 / static_cast<double>(losses.size()));
      backward(loss);
      opt.step();
      result.episode_loss.push_back(loss.item());
      total += loss.item();
    }
    std::ostringstream line;
    line << "epoch " << epoch + 1 << " loss=" << total / cfg.episodes_per_epoch;
    result.log.push_back(line.str());
  }
  return result;
}

WholeModelStep whole_model_episode(const BackboneParams& backbone, const EpisodeTask& task) {
  std::vector<const SegSample*> support_ptrs, query_ptrs;
  for (const auto& s : task.support) support_ptrs.push_back(&s);
  for (const auto& s : task.query) query_ptrs.push_back(&s);

  const Tensor support_rows = pixel_rows(backbone_forward(backbone, stack_images(support_ptrs)));
  // Stacked rows follow the support order, so one concatenated mask lines up.
  Mask merged;
  for (const auto& s : task.support) merged.labels.insert(merged.labels.end(), s.mask.labels.begin(), s.mask.labels.end());
  merged.height = merged.labels.size();
  merged.width = 1;
  WholeModelStep step;
  const Tensor rows[] = {support_rows};
  const Mask masks[] = {merged};
  step.prototypes = support_prototypes(rows, masks);

  const Tensor query_rows = pixel_rows(backbone_forward(backbone, stack_images(query_ptrs)));
  std::vector<int> labels;
  for (const auto& q : task.query) {
    const auto l = mask_labels(q.mask);
    labels.insert(labels.end(), l.begin(), l.end());
  }
  step.loss = cross_entropy_smoothed(matmul_nt(query_rows, step.prototypes), labels, 0.0);
  return step;
}

WholeModelResult meta_train_whole_model(const BackboneParams& start, const Dataset& base_pool,
                                        const std::vector<int>& classes, const MetaTrainConfig& cfg) {
  cfg.validate();
  WholeModelResult result{start.clone(), {}};
  if (cfg.epochs == 0 || cfg.episodes_per_epoch == 0) return result;
  const CounterRng root(cfg.seed);
  CounterRng episode_rng = root.split(1);
  OuterStep opt(result.backbone.tensors(), cfg);
  GradModeGuard grad_on(true);
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (int e = 0; e < cfg.episodes_per_epoch; ++e) {
      const EpisodeTask task = sample_episode(base_pool, classes, cfg.shots, cfg.queries, episode_rng);
      const WholeModelStep step = whole_model_episode(result.backbone, task);
      backward(step.loss);
      opt.step();
      result.episode_loss.push_back(step.loss.item());
    }
  }
  for (Tensor& t : result.backbone.tensors()) t.zero_grad();
  return result;
}

double iou_from_counts(std::uint64_t intersection, std::uint64_t union_count) {
  if (union_count == 0) return intersection == 0 ? 1.0 : 0.0;
  return static_cast<double>(intersection) / static_cast<double>(union_count);
}

EpisodeRecord score_mask(const Mask& predicted, const Mask& truth) {
  if (predicted.labels.size() != truth.labels.size()) {
    throw ShapeError("score_mask: prediction has " + std::to_string(predicted.labels.size()) + " pixels, truth " +
                     std::to_string(truth.labels.size()));
  }
  EpisodeRecord r;
  for (std::size_t i = 0; i < truth.labels.size(); ++i) {
    const bool p = predicted.labels[i] != 0;
    const bool t = truth.labels[i] != 0;
    r.fg_intersection += p && t;
    r.fg_union += p || t;
    r.bg_intersection += !p && !t;
    r.bg_union += !p || !t;
  }
  r.fg_iou = iou_from_counts(r.fg_intersection, r.fg_union);
  r.bg_iou = iou_from_counts(r.bg_intersection, r.bg_union);
  return r;
}

std::vector<ClassIou> per_class_iou(std::span<const EpisodeRecord> records) {
  std::map<int, ClassIou> by_class;
  for (const auto& r : records) {
    ClassIou& c = by_class[r.class_id];
    c.class_id = r.class_id;
    c.intersection += r.fg_intersection;
    c.union_count += r.fg_union;
    ++c.episodes;
  }
  std::vector<ClassIou> out;
  for (auto& [id, c] : by_class) {
    c.iou = iou_from_counts(c.intersection, c.union_count);
    out.push_back(c);
  }
  return out;
}

double miou(std::span<const EpisodeRecord> records, bool include_background) {
  if (records.empty()) return 0.0;
  const auto classes = per_class_iou(records);
  double total = 0.0;
  for (const auto& c : classes) total += c.iou;
  std::size_t count = classes.size();
  if (include_background) {
    std::uint64_t inter = 0, uni = 0;
    for (const auto& r : records) {
      inter += r.bg_intersection;
      uni += r.bg_union;
    }
    total += iou_from_counts(inter, uni);
    ++count;
  }
  return total / static_cast<double>(count);
}

EvalReport evaluate_episodes(const Dataset& pool, const std::vector<int>& classes, const EvalProtocol& protocol,
                             const EpisodePredictor& predictor) {
  protocol.validate();
  EvalReport report;
  for (int trial = 0; trial < protocol.trials; ++trial) {
    const CounterRng trial_root(protocol.seed_base + static_cast<std::uint64_t>(trial));
    CounterRng sampler = trial_root.split(0);
    std::vector<EpisodeTask> tasks;
    tasks.reserve(static_cast<std::size_t>(protocol.episodes_per_trial));
    for (int e = 0; e < protocol.episodes_per_trial; ++e) {
      tasks.push_back(sample_episode(pool, classes, protocol.shots, 1, sampler));
    }

    std::vector<EpisodeRecord> records(tasks.size());
    const auto run = [&](std::size_t e) {
      NoGradGuard no_grad;
      CounterRng rng = trial_root.split(e + 1);
      const std::vector<Mask> masks = predictor(tasks[e], rng);
      if (masks.size() != tasks[e].query.size()) throw Error("predictor returned the wrong number of masks");
      EpisodeRecord r = score_mask(masks.front(), tasks[e].query.front().mask);
      r.trial = trial;
      r.episode = static_cast<int>(e);
      r.class_id = tasks[e].class_id;
      records[e] = r;
    };
    const auto n = static_cast<std::ptrdiff_t>(tasks.size());
    if (protocol.parallel && kernels::max_threads() > 1) {
      std::string failure;
#pragma omp parallel for schedule(dynamic) num_threads(kernels::max_threads())
      for (std::ptrdiff_t e = 0; e < n; ++e) {
        try {
          run(static_cast<std::size_t>(e));
        } catch (const std::exception& ex) {
#pragma omp critical
          failure = ex.what();
        }
      }
      if (!failure.empty()) throw Error("parallel evaluation failed: " + failure);
    } else {
      for (std::ptrdiff_t e = 0; e < n; ++e) run(static_cast<std::size_t>(e));
    }
    report.per_trial_miou.push_back(miou(records, protocol.include_background));
    report.episodes.insert(report.episodes.end(), records.begin(), records.end());
  }
  report.mean_miou = mean_of(report.per_trial_miou);
  if (report.per_trial_miou.size() > 1) {
    double ss = 0.0;
    for (double v : report.per_trial_miou) ss += (v - report.mean_miou) * (v - report.mean_miou);
    const double sd = std::sqrt(ss / static_cast<double>(report.per_trial_miou.size() - 1));
    report.ci95 = 1.96 * sd / std::sqrt(static_cast<double>(report.per_trial_miou.size()));
  }
  report.per_class = per_class_iou(report.episodes);
  std::uint64_t inter = 0, uni = 0;
  for (const auto& r : report.episodes) {
    inter += r.bg_intersection;
    uni += r.bg_union;
  }
  report.background_iou = iou_from_counts(inter, uni);
  return report;
}

EpisodePredictor make_predictor(const EvalModel& model) {
  if (!model.cache) throw ConfigError("eval: no feature cache");
  const bool needs_cwt = model.mode == AblationMode::full_cwt || model.mode == AblationMode::attend_support;
  if (needs_cwt && !model.cwt) throw ConfigError("eval: mode " + mode_name(model.mode) + " needs CWT parameters");
  if (needs_cwt && model.cwt->options.feature_dim != model.cache->backbone().params().feature_dim()) {
    throw ConfigError("eval: backbone/CWT feature_dim mismatch");
  }
  return [model](const EpisodeTask& task, CounterRng& rng) {
    const SupportView support = support_view(*model.cache, task);
    ClassifierWeights w;
    if (model.mode == AblationMode::whole_model_meta) {
      w = init_classifier(support.features, support.masks, ClassifierInit::prototype, rng);
    } else {
      w = fitted_classifier(support, model.inner, rng);
    }
    std::vector<Mask> out;
    for (const auto& q : task.query) {
      const FeatureMap& fq = model.cache->get(q);
      ClassifierWeights adapted = w;
      if (model.mode == AblationMode::full_cwt) {
        adapted = cwt_forward(w, fq, *model.cwt, false, rng);
      } else if (model.mode == AblationMode::attend_support) {
        adapted = cwt_forward_support_variant(w, support.features, *model.cwt, false, rng);
      }
      out.push_back(predict_pixels(adapted, fq).mask);
    }
    return out;
  };
}

std::string cwt_hash(const CwtParams& params) {
  std::vector<Tensor> tensors;
  for (const auto& [name, t] : params.named_tensors()) tensors.push_back(t);
  return sha256_hex(serialize_tensors(tensors));
}

namespace {

EvalReport run_audited(const EvalModel& model, const Dataset& pool, const std::vector<int>& classes,
                       const EvalProtocol& protocol) {
  const FrozenBackbone& backbone = model.cache->backbone();
  if (!backbone.is_frozen()) throw FrozenError("eval: backbone must be frozen");
  const bool uses_cwt = model.mode == AblationMode::full_cwt || model.mode == AblationMode::attend_support;
  const std::string bb_before = backbone.hash();
  const std::string cwt_before = uses_cwt ? cwt_hash(*model.cwt) : "";

  if (protocol.parallel) model.cache->warm(pool);
  EvalReport report = evaluate_episodes(pool, classes, protocol, make_predictor(model));

  report.mode = mode_name(model.mode);
  report.backbone_hash = backbone.hash();
  report.cwt_hash = uses_cwt ? cwt_hash(*model.cwt) : "";
  report.params_unchanged = report.backbone_hash == bb_before && report.cwt_hash == cwt_before;

  std::ostringstream fp;
  fp << "mode=" << report.mode << ";trials=" << protocol.trials << ";episodes=" << protocol.episodes_per_trial
     << ";shots=" << protocol.shots << ";seed_base=" << protocol.seed_base
     << ";include_background=" << protocol.include_background << ";inner=" << describe(model.inner)
     << ";domain=" << domain_name(pool.spec.domain) << ";backbone=" << bb_before << ";cwt=" << cwt_before;
  report.fingerprint = sha256_hex(fp.str());
  return report;
}

}  // namespace

EvalReport meta_test(const EvalModel& model, const Dataset& novel_pool, const std::vector<int>& novel_classes,
                     const std::vector<int>& training_classes, const EvalProtocol& protocol) {
  if (!model.cache) throw ConfigError("eval: no feature cache");
  const std::set<int> seen(training_classes.begin(), training_classes.end());
  for (int c : novel_classes) {
    if (seen.count(c)) {
      throw ConfigError("eval: novel class " + std::to_string(c) + " is also a training class");
    }
  }
  return run_audited(model, novel_pool, novel_classes, protocol);
}

EvalReport cross_domain_eval(const EvalModel& model, const Dataset& target, Domain training_domain,
                             const std::vector<int>& training_classes, const EvalProtocol& protocol) {
  if (!model.cache) throw ConfigError("eval: no feature cache");
  std::vector<int> classes = target.class_ids();
  if (target.spec.domain == training_domain) {
    const std::set<int> seen(training_classes.begin(), training_classes.end());
    std::erase_if(classes, [&](int c) { return seen.count(c) > 0; });
    if (classes.empty()) throw ConfigError("cross-domain: every target class was seen in training");
    return meta_test(model, restrict_classes(target, classes), classes, training_classes, protocol);
  }
  return run_audited(model, target, classes, protocol);
}

}  // namespace cwt
