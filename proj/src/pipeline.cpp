#include "cwt/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <memory>
#include <sstream>

namespace cwt {

std::string report_key(AblationMode mode, std::size_t shots, bool cross) {
  return (cross ? "cross:" : "") + mode_name(mode) + "@" + std::to_string(shots);
}

double SeedResult::miou(const std::string& key) const {
  const auto it = reports.find(key);
  if (it == reports.end()) throw Error("no report '" + key + "' for seed " + std::to_string(seed));
  return it->second.mean_miou;
}

double SeedResult::seconds(const std::string& stage) const {
  for (const auto& t : timings) {
    if (t.stage == stage) return t.seconds;
  }
  return 0.0;
}

CwtParams initial_cwt(const CwtOptions& options, std::uint64_t seed) {
  CounterRng rng = CounterRng(seed).split(11);
  return CwtParams::init(options, rng);
}

namespace {

class Stopwatch {
 public:
  Stopwatch(SeedResult& r, std::string stage, const LogFn& log)
      : result_(r), stage_(std::move(stage)), log_(log), start_(std::chrono::steady_clock::now()) {}
  ~Stopwatch() {
    const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    result_.timings.push_back({stage_, s});
    if (log_) {
      std::ostringstream line;
      line << "seed " << result_.seed << " " << stage_ << " " << s << "s";
      log_(line.str());
    }
  }

 private:
  SeedResult& result_;
  std::string stage_;
  const LogFn& log_;
  std::chrono::steady_clock::time_point start_;
};

bool wants(const AblationPlan& plan, AblationMode m) {
  return std::find(plan.modes.begin(), plan.modes.end(), m) != plan.modes.end();
}

}  // namespace

SeedResult run_seed(const RunConfig& base_cfg, std::uint64_t seed, const AblationPlan& plan, const LogFn& log) {
  if (plan.shots.empty()) throw ConfigError("ablation plan needs at least one shot count");
  RunConfig cfg = base_cfg;
  apply_seed(cfg, seed);
  cfg.validate();

  SeedResult result;
  result.seed = seed;
  const auto note = [&](const std::string& line) {
    result.log.push_back(line);
    if (log) log("seed " + std::to_string(seed) + " " + line);
  };

  Dataset data;
  SplitPools pools;
  {
    Stopwatch sw(result, "data", log);
    data = generate_dataset(cfg.data);
    pools = split_classes(data, cfg.split);
  }
  PretrainResult pre;
  {
    Stopwatch sw(result, "pretrain", log);
    pre = pretrain(pools.base, pools.classes.base_classes, cfg.arch, cfg.pretrain);
  }
  for (const auto& line : pre.log) note(line);

  const FrozenBackbone backbone(pre.backbone.clone());
  result.backbone_hash_before = backbone.hash();
  FeatureCache base_cache(backbone);
  FeatureCache novel_cache(backbone);

  EvalProtocol protocol = cfg.eval;
  protocol.parallel = cfg.parallel_eval && !cfg.strict_deterministic;
  const std::size_t first_shot = plan.shots.front();

  const bool need_cwt = wants(plan, AblationMode::full_cwt) || plan.cross_domain;
  const CwtParams cwt_init = initial_cwt(cfg.cwt, seed);

  CwtParams cwt = cwt_init.clone();
  if (need_cwt) {
    Stopwatch sw(result, "meta_train", log);
    MetaTrainResult mr = meta_train(base_cache, pools.base, pools.classes.base_classes, cwt_init, cfg.meta);
    cwt = mr.cwt;
    result.meta_loss = mr.episode_loss;
    for (const auto& line : mr.log) note(line);
  }

  CwtParams support_cwt = cwt_init.clone();
  if (wants(plan, AblationMode::attend_support)) {
    Stopwatch sw(result, "meta_train_support", log);
    MetaTrainConfig mc = cfg.meta;
    mc.attend = AttentionSource::support;
    MetaTrainResult mr = meta_train(base_cache, pools.base, pools.classes.base_classes, cwt_init, mc);
    support_cwt = mr.cwt;
    result.support_meta_loss = mr.episode_loss;
  }

  const auto evaluate = [&](AblationMode mode, std::size_t shots, FeatureCache& cache, const CwtParams* params) {
    Stopwatch sw(result, "eval " + report_key(mode, shots), log);
    EvalProtocol p = protocol;
    p.shots = shots;
    const EvalModel model{&cache, params, mode, cfg.meta.inner};
    EvalReport report = meta_test(model, pools.novel, pools.classes.novel_classes, pools.classes.base_classes, p);
    note(report_key(mode, shots) + " miou=" + std::to_string(report.mean_miou));
    result.reports[report_key(mode, shots)] = std::move(report);
  };

  if (wants(plan, AblationMode::full_cwt)) {
    for (std::size_t k : plan.shots) evaluate(AblationMode::full_cwt, k, novel_cache, &cwt);
  }
  if (wants(plan, AblationMode::classifier_only)) {
    evaluate(AblationMode::classifier_only, first_shot, novel_cache, nullptr);
  }
  if (wants(plan, AblationMode::attend_support)) {
    evaluate(AblationMode::attend_support, first_shot, novel_cache, &support_cwt);
  }
  if (wants(plan, AblationMode::whole_model_meta)) {
    WholeModelResult wm;
    {
      Stopwatch sw(result, "meta_train_whole_model", log);
      wm = meta_train_whole_model(pre.backbone, pools.base, pools.classes.base_classes, cfg.whole_model);
    }
    result.whole_model_loss = wm.episode_loss;
    const FrozenBackbone whole(std::move(wm.backbone));
    FeatureCache whole_cache(whole);
    evaluate(AblationMode::whole_model_meta, first_shot, whole_cache, nullptr);
  }

  if (plan.cross_domain) {
    Stopwatch sw(result, "cross_domain", log);
    const Dataset target = generate_dataset(cfg.cross_data);
    FeatureCache cross_cache(backbone);
    EvalProtocol p = protocol;
    p.shots = first_shot;
    for (AblationMode mode : {AblationMode::full_cwt, AblationMode::classifier_only}) {
      const EvalModel model{&cross_cache, &cwt, mode, cfg.meta.inner};
      EvalReport report = cross_domain_eval(model, target, cfg.data.domain, pools.classes.base_classes, p);
      note(report_key(mode, first_shot, true) + " miou=" + std::to_string(report.mean_miou));
      result.reports[report_key(mode, first_shot, true)] = std::move(report);
    }
  }

  result.backbone_hash_after = backbone.hash();
  return result;
}

}  // namespace cwt
