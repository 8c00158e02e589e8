#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "cwt/config.hpp"
#include "cwt/meta.hpp"

namespace cwt {

struct AblationPlan {
  std::vector<AblationMode> modes{AblationMode::full_cwt, AblationMode::classifier_only,
                                  AblationMode::whole_model_meta, AblationMode::attend_support};
  // full_cwt is evaluated at every entry; the other modes at the first.
  std::vector<std::size_t> shots{1};
  // Adds full_cwt and classifier_only on cfg.cross_data.
  bool cross_domain = false;
};

std::string report_key(AblationMode mode, std::size_t shots, bool cross = false);

struct StageTime {
  std::string stage;
  double seconds = 0.0;
};

struct SeedResult {
  std::uint64_t seed = 0;
  std::map<std::string, EvalReport> reports;
  std::vector<double> meta_loss;
  std::vector<double> support_meta_loss;
  std::vector<double> whole_model_loss;
  std::vector<std::string> log;
  std::string backbone_hash_before;  // right after freezing
  std::string backbone_hash_after;   // after every training and evaluation stage
  std::vector<StageTime> timings;

  double miou(const std::string& key) const;
  double seconds(const std::string& stage) const;
};

// CWT initialization shared by the pipeline and the metatrain command.
CwtParams initial_cwt(const CwtOptions& options, std::uint64_t seed);

using LogFn = std::function<void(const std::string&)>;

// Data generation, pretraining, freezing, the meta-training runs the plan
// needs, and every evaluation, all derived from one seed.
SeedResult run_seed(const RunConfig& cfg, std::uint64_t seed, const AblationPlan& plan, const LogFn& log = {});

}  // namespace cwt
