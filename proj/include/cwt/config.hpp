#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "cwt/adaptation.hpp"
#include "cwt/backbone.hpp"
#include "cwt/meta.hpp"
#include "cwt/taskgen.hpp"

namespace cwt {

enum class Precision { f32, f64 };

std::string precision_name(Precision p);
Precision parse_precision(const std::string& name);

// Everything a command needs. Presets fill every field; JSON files override
// individual fields on top of the chosen preset.
struct RunConfig {
  std::string preset = "toy";
  std::uint64_t seed = 0;

  DatasetSpec data;        // training domain
  DatasetSpec cross_data;  // target domain of --cross-domain
  SplitSpec split;
  BackboneArch arch;
  PretrainConfig pretrain;
  CwtOptions cwt;
  MetaTrainConfig meta;
  MetaTrainConfig whole_model;  // episodic schedule of the whole-model ablation
  EvalProtocol eval;
  AblationMode mode = AblationMode::full_cwt;
  bool cross_domain = false;

  Precision precision = Precision::f64;
  bool parallel_eval = false;
  bool strict_deterministic = false;

  std::vector<std::uint64_t> ablate_seeds{0, 1, 2, 3, 4};

  std::string out_dir = "out";
  std::string data_dir;
  std::string backbone_path;
  std::string cwt_path;

  void validate() const;
};

nlohmann::json dataset_to_json(const DatasetSpec& spec);
DatasetSpec dataset_from_json(const nlohmann::json& j, const DatasetSpec& base, const std::string& path = "data");
nlohmann::json cwt_options_to_json(const CwtOptions& options);
CwtOptions cwt_options_from_json(const nlohmann::json& j, const CwtOptions& base);

RunConfig preset_config(const std::string& name);

// Propagates the run seed into every component seed.
void apply_seed(RunConfig& cfg, std::uint64_t seed);

nlohmann::json to_json(const RunConfig& cfg);
// Fields missing from j keep their value in `base`. Unknown keys are errors.
RunConfig from_json(const nlohmann::json& j, const RunConfig& base);

// SHA-256 of the canonical JSON without paths.
std::string fingerprint(const RunConfig& cfg);

}  // namespace cwt
