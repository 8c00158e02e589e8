// cwtseg: data generation, pretraining, CWT meta-training, evaluation,
// ablation and gradient checks from the command line.

#include <chrono>
#include <optional>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "cwt/checkpoint.hpp"
#include "cwt/config.hpp"
#include "cwt/dataset_io.hpp"
#include "cwt/gradcheck_suite.hpp"
#include "cwt/kernels.hpp"
#include "cwt/pipeline.hpp"
#include "cwt/report.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace cwt;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitValidation = 1;
constexpr int kExitRuntime = 2;

// Raised when a run completes but one of its checks fails.
class CheckFailure : public Error {
 public:
  using Error::Error;
};

struct Flags {
  std::string config_path;
  std::string preset;
  std::optional<std::uint64_t> seed;
  std::string mode;
  bool cross_domain = false;
  std::string precision;
  bool parallel_eval = false;
  bool strict_deterministic = false;
  std::string out;
  std::string data;
  std::string backbone;
  std::string cwt;
  std::string shots = "1";
  std::string corrupt;
};

void log_line(const std::string& line) { std::cerr << line << std::endl; }

RunConfig resolve(const Flags& f) {
  json file;
  if (!f.config_path.empty()) {
    std::ifstream in(f.config_path);
    if (!in) throw ConfigError("cannot open config '" + f.config_path + "'");
    try {
      file = json::parse(in);
    } catch (const json::exception& e) {
      throw ConfigError("config '" + f.config_path + "' is not valid JSON: " + e.what());
    }
  }
  std::string preset = f.preset;
  if (preset.empty()) preset = file.is_object() && file.contains("preset") ? file.at("preset").get<std::string>() : "toy";
  RunConfig cfg = preset_config(preset);
  if (!file.is_null()) cfg = from_json(file, cfg);
  cfg.preset = preset;
  if (f.seed) apply_seed(cfg, *f.seed);
  if (!f.mode.empty()) cfg.mode = parse_mode(f.mode);
  if (f.cross_domain) cfg.cross_domain = true;
  if (!f.precision.empty()) cfg.precision = parse_precision(f.precision);
  if (f.parallel_eval) cfg.parallel_eval = true;
  if (f.strict_deterministic) cfg.strict_deterministic = true;
  if (!f.out.empty()) cfg.out_dir = f.out;
  if (!f.data.empty()) cfg.data_dir = f.data;
  if (!f.backbone.empty()) cfg.backbone_path = f.backbone;
  if (!f.cwt.empty()) cfg.cwt_path = f.cwt;
  cfg.validate();
  if (cfg.strict_deterministic) kernels::set_exec(kernels::Exec::serial);
  return cfg;
}

void prepare_out(const RunConfig& cfg) {
  std::error_code ec;
  fs::create_directories(cfg.out_dir, ec);
  if (ec) throw ConfigError("cannot create output directory '" + cfg.out_dir + "': " + ec.message());
  write_text(cfg.out_dir + "/resolved_config.json", to_json(cfg).dump(2) + "\n");
}

std::string out_path(const RunConfig& cfg, const std::string& name) { return cfg.out_dir + "/" + name; }

Dataset load_training_data(const RunConfig& cfg) {
  if (cfg.data_dir.empty()) return generate_dataset(cfg.data);
  if (!fs::exists(fs::path(cfg.data_dir) / "manifest.json")) {
    throw ConfigError("dataset directory '" + cfg.data_dir + "' has no manifest.json");
  }
  return import_dataset(cfg.data_dir);
}

std::string backbone_path(const RunConfig& cfg) {
  return cfg.backbone_path.empty() ? out_path(cfg, "backbone.cwt") : cfg.backbone_path;
}

std::string cwt_path(const RunConfig& cfg) { return cfg.cwt_path.empty() ? out_path(cfg, "cwt.cwt") : cfg.cwt_path; }

int cmd_gen_data(const RunConfig& cfg) {
  const DatasetSpec& spec = cfg.cross_domain ? cfg.cross_data : cfg.data;
  const std::string dir = cfg.data_dir.empty() ? cfg.out_dir : cfg.data_dir;
  const Dataset d = generate_dataset(spec);
  export_dataset(d, dir);
  std::cout << "wrote " << d.samples.size() << " samples of " << d.class_ids().size() << " classes ("
            << domain_name(spec.domain) << ", seed " << spec.seed << ") to " << dir << "\n";
  return kExitOk;
}

int cmd_pretrain(const RunConfig& cfg) {
  prepare_out(cfg);
  const Dataset data = load_training_data(cfg);
  const SplitPools pools = split_classes(data, cfg.split);
  const PretrainResult pre = pretrain(pools.base, pools.classes.base_classes, cfg.arch, cfg.pretrain);
  for (const auto& line : pre.log) log_line(line);
  const std::string path = backbone_path(cfg);
  save_checkpoint(path, backbone_checkpoint(pre.backbone, false, cfg.precision, fingerprint(cfg)));
  write_text(out_path(cfg, "curves.csv"), curves_csv({{"pretrain_epoch_loss", pre.epoch_loss}}));
  write_text(out_path(cfg, "curves.svg"), curves_svg({{"pretrain_epoch_loss", pre.epoch_loss}}, "pretraining loss"));
  std::cout << "backbone checkpoint " << path << " hash " << FrozenBackbone(pre.backbone.clone()).hash() << "\n";
  return kExitOk;
}

FrozenBackbone load_frozen_backbone(const std::string& path) {
  return FrozenBackbone(backbone_from_checkpoint(load_checkpoint(path)));
}

int cmd_metatrain(const RunConfig& cfg) {
  prepare_out(cfg);
  const std::string bb_path = backbone_path(cfg);
  const Checkpoint bb_ckpt = load_checkpoint(bb_path);
  const BackboneParams bb_params = backbone_from_checkpoint(bb_ckpt);
  if (bb_params.arch.feature_dim != cfg.cwt.feature_dim) {
    throw ConfigError("backbone feature dim " + std::to_string(bb_params.arch.feature_dim) +
                      " does not match cwt.feature_dim " + std::to_string(cfg.cwt.feature_dim));
  }
  const Dataset data = load_training_data(cfg);
  const SplitPools pools = split_classes(data, cfg.split);

  if (cfg.mode == AblationMode::whole_model_meta) {
    const WholeModelResult wm =
        meta_train_whole_model(bb_params, pools.base, pools.classes.base_classes, cfg.whole_model);
    const std::string path = out_path(cfg, "whole_model_backbone.cwt");
    save_checkpoint(path, backbone_checkpoint(wm.backbone, false, cfg.precision, fingerprint(cfg)));
    write_text(out_path(cfg, "curves.csv"), curves_csv({{"episode_loss", wm.episode_loss}}));
    write_text(out_path(cfg, "curves.svg"), curves_svg({{"episode_loss", wm.episode_loss}}, "whole-model meta loss"));
    std::cout << "whole-model backbone checkpoint " << path << "\n";
    return kExitOk;
  }
  if (cfg.mode == AblationMode::classifier_only) {
    throw ConfigError("classifier_only has nothing to meta-train");
  }

  const FrozenBackbone backbone(bb_params.clone());
  const std::string hash_before = backbone.hash();
  FeatureCache cache(backbone);
  MetaTrainConfig mc = cfg.meta;
  if (cfg.mode == AblationMode::attend_support) mc.attend = AttentionSource::support;
  const MetaTrainResult mr =
      meta_train(cache, pools.base, pools.classes.base_classes, initial_cwt(cfg.cwt, cfg.seed), mc);
  for (const auto& line : mr.log) log_line(line);
  if (backbone.hash() != hash_before) throw CheckFailure("backbone changed during meta-training");

  const std::string path = cwt_path(cfg);
  save_checkpoint(path, cwt_checkpoint(mr.cwt, cfg.precision, fingerprint(cfg), hash_before));
  write_text(out_path(cfg, "curves.csv"), curves_csv({{"episode_loss", mr.episode_loss}}));
  write_text(out_path(cfg, "curves.svg"), curves_svg({{"episode_loss", mr.episode_loss}}, "meta-training loss"));
  std::cout << "cwt checkpoint " << path << " (backbone " << hash_before << ")\n";
  return kExitOk;
}

int cmd_eval(const RunConfig& cfg) {
  prepare_out(cfg);
  const FrozenBackbone backbone = load_frozen_backbone(backbone_path(cfg));
  std::optional<CwtParams> cwt;
  if (cfg.mode == AblationMode::full_cwt || cfg.mode == AblationMode::attend_support) {
    const Checkpoint ckpt = load_checkpoint(cwt_path(cfg));
    const std::string recorded = ckpt.meta.value("backbone_hash", "");
    if (recorded != backbone.hash()) {
      throw ConfigError("cwt checkpoint was trained on backbone " + recorded + ", not " + backbone.hash());
    }
    cwt = cwt_from_checkpoint(ckpt);
    if (cwt->options.feature_dim != backbone.params().arch.feature_dim) {
      throw ConfigError("cwt feature dim does not match the backbone");
    }
  }

  const Dataset data = load_training_data(cfg);
  const SplitPools pools = split_classes(data, cfg.split);
  EvalProtocol protocol = cfg.eval;
  protocol.parallel = cfg.parallel_eval && !cfg.strict_deterministic;

  std::optional<FeatureCache> cache;
  cache.emplace(backbone);
  const EvalModel model{&*cache, cwt ? &*cwt : nullptr, cfg.mode, cfg.meta.inner};
  EvalReport report;
  if (cfg.cross_domain) {
    const Dataset target = generate_dataset(cfg.cross_data);
    report = cross_domain_eval(model, target, cfg.data.domain, pools.classes.base_classes, protocol);
  } else {
    report = meta_test(model, pools.novel, pools.classes.novel_classes, pools.classes.base_classes, protocol);
  }

  std::vector<Curve> curves;
  std::vector<double> per_episode;
  for (const auto& e : report.episodes) per_episode.push_back(e.fg_iou);
  curves.push_back({"episode_fg_iou", per_episode});
  write_report_bundle(cfg.out_dir, report, curves, to_json(cfg));

  std::cout << report.mode << (cfg.cross_domain ? " cross-domain" : "") << " " << protocol.shots
            << "-shot mIoU " << std::fixed << std::setprecision(2) << 100.0 * report.mean_miou << " +- "
            << 100.0 * report.ci95 << "\n";
  if (!report.params_unchanged) throw CheckFailure("parameter hash changed during evaluation");
  return kExitOk;
}

std::vector<std::size_t> parse_shots(const std::string& text) {
  std::vector<std::size_t> out;
  std::stringstream s(text);
  std::string item;
  while (std::getline(s, item, ',')) {
    try {
      const long v = std::stol(item);
      if (v < 1) throw ConfigError("shot counts must be positive");
      out.push_back(static_cast<std::size_t>(v));
    } catch (const std::logic_error&) {
      throw ConfigError("bad shot list '" + text + "'");
    }
  }
  if (out.empty()) throw ConfigError("empty shot list");
  return out;
}

int cmd_ablate(const RunConfig& cfg, const Flags& f) {
  prepare_out(cfg);
  AblationPlan plan;
  plan.shots = parse_shots(f.shots);
  plan.cross_domain = cfg.cross_domain;
  std::vector<SeedResult> results;
  const auto start = std::chrono::steady_clock::now();
  for (auto seed : cfg.ablate_seeds) results.push_back(run_seed(cfg, seed, plan, log_line));
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

  const AblationTable table = ablation_table(results, plan.shots.front());
  std::cout << format_ablation_table(table);
  json out = ablation_json(table);
  for (std::size_t k : plan.shots) {
    json row = json::array();
    double sum = 0.0;
    for (const auto& r : results) {
      const double v = r.miou(report_key(AblationMode::full_cwt, k));
      row.push_back(v);
      sum += v;
    }
    out["full_cwt_by_shots"][std::to_string(k)] = row;
    std::cout << report_key(AblationMode::full_cwt, k) << " mean " << std::fixed << std::setprecision(2)
              << 100.0 * sum / static_cast<double>(results.size()) << "\n";
  }
  if (plan.cross_domain) {
    for (AblationMode m : {AblationMode::full_cwt, AblationMode::classifier_only}) {
      const std::string key = report_key(m, plan.shots.front(), true);
      json row = json::array();
      for (const auto& r : results) row.push_back(r.miou(key));
      out["cross_domain"][key] = row;
    }
  }
  bool hashes_ok = true;
  for (const auto& r : results) {
    hashes_ok = hashes_ok && r.backbone_hash_before == r.backbone_hash_after;
    for (const auto& [key, rep] : r.reports) hashes_ok = hashes_ok && rep.params_unchanged;
  }
  out["hash_audit"] = hashes_ok;
  write_text(out_path(cfg, "ablation.json"), out.dump(2) + "\n");

  std::vector<std::string> labels;
  std::vector<double> means;
  for (std::size_t i = 0; i < table.rows.size(); ++i) {
    labels.push_back(table.rows[i]);
    means.push_back(table.mean(i));
  }
  if (!means.empty()) write_text(out_path(cfg, "ablation.svg"), bars_svg(labels, means, "mean mIoU per mode"));
  std::cerr << "ablation finished in " << seconds << "s\n";
  if (!hashes_ok) throw CheckFailure("backbone hash audit failed");
  return kExitOk;
}

int cmd_gradcheck(const Flags& f) {
  const auto results = run_gradcheck_suite(1e-4, f.corrupt);
  bool ok = true;
  std::cout << std::left << std::setw(26) << "check" << std::setw(16) << "max_rel_error" << "status\n";
  for (const auto& r : results) {
    std::ostringstream err;
    err << std::scientific << std::setprecision(3) << r.max_rel_error;
    std::cout << std::left << std::setw(26) << r.name << std::setw(16) << err.str() << (r.passed ? "ok" : "FAIL")
              << "\n";
    ok = ok && r.passed;
  }
  if (!ok) throw CheckFailure("gradient check failed");
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Few-shot segmentation with a classifier weight transformer"};
  app.require_subcommand(1);
  Flags f;
  const auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", f.config_path, "JSON config file");
    sub->add_option("--preset", f.preset, "toy or paper-faithful")->check(CLI::IsMember({"toy", "paper-faithful"}));
    sub->add_option("--seed", f.seed, "run seed");
    sub->add_option("--mode", f.mode, "full_cwt, classifier_only, whole_model_meta or attend_support")
        ->check(CLI::IsMember({"full_cwt", "classifier_only", "whole_model_meta", "attend_support"}));
    sub->add_flag("--cross-domain", f.cross_domain, "evaluate on the second domain family");
    sub->add_option("--precision", f.precision, "checkpoint dtype")->check(CLI::IsMember({"f32", "f64"}));
    sub->add_flag("--parallel-eval", f.parallel_eval, "evaluate episodes concurrently");
    sub->add_flag("--strict-deterministic", f.strict_deterministic, "single-threaded, bit-reproducible");
    sub->add_option("--out", f.out, "output directory");
    sub->add_option("--data", f.data, "exported dataset directory");
    sub->add_option("--backbone", f.backbone, "backbone checkpoint");
    sub->add_option("--cwt", f.cwt, "cwt checkpoint");
  };
  auto* gen = app.add_subcommand("gen-data", "generate and export a synthetic dataset");
  auto* pre = app.add_subcommand("pretrain", "train the backbone on base classes");
  auto* meta = app.add_subcommand("metatrain", "meta-train the CWT over a frozen backbone");
  auto* eval = app.add_subcommand("eval", "evaluate on novel-class episodes");
  auto* ablate = app.add_subcommand("ablate", "compare the four modes across seeds");
  auto* grad = app.add_subcommand("gradcheck", "finite-difference gradient checks");
  for (auto* sub : {gen, pre, meta, eval, ablate}) add_common(sub);
  ablate->add_option("--shots", f.shots, "comma-separated shot counts; full_cwt runs at each");
  grad->add_option("--corrupt", f.corrupt, "scale the analytic gradient of one check (harness test)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitValidation;
  }

  try {
    if (grad->parsed()) return cmd_gradcheck(f);
    const RunConfig cfg = resolve(f);
    if (gen->parsed()) return cmd_gen_data(cfg);
    if (pre->parsed()) return cmd_pretrain(cfg);
    if (meta->parsed()) return cmd_metatrain(cfg);
    if (eval->parsed()) return cmd_eval(cfg);
    if (ablate->parsed()) return cmd_ablate(cfg, f);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const CheckFailure& e) {
    std::cerr << "check failed: " << e.what() << "\n";
    return kExitRuntime;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitRuntime;
}
