#include "cwt/config.hpp"

#include <set>

#include "cwt/hash.hpp"

namespace cwt {

using nlohmann::json;

std::string precision_name(Precision p) { return p == Precision::f32 ? "f32" : "f64"; }

Precision parse_precision(const std::string& name) {
  if (name == "f32") return Precision::f32;
  if (name == "f64") return Precision::f64;
  throw ConfigError("unknown precision '" + name + "' (expected f32 or f64)");
}

namespace {

std::string schedule_name(ScheduleKind k) { return k == ScheduleKind::cosine ? "cosine" : "constant"; }

ScheduleKind parse_schedule(const std::string& s) {
  if (s == "cosine") return ScheduleKind::cosine;
  if (s == "constant") return ScheduleKind::constant;
  throw ConfigError("unknown schedule '" + s + "'");
}

std::string attend_name(AttentionSource a) { return a == AttentionSource::query ? "query" : "support"; }

AttentionSource parse_attend(const std::string& s) {
  if (s == "query") return AttentionSource::query;
  if (s == "support") return AttentionSource::support;
  throw ConfigError("unknown attention source '" + s + "'");
}

// Reads known keys of one JSON object and rejects the rest.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError("config: '" + path_ + "' must be an object");
  }
  ~Section() noexcept(false) {
    if (std::uncaught_exceptions()) return;
    for (const auto& [key, value] : j_.items()) {
      if (!seen_.count(key)) throw ConfigError("config: unknown key '" + path_ + "." + key + "'");
    }
  }

  template <typename T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception& e) {
      throw ConfigError("config: bad value for '" + path_ + "." + key + "': " + e.what());
    }
  }

  template <typename T, typename Parse>
  void get_enum(const char* key, T& out, Parse parse) {
    std::string name;
    seen_.insert(key);
    if (!j_.contains(key)) return;
    get(key, name);
    out = parse(name);
  }

  bool has(const char* key) {
    seen_.insert(key);
    return j_.contains(key);
  }
  const json& at(const char* key) const { return j_.at(key); }
  std::string child(const char* key) const { return path_ + "." + key; }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

json range_json(const Range& r) { return json::array({r.lo, r.hi}); }

json inner_json(const InnerLoopConfig& c) {
  return {{"iterations", c.iterations}, {"lr", c.lr},       {"momentum", c.momentum}, {"weight_decay", c.weight_decay},
          {"init", init_name(c.init)},  {"init_std", c.init_std}, {"seed", c.seed}};
}

void read_inner(const json& j, const std::string& path, InnerLoopConfig& c) {
  Section s(j, path);
  s.get("iterations", c.iterations);
  s.get("lr", c.lr);
  s.get("momentum", c.momentum);
  s.get("weight_decay", c.weight_decay);
  s.get_enum("init", c.init, parse_init);
  s.get("init_std", c.init_std);
  s.get("seed", c.seed);
}

json meta_json(const MetaTrainConfig& m) {
  return {{"epochs", m.epochs},     {"episodes_per_epoch", m.episodes_per_epoch}, {"outer_lr", m.outer_lr},
          {"optimizer", optimizer_name(m.optimizer)}, {"inner", inner_json(m.inner)}, {"shots", m.shots}, {"queries", m.queries},
          {"seed", m.seed},         {"attend", attend_name(m.attend)}};
}

void read_meta(const json& j, const std::string& path, MetaTrainConfig& m) {
  Section s(j, path);
  s.get("epochs", m.epochs);
  s.get("episodes_per_epoch", m.episodes_per_epoch);
  s.get("outer_lr", m.outer_lr);
  s.get_enum("optimizer", m.optimizer, parse_optimizer);
  if (s.has("inner")) read_inner(s.at("inner"), s.child("inner"), m.inner);
  s.get("shots", m.shots);
  s.get("queries", m.queries);
  s.get("seed", m.seed);
  s.get_enum("attend", m.attend, parse_attend);
}

}  // namespace

json dataset_to_json(const DatasetSpec& d) {
  const auto& v = d.variation;
  return {{"domain", domain_name(d.domain)},
          {"num_classes", d.num_classes},
          {"images_per_class", d.images_per_class},
          {"image_size", d.image_size},
          {"seed", d.seed},
          {"variation",
           {{"scale_range", range_json(v.scale_range)},
            {"position_jitter", v.position_jitter},
            {"rotation_range", v.rotation_range},
            {"color_jitter", v.color_jitter},
            {"occlusion_prob", v.occlusion_prob},
            {"distractor_prob", v.distractor_prob}}}};
}

DatasetSpec dataset_from_json(const json& j, const DatasetSpec& base, const std::string& path) {
  DatasetSpec d = base;
  Section s(j, path);
  s.get_enum("domain", d.domain, parse_domain);
  s.get("num_classes", d.num_classes);
  s.get("images_per_class", d.images_per_class);
  s.get("image_size", d.image_size);
  s.get("seed", d.seed);
  if (s.has("variation")) {
    const json& vj = s.at("variation");
    if (vj.is_string()) {
      const std::string name = vj.get<std::string>();
      if (name == "high") d.variation = VariationKnobs::high();
      else if (name == "low") d.variation = VariationKnobs::low();
      else if (name == "none") d.variation = VariationKnobs::none();
      else throw ConfigError("config: unknown variation preset '" + name + "'");
    } else {
      Section v(vj, s.child("variation"));
      std::vector<double> range;
      if (v.has("scale_range")) {
        v.get("scale_range", range);
        if (range.size() != 2) throw ConfigError("config: scale_range needs two values");
        d.variation.scale_range = {range[0], range[1]};
      }
      v.get("position_jitter", d.variation.position_jitter);
      v.get("rotation_range", d.variation.rotation_range);
      v.get("color_jitter", d.variation.color_jitter);
      v.get("occlusion_prob", d.variation.occlusion_prob);
      v.get("distractor_prob", d.variation.distractor_prob);
    }
  }
  return d;
}

json cwt_options_to_json(const CwtOptions& o) {
  return {{"feature_dim", o.feature_dim}, {"latent_dim", o.latent_dim}, {"heads", o.heads}, {"dropout", o.dropout},
          {"shared_qkv", o.shared_qkv}, {"full_width_scaling", o.full_width_scaling}, {"layer_norm", o.layer_norm},
          {"ln_eps", o.ln_eps}, {"psi_init_std", o.psi_init_std}, {"ln_gamma_init", o.ln_gamma_init}};
}

CwtOptions cwt_options_from_json(const json& j, const CwtOptions& base) {
  CwtOptions o = base;
  Section t(j, "cwt");
  t.get("feature_dim", o.feature_dim);
  t.get("latent_dim", o.latent_dim);
  t.get("heads", o.heads);
  t.get("dropout", o.dropout);
  t.get("shared_qkv", o.shared_qkv);
  t.get("full_width_scaling", o.full_width_scaling);
  t.get("layer_norm", o.layer_norm);
  t.get("ln_eps", o.ln_eps);
  t.get("psi_init_std", o.psi_init_std);
  t.get("ln_gamma_init", o.ln_gamma_init);
  return o;
}


void RunConfig::validate() const {
  data.validate();
  cross_data.validate();
  if (split.num_splits < 2 || split.split_index < 0 || split.split_index >= split.num_splits) {
    throw ConfigError("config: split_index must lie in [0, num_splits) with num_splits >= 2");
  }
  if (pretrain.epochs < 0 || pretrain.batch_size < 1 || !(pretrain.lr > 0.0)) {
    throw ConfigError("config: pretrain needs epochs >= 0, batch_size >= 1, lr > 0");
  }
  if (!(pretrain.label_smoothing >= 0.0 && pretrain.label_smoothing < 1.0)) {
    throw ConfigError("config: label_smoothing must lie in [0, 1)");
  }
  cwt.validate();
  if (cwt.feature_dim != arch.feature_dim) {
    throw ConfigError("config: cwt.feature_dim " + std::to_string(cwt.feature_dim) + " != backbone feature_dim " +
                      std::to_string(arch.feature_dim));
  }
  meta.validate();
  whole_model.validate();
  eval.validate();
  if (ablate_seeds.empty()) throw ConfigError("config: ablate.seeds must not be empty");
}

RunConfig preset_config(const std::string& name) {
  RunConfig c;
  c.preset = name;
  c.cross_data.domain = Domain::shapesB;
  if (name == "toy") {
    c.arch = {kImageChannels, 16, 32};
    c.pretrain.epochs = 6;
    c.pretrain.batch_size = 4;
    c.pretrain.lr = 0.02;
    c.cwt.feature_dim = 32;
    c.cwt.latent_dim = 64;
    c.cwt.ln_gamma_init = 0.1;
    c.meta.epochs = 20;
    c.meta.episodes_per_epoch = 200;
    c.meta.outer_lr = 0.3;
    c.meta.inner.iterations = 50;
    c.meta.inner.init = ClassifierInit::prototype;
    c.whole_model = c.meta;
    c.whole_model.epochs = 3;
    c.whole_model.outer_lr = 1e-3;
    c.eval.trials = 5;
    c.eval.episodes_per_trial = 100;
  } else if (name == "paper-faithful") {
    c.arch = {kImageChannels, 64, 512};
    c.pretrain.epochs = 12;
    c.pretrain.batch_size = 8;
    c.pretrain.lr = 2.5e-3;
    c.cwt.feature_dim = 512;
    c.cwt.latent_dim = 2048;
    c.cwt.heads = 4;
    c.meta.epochs = 20;
    c.meta.episodes_per_epoch = 200;
    c.meta.outer_lr = 1e-3;
    c.meta.inner.iterations = 200;
    c.whole_model = c.meta;
    c.eval.trials = 5;
    c.eval.episodes_per_trial = 1000;
  } else {
    throw ConfigError("unknown preset '" + name + "' (expected toy or paper-faithful)");
  }
  c.pretrain.momentum = 0.9;
  c.pretrain.weight_decay = 1e-4;
  c.pretrain.label_smoothing = 0.1;
  c.pretrain.schedule = ScheduleKind::cosine;
  c.meta.inner.lr = 0.1;
  c.whole_model.inner = c.meta.inner;
  apply_seed(c, 0);
  return c;
}

void apply_seed(RunConfig& c, std::uint64_t seed) {
  c.seed = seed;
  c.data.seed = seed;
  c.cross_data.seed = seed + 7919;
  c.pretrain.seed = seed;
  c.meta.seed = seed;
  c.meta.inner.seed = seed;
  c.whole_model.seed = seed;
  c.whole_model.inner.seed = seed;
  c.eval.seed_base = 100000 + 1000 * seed;
}

json to_json(const RunConfig& c) {
  const auto& p = c.pretrain;
  json seeds = json::array();
  for (auto s : c.ablate_seeds) seeds.push_back(s);
  return {
      {"preset", c.preset},
      {"seed", c.seed},
      {"data", dataset_to_json(c.data)},
      {"cross_data", dataset_to_json(c.cross_data)},
      {"split", {{"split_index", c.split.split_index}, {"num_splits", c.split.num_splits}}},
      {"backbone", {{"in_channels", c.arch.in_channels}, {"hidden", c.arch.hidden}, {"feature_dim", c.arch.feature_dim}}},
      {"pretrain",
       {{"epochs", p.epochs}, {"batch_size", p.batch_size}, {"lr", p.lr}, {"momentum", p.momentum},
        {"weight_decay", p.weight_decay}, {"label_smoothing", p.label_smoothing},
        {"schedule", schedule_name(p.schedule)}, {"flip_prob", p.flip_prob}, {"seed", p.seed}}},
      {"cwt", cwt_options_to_json(c.cwt)},
      {"meta", meta_json(c.meta)},
      {"whole_model", meta_json(c.whole_model)},
      {"eval",
       {{"trials", c.eval.trials}, {"episodes_per_trial", c.eval.episodes_per_trial}, {"shots", c.eval.shots},
        {"seed_base", c.eval.seed_base}, {"include_background", c.eval.include_background}}},
      {"mode", mode_name(c.mode)},
      {"cross_domain", c.cross_domain},
      {"precision", precision_name(c.precision)},
      {"parallel_eval", c.parallel_eval},
      {"strict_deterministic", c.strict_deterministic},
      {"ablate", {{"seeds", seeds}}},
      {"paths", {{"out", c.out_dir}, {"data", c.data_dir}, {"backbone", c.backbone_path}, {"cwt", c.cwt_path}}},
  };
}

RunConfig from_json(const json& j, const RunConfig& base) {
  RunConfig c = base;
  Section s(j, "config");
  s.get("preset", c.preset);
  if (s.has("seed")) {
    s.get("seed", c.seed);
    apply_seed(c, c.seed);
  }
  if (s.has("data")) c.data = dataset_from_json(s.at("data"), c.data);
  if (s.has("cross_data")) c.cross_data = dataset_from_json(s.at("cross_data"), c.cross_data, "cross_data");
  if (s.has("split")) {
    Section t(s.at("split"), "split");
    t.get("split_index", c.split.split_index);
    t.get("num_splits", c.split.num_splits);
  }
  if (s.has("backbone")) {
    Section t(s.at("backbone"), "backbone");
    t.get("in_channels", c.arch.in_channels);
    t.get("hidden", c.arch.hidden);
    t.get("feature_dim", c.arch.feature_dim);
  }
  if (s.has("pretrain")) {
    Section t(s.at("pretrain"), "pretrain");
    t.get("epochs", c.pretrain.epochs);
    t.get("batch_size", c.pretrain.batch_size);
    t.get("lr", c.pretrain.lr);
    t.get("momentum", c.pretrain.momentum);
    t.get("weight_decay", c.pretrain.weight_decay);
    t.get("label_smoothing", c.pretrain.label_smoothing);
    t.get_enum("schedule", c.pretrain.schedule, parse_schedule);
    t.get("flip_prob", c.pretrain.flip_prob);
    t.get("seed", c.pretrain.seed);
  }
  if (s.has("cwt")) c.cwt = cwt_options_from_json(s.at("cwt"), c.cwt);
  if (s.has("meta")) read_meta(s.at("meta"), "meta", c.meta);
  if (s.has("whole_model")) read_meta(s.at("whole_model"), "whole_model", c.whole_model);
  if (s.has("eval")) {
    Section t(s.at("eval"), "eval");
    t.get("trials", c.eval.trials);
    t.get("episodes_per_trial", c.eval.episodes_per_trial);
    t.get("shots", c.eval.shots);
    t.get("seed_base", c.eval.seed_base);
    t.get("include_background", c.eval.include_background);
  }
  s.get_enum("mode", c.mode, parse_mode);
  s.get("cross_domain", c.cross_domain);
  s.get_enum("precision", c.precision, parse_precision);
  s.get("parallel_eval", c.parallel_eval);
  s.get("strict_deterministic", c.strict_deterministic);
  if (s.has("ablate")) {
    Section t(s.at("ablate"), "ablate");
    t.get("seeds", c.ablate_seeds);
  }
  if (s.has("paths")) {
    Section t(s.at("paths"), "paths");
    t.get("out", c.out_dir);
    t.get("data", c.data_dir);
    t.get("backbone", c.backbone_path);
    t.get("cwt", c.cwt_path);
  }
  return c;
}

std::string fingerprint(const RunConfig& cfg) {
  json j = to_json(cfg);
  j.erase("paths");
  return sha256_hex(j.dump());
}

}  // namespace cwt
