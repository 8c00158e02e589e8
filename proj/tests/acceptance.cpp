// Acceptance harness: one PASS/FAIL line per criterion. Criteria 5-9 share
// one five-seed run of the toy preset.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <iterator>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "cwt/adaptation.hpp"
#include "cwt/checkpoint.hpp"
#include "cwt/config.hpp"
#include "cwt/gradcheck_suite.hpp"
#include "cwt/hash.hpp"
#include "cwt/meta.hpp"
#include "cwt/ops.hpp"
#include "cwt/pipeline.hpp"
#include "cwt/report.hpp"

using namespace cwt;
namespace fs = std::filesystem;

namespace {

// Tolerances and thresholds.
constexpr double kGradTol = 1e-4;
constexpr double kGradSeconds = 60.0;
constexpr int kIdentityPairs = 100;
constexpr int kPermEpisodes = 50;
constexpr int kPermsPerEpisode = 10;
constexpr double kPermTol = 1e-6;
constexpr int kSeeds = 5;
constexpr int kSeedsNeeded = 4;
constexpr double kTable4Margin = 0.01;  // 1.0 mIoU point
constexpr double kBenchSeconds = 30.0 * 60.0;
constexpr int kIouEpisodes = 10;
constexpr double kIouTol = 1e-9;
constexpr int kSeparableIters = 200;
constexpr double kSeparableLr = 0.1;
constexpr double kSeparableAcc = 0.99;

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t) { return std::chrono::duration<double>(Clock::now() - t).count(); }

int failures = 0;
std::map<int, std::string> lines;

void report(int id, const std::string& name, bool pass, const std::string& detail) {
  if (!pass) ++failures;
  std::string line = (pass ? "[PASS] " : "[FAIL] ") + ("C" + std::to_string(id)) + " " + name + ": " + detail;
  std::cout << line << std::endl;
  lines[id] = std::move(line);
}

std::string num(double v, int digits = 4) {
  std::ostringstream s;
  s << std::setprecision(digits) << v;
  return s.str();
}

std::string pts(double v) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(2) << 100.0 * v;
  return s.str();
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

int run_cli(const std::string& args, const fs::path& log) {
  const std::string cmd = std::string(CWTSEG_CLI) + " " + args + " > " + log.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

// Small episode pool with a random backbone; enough for the structural checks.
struct Fixture {
  Dataset data;
  SplitPools pools;
  FrozenBackbone backbone;
  FeatureCache cache;

  Fixture()
      : data(make_data()), pools(split_classes(data, {0, 4})), backbone(make_backbone()), cache(backbone) {}

  static Dataset make_data() {
    DatasetSpec s;
    s.images_per_class = 8;
    s.seed = 123;
    return generate_dataset(s);
  }
  static BackboneParams make_backbone() {
    CounterRng rng(321);
    return BackboneParams::init({kImageChannels, 16, 32}, rng);
  }
};

void c1_gradcheck() {
  const auto t0 = Clock::now();
  const auto results = run_gradcheck_suite(kGradTol);
  const double elapsed = seconds_since(t0);
  double worst = 0.0;
  std::string worst_name;
  bool all = true;
  for (const auto& r : results) {
    all = all && r.passed;
    if (r.max_rel_error >= worst) {
      worst = r.max_rel_error;
      worst_name = r.name;
    }
  }
  const fs::path log = fs::temp_directory_path() / "cwt_acc_gradcheck.log";
  const int code = run_cli("gradcheck", log);
  const bool has_meta = std::any_of(results.begin(), results.end(),
                                    [](const GradCheckResult& r) { return r.name == "cwt_meta_loss_4px"; });
  report(1, "gradient oracle", all && code == 0 && has_meta && elapsed < kGradSeconds,
         std::to_string(results.size()) + " checks incl. 4-pixel meta-loss, max rel err " + num(worst, 3) + " (" +
             worst_name + ") < " + num(kGradTol) + ", cli exit " + std::to_string(code) + ", " + num(elapsed, 3) +
             " s");
}

void c2_identity() {
  CounterRng rng(2024);
  int exact = 0;
  for (int i = 0; i < kIdentityPairs; ++i) {
    CwtOptions o;
    o.layer_norm = false;
    const std::size_t n = 1 + rng.uniform_index(200);
    CwtParams p = CwtParams::init(o, rng);
    for (Tensor* t : {&p.psi_w, &p.psi_b}) {
      for (double& v : t->mutable_data()) v = 0.0;
    }
    const ClassifierWeights w{Tensor::randn({2, o.feature_dim}, rng, 2.0)};
    const Tensor f = Tensor::randn({n, o.feature_dim}, rng, 1.0);
    CounterRng drop = rng.split(i);
    const Tensor out = cwt_forward(w, f, p, i % 2 == 0, drop).w;
    if (std::equal(out.data().begin(), out.data().end(), w.w.data().begin())) ++exact;
  }
  report(2, "residual identity", exact == kIdentityPairs,
         std::to_string(exact) + "/" + std::to_string(kIdentityPairs) + " pairs bit-identical with psi=0, no LN");
}

void c3_permutation(Fixture& fx) {
  CwtOptions o;
  o.psi_init_std = 0.5;
  CounterRng rng(77);
  const CwtParams p = CwtParams::init(o, rng);
  InnerLoopConfig inner;
  double worst = 0.0;
  for (int e = 0; e < kPermEpisodes; ++e) {
    const EpisodeTask task = sample_episode(fx.pools.novel, fx.pools.classes.novel_classes, 1, 1, rng);
    const FeatureMap& s = fx.cache.get(task.support.front());
    CounterRng init_rng = rng.split(e);
    const ClassifierWeights w =
        fit_classifier_inner(init_classifier({&s, 1}, {&task.support.front().mask, 1}, inner.init, init_rng),
                             {&s, 1}, {&task.support.front().mask, 1}, inner);
    const FeatureMap& q = fx.cache.get(task.query.front());
    CounterRng d0(0);
    const Tensor ref = cwt_forward(w, q.features, p, false, d0).w;
    const std::size_t n = q.features.dim(0), d = q.features.dim(1);
    for (int k = 0; k < kPermsPerEpisode; ++k) {
      std::vector<std::size_t> perm(n);
      std::iota(perm.begin(), perm.end(), 0);
      rng.shuffle(std::span<std::size_t>(perm));
      std::vector<double> rows(n * d);
      for (std::size_t r = 0; r < n; ++r) {
        for (std::size_t j = 0; j < d; ++j) rows[r * d + j] = q.features.at(perm[r], j);
      }
      CounterRng d1(0);
      const Tensor out = cwt_forward(w, Tensor({n, d}, std::move(rows)), p, false, d1).w;
      for (std::size_t i = 0; i < out.numel(); ++i) worst = std::max(worst, std::abs(out.at(i) - ref.at(i)));
    }
  }
  report(3, "permutation invariance", worst < kPermTol,
         std::to_string(kPermEpisodes) + " episodes x " + std::to_string(kPermsPerEpisode) +
             " permutations, max |diff| " + num(worst, 3) + " < " + num(kPermTol));
}

void c10_iou(Fixture& fx) {
  const Mask truth = [] {
    Mask m{32, 32, std::vector<std::uint8_t>(1024, 0)};
    for (std::size_t i = 0; i < 512; ++i) m.labels[i] = 1;
    return m;
  }();
  const Mask all_fg{32, 32, std::vector<std::uint8_t>(1024, 1)};
  const double worked = score_mask(all_fg, truth).fg_iou;

  InnerLoopConfig inner;
  inner.iterations = 20;
  const EpisodePredictor predict = make_predictor({&fx.cache, nullptr, AblationMode::classifier_only, inner});
  CounterRng rng(10);
  double worst = 0.0;
  for (int e = 0; e < kIouEpisodes; ++e) {
    const EpisodeTask task = sample_episode(fx.pools.novel, fx.pools.classes.novel_classes, 1, 1, rng);
    CounterRng erng = rng.split(e);
    const Mask pred = predict(task, erng).front();
    const Mask& gt = task.query.front().mask;
    std::size_t inter = 0, uni = 0;
    for (std::size_t y = 0; y < gt.height; ++y) {
      for (std::size_t x = 0; x < gt.width; ++x) {
        const bool p = pred.at(y, x) == 1, g = gt.at(y, x) == 1;
        inter += (p && g) ? 1 : 0;
        uni += (p || g) ? 1 : 0;
      }
    }
    const double naive = uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
    worst = std::max(worst, std::abs(score_mask(pred, gt).fg_iou - naive));
  }
  report(10, "mIoU oracle", worst <= kIouTol && worked == 0.5,
         "max |IoU - naive| " + num(worst, 3) + " over " + std::to_string(kIouEpisodes) +
             " episodes; all-fg vs half mask = " + num(worked));
}

void c12_separable() {
  // Foreground pixels lie on the positive side of a random direction, background
  // on the negative side, with a margin; the remaining coordinates are noise.
  CounterRng rng(12);
  const std::size_t h = 32, w = 32, d = 32;
  Tensor dir = Tensor::randn({d}, rng, 1.0);
  double norm = 0.0;
  for (double v : dir.data()) norm += v * v;
  norm = std::sqrt(norm);
  Mask mask{h, w, std::vector<std::uint8_t>(h * w, 0)};
  std::vector<double> feats(h * w * d);
  for (std::size_t p = 0; p < h * w; ++p) {
    const std::size_t y = p / w, x = p % w;
    const bool fg = (y - 16.0) * (y - 16.0) + (x - 12.0) * (x - 12.0) < 80.0;
    mask.labels[p] = fg ? 1 : 0;
    double along = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      feats[p * d + j] = rng.normal();
      along += feats[p * d + j] * dir.at(j) / norm;
    }
    const double target = (fg ? 1.0 : -1.0) * (0.5 + rng.uniform());
    for (std::size_t j = 0; j < d; ++j) feats[p * d + j] += (target - along) * dir.at(j) / norm;
  }
  const FeatureMap fm{Tensor({h * w, d}, std::move(feats)), h, w, 0};
  InnerLoopConfig cfg;
  cfg.iterations = kSeparableIters;
  cfg.lr = kSeparableLr;
  CounterRng init_rng(1);
  const ClassifierWeights w0 = init_classifier({&fm, 1}, {&mask, 1}, ClassifierInit::random_normal, init_rng);
  const ClassifierWeights fitted = fit_classifier_inner(w0, {&fm, 1}, {&mask, 1}, cfg);
  const Mask pred = predict_pixels(fitted, fm).mask;
  std::size_t correct = 0;
  for (std::size_t p = 0; p < pred.labels.size(); ++p) correct += pred.labels[p] == mask.labels[p] ? 1 : 0;
  const double acc = static_cast<double>(correct) / static_cast<double>(pred.labels.size());
  report(12, "inner-loop fit", acc >= kSeparableAcc,
         "support accuracy " + pts(acc) + "% after " + std::to_string(kSeparableIters) + " iters at lr " +
             num(kSeparableLr) + " (need >= " + pts(kSeparableAcc) + "%)");
}

// Command-line flow on a reduced config: pretrain, metatrain, eval twice.
// Returns whether the backbone checkpoint file kept its hash.
bool cli_flow(std::string& detail_4, std::string& detail_11, bool& deterministic) {
  const fs::path dir = fs::temp_directory_path() / "cwt_acceptance_cli";
  fs::remove_all(dir);
  fs::create_directories(dir);
  {
    std::ofstream cfg(dir / "cfg.json");
    cfg << R"({"data": {"images_per_class": 10}, "pretrain": {"epochs": 1},
               "meta": {"epochs": 1, "episodes_per_epoch": 30},
               "eval": {"trials": 2, "episodes_per_trial": 25}})";
  }
  const std::string common = "--config " + (dir / "cfg.json").string() + " --seed 3 ";
  const std::string bb = (dir / "run" / "backbone.cwt").string();
  int code = run_cli("pretrain " + common + "--out " + (dir / "run").string(), dir / "pretrain.log");
  if (code != 0) {
    detail_4 = detail_11 = "pretrain exited " + std::to_string(code);
    deterministic = false;
    return false;
  }
  const std::string before = sha256_hex(slurp(bb));
  code = run_cli("metatrain " + common + "--out " + (dir / "run").string(), dir / "metatrain.log");
  const Checkpoint cwt_ckpt = load_checkpoint((dir / "run" / "cwt.cwt").string());
  const std::string recorded = cwt_ckpt.meta.value("backbone_hash", "");
  const std::string live = FrozenBackbone(backbone_from_checkpoint(load_checkpoint(bb))).hash();
  int eval_codes = 0;
  for (const char* name : {"eval1", "eval2"}) {
    eval_codes += run_cli("eval " + common + "--strict-deterministic --backbone " + bb + " --cwt " +
                              (dir / "run" / "cwt.cwt").string() + " --out " + (dir / name).string(),
                          dir / (std::string(name) + ".log"));
  }
  const std::string after = sha256_hex(slurp(bb));
  const std::string r1 = slurp(dir / "eval1" / "results.json"), r2 = slurp(dir / "eval2" / "results.json");
  deterministic = eval_codes == 0 && !r1.empty() && r1 == r2;
  detail_11 = "two strict-deterministic cmd_eval runs: results.json " + std::to_string(r1.size()) + " bytes, " +
              (r1 == r2 ? "byte-identical" : "DIFFERENT") + ", exit codes sum " + std::to_string(eval_codes);
  const bool ok = code == 0 && before == after && recorded == live;
  detail_4 = "cli checkpoint sha " + before.substr(0, 12) + (before == after ? " unchanged" : " CHANGED") +
             " across metatrain+eval, manifest hash " + (recorded == live ? "matches" : "MISMATCH");
  return ok;
}

struct BenchSummary {
  std::vector<SeedResult> results;
  double seconds_total = 0.0;
  double seconds_one_shot = 0.0;
};

BenchSummary run_benchmark() {
  const RunConfig cfg = preset_config("toy");
  AblationPlan plan;
  plan.shots = {1, 5};
  plan.cross_domain = true;
  BenchSummary b;
  const auto t0 = Clock::now();
  for (int s = 0; s < kSeeds; ++s) {
    b.results.push_back(run_seed(cfg, static_cast<std::uint64_t>(s), plan, [](const std::string& line) {
      if (line.find(" miou=") != std::string::npos) std::cerr << line << std::endl;
    }));
    const auto& r = b.results.back();
    double extra = r.seconds("eval " + report_key(AblationMode::full_cwt, 5)) + r.seconds("cross_domain");
    double total = 0.0;
    for (const auto& t : r.timings) total += t.seconds;
    b.seconds_one_shot += total - extra;
  }
  b.seconds_total = seconds_since(t0);
  return b;
}

std::string row(const std::vector<SeedResult>& rs, const std::string& key) {
  std::string out;
  for (const auto& r : rs) out += (out.empty() ? "" : " ") + pts(r.miou(key));
  return out;
}

}  // namespace

int main() {
  std::cout << std::unitbuf;
  c1_gradcheck();
  c2_identity();
  Fixture fx;
  c3_permutation(fx);
  c10_iou(fx);
  c12_separable();

  std::string detail_4, detail_11;
  bool deterministic = false;
  const bool cli_hash_ok = cli_flow(detail_4, detail_11, deterministic);

  const BenchSummary bench = run_benchmark();
  const auto& rs = bench.results;
  const std::string full = report_key(AblationMode::full_cwt, 1);

  bool audit = cli_hash_ok;
  for (const auto& r : rs) {
    audit = audit && r.backbone_hash_before == r.backbone_hash_after;
    for (const auto& [key, rep] : r.reports) audit = audit && rep.params_unchanged;
  }
  report(4, "frozen-backbone audit", audit,
         detail_4 + "; " + std::to_string(rs.size()) + " toy seeds: hash before == after meta-train and eval");

  const auto wins = [&](const std::string& other, double margin) {
    int n = 0;
    for (const auto& r : rs) n += r.miou(full) - r.miou(other) >= margin && r.miou(full) > r.miou(other) ? 1 : 0;
    return n;
  };
  const std::string co = report_key(AblationMode::classifier_only, 1);
  const int c5 = wins(co, kTable4Margin);
  report(5, "full_cwt > classifier_only by >= 1 pt", c5 >= kSeedsNeeded && bench.seconds_one_shot < kBenchSeconds,
         std::to_string(c5) + "/" + std::to_string(kSeeds) + " seeds; full [" + row(rs, full) + "] vs [" +
             row(rs, co) + "]; 1-shot runtime " + num(bench.seconds_one_shot / 60.0, 3) + " min (all " +
             num(bench.seconds_total / 60.0, 3) + " min)");

  const std::string wm = report_key(AblationMode::whole_model_meta, 1);
  const int c6 = wins(wm, 0.0);
  report(6, "full_cwt > whole_model_meta", c6 >= kSeedsNeeded,
         std::to_string(c6) + "/" + std::to_string(kSeeds) + " seeds; whole-model [" + row(rs, wm) + "]");

  const std::string as = report_key(AblationMode::attend_support, 1);
  const int c7 = wins(as, 0.0);
  report(7, "full_cwt > attend_support", c7 >= kSeedsNeeded,
         std::to_string(c7) + "/" + std::to_string(kSeeds) + " seeds; attend-support [" + row(rs, as) + "]");

  const std::string five = report_key(AblationMode::full_cwt, 5);
  double m1 = 0.0, m5 = 0.0;
  for (const auto& r : rs) {
    m1 += r.miou(full) / kSeeds;
    m5 += r.miou(five) / kSeeds;
  }
  report(8, "5-shot >= 1-shot", m5 >= m1, "full_cwt mean " + pts(m5) + " (5-shot) vs " + pts(m1) + " (1-shot)");

  const std::string xf = report_key(AblationMode::full_cwt, 1, true);
  const std::string xc = report_key(AblationMode::classifier_only, 1, true);
  double cf = 0.0, cc = 0.0;
  for (const auto& r : rs) {
    cf += r.miou(xf) / kSeeds;
    cc += r.miou(xc) / kSeeds;
  }
  report(9, "cross-domain shapesA -> shapesB", audit && cf >= cc,
         "hash audit " + std::string(audit ? "ok" : "FAILED") + "; full_cwt " + pts(cf) + " vs classifier_only " +
             pts(cc) + " mean mIoU");

  report(11, "strict determinism", deterministic, detail_11);

  std::cout << "\nsummary\n";
  for (const auto& [id, line] : lines) std::cout << line << "\n";
  std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " criteria failed") << std::endl;
  return failures == 0 ? 0 : 1;
}
