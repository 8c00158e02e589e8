#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>

#include "cwt/checkpoint.hpp"
#include "cwt/config.hpp"
#include "cwt/dataset_io.hpp"
#include "cwt/report.hpp"

using namespace cwt;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("cwtseg_test_" + name);
  fs::remove_all(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST_CASE("checkpoint round-trips bit-exactly in f64 and preserves metadata") {
  CounterRng rng(1);
  const BackboneParams bb = BackboneParams::init({kImageChannels, 4, 8}, rng);
  const Checkpoint c = backbone_checkpoint(bb, true, Precision::f64, "fp");
  const Checkpoint back = decode_checkpoint(encode_checkpoint(c));
  CHECK(back.kind == "backbone");
  CHECK(back.config_fingerprint == "fp");
  REQUIRE(back.entries.size() == c.entries.size());
  for (std::size_t i = 0; i < c.entries.size(); ++i) {
    CHECK(back.entries[i].name == c.entries[i].name);
    CHECK(back.entries[i].frozen);
    const auto x = c.entries[i].tensor.data(), y = back.entries[i].tensor.data();
    CHECK(std::equal(x.begin(), x.end(), y.begin()));
  }
  const BackboneParams restored = backbone_from_checkpoint(back);
  CHECK(FrozenBackbone(restored.clone()).hash() == FrozenBackbone(bb.clone()).hash());
}

TEST_CASE("f32 checkpoints are stable under a second round trip") {
  CounterRng rng(2);
  const CwtParams p = CwtParams::init(CwtOptions{}, rng);
  const Checkpoint c = cwt_checkpoint(p, Precision::f32, "fp", "bbhash");
  const auto bytes = encode_checkpoint(c);
  const Checkpoint once = decode_checkpoint(bytes);
  CHECK(once.dtype == Precision::f32);
  CHECK(once.meta.at("backbone_hash") == "bbhash");
  CHECK(encode_checkpoint(once) == bytes);
  const CwtParams q = cwt_from_checkpoint(once);
  CHECK(q.wq.at(3) == static_cast<double>(static_cast<float>(p.wq.at(3))));
}

TEST_CASE("corrupted payloads and bad magic are rejected") {
  CounterRng rng(3);
  const CwtParams p = CwtParams::init(CwtOptions{}, rng);
  auto bytes = encode_checkpoint(cwt_checkpoint(p, Precision::f64, "fp", "h"));
  auto flipped = bytes;
  flipped.back() ^= 0x1;
  CHECK_THROWS_AS(decode_checkpoint(flipped), Error);
  bytes[0] = 'X';
  CHECK_THROWS_AS(decode_checkpoint(bytes), Error);
}

TEST_CASE("dataset export is byte-identical, one directory per class, manifest seed matches") {
  DatasetSpec s;
  s.num_classes = 12;
  s.images_per_class = 2;
  s.image_size = 8;
  s.seed = 77;
  const fs::path a = scratch("data_a"), b = scratch("data_b");
  export_dataset(generate_dataset(s), a.string());
  export_dataset(generate_dataset(s), b.string());
  int dirs = 0;
  for (const auto& e : fs::directory_iterator(a)) {
    if (e.is_directory()) ++dirs;
  }
  CHECK(dirs == 12);
  for (const auto& e : fs::recursive_directory_iterator(a)) {
    if (!e.is_regular_file()) continue;
    CHECK(slurp(e.path()) == slurp(b / fs::relative(e.path(), a)));
  }
  const auto manifest = nlohmann::json::parse(slurp(a / "manifest.json"));
  CHECK(manifest.at("seed").get<std::uint64_t>() == 77);
  const Dataset back = import_dataset(a.string());
  const Dataset orig = generate_dataset(s);
  REQUIRE(back.samples.size() == orig.samples.size());
  CHECK(back.samples[5].mask.labels == orig.samples[5].mask.labels);
  CHECK(back.samples[5].class_set == orig.samples[5].class_set);
  CHECK(back.samples[5].image.at(7) == static_cast<double>(static_cast<float>(orig.samples[5].image.at(7))));
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST_CASE("summary.csv mean equals recomputation from results.json") {
  EvalReport r;
  r.mode = "full_cwt";
  r.per_trial_miou = {0.1, 0.2, 0.35};
  r.mean_miou = (0.1 + 0.2 + 0.35) / 3.0;
  const EvalReport back = report_from_json(nlohmann::json::parse(report_to_json(r).dump()));
  double recomputed = 0.0;
  for (double v : back.per_trial_miou) recomputed += v / 3.0;
  std::istringstream csv(summary_csv(r));
  std::string line;
  double mean_from_csv = -1.0;
  while (std::getline(csv, line)) {
    if (line.rfind("mean,", 0) == 0) mean_from_csv = std::stod(line.substr(line.rfind(',') + 1));
  }
  CHECK(std::abs(mean_from_csv - recomputed) < 1e-9);
}

TEST_CASE("config: presets, JSON round trip, unknown keys") {
  const RunConfig paper = preset_config("paper-faithful");
  CHECK(paper.pretrain.lr == 2.5e-3);
  CHECK(paper.meta.outer_lr == 1e-3);
  CHECK(paper.meta.inner.iterations == 200);
  CHECK(paper.meta.inner.lr == 0.1);
  CHECK(paper.cwt.feature_dim == 512);
  CHECK(paper.cwt.latent_dim == 2048);
  CHECK(paper.cwt.heads == 4);
  CHECK(paper.eval.episodes_per_trial == 1000);
  CHECK(paper.eval.trials == 5);
  const RunConfig toy = preset_config("toy");
  CHECK(toy.cwt.feature_dim == 32);
  CHECK(toy.data.image_size == 32);
  CHECK(toy.meta.episodes_per_epoch == 200);
  CHECK(to_json(from_json(to_json(toy), preset_config("paper-faithful"))) == to_json(toy));
  CHECK_THROWS_AS(from_json(nlohmann::json{{"bogus", 1}}, toy), ConfigError);
  CHECK_THROWS_AS(from_json(nlohmann::json{{"meta", {{"epochz", 1}}}}, toy), ConfigError);
  CHECK_THROWS_AS(preset_config("huge"), ConfigError);
  RunConfig bad = toy;
  bad.cwt.feature_dim = 16;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  CHECK(fingerprint(toy) == fingerprint(from_json(to_json(toy), toy)));
}
