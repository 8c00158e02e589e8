#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "cwt/adaptation.hpp"
#include "cwt/ops.hpp"

using namespace cwt;

namespace {

void set_values(Tensor t, std::vector<double> v) {
  auto d = t.mutable_data();
  REQUIRE(d.size() == v.size());
  std::copy(v.begin(), v.end(), d.begin());
}

}  // namespace

TEST_CASE("closed-form 2x2 attention oracle") {
  CwtOptions o;
  o.feature_dim = 2;
  o.latent_dim = 2;
  o.heads = 1;
  o.layer_norm = false;
  CounterRng rng(1);
  CwtParams p = CwtParams::init(o, rng);
  for (Tensor* t : {&p.wq, &p.wk, &p.wv, &p.psi_w}) set_values(*t, {1, 0, 0, 1});
  set_values(p.psi_b, {0, 0});
  const ClassifierWeights w{Tensor({2, 2}, {1, 0, 0, 1})};
  const Tensor f({2, 2}, {1, 0, 0, 1});
  CounterRng drop(0);
  const Tensor out = cwt_forward(w, f, p, false, drop).w;
  // a = softmax([1/sqrt(2), 0])[0] = 0.6697615493266569
  CHECK(out.at(0, 0) == doctest::Approx(1.6697615493266569).epsilon(1e-12));
  CHECK(out.at(0, 1) == doctest::Approx(0.3302384506733431).epsilon(1e-12));
  CHECK(out.at(1, 0) == doctest::Approx(0.3302384506733431).epsilon(1e-12));
  CHECK(out.at(1, 1) == doctest::Approx(1.6697615493266569).epsilon(1e-12));
}

TEST_CASE("prototype init equals brute-force masked means over all shots") {
  CounterRng rng(2);
  std::vector<FeatureMap> maps;
  std::vector<Mask> masks;
  for (int k = 0; k < 5; ++k) {
    maps.push_back({Tensor::randn({12, 3}, rng, 1.0), 3, 4, static_cast<std::size_t>(k)});
    Mask m{3, 4, std::vector<std::uint8_t>(12)};
    for (auto& l : m.labels) l = rng.bernoulli(0.4) ? 1 : 0;
    m.labels[k] = 1;
    masks.push_back(m);
  }
  CounterRng init_rng(0);
  const ClassifierWeights w = init_classifier(maps, masks, ClassifierInit::prototype, init_rng);
  for (int row = 0; row < 2; ++row) {
    for (std::size_t j = 0; j < 3; ++j) {
      double s = 0.0;
      int n = 0;
      for (std::size_t k = 0; k < maps.size(); ++k) {
        for (std::size_t px = 0; px < 12; ++px) {
          if (masks[k].labels[px] == row) {
            s += maps[k].features.at(px, j);
            ++n;
          }
        }
      }
      CHECK(w.w.at(row, j) == doctest::Approx(s / n).epsilon(1e-12));
    }
  }
}

TEST_CASE("prototype init with one fg and one bg pixel") {
  const FeatureMap fm{Tensor({2, 2}, {1, 2, 3, 4}), 1, 2, 0};
  const Mask m{1, 2, {0, 1}};
  CounterRng rng(0);
  const ClassifierWeights w = init_classifier({&fm, 1}, {&m, 1}, ClassifierInit::prototype, rng);
  CHECK(w.w.at(0, 0) == 1.0);
  CHECK(w.w.at(0, 1) == 2.0);
  CHECK(w.w.at(1, 0) == 3.0);
  CHECK(w.w.at(1, 1) == 4.0);
}

TEST_CASE("random init is deterministic and zero iterations is a no-op") {
  const FeatureMap fm{Tensor({2, 2}, {1, 2, 3, 4}), 1, 2, 0};
  const Mask m{1, 2, {0, 1}};
  CounterRng r1(5), r2(5);
  const auto a = init_classifier({&fm, 1}, {&m, 1}, ClassifierInit::random_normal, r1);
  const auto b = init_classifier({&fm, 1}, {&m, 1}, ClassifierInit::random_normal, r2);
  CHECK(std::equal(a.w.data().begin(), a.w.data().end(), b.w.data().begin()));
  InnerLoopConfig cfg;
  cfg.iterations = 0;
  const auto fitted = fit_classifier_inner(a, {&fm, 1}, {&m, 1}, cfg);
  CHECK(std::equal(a.w.data().begin(), a.w.data().end(), fitted.w.data().begin()));
}

TEST_CASE("layer norm ablation with zero psi is the identity") {
  CwtOptions o;
  o.layer_norm = false;
  o.psi_init_std = 0.0;
  CounterRng rng(3);
  const CwtParams p = CwtParams::init(o, rng);
  const ClassifierWeights w{Tensor::randn({2, o.feature_dim}, rng, 1.0)};
  const Tensor f = Tensor::randn({20, o.feature_dim}, rng, 1.0);
  CounterRng drop(1);
  const Tensor out = cwt_forward(w, f, p, true, drop).w;
  CHECK(std::equal(out.data().begin(), out.data().end(), w.w.data().begin()));
}

TEST_CASE("support variant concatenates all support pixels") {
  CwtOptions o;
  o.psi_init_std = 0.3;
  CounterRng rng(4);
  const CwtParams p = CwtParams::init(o, rng);
  const ClassifierWeights w{Tensor::randn({2, o.feature_dim}, rng, 1.0)};
  const FeatureMap a{Tensor::randn({6, o.feature_dim}, rng, 1.0), 2, 3, 0};
  const FeatureMap b{Tensor::randn({6, o.feature_dim}, rng, 1.0), 2, 3, 1};
  const Tensor parts[] = {a.features, b.features};
  const FeatureMap both[] = {a, b};
  CounterRng d1(0), d2(0);
  const Tensor x = cwt_forward_support_variant(w, both, p, false, d1).w;
  const Tensor y = cwt_forward(w, concat_rows(parts), p, false, d2).w;
  for (std::size_t i = 0; i < x.numel(); ++i) CHECK(x.at(i) == doctest::Approx(y.at(i)).epsilon(1e-12));
}

TEST_CASE("cwt rejects mismatched widths") {
  CwtOptions o;
  CounterRng rng(5);
  const CwtParams p = CwtParams::init(o, rng);
  const ClassifierWeights w{Tensor({2, o.feature_dim + 1}, 0.0)};
  CounterRng drop(0);
  CHECK_THROWS(cwt_forward(w, Tensor({3, o.feature_dim + 1}, 0.0), p, false, drop));
  o.heads = 3;
  CHECK_THROWS_AS(o.validate(), ConfigError);
}
