#include "cwt/gradcheck_suite.hpp"

#include <functional>
#include <utility>

#include "cwt/adaptation.hpp"
#include "cwt/gradcheck.hpp"
#include "cwt/ops.hpp"

namespace cwt {

namespace {

constexpr double kStep = 1e-5;

struct Case {
  std::string name;
  std::function<double(double analytic_scale)> run;
};

Tensor leaf(Shape shape, CounterRng& rng, double stddev = 1.0) {
  return Tensor::randn(std::move(shape), rng, stddev).set_requires_grad(true);
}

// Values bounded away from zero so relu has no kink within the step.
Tensor leaf_away_from_zero(Shape shape, CounterRng& rng) {
  Tensor t = Tensor::randn(std::move(shape), rng, 1.0);
  for (double& v : t.mutable_data()) v = v >= 0.0 ? v + 0.2 : v - 0.2;
  return t.set_requires_grad(true);
}

// Contracts an op output with fixed random weights to get a scalar with a
// dense gradient.
Tensor project(const Tensor& out, std::uint64_t salt) {
  CounterRng rng(0xC0FFEE + salt);
  return sum(mul(out, Tensor::randn(out.shape(), rng, 1.0)));
}

Case unary(std::string name, std::uint64_t salt, Shape shape, std::function<Tensor(const Tensor&)> op,
           bool avoid_zero = false) {
  return {name, [=](double s) {
            CounterRng rng(salt);
            Tensor x = avoid_zero ? leaf_away_from_zero(shape, rng) : leaf(shape, rng);
            Tensor inputs[] = {x};
            return finite_diff_check([&] { return project(op(x), salt); }, inputs, kStep, s);
          }};
}

Case binary(std::string name, std::uint64_t salt, Shape sa, Shape sb,
            std::function<Tensor(const Tensor&, const Tensor&)> op) {
  return {name, [=](double s) {
            CounterRng rng(salt);
            Tensor a = leaf(sa, rng);
            Tensor b = leaf(sb, rng);
            Tensor inputs[] = {a, b};
            return finite_diff_check([&] { return project(op(a, b), salt); }, inputs, kStep, s);
          }};
}

CwtOptions small_cwt() {
  CwtOptions o;
  o.feature_dim = 4;
  o.latent_dim = 8;
  o.heads = 2;
  o.dropout = 0.25;
  o.psi_init_std = 0.5;
  return o;
}

std::vector<Tensor> cwt_inputs(const CwtParams& p) {
  return {p.wq, p.wk, p.wv, p.psi_w, p.psi_b, p.ln_gamma, p.ln_beta};
}

std::vector<Case> registry() {
  std::vector<Case> cases;
  cases.push_back(binary("matmul", 1, {3, 4}, {4, 5}, [](const Tensor& a, const Tensor& b) { return matmul(a, b); }));
  cases.push_back(
      binary("matmul_nt", 2, {3, 4}, {5, 4}, [](const Tensor& a, const Tensor& b) { return matmul_nt(a, b); }));
  cases.push_back(binary("add", 3, {3, 4}, {3, 4}, [](const Tensor& a, const Tensor& b) { return add(a, b); }));
  cases.push_back(binary("sub", 4, {3, 4}, {3, 4}, [](const Tensor& a, const Tensor& b) { return sub(a, b); }));
  cases.push_back(binary("mul", 5, {3, 4}, {3, 4}, [](const Tensor& a, const Tensor& b) { return mul(a, b); }));
  cases.push_back(unary("scale", 6, {3, 4}, [](const Tensor& x) { return scale(x, -1.7); }));
  cases.push_back(
      binary("add_bias", 7, {3, 4}, {4}, [](const Tensor& a, const Tensor& b) { return add_bias(a, b); }));
  cases.push_back(unary("relu", 8, {3, 4}, [](const Tensor& x) { return relu(x); }, true));
  cases.push_back(unary("sum", 9, {3, 4}, [](const Tensor& x) { return scale(sum(x), 1.0); }));
  cases.push_back(unary("mean", 10, {3, 4}, [](const Tensor& x) { return mean(x); }));
  cases.push_back(unary("softmax_rows", 11, {3, 5}, [](const Tensor& x) { return softmax_rows(x); }));
  cases.push_back({"layer_norm", [](double s) {
                     CounterRng rng(12);
                     Tensor x = leaf({3, 5}, rng);
                     Tensor g = leaf({5}, rng);
                     Tensor b = leaf({5}, rng);
                     Tensor inputs[] = {x, g, b};
                     return finite_diff_check([&] { return project(layer_norm(x, g, b), 12); }, inputs, kStep, s);
                   }});
  cases.push_back({"cross_entropy_smoothed", [](double s) {
                     CounterRng rng(13);
                     Tensor x = leaf({4, 3}, rng);
                     const std::vector<int> labels{0, 2, 1, 2};
                     Tensor inputs[] = {x};
                     return finite_diff_check([&] { return cross_entropy_smoothed(x, labels, 0.1); }, inputs, kStep,
                                              s);
                   }});
  cases.push_back({"dropout", [](double s) {
                     CounterRng rng(14);
                     Tensor x = leaf({3, 6}, rng);
                     Tensor inputs[] = {x};
                     return finite_diff_check(
                         [&] {
                           CounterRng mask_rng(99);
                           return project(dropout(x, 0.3, true, mask_rng), 14);
                         },
                         inputs, kStep, s);
                   }});
  cases.push_back(unary("slice_cols", 15, {3, 6}, [](const Tensor& x) { return slice_cols(x, 1, 4); }));
  cases.push_back(binary("concat_cols", 16, {3, 2}, {3, 4}, [](const Tensor& a, const Tensor& b) {
    const Tensor parts[] = {a, b};
    return concat_cols(parts);
  }));
  cases.push_back(binary("concat_rows", 17, {2, 3}, {4, 3}, [](const Tensor& a, const Tensor& b) {
    const Tensor parts[] = {a, b};
    return concat_rows(parts);
  }));
  cases.push_back({"conv2d", [](double s) {
                     CounterRng rng(18);
                     Tensor x = leaf({2, 2, 4, 3}, rng);
                     Tensor w = leaf({3, 2, 3, 3}, rng);
                     Tensor b = leaf({3}, rng);
                     Tensor inputs[] = {x, w, b};
                     return finite_diff_check([&] { return project(conv2d(x, w, b), 18); }, inputs, kStep, s);
                   }});
  cases.push_back(unary("pixel_rows", 19, {2, 3, 2, 2}, [](const Tensor& x) { return pixel_rows(x); }));

  cases.push_back({"cwt_forward", [](double s) {
                     CounterRng rng(20);
                     CwtParams p = CwtParams::init(small_cwt(), rng);
                     const Tensor features = Tensor::randn({4, 4}, rng, 1.0);
                     const ClassifierWeights w{Tensor::randn({2, 4}, rng, 1.0)};
                     auto inputs = cwt_inputs(p);
                     return finite_diff_check(
                         [&] {
                           CounterRng drop(7);
                           return project(cwt_forward(w, features, p, true, drop).w, 20);
                         },
                         inputs, kStep, s);
                   }});
  cases.push_back({"cwt_forward_support", [](double s) {
                     CounterRng rng(21);
                     CwtParams p = CwtParams::init(small_cwt(), rng);
                     const FeatureMap fm{Tensor::randn({4, 4}, rng, 1.0), 2, 2, 0};
                     const ClassifierWeights w{Tensor::randn({2, 4}, rng, 1.0)};
                     auto inputs = cwt_inputs(p);
                     return finite_diff_check(
                         [&] {
                           CounterRng drop(7);
                           return project(cwt_forward_support_variant(w, {&fm, 1}, p, true, drop).w, 21);
                         },
                         inputs, kStep, s);
                   }});

  // Full episode on 2x2 images: inner-loop fit on the support, CWT update
  // conditioned on the query, query cross-entropy.
  cases.push_back({"cwt_meta_loss_4px", [](double s) {
                     CounterRng rng(22);
                     CwtParams p = CwtParams::init(small_cwt(), rng);
                     const FeatureMap support{Tensor::randn({4, 4}, rng, 1.0), 2, 2, 0};
                     const FeatureMap query{Tensor::randn({4, 4}, rng, 1.0), 2, 2, 1};
                     const Mask support_mask{2, 2, {0, 1, 1, 0}};
                     const std::vector<int> query_labels{1, 0, 0, 1};
                     InnerLoopConfig inner;
                     inner.iterations = 20;
                     CounterRng init_rng(5);
                     const ClassifierWeights w0 =
                         init_classifier({&support, 1}, {&support_mask, 1}, inner.init, init_rng);
                     const ClassifierWeights fitted =
                         fit_classifier_inner(w0, {&support, 1}, {&support_mask, 1}, inner);
                     auto inputs = cwt_inputs(p);
                     return finite_diff_check(
                         [&] {
                           CounterRng drop(3);
                           const ClassifierWeights adapted = cwt_forward(fitted, query, p, true, drop);
                           return cross_entropy_smoothed(matmul_nt(query.features, adapted.w), query_labels, 0.0);
                         },
                         inputs, kStep, s);
                   }});
  return cases;
}

}  // namespace

std::vector<std::string> gradcheck_names() {
  std::vector<std::string> names;
  for (const auto& c : registry()) names.push_back(c.name);
  return names;
}

std::vector<GradCheckResult> run_gradcheck_suite(double tolerance, const std::string& corrupt) {
  std::vector<GradCheckResult> out;
  for (const auto& c : registry()) {
    GradCheckResult r;
    r.name = c.name;
    r.tolerance = tolerance;
    r.max_rel_error = c.run(c.name == corrupt ? 1.1 : 1.0);
    r.passed = r.max_rel_error < tolerance;
    out.push_back(r);
  }
  return out;
}

}  // namespace cwt
