#include <doctest.h>

#include <cmath>

#include "cwt/gradcheck.hpp"
#include "cwt/gradcheck_suite.hpp"
#include "cwt/ops.hpp"
#include "cwt/optim.hpp"

using namespace cwt;

TEST_CASE("softmax rows sum to one, including large logits") {
  Tensor x({3, 4}, {1000.0, -1000.0, 999.0, 0.0, 0.1, 0.2, 0.3, 0.4, -5.0, 5.0, 1e3, -1e3});
  const Tensor s = softmax_rows(x);
  for (std::size_t r = 0; r < 3; ++r) {
    double total = 0.0;
    for (std::size_t c = 0; c < 4; ++c) {
      CHECK(std::isfinite(s.at(r, c)));
      total += s.at(r, c);
    }
    CHECK(total == doctest::Approx(1.0).epsilon(1e-6));
  }
}

TEST_CASE("layer norm rows have zero mean and unit variance before the affine") {
  CounterRng rng(3);
  const Tensor x = Tensor::randn({5, 16}, rng, 3.0);
  const Tensor out = layer_norm(x, Tensor({16}, 1.0), Tensor({16}, 0.0));
  for (std::size_t r = 0; r < 5; ++r) {
    double m = 0.0, v = 0.0;
    for (std::size_t c = 0; c < 16; ++c) m += out.at(r, c) / 16.0;
    for (std::size_t c = 0; c < 16; ++c) v += (out.at(r, c) - m) * (out.at(r, c) - m) / 16.0;
    CHECK(std::abs(m) < 1e-6);
    CHECK(std::abs(v - 1.0) < 1e-4);
  }
}

TEST_CASE("plain sgd step is param - lr * grad bit for bit") {
  CounterRng rng(4);
  Tensor p = Tensor::randn({3, 3}, rng, 1.0).set_requires_grad(true);
  const std::vector<double> before(p.data().begin(), p.data().end());
  const Tensor target = Tensor::randn({3, 3}, rng, 1.0);
  backward(sum(mul(p, target)));
  const std::vector<double> grad(p.grad().begin(), p.grad().end());
  Sgd opt({p}, {0.37, 0.0, 0.0});
  opt.step();
  for (std::size_t i = 0; i < before.size(); ++i) CHECK(p.data()[i] == before[i] - 0.37 * grad[i]);
}

TEST_CASE("backward twice on the same graph gives identical gradients") {
  CounterRng rng(5);
  Tensor a = Tensor::randn({4, 3}, rng, 1.0).set_requires_grad(true);
  Tensor b = Tensor::randn({3, 2}, rng, 1.0).set_requires_grad(true);
  const Tensor loss = sum(softmax_rows(matmul(a, b)));
  backward(loss);
  const std::vector<double> first(a.grad().begin(), a.grad().end());
  a.zero_grad();
  b.zero_grad();
  backward(loss);
  for (std::size_t i = 0; i < first.size(); ++i) CHECK(a.grad()[i] == first[i]);
}

TEST_CASE("cosine schedule endpoints") {
  const ScheduleSpec spec{0.1, 100, ScheduleKind::cosine};
  CHECK(schedule_lr(spec, 0) == doctest::Approx(0.1));
  CHECK(schedule_lr(spec, 50) == doctest::Approx(0.05));
  CHECK(std::abs(schedule_lr(spec, 100)) < 1e-15);
}

TEST_CASE("frozen tensors refuse optimizers") {
  Tensor p({2}, 1.0);
  p.freeze();
  CHECK_THROWS_AS(Sgd({p}, {}), FrozenError);
}

TEST_CASE("gradcheck suite: every registered check passes, corruption is caught") {
  const auto names = gradcheck_names();
  const auto results = run_gradcheck_suite(1e-4);
  REQUIRE(results.size() == names.size());
  for (const auto& r : results) {
    INFO(r.name << " " << r.max_rel_error);
    CHECK(r.passed);
  }
  const auto corrupted = run_gradcheck_suite(1e-4, "matmul");
  CHECK_FALSE(corrupted.front().passed);
}

TEST_CASE("finite_diff_check on a quadratic") {
  CounterRng rng(6);
  Tensor x = Tensor::randn({5}, rng, 1.0);
  const double err = finite_diff_check([](const Tensor& t) { return sum(mul(t, t)); }, x, 1e-5);
  CHECK(err < 1e-8);
}
