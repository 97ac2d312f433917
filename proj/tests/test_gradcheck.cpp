#include <doctest.h>

#include "cbamnet/gradcheck.hpp"
#include "cbamnet/losses.hpp"
#include "test_support.hpp"

using namespace cbamnet;
using testsup::random_tensor;

TEST_SUITE_BEGIN("gradcheck");

TEST_CASE("linear-only model checks out below 1e-9") {
  Rng rng(1);
  ParameterRegistry<double> reg;
  auto w = reg.add("w", random_tensor({4, 3}, rng, true), true);
  auto b = reg.add("b", random_tensor({3}, rng, true), true);
  auto x = random_tensor({5, 4}, rng, false);
  auto weights = random_tensor({5, 3}, rng, false);

  auto loss = [&]() { return sum(mul_broadcast(linear(x, w, b), weights)); };
  auto report = grad_check(reg, loss, 1e-5, 1e-9, 64, 7);
  CHECK(report.checked_count == 15);  // every coordinate of w and b
  CHECK(report.excluded_count == 0);
  CHECK(report.max_rel_err < 1e-9);
  CHECK(report.passed(1e-9));
}

TEST_CASE("a max-pool sitting exactly on a tie flags the coordinate as excluded") {
  ParameterRegistry<double> reg;
  // two tied entries: nudging either crosses the argmax, so central
  // differences bracket a kink
  auto p = reg.add("p", Tensor<double>::from_data({1, 1, 2, 2}, {1.0, 1.0, -5.0, -5.0}, true), true);
  auto loss = [&]() { return sum(max_pool2d(p, 2, 2)); };
  auto report = grad_check(reg, loss, 1e-5, 1e-6, 4, 3);
  CHECK(report.excluded_count >= 1);
  bool tied_flagged = false;
  for (const auto& c : report.coordinates)
    if (c.excluded && (c.index == 0 || c.index == 1)) tied_flagged = true;
  CHECK(tied_flagged);
  // the far-from-max coordinates still check cleanly
  CHECK(report.max_rel_err < 1e-6);
}

TEST_CASE("cbam-augmented dense-mini passes an end-to-end gradient check") {
  ModelSpec spec = preset("dense-mini");
  spec.input_size = 16;  // small spatial for a fast unit-level check
  spec.validate();
  Model<double> model(spec, 2027);
  model.set_training(true);
  model.set_bn_stat_updates(false);  // keep the loss a pure function of the params

  Rng rng(5);
  auto x = random_tensor({2, 1, 16, 16}, rng, false);
  std::vector<double> t(2 * 6);
  for (auto& v : t) v = rng.uniform() < 0.4 ? 1.0 : 0.0;
  auto targets = Tensor<double>::from_data({2, 6}, std::move(t));

  auto loss = [&]() { return bce_with_logits(model.classify(x), targets); };
  auto report = grad_check(model.params(), loss, 1e-5, 1e-4, 120, 11);
  CAPTURE(report.max_rel_err);
  CAPTURE(report.excluded_count);
  CHECK(report.checked_count >= 100);
  CHECK(report.max_rel_err < 1e-4);
}

TEST_SUITE_END();
