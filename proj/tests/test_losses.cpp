#include <doctest.h>

#include <cmath>

#include "cbamnet/losses.hpp"
#include "test_support.hpp"

using namespace cbamnet;
using testsup::random_tensor;

namespace {

Tensor<double> random_logits(int64_t n, int64_t l, Rng& rng, double lo = -6.0, double hi = 6.0) {
  std::vector<double> v(static_cast<size_t>(n * l));
  for (auto& x : v) x = rng.uniform(lo, hi);
  return Tensor<double>::from_data({n, l}, std::move(v));
}

Tensor<double> random_targets(int64_t n, int64_t l, Rng& rng) {
  std::vector<double> v(static_cast<size_t>(n * l));
  for (auto& x : v) x = rng.uniform() < 0.5 ? 0.0 : 1.0;
  return Tensor<double>::from_data({n, l}, std::move(v));
}

double logit(double p) { return std::log(p / (1.0 - p)); }

}  // namespace

TEST_SUITE_BEGIN("losses");

TEST_CASE("bce at z=0 is ln 2 regardless of target") {
  auto z = Tensor<double>::zeros({1, 1});
  CHECK(bce_with_logits(z, Tensor<double>::full({1, 1}, 1.0)).item() ==
        doctest::Approx(std::log(2.0)).epsilon(1e-15));
  CHECK(bce_with_logits(z, Tensor<double>::zeros({1, 1})).item() ==
        doctest::Approx(std::log(2.0)).epsilon(1e-15));

  auto z4 = Tensor<double>::zeros({2, 2});
  auto mixed = Tensor<double>::from_data({2, 2}, {1, 0, 0, 1});
  CHECK(bce_with_logits(z4, mixed).item() == doctest::Approx(std::log(2.0)).epsilon(1e-15));
}

TEST_CASE("bce vanishes for confident correct predictions") {
  auto z = Tensor<double>::full({1, 1}, 20.0);
  auto y = Tensor<double>::full({1, 1}, 1.0);
  CHECK(bce_with_logits(z, y).item() < 1e-8);
}

TEST_CASE("bce rejects non-binary targets") {
  auto z = Tensor<double>::zeros({1, 2});
  auto bad = Tensor<double>::from_data({1, 2}, {0.0, 0.5});
  CHECK_THROWS_WITH_AS(bce_with_logits(z, bad), doctest::Contains("not binary"), TensorError);
}

TEST_CASE("focal matches the closed-form spot values") {
  FocalParams p{0.25, 2.0};
  {
    auto z = Tensor<double>::from_data({1, 1}, {logit(0.9)});
    auto y = Tensor<double>::full({1, 1}, 1.0);
    CHECK(focal_loss(z, y, p).item() ==
          doctest::Approx(0.25 * 0.01 * -std::log(0.9)).epsilon(1e-10));
    CHECK(focal_loss(z, y, p).item() == doctest::Approx(2.634e-4).epsilon(1e-3));
  }
  {
    auto z = Tensor<double>::zeros({1, 1});  // sigma = 0.5
    auto y = Tensor<double>::full({1, 1}, 1.0);
    CHECK(focal_loss(z, y, p).item() == doctest::Approx(0.25 * 0.25 * std::log(2.0)).epsilon(1e-12));
    CHECK(focal_loss(z, y, p).item() == doctest::Approx(4.332e-2).epsilon(1e-3));
  }
}

TEST_CASE("focal with gamma=0 alpha=1 collapses to bce") {
  Rng rng(2024);
  FocalParams p{1.0, 0.0};
  for (int trial = 0; trial < 1000; ++trial) {
    auto z = random_logits(2, 3, rng);
    auto y = random_targets(2, 3, rng);
    CHECK(std::abs(focal_loss(z, y, p).item() - bce_with_logits(z, y).item()) < 1e-12);
  }
}

TEST_CASE("focal is dominated by alpha * bce") {
  Rng rng(99);
  int checked = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const double alpha = rng.uniform(0.05, 1.0);
    const double gamma = rng.uniform(0.0, 5.0);
    FocalParams p{alpha, gamma};
    auto z = random_logits(2, 5, rng);
    auto y = random_targets(2, 5, rng);
    CHECK(focal_loss(z, y, p).item() <= alpha * bce_with_logits(z, y).item() + 1e-15);
    ++checked;
  }
  CHECK(checked * 10 == 10000);  // 10^4 element pairs at 2x5 per trial
}

TEST_CASE("focal is non-increasing in gamma") {
  Rng rng(7);
  const double grid[5] = {0.0, 0.5, 1.0, 2.0, 5.0};
  for (int trial = 0; trial < 50; ++trial) {
    auto z = random_logits(3, 4, rng);
    auto y = random_targets(3, 4, rng);
    double prev = std::numeric_limits<double>::infinity();
    for (double gamma : grid) {
      const double loss = focal_loss(z, y, FocalParams{0.25, gamma}).item();
      CHECK(loss <= prev + 1e-15);
      prev = loss;
    }
  }
}

TEST_CASE("losses stay finite with finite gradients across [-50,50]") {
  std::vector<double> zs;
  for (double z = -50.0; z <= 50.0; z += 2.5) zs.push_back(z);
  const auto n = static_cast<int64_t>(zs.size());
  for (double target : {0.0, 1.0}) {
    auto z = Tensor<double>::from_data({n, 1}, zs, true);
    auto y = Tensor<double>::full({n, 1}, target);
    auto bce = bce_with_logits(z, y);
    CHECK(std::isfinite(bce.item()));
    backward(bce);
    for (double g : z.grad()) CHECK(std::isfinite(g));

    auto z2 = Tensor<double>::from_data({n, 1}, zs, true);
    auto focal = focal_loss(z2, y, FocalParams{0.25, 2.0});
    CHECK(std::isfinite(focal.item()));
    backward(focal);
    for (double g : z2.grad()) CHECK(std::isfinite(g));
  }
}

TEST_CASE("loss gradients match finite differences") {
  Rng rng(404);
  auto targets = random_targets(3, 4, rng);
  auto bce_op = [&](const std::vector<Tensor<double>>& in) { return bce_with_logits(in[0], targets); };
  auto focal_op = [&](const std::vector<Tensor<double>>& in) {
    return focal_loss(in[0], targets, FocalParams{0.25, 2.0});
  };
  auto focal_op_g05 = [&](const std::vector<Tensor<double>>& in) {
    return focal_loss(in[0], targets, FocalParams{0.5, 0.5});
  };
  CHECK(testsup::directional_grad_check({{3, 4}}, bce_op, 1).rel < 1e-6);
  CHECK(testsup::directional_grad_check({{3, 4}}, focal_op, 2).rel < 1e-6);
  CHECK(testsup::directional_grad_check({{3, 4}}, focal_op_g05, 3).rel < 1e-6);
}

TEST_CASE("resolve_plan maps stages to kinds") {
  auto staged = LossPlan::make_staged({BceKind{}, FocalKind{FocalParams{0.25, 2.0}}});
  CHECK(std::holds_alternative<BceKind>(staged.resolve(1, 2)));
  CHECK(std::holds_alternative<FocalKind>(staged.resolve(2, 2)));
  CHECK_THROWS_AS(staged.resolve(3, 2), ConfigError);
  CHECK_THROWS_AS(staged.resolve(0, 2), ConfigError);

  auto plain = LossPlan::single(BceKind{});
  CHECK(std::holds_alternative<BceKind>(plain.resolve(1, 2)));
  CHECK(std::holds_alternative<BceKind>(plain.resolve(2, 2)));
}

TEST_CASE("summed variant is the weighted sum of both objectives") {
  Rng rng(5);
  auto z = random_logits(2, 3, rng);
  auto y = random_targets(2, 3, rng);
  SummedKind kind;
  kind.bce_weight = 0.7;
  kind.focal = FocalParams{0.25, 2.0};
  const double expect =
      0.7 * bce_with_logits(z, y).item() + focal_loss(z, y, kind.focal).item();
  CHECK(apply_loss(LossKind{kind}, z, y).item() == doctest::Approx(expect).epsilon(1e-14));
}

TEST_CASE("focal parameter validation") {
  CHECK_THROWS_AS((FocalParams{0.0, 2.0}.validate()), ConfigError);
  CHECK_THROWS_AS((FocalParams{0.25, -1.0}.validate()), ConfigError);
  CHECK_NOTHROW((FocalParams{1.0, 0.0}.validate()));
}

TEST_SUITE_END();
