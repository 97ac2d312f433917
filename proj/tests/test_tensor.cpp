#include <doctest.h>

#include <cmath>

#include "cbamnet/tensor.hpp"
#include "oracles.hpp"
#include "test_support.hpp"

using namespace cbamnet;
using testsup::directional_grad_check;
using testsup::random_tensor;

TEST_SUITE_BEGIN("tensor");

TEST_CASE("conv2d identity kernel reproduces the input") {
  auto x = Tensor<double>::from_data({1, 1, 3, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9});
  auto k = Tensor<double>::from_data({1, 1, 1, 1}, {1.0});
  auto y = conv2d(x, k, 1, 0);
  CHECK(y.shape() == Shape{1, 1, 3, 3});
  for (int i = 0; i < 9; ++i) CHECK(y.values()[i] == x.values()[i]);
}

TEST_CASE("conv2d all-zero kernel annihilates") {
  Rng rng(7);
  auto x = random_tensor({2, 3, 4, 4}, rng, false);
  auto k = Tensor<double>::zeros({2, 3, 3, 3});
  auto y = conv2d(x, k, 1, 1);
  for (double v : y.values()) CHECK(v == 0.0);
}

TEST_CASE("conv2d 4x4 ramp against the nested-loop oracle") {
  std::vector<double> vals(16);
  for (int i = 0; i < 16; ++i) vals[i] = i + 1;
  auto x = Tensor<double>::from_data({1, 1, 4, 4}, vals);
  auto k = Tensor<double>::full({1, 1, 3, 3}, 1.0);
  auto y = conv2d(x, k, 1, 0);
  int64_t oh = 0, ow = 0;
  auto ref = oracles::conv2d_reference<double>(vals, 1, 1, 4, 4, std::vector<double>(9, 1.0), 1, 3, 3, 1,
                                               0, &oh, &ow);
  REQUIRE(oh == 2);
  REQUIRE(ow == 2);
  const double expected[4] = {54, 63, 90, 99};
  for (int i = 0; i < 4; ++i) {
    CHECK(y.values()[i] == doctest::Approx(ref[i]).epsilon(1e-14));
    CHECK(ref[i] == expected[i]);
  }
}

TEST_CASE("conv2d agrees with the oracle on random strided padded cases") {
  Rng rng(42);
  for (int trial = 0; trial < 20; ++trial) {
    const int64_t n = 1 + rng.uniform_int(2), c = 1 + rng.uniform_int(3), h = 3 + rng.uniform_int(6),
                  w = 3 + rng.uniform_int(6), o = 1 + rng.uniform_int(3);
    const int kk = 1 + 2 * static_cast<int>(rng.uniform_int(2));  // 1 or 3
    const int stride = 1 + static_cast<int>(rng.uniform_int(2));
    const int pad = static_cast<int>(rng.uniform_int(2));
    auto x = random_tensor({n, c, h, w}, rng, false);
    auto k = random_tensor({o, c, kk, kk}, rng, false);
    auto y = conv2d(x, k, stride, pad);
    int64_t oh = 0, ow = 0;
    auto ref = oracles::conv2d_reference<double>(
        std::vector<double>(x.values().begin(), x.values().end()), n, c, h, w,
        std::vector<double>(k.values().begin(), k.values().end()), o, kk, kk, stride, pad, &oh, &ow);
    REQUIRE(y.shape() == Shape{n, o, oh, ow});
    for (size_t i = 0; i < ref.size(); ++i)
      CHECK(y.values()[i] == doctest::Approx(ref[i]).epsilon(1e-12));
  }
}

TEST_CASE("conv2d rejects channel mismatch naming both shapes") {
  auto x = Tensor<double>::zeros({1, 2, 4, 4});
  auto k = Tensor<double>::zeros({1, 3, 3, 3});
  CHECK_THROWS_WITH_AS(conv2d(x, k, 1, 0),
                       doctest::Contains("kernel channel dim 3 does not match input channel dim 2"),
                       TensorError);
}

TEST_CASE("conv2d rejects kernels larger than the padded input") {
  auto x = Tensor<double>::zeros({1, 1, 2, 2});
  auto k = Tensor<double>::zeros({1, 1, 5, 5});
  CHECK_THROWS_AS(conv2d(x, k, 1, 1), TensorError);
}

TEST_CASE("pool_global constants and enumerated example") {
  auto c = Tensor<double>::full({2, 3, 4, 4}, 0.75);
  auto avg = pool_global(c, PoolMode::Avg);
  auto max = pool_global(c, PoolMode::Max);
  for (double v : avg.values()) CHECK(v == 0.75);
  for (double v : max.values()) CHECK(v == 0.75);

  auto x = Tensor<double>::from_data({1, 1, 2, 2}, {1, 2, 3, 4});
  CHECK(pool_global(x, PoolMode::Avg).item() == 2.5);
  CHECK(pool_global(x, PoolMode::Max).item() == 4.0);
}

TEST_CASE("pool_global max routes gradient to the unique argmax") {
  auto x = Tensor<double>::from_data({1, 1, 2, 2}, {1, 2, 3, 4}, true);
  backward(sum(pool_global(x, PoolMode::Max)));
  const double expected[4] = {0, 0, 0, 1};
  for (int i = 0; i < 4; ++i) CHECK(x.grad()[i] == expected[i]);
}

TEST_CASE("pool_channel singleton, enumeration, and symmetry") {
  Rng rng(3);
  auto single = random_tensor({2, 1, 3, 3}, rng, false);
  for (auto mode : {PoolMode::Avg, PoolMode::Max}) {
    auto y = pool_channel(single, mode);
    REQUIRE(y.shape() == single.shape());
    for (size_t i = 0; i < single.values().size(); ++i) CHECK(y.values()[i] == single.values()[i]);
  }

  auto x = Tensor<double>::from_data({1, 2, 1, 1}, {3, -1});
  CHECK(pool_channel(x, PoolMode::Avg).item() == 1.0);
  CHECK(pool_channel(x, PoolMode::Max).item() == 3.0);

  // constant across channels: avg equals max
  auto base = random_tensor({1, 1, 4, 4}, rng, false);
  auto rep = concat_channels<double>({base, base, base});
  auto avg = pool_channel(rep, PoolMode::Avg);
  auto max = pool_channel(rep, PoolMode::Max);
  for (size_t i = 0; i < avg.values().size(); ++i)
    CHECK(avg.values()[i] == doctest::Approx(max.values()[i]).epsilon(1e-15));
}

TEST_CASE("max_pool2d identity, enumeration, constant") {
  Rng rng(11);
  auto x = random_tensor({1, 2, 3, 3}, rng, false);
  auto id = max_pool2d(x, 1, 1);
  for (size_t i = 0; i < x.values().size(); ++i) CHECK(id.values()[i] == x.values()[i]);

  auto q = Tensor<double>::from_data({1, 1, 2, 2}, {1, 2, 3, 4});
  CHECK(max_pool2d(q, 2, 2).item() == 4.0);

  auto c = Tensor<double>::full({1, 1, 4, 4}, -2.5);
  auto pooled = max_pool2d(c, 2, 2);
  for (double v : pooled.values()) CHECK(v == -2.5);
}

TEST_CASE("max_pool2d rejects oversized windows") {
  auto x = Tensor<double>::zeros({1, 1, 2, 2});
  CHECK_THROWS_WITH_AS(max_pool2d(x, 3, 1), doctest::Contains("window 3 exceeds spatial extent"),
                       TensorError);
}

TEST_CASE("max_pool2d ties break to the first element in scan order") {
  auto x = Tensor<double>::from_data({1, 1, 2, 2}, {5, 5, 5, 5}, true);
  backward(sum(max_pool2d(x, 2, 2)));
  CHECK(x.grad()[0] == 1.0);
  CHECK(x.grad()[1] == 0.0);
  CHECK(x.grad()[2] == 0.0);
  CHECK(x.grad()[3] == 0.0);
}

TEST_CASE("linear identity, bias broadcast, and hand product") {
  auto x = Tensor<double>::from_data({2, 2}, {1, 2, 3, 4});
  auto eye = Tensor<double>::from_data({2, 2}, {1, 0, 0, 1});
  auto zero_b = Tensor<double>::zeros({2});
  auto y = linear(x, eye, zero_b);
  for (size_t i = 0; i < x.values().size(); ++i) CHECK(y.values()[i] == x.values()[i]);

  auto zero_w = Tensor<double>::zeros({2, 3});
  auto b = Tensor<double>::from_data({3}, {5, -1, 2});
  auto rows = linear(x, zero_w, b);
  for (int64_t r = 0; r < 2; ++r)
    for (int64_t j = 0; j < 3; ++j) CHECK(rows.values()[r * 3 + j] == b.values()[j]);

  auto v = Tensor<double>::from_data({1, 2}, {1, 2});
  auto w2 = Tensor<double>::from_data({2, 2}, {2, 0, 0, 2});
  auto z = linear(v, w2, Tensor<double>::zeros({2}));
  CHECK(z.values()[0] == 2.0);
  CHECK(z.values()[1] == 4.0);
}

TEST_CASE("linear rejects dimension mismatches") {
  auto x = Tensor<double>::zeros({2, 3});
  CHECK_THROWS_AS(linear(x, Tensor<double>::zeros({2, 4}), Tensor<double>::zeros({4})), TensorError);
  CHECK_THROWS_AS(linear(x, Tensor<double>::zeros({3, 4}), Tensor<double>::zeros({5})), TensorError);
}

TEST_CASE("elementwise basics") {
  CHECK(sigmoid(Tensor<double>::zeros({1})).item() == 0.5);

  Rng rng(5);
  auto x = random_tensor({2, 2, 2, 2}, rng, false);
  auto ones = Tensor<double>::full({2, 2, 1, 1}, 1.0);
  auto masked = mul_broadcast(x, ones);
  for (size_t i = 0; i < x.values().size(); ++i) CHECK(masked.values()[i] == x.values()[i]);

  // relu subgradient: 0 below, 1 above, 0 at exactly 0
  auto r = Tensor<double>::from_data({3}, {-2.0, 0.0, 2.0}, true);
  backward(sum(relu(r)));
  CHECK(r.grad()[0] == 0.0);
  CHECK(r.grad()[1] == 0.0);
  CHECK(r.grad()[2] == 1.0);
}

TEST_CASE("mul_broadcast rejects non-broadcastable shapes") {
  auto x = Tensor<double>::zeros({1, 2, 3, 3});
  CHECK_THROWS_AS(mul_broadcast(x, Tensor<double>::zeros({1, 3, 3, 3})), TensorError);
  CHECK_THROWS_AS(mul_broadcast(x, Tensor<double>::zeros({2, 3, 3})), TensorError);
}

TEST_CASE("concat_channels ordering and identity") {
  Rng rng(9);
  auto x = random_tensor({1, 2, 2, 2}, rng, false);
  auto same = concat_channels<double>({x});
  for (size_t i = 0; i < x.values().size(); ++i) CHECK(same.values()[i] == x.values()[i]);

  auto a = Tensor<double>::full({1, 1, 2, 2}, 3.0);
  auto b = Tensor<double>::full({1, 1, 2, 2}, -4.0);
  auto cat = concat_channels<double>({a, b});
  REQUIRE(cat.shape() == Shape{1, 2, 2, 2});
  for (int i = 0; i < 4; ++i) {
    CHECK(cat.values()[i] == 3.0);
    CHECK(cat.values()[4 + i] == -4.0);
  }
}

TEST_CASE("concat_channels rejects spatial mismatches") {
  auto a = Tensor<double>::zeros({1, 1, 2, 2});
  auto wrong = Tensor<double>::zeros({1, 1, 3, 2});
  CHECK_THROWS_WITH_AS(concat_channels<double>({a, wrong}), doctest::Contains("outside the channel axis"),
                       TensorError);
}

TEST_CASE("concat/split duality is exact") {
  Rng rng(21);
  auto a = random_tensor({2, 3, 4, 4}, rng, true);
  auto b = random_tensor({2, 2, 4, 4}, rng, true);
  auto cat = concat_channels<double>({a, b});
  // weighted sum, then check the gradient slices reproduce the weights
  auto w = random_tensor(cat.shape(), rng, false);
  backward(sum(mul_broadcast(cat, w)));
  const int64_t hw = 16;
  for (int64_t n = 0; n < 2; ++n) {
    for (int64_t c = 0; c < 3; ++c)
      for (int64_t i = 0; i < hw; ++i)
        CHECK(a.grad()[(n * 3 + c) * hw + i] == w.values()[(n * 5 + c) * hw + i]);
    for (int64_t c = 0; c < 2; ++c)
      for (int64_t i = 0; i < hw; ++i)
        CHECK(b.grad()[(n * 2 + c) * hw + i] == w.values()[(n * 5 + 3 + c) * hw + i]);
  }
}

TEST_CASE("batch_norm train mode examples") {
  // zero-mean unit-variance input stays (almost) itself
  auto x = Tensor<double>::from_data({1, 1, 2, 2}, {-1, 1, -1, 1});
  auto scale = Tensor<double>::full({1}, 1.0);
  auto shift = Tensor<double>::zeros({1});
  auto rm = Tensor<double>::zeros({1});
  auto rv = Tensor<double>::full({1}, 1.0);
  auto y = batch_norm(x, scale, shift, rm, rv, true);
  for (size_t i = 0; i < 4; ++i)
    CHECK(y.values()[i] == doctest::Approx(x.values()[i]).epsilon(1e-4));

  // zero scale collapses to the broadcast shift
  auto shift2 = Tensor<double>::from_data({1}, {0.25});
  auto zero_scale = Tensor<double>::zeros({1});
  auto y2 = batch_norm(x, zero_scale, shift2, rm, rv, true);
  for (double v : y2.values()) CHECK(v == 0.25);
}

TEST_CASE("batch_norm eval mode uses the stored statistics") {
  auto x = Tensor<double>::from_data({1, 1, 1, 1}, {3.0});
  auto scale = Tensor<double>::full({1}, 1.0);
  auto shift = Tensor<double>::zeros({1});
  auto rm = Tensor<double>::from_data({1}, {1.0});
  auto rv = Tensor<double>::from_data({1}, {4.0});
  auto y = batch_norm(x, scale, shift, rm, rv, false);
  CHECK(y.item() == doctest::Approx(2.0 / std::sqrt(4.0 + 1e-5)).epsilon(1e-12));
}

TEST_CASE("batch_norm train mode rejects a single spatial-batch element") {
  auto x = Tensor<double>::from_data({1, 2, 1, 1}, {1.0, 2.0});
  auto s = Tensor<double>::full({2}, 1.0);
  auto b = Tensor<double>::zeros({2});
  auto rm = Tensor<double>::zeros({2});
  auto rv = Tensor<double>::full({2}, 1.0);
  CHECK_THROWS_WITH_AS(batch_norm(x, s, b, rm, rv, true), doctest::Contains("variance undefined"),
                       TensorError);
  CHECK_NOTHROW(batch_norm(x, s, b, rm, rv, false));
}

TEST_CASE("batch_norm updates running stats with momentum 0.1") {
  auto x = Tensor<double>::from_data({1, 1, 2, 2}, {2, 2, 6, 6});  // mean 4, biased var 4
  auto s = Tensor<double>::full({1}, 1.0);
  auto b = Tensor<double>::zeros({1});
  auto rm = Tensor<double>::zeros({1});
  auto rv = Tensor<double>::full({1}, 1.0);
  (void)batch_norm(x, s, b, rm, rv, true);
  CHECK(rm.values()[0] == doctest::Approx(0.4).epsilon(1e-12));
  CHECK(rv.values()[0] == doctest::Approx(0.9 + 0.4).epsilon(1e-12));
}

TEST_CASE("backward populates analytic gradients") {
  Rng rng(17);
  auto x = random_tensor({3, 4}, rng, true);
  backward(sum(x));
  for (double g : x.grad()) CHECK(g == 1.0);

  auto y = random_tensor({3, 4}, rng, true);
  backward(sum(mul_broadcast(y, y)));
  for (size_t i = 0; i < y.grad().size(); ++i)
    CHECK(y.grad()[i] == doctest::Approx(2.0 * y.values()[i]).epsilon(1e-15));
}

TEST_CASE("backward rejects non-scalar losses") {
  auto x = Tensor<double>::zeros({2, 2}, true);
  CHECK_THROWS_WITH_AS(backward(relu(x)), doctest::Contains("must be a scalar"), TensorError);
}

TEST_CASE("gradients accumulate when a tensor feeds multiple consumers") {
  auto x = Tensor<double>::from_data({2}, {1.0, -2.0}, true);
  backward(add(sum(x), sum(mul_broadcast(x, x))));
  CHECK(x.grad()[0] == doctest::Approx(1.0 + 2.0).epsilon(1e-15));
  CHECK(x.grad()[1] == doctest::Approx(1.0 - 4.0).epsilon(1e-15));
}

TEST_CASE("per-op finite-difference gradient fidelity") {
  // every differentiable op, random 64-bit inputs in [-1,1], h=1e-5
  const double tol = 1e-6;
  auto check = [&](const std::vector<Shape>& shapes, const testsup::MultiOp& op, uint64_t seed) {
    auto r = directional_grad_check(shapes, op, seed);
    CAPTURE(r.analytic);
    CAPTURE(r.finite_diff);
    CHECK(r.rel < tol);
  };

  check({{2, 3, 5, 5}, {4, 3, 3, 3}},
        [](const auto& in) { return conv2d(in[0], in[1], 1, 1); }, 101);
  check({{1, 2, 6, 6}, {3, 2, 3, 3}},
        [](const auto& in) { return conv2d(in[0], in[1], 2, 0); }, 102);
  check({{2, 3, 4, 4}}, [](const auto& in) { return pool_global(in[0], PoolMode::Avg); }, 103);
  check({{2, 3, 4, 4}}, [](const auto& in) { return pool_global(in[0], PoolMode::Max); }, 104);
  check({{2, 3, 4, 4}}, [](const auto& in) { return pool_channel(in[0], PoolMode::Avg); }, 105);
  check({{2, 3, 4, 4}}, [](const auto& in) { return pool_channel(in[0], PoolMode::Max); }, 106);
  check({{1, 2, 6, 6}}, [](const auto& in) { return max_pool2d(in[0], 2, 2); }, 107);
  check({{1, 2, 6, 6}}, [](const auto& in) { return avg_pool2d(in[0], 2, 2); }, 108);
  check({{3, 4}, {4, 5}, {5}}, [](const auto& in) { return linear(in[0], in[1], in[2]); }, 109);
  check({{3, 4}, {6, 4}}, [](const auto& in) { return linear_nt(in[0], in[1]); }, 110);
  check({{2, 3, 4, 4}}, [](const auto& in) { return relu(in[0]); }, 111);
  check({{2, 3, 4, 4}}, [](const auto& in) { return sigmoid(in[0]); }, 112);
  check({{2, 3, 4, 4}, {2, 3, 1, 1}}, [](const auto& in) { return mul_broadcast(in[0], in[1]); }, 113);
  check({{2, 3, 4, 4}, {2, 1, 4, 4}}, [](const auto& in) { return mul_broadcast(in[0], in[1]); }, 114);
  check({{2, 3, 4, 4}, {2, 3, 4, 4}}, [](const auto& in) { return add(in[0], in[1]); }, 115);
  check({{2, 3, 4, 4}, {3}}, [](const auto& in) { return add_channel_bias(in[0], in[1]); }, 116);
  check({{1, 2, 3, 3}, {1, 3, 3, 3}},
        [](const auto& in) { return concat_channels<double>({in[0], in[1]}); }, 117);
  check({{2, 4}}, [](const auto& in) { return reshape(in[0], {4, 2}); }, 118);
  check({{2, 3, 4, 4}, {3}, {3}},
        [](const auto& in) {
          auto rm = Tensor<double>::zeros({3});
          auto rv = Tensor<double>::full({3}, 1.0);
          auto x = in[0];
          return batch_norm(x, in[1], in[2], rm, rv, true, false);
        },
        119);
  check({{2, 3, 4, 4}, {3}, {3}},
        [](const auto& in) {
          auto rm = Tensor<double>::from_data({3}, {0.1, -0.2, 0.3});
          auto rv = Tensor<double>::from_data({3}, {0.5, 1.5, 2.0});
          auto x = in[0];
          return batch_norm(x, in[1], in[2], rm, rv, false, false);
        },
        120);
}

TEST_CASE("conv2d and pooling output shapes satisfy the floor formulas exhaustively") {
  for (int64_t h = 1; h <= 16; ++h)
    for (int64_t w = 1; w <= 16; ++w) {
      auto x = Tensor<double>::full({1, 1, h, w}, 1.0);
      for (int k = 1; k <= 4; ++k)
        for (int s = 1; s <= 3; ++s)
          for (int p = 0; p <= 2; ++p) {
            if (k > h + 2 * p || k > w + 2 * p) continue;
            auto kern = Tensor<double>::full({1, 1, k, k}, 1.0);
            auto y = conv2d(x, kern, s, p);
            CHECK(y.dim(2) == (h + 2 * p - k) / s + 1);
            CHECK(y.dim(3) == (w + 2 * p - k) / s + 1);
            if (p == 0 && k <= h && k <= w) {
              auto m = max_pool2d(x, k, s);
              CHECK(m.dim(2) == (h - k) / s + 1);
              CHECK(m.dim(3) == (w - k) / s + 1);
            }
          }
    }
}

TEST_CASE("conv2d is linear in its input") {
  Rng rng(33);
  auto x = random_tensor({1, 2, 5, 5}, rng, false);
  auto y = random_tensor({1, 2, 5, 5}, rng, false);
  auto k = random_tensor({3, 2, 3, 3}, rng, false);
  const double a = 1.7, b = -0.35;
  std::vector<double> mix(x.values().size());
  for (size_t i = 0; i < mix.size(); ++i) mix[i] = a * x.values()[i] + b * y.values()[i];
  auto lhs = conv2d(Tensor<double>::from_data(x.shape(), std::move(mix)), k, 1, 1);
  auto cx = conv2d(x, k, 1, 1);
  auto cy = conv2d(y, k, 1, 1);
  for (size_t i = 0; i < lhs.values().size(); ++i)
    CHECK(std::abs(lhs.values()[i] - (a * cx.values()[i] + b * cy.values()[i])) < 1e-12);
}

TEST_CASE("identical seeds produce bitwise-identical op outputs") {
  auto run = [](uint64_t seed) {
    Rng rng(seed);
    auto x = random_tensor({2, 3, 6, 6}, rng, false);
    auto k = random_tensor({4, 3, 3, 3}, rng, false);
    auto y = sigmoid(conv2d(x, k, 1, 1));
    return std::vector<double>(y.values().begin(), y.values().end());
  };
  auto a = run(12345), b = run(12345);
  REQUIRE(a.size() == b.size());
  for (size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
}

TEST_CASE("forward ops keep finite inputs finite") {
  Rng rng(55);
  auto x = random_tensor({2, 4, 8, 8}, rng, true);
  auto k = random_tensor({4, 4, 3, 3}, rng, false);
  auto y = sigmoid(conv2d(relu(x), k, 1, 1));
  for (double v : y.values()) CHECK(std::isfinite(v));
}

TEST_SUITE_END();
