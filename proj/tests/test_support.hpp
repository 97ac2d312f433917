#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "cbamnet/tensor.hpp"

namespace testsup {

using cbamnet::Rng;
using cbamnet::Shape;
using cbamnet::Tensor;

inline double rel_err(double a, double b) {
  return std::abs(a - b) / std::max(1e-8, std::abs(a) + std::abs(b));
}

// Random values in [-1,1] kept |v| >= margin away from zero so relu kinks and
// near-ties cannot sit inside the finite-difference bracket.
inline std::vector<double> random_values(int64_t n, Rng& rng, double margin = 0.0) {
  std::vector<double> v(static_cast<size_t>(n));
  for (auto& x : v) {
    do {
      x = rng.uniform(-1.0, 1.0);
    } while (margin > 0.0 && std::abs(x) < margin);
  }
  return v;
}

inline Tensor<double> random_tensor(Shape shape, Rng& rng, bool requires_grad, double margin = 0.0) {
  return Tensor<double>::from_data(shape, random_values(cbamnet::shape_numel(shape), rng, margin),
                                   requires_grad);
}

// Directional finite-difference check of an op's tape gradients w.r.t. every
// argument at once. The scalar objective is sum(w .* op(args)) for fixed
// random weights w; analytic directional derivative comes from one backward.
using MultiOp = std::function<Tensor<double>(const std::vector<Tensor<double>>&)>;

struct GradCheckResult {
  double analytic = 0.0;
  double finite_diff = 0.0;
  double rel = 0.0;
};

inline GradCheckResult directional_grad_check(const std::vector<Shape>& shapes, const MultiOp& op,
                                              uint64_t seed, double h = 1e-5, double margin = 1e-3) {
  Rng rng(seed);
  std::vector<std::vector<double>> base, dirs;
  for (const auto& s : shapes) {
    base.push_back(random_values(cbamnet::shape_numel(s), rng, margin));
    dirs.push_back(random_values(cbamnet::shape_numel(s), rng));
  }
  Tensor<double> weights;
  {
    // fixed after we see the output shape below
  }

  auto build_inputs = [&](double t, bool requires_grad) {
    std::vector<Tensor<double>> inputs;
    for (size_t i = 0; i < shapes.size(); ++i) {
      auto vals = base[i];
      for (size_t j = 0; j < vals.size(); ++j) vals[j] += t * dirs[i][j];
      inputs.push_back(Tensor<double>::from_data(shapes[i], std::move(vals), requires_grad));
    }
    return inputs;
  };

  auto first_out = op(build_inputs(0.0, false));
  {
    Rng wrng(seed ^ 0x5eedULL);
    auto wv = random_values(first_out.numel(), wrng, 0.1);
    weights = Tensor<double>::from_data(first_out.shape(), std::move(wv));
  }
  auto objective = [&](double t) {
    return cbamnet::sum(cbamnet::mul_broadcast(op(build_inputs(t, false)), weights)).item();
  };

  auto inputs = build_inputs(0.0, true);
  auto loss = cbamnet::sum(cbamnet::mul_broadcast(op(inputs), weights));
  cbamnet::backward(loss);

  GradCheckResult result;
  for (size_t i = 0; i < inputs.size(); ++i) {
    auto g = inputs[i].grad();
    for (size_t j = 0; j < dirs[i].size(); ++j) result.analytic += (g.empty() ? 0.0 : g[j]) * dirs[i][j];
  }
  result.finite_diff = (objective(h) - objective(-h)) / (2.0 * h);
  result.rel = rel_err(result.analytic, result.finite_diff);
  return result;
}

}  // namespace testsup
