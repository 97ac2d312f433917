#include "cbamnet/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace cbamnet {

namespace {

double rel_err(double a, double b) {
  return std::abs(a - b) / std::max(1e-8, std::abs(a) + std::abs(b));
}

}  // namespace

GradCheckReport grad_check(ParameterRegistry<double>& registry,
                           const std::function<Tensor<double>()>& loss_builder, double h, double tol,
                           int num_coordinates, uint64_t seed) {
  if (h <= 0.0) throw ConfigError("grad_check: step h must be positive");

  // Flatten the trainable coordinate space for sampling.
  std::vector<std::pair<size_t, int64_t>> space;  // (entry index, value index)
  for (size_t e = 0; e < registry.entries().size(); ++e) {
    if (!registry.entries()[e].trainable) continue;
    for (int64_t i = 0; i < registry.entries()[e].tensor.numel(); ++i) space.emplace_back(e, i);
  }
  if (space.empty()) throw ConfigError("grad_check: registry has no trainable parameters");

  Rng rng(seed);
  std::vector<size_t> picks;
  if (static_cast<size_t>(num_coordinates) >= space.size()) {
    picks.resize(space.size());
    for (size_t i = 0; i < space.size(); ++i) picks[i] = i;
  } else {
    // Partial Fisher-Yates: first num_coordinates entries of a shuffled index
    // vector, without materializing the shuffle of the tail.
    std::vector<size_t> idx(space.size());
    for (size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    for (int i = 0; i < num_coordinates; ++i) {
      const size_t j = static_cast<size_t>(i) + rng.uniform_int(idx.size() - static_cast<size_t>(i));
      std::swap(idx[static_cast<size_t>(i)], idx[j]);
      picks.push_back(idx[static_cast<size_t>(i)]);
    }
  }

  // One tape backward gives every analytic gradient; the same pass supplies
  // the unperturbed loss for the one-sided slope comparison below.
  registry.zero_grads();
  auto loss0_tensor = loss_builder();
  const double loss0 = loss0_tensor.item();
  backward(loss0_tensor);

  GradCheckReport report;
  auto eval_at = [&](Tensor<double>& t, int64_t i, double v) {
    const double old = t.values()[static_cast<size_t>(i)];
    t.raw()[static_cast<size_t>(i)] = v;
    const double loss = loss_builder().item();
    t.raw()[static_cast<size_t>(i)] = old;
    return loss;
  };

  for (size_t pick : picks) {
    auto [e, i] = space[pick];
    auto& entry = registry.entries()[e];
    GradCheckCoordinate coord;
    coord.param = entry.name;
    coord.index = i;
    const double theta = entry.tensor.values()[static_cast<size_t>(i)];
    const double up = eval_at(entry.tensor, i, theta + h);
    const double down = eval_at(entry.tensor, i, theta - h);
    const double fd = (up - down) / (2.0 * h);
    coord.finite_diff = fd;
    coord.analytic = entry.tensor.grad().empty() ? 0.0 : entry.tensor.grad()[static_cast<size_t>(i)];
    coord.rel_err = rel_err(coord.analytic, fd);
    if (coord.rel_err >= tol) {
      // A kink or argmax flip inside the bracket splits the one-sided
      // slopes; for smooth coordinates they agree to O(h). A genuine
      // gradient bug leaves them consistent, so it still fails.
      const double left = (loss0 - down) / h;
      const double right = (up - loss0) / h;
      if (rel_err(left, right) > 0.1) coord.excluded = true;
    }
    if (coord.excluded) {
      ++report.excluded_count;
    } else {
      ++report.checked_count;
      report.max_rel_err = std::max(report.max_rel_err, coord.rel_err);
    }
    report.coordinates.push_back(std::move(coord));
  }
  return report;
}

}  // namespace cbamnet
