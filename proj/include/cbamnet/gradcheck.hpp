#pragma once

#include <functional>
#include <string>
#include <vector>

#include "cbamnet/backbone.hpp"

namespace cbamnet {

struct GradCheckCoordinate {
  std::string param;
  int64_t index = 0;
  double analytic = 0.0;
  double finite_diff = 0.0;
  double rel_err = 0.0;
  bool excluded = false;  // finite differences unstable (non-differentiable vicinity)
};

struct GradCheckReport {
  std::vector<GradCheckCoordinate> coordinates;
  double max_rel_err = 0.0;  // over non-excluded coordinates
  int excluded_count = 0;
  int checked_count = 0;

  bool passed(double tol) const { return checked_count > 0 && max_rel_err < tol; }
};

// Central-difference check of tape gradients over a sampled subset of
// trainable parameter coordinates. loss_builder must rebuild the scalar loss
// tensor as a pure function of the current registry values; it is called
// once for the tape backward and twice per finite-difference probe.
// 64-bit mode only; finite differences are unreliable in 32-bit. Relative
// error is |a-b| / max(1e-8, |a|+|b|).
//
// Coordinates whose one-sided slopes (L(t+h)-L(t))/h and (L(t)-L(t-h))/h
// disagree by more than 10% are flagged as excluded rather than failed: an
// argmax flip or relu kink inside the bracket makes the central difference
// meaningless there, while smooth coordinates keep both slopes aligned.
GradCheckReport grad_check(ParameterRegistry<double>& registry,
                           const std::function<Tensor<double>()>& loss_builder, double h, double tol,
                           int num_coordinates, uint64_t seed);

}  // namespace cbamnet
