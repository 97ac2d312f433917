#pragma once

#include <variant>
#include <vector>

#include "cbamnet/tensor.hpp"

namespace cbamnet {

struct FocalParams {
  double alpha = 0.25;
  double gamma = 2.0;
  void validate() const;
};

// Mean over N*L of -[y log s(z) + (1-y) log(1-s(z))], evaluated in the
// stable form max(z,0) - z*y + log1p(exp(-|z|)). Targets must be 0/1.
template <typename T>
Tensor<T> bce_with_logits(const Tensor<T>& logits, const Tensor<T>& targets);

// Mean over N*L of alpha * (1-p_t)^gamma * (-log p_t) with p_t = s(z) for
// y=1 and 1-s(z) for y=0; the -log p_t factor uses the same stable form as
// BCE. Differentiable through the modulating factor.
template <typename T>
Tensor<T> focal_loss(const Tensor<T>& logits, const Tensor<T>& targets, const FocalParams& p);

// Loss selection. "Summed" is lambda*BCE + focal in a single objective; it
// exists as an explicitly configurable alternative to the staged reading of
// a BCE+focal combination.
struct BceKind {};
struct FocalKind {
  FocalParams params;
};
struct SummedKind {
  double bce_weight = 1.0;
  FocalParams focal;
};
using LossKind = std::variant<BceKind, FocalKind, SummedKind>;

struct LossPlan {
  // Single kind applies to every stage; staged supplies one kind per stage.
  std::vector<LossKind> kinds;
  bool staged = false;

  static LossPlan single(LossKind k);
  static LossPlan make_staged(std::vector<LossKind> per_stage);
  // stage_index is 1-based; staged plans require it to be within range.
  const LossKind& resolve(int stage_index, int stage_count) const;
};

template <typename T>
Tensor<T> apply_loss(const LossKind& kind, const Tensor<T>& logits, const Tensor<T>& targets);

std::string loss_kind_name(const LossKind& kind);

}  // namespace cbamnet
