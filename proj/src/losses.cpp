#include "cbamnet/losses.hpp"

#include <cmath>

#include "tensor_detail.hpp"

namespace cbamnet {

void FocalParams::validate() const {
  if (!(alpha > 0.0 && alpha <= 1.0))
    throw ConfigError("focal loss: alpha must be in (0,1], got " + std::to_string(alpha));
  if (!(gamma >= 0.0)) throw ConfigError("focal loss: gamma must be >= 0, got " + std::to_string(gamma));
}

namespace {

template <typename T>
void check_loss_inputs(const std::shared_ptr<TensorNode<T>>& z, const std::shared_ptr<TensorNode<T>>& y,
                       const char* op) {
  if (z->shape != y->shape)
    throw TensorError(std::string(op) + ": logits " + shape_str(z->shape) + " and targets " +
                      shape_str(y->shape) + " differ");
  for (size_t i = 0; i < y->value.size(); ++i) {
    if (y->value[i] != T(0) && y->value[i] != T(1))
      throw TensorError(std::string(op) + ": target at flat index " + std::to_string(i) +
                        " is not binary: " + std::to_string(static_cast<double>(y->value[i])));
  }
}

// log(1 + e^x) without overflow.
template <typename T>
T softplus(T x) {
  return (x > T(0) ? x : T(0)) + std::log1p(std::exp(-std::abs(x)));
}

template <typename T>
T sigmoid_scalar(T z) {
  if (z >= T(0)) return T(1) / (T(1) + std::exp(-z));
  const T e = std::exp(z);
  return e / (T(1) + e);
}

}  // namespace

template <typename T>
Tensor<T> bce_with_logits(const Tensor<T>& logits, const Tensor<T>& targets) {
  auto z = logits.node();
  auto y = targets.node();
  check_loss_inputs(z, y, "bce_with_logits");
  const auto count = static_cast<T>(z->value.size());
  auto out = detail::make_node<T>({1}, {z, y});
  T acc = T(0);
  for (size_t i = 0; i < z->value.size(); ++i) {
    const T zi = z->value[i];
    acc += (zi > T(0) ? zi : T(0)) - zi * y->value[i] + std::log1p(std::exp(-std::abs(zi)));
  }
  out->value[0] = acc / count;
  if (out->requires_grad) {
    out->backprop = [z, y, count](TensorNode<T>& self) {
      if (!z->requires_grad) return;
      z->ensure_grad();
      const T g = self.grad[0] / count;
      for (size_t i = 0; i < z->value.size(); ++i)
        z->grad[i] += g * (sigmoid_scalar(z->value[i]) - y->value[i]);
    };
  }
  return Tensor<T>::wrap(out);
}

template <typename T>
Tensor<T> focal_loss(const Tensor<T>& logits, const Tensor<T>& targets, const FocalParams& p) {
  p.validate();
  auto z = logits.node();
  auto y = targets.node();
  check_loss_inputs(z, y, "focal_loss");
  const auto count = static_cast<T>(z->value.size());
  const T alpha = static_cast<T>(p.alpha);
  const T gamma = static_cast<T>(p.gamma);
  auto out = detail::make_node<T>({1}, {z, y});
  T acc = T(0);
  for (size_t i = 0; i < z->value.size(); ++i) {
    // zt = z for positives, -z for negatives: p_t = sigmoid(zt)
    const T zt = y->value[i] == T(1) ? z->value[i] : -z->value[i];
    const T neg_log_pt = softplus(-zt);
    const T one_minus_pt = sigmoid_scalar(-zt);
    acc += alpha * std::pow(one_minus_pt, gamma) * neg_log_pt;
  }
  out->value[0] = acc / count;
  if (out->requires_grad) {
    out->backprop = [z, y, count, alpha, gamma](TensorNode<T>& self) {
      if (!z->requires_grad) return;
      z->ensure_grad();
      const T g = self.grad[0] / count;
      for (size_t i = 0; i < z->value.size(); ++i) {
        // d/dzt of alpha (1-pt)^gamma (-log pt)
        //   = alpha (1-pt)^gamma (gamma * pt * log(pt) - (1-pt))
        const T zt = y->value[i] == T(1) ? z->value[i] : -z->value[i];
        const T pt = sigmoid_scalar(zt);
        const T one_minus_pt = sigmoid_scalar(-zt);
        const T log_pt = -softplus(-zt);
        const T dzt = alpha * std::pow(one_minus_pt, gamma) * (gamma * pt * log_pt - one_minus_pt);
        z->grad[i] += g * (y->value[i] == T(1) ? dzt : -dzt);
      }
    };
  }
  return Tensor<T>::wrap(out);
}

LossPlan LossPlan::single(LossKind k) {
  LossPlan plan;
  plan.kinds.push_back(std::move(k));
  plan.staged = false;
  return plan;
}

LossPlan LossPlan::make_staged(std::vector<LossKind> per_stage) {
  if (per_stage.empty()) throw ConfigError("staged loss plan needs at least one stage entry");
  LossPlan plan;
  plan.kinds = std::move(per_stage);
  plan.staged = true;
  return plan;
}

const LossKind& LossPlan::resolve(int stage_index, int stage_count) const {
  if (stage_index < 1 || stage_index > stage_count)
    throw ConfigError("loss plan: stage index " + std::to_string(stage_index) + " out of range [1," +
                      std::to_string(stage_count) + "]");
  if (!staged) return kinds.front();
  if (static_cast<int>(kinds.size()) != stage_count)
    throw ConfigError("staged loss plan has " + std::to_string(kinds.size()) + " entries for " +
                      std::to_string(stage_count) + " stages");
  return kinds[static_cast<size_t>(stage_index - 1)];
}

template <typename T>
Tensor<T> apply_loss(const LossKind& kind, const Tensor<T>& logits, const Tensor<T>& targets) {
  if (std::holds_alternative<BceKind>(kind)) return bce_with_logits(logits, targets);
  if (const auto* f = std::get_if<FocalKind>(&kind)) return focal_loss(logits, targets, f->params);
  const auto& s = std::get<SummedKind>(kind);
  auto bce = bce_with_logits(logits, targets);
  auto focal = focal_loss(logits, targets, s.focal);
  std::vector<T> w{static_cast<T>(s.bce_weight)};
  auto weighted = mul_broadcast(bce, Tensor<T>::from_data({1}, std::move(w)));
  return add(weighted, focal);
}

std::string loss_kind_name(const LossKind& kind) {
  if (std::holds_alternative<BceKind>(kind)) return "bce";
  if (std::holds_alternative<FocalKind>(kind)) return "focal";
  return "bce+focal-summed";
}

#define CBAMNET_INSTANTIATE(T)                                                               \
  template Tensor<T> bce_with_logits<T>(const Tensor<T>&, const Tensor<T>&);                 \
  template Tensor<T> focal_loss<T>(const Tensor<T>&, const Tensor<T>&, const FocalParams&);  \
  template Tensor<T> apply_loss<T>(const LossKind&, const Tensor<T>&, const Tensor<T>&);

CBAMNET_INSTANTIATE(float)
CBAMNET_INSTANTIATE(double)

#undef CBAMNET_INSTANTIATE

}  // namespace cbamnet
