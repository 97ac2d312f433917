#pragma once

#include <memory>
#include <utility>
#include <vector>

#include "cbamnet/tensor.hpp"

namespace cbamnet::detail {

// Result node for an op. Gradient tracking is inherited from the parents;
// ops install a backprop closure only when the result requires grad.
template <typename T>
std::shared_ptr<TensorNode<T>> make_node(Shape shape,
                                         std::vector<std::shared_ptr<TensorNode<T>>> parents) {
  auto n = std::make_shared<TensorNode<T>>();
  const int64_t count = shape_numel(shape);
  n->shape = std::move(shape);
  n->value.resize(static_cast<size_t>(count));
  bool rg = false;
  for (const auto& p : parents) rg = rg || p->requires_grad;
  n->requires_grad = rg;
  if (rg) n->parents = std::move(parents);
  return n;
}

inline std::vector<int64_t> row_major_strides(const Shape& s) {
  std::vector<int64_t> strides(s.size());
  int64_t acc = 1;
  for (int d = static_cast<int>(s.size()) - 1; d >= 0; --d) {
    strides[static_cast<size_t>(d)] = acc;
    acc *= s[static_cast<size_t>(d)];
  }
  return strides;
}

}  // namespace cbamnet::detail
