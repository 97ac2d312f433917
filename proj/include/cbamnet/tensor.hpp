#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "cbamnet/common.hpp"

namespace cbamnet {

// Dense N-d array with reverse-mode autodiff. Layout for images is fixed to
// batch x channel x height x width. Values are immutable once an op has
// produced them; only gradients accumulate.
using Shape = std::vector<int64_t>;

int64_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);

template <typename T>
struct TensorNode {
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;  // allocated lazily on first accumulation
  bool requires_grad = false;
  std::vector<std::shared_ptr<TensorNode<T>>> parents;
  std::function<void(TensorNode<T>&)> backprop;

  void ensure_grad() {
    if (grad.empty()) grad.assign(value.size(), T(0));
  }
};

template <typename T>
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, T v, bool requires_grad = false);
  static Tensor from_data(Shape shape, std::vector<T> data, bool requires_grad = false);
  // Fan-in uniform init in (-1/sqrt(fan_in), 1/sqrt(fan_in)).
  static Tensor uniform_fan_in(Shape shape, int64_t fan_in, Rng& rng, bool requires_grad = true);

  bool defined() const { return static_cast<bool>(n_); }
  const Shape& shape() const { return n_->shape; }
  int64_t dim(size_t i) const { return n_->shape[i]; }
  int64_t rank() const { return static_cast<int64_t>(n_->shape.size()); }
  int64_t numel() const { return static_cast<int64_t>(n_->value.size()); }
  bool requires_grad() const { return n_->requires_grad; }

  std::span<const T> values() const { return {n_->value.data(), n_->value.size()}; }
  // Direct storage access; reserved for initialization and stateful buffers
  // (optimizer updates, batch-norm running stats), never for op outputs.
  std::span<T> raw() { return {n_->value.data(), n_->value.size()}; }

  std::span<const T> grad() const {
    if (n_->grad.empty()) return {};
    return {n_->grad.data(), n_->grad.size()};
  }
  void zero_grad() { n_->grad.clear(); }

  T item() const;

  std::shared_ptr<TensorNode<T>> node() const { return n_; }
  static Tensor wrap(std::shared_ptr<TensorNode<T>> n) {
    Tensor t;
    t.n_ = std::move(n);
    return t;
  }

 private:
  std::shared_ptr<TensorNode<T>> n_;
};

enum class PoolMode { Avg, Max };

// --- differentiable ops -----------------------------------------------------

template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& kernel, int stride, int padding);

template <typename T>
Tensor<T> pool_global(const Tensor<T>& input, PoolMode mode);

template <typename T>
Tensor<T> pool_channel(const Tensor<T>& input, PoolMode mode);

template <typename T>
Tensor<T> max_pool2d(const Tensor<T>& input, int window, int stride);

template <typename T>
Tensor<T> avg_pool2d(const Tensor<T>& input, int window, int stride);

template <typename T>
Tensor<T> linear(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias);

// weight laid out [out, in]; used where weights are specified in that
// orientation (attention MLP).
template <typename T>
Tensor<T> linear_nt(const Tensor<T>& input, const Tensor<T>& weight);

template <typename T>
Tensor<T> relu(const Tensor<T>& input);

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& input);

// other's shape must equal input's with any subset of axes set to 1.
template <typename T>
Tensor<T> mul_broadcast(const Tensor<T>& input, const Tensor<T>& other);

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);

// input [N,C,H,W] + bias [C]
template <typename T>
Tensor<T> add_channel_bias(const Tensor<T>& input, const Tensor<T>& bias);

template <typename T>
Tensor<T> concat_channels(const std::vector<Tensor<T>>& parts);

template <typename T>
Tensor<T> reshape(const Tensor<T>& input, Shape shape);

template <typename T>
Tensor<T> sum(const Tensor<T>& input);

constexpr double kBatchNormEps = 1e-5;
constexpr double kBatchNormMomentum = 0.1;

// Train mode normalizes by batch statistics (biased variance) and, when
// update_running is set, folds them into the running buffers with momentum
// kBatchNormMomentum. Eval mode normalizes by the running buffers.
template <typename T>
Tensor<T> batch_norm(const Tensor<T>& input, const Tensor<T>& scale, const Tensor<T>& shift,
                     Tensor<T>& running_mean, Tensor<T>& running_var, bool training,
                     bool update_running = true);

template <typename T>
void backward(const Tensor<T>& loss);

}  // namespace cbamnet
