#include "cbamnet/tensor.hpp"

#include <cmath>
#include <cstdio>
#include <unordered_set>

#include "tensor_detail.hpp"

namespace cbamnet {

int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int64_t d : s) {
    if (d <= 0) throw TensorError("shape dims must be positive, got " + shape_str(s));
    n *= d;
  }
  return n;
}

std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

std::string to_hex(uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

uint64_t Rng::uniform_int(uint64_t n) {
  if (n == 0) return 0;
  const uint64_t limit = UINT64_MAX - UINT64_MAX % n;
  uint64_t x;
  do {
    x = next_u64();
  } while (x >= limit);
  return x % n;
}

double Rng::normal() {
  double u1 = uniform();
  while (u1 <= 0.0) u1 = uniform();
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
}

template <typename T>
Tensor<T> Tensor<T>::zeros(Shape shape, bool requires_grad) {
  auto n = std::make_shared<TensorNode<T>>();
  const int64_t count = shape_numel(shape);
  n->shape = std::move(shape);
  n->value.assign(static_cast<size_t>(count), T(0));
  n->requires_grad = requires_grad;
  return wrap(std::move(n));
}

template <typename T>
Tensor<T> Tensor<T>::full(Shape shape, T v, bool requires_grad) {
  auto t = zeros(std::move(shape), requires_grad);
  for (auto& x : t.raw()) x = v;
  return t;
}

template <typename T>
Tensor<T> Tensor<T>::from_data(Shape shape, std::vector<T> data, bool requires_grad) {
  const int64_t count = shape_numel(shape);
  if (static_cast<size_t>(count) != data.size())
    throw TensorError("from_data: shape " + shape_str(shape) + " expects " + std::to_string(count) +
                      " elements, got " + std::to_string(data.size()));
  auto n = std::make_shared<TensorNode<T>>();
  n->shape = std::move(shape);
  n->value = std::move(data);
  n->requires_grad = requires_grad;
  return wrap(std::move(n));
}

template <typename T>
Tensor<T> Tensor<T>::uniform_fan_in(Shape shape, int64_t fan_in, Rng& rng, bool requires_grad) {
  if (fan_in <= 0) throw TensorError("uniform_fan_in: fan_in must be positive");
  auto t = zeros(std::move(shape), requires_grad);
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  for (auto& x : t.raw()) x = static_cast<T>(rng.uniform(-bound, bound));
  return t;
}

template <typename T>
T Tensor<T>::item() const {
  if (numel() != 1) throw TensorError("item: tensor has shape " + shape_str(shape()) + ", expected a scalar");
  return n_->value[0];
}

template <typename T>
void backward(const Tensor<T>& loss) {
  if (!loss.defined() || loss.numel() != 1)
    throw TensorError("backward: loss must be a scalar tensor, got shape " +
                      (loss.defined() ? shape_str(loss.shape()) : std::string("<undefined>")));
  auto root = loss.node();
  if (!root->requires_grad) return;

  // Reverse post-order DFS over the tape = topological order from the root,
  // so every node's grad is complete before its backprop runs.
  std::vector<TensorNode<T>*> order;
  std::unordered_set<TensorNode<T>*> visited;
  struct Frame {
    TensorNode<T>* n;
    size_t next;
  };
  std::vector<Frame> stack;
  stack.push_back({root.get(), 0});
  visited.insert(root.get());
  while (!stack.empty()) {
    Frame& f = stack.back();
    if (f.next < f.n->parents.size()) {
      TensorNode<T>* p = f.n->parents[f.next++].get();
      if (p->requires_grad && visited.insert(p).second) stack.push_back({p, 0});
    } else {
      order.push_back(f.n);
      stack.pop_back();
    }
  }

  root->ensure_grad();
  root->grad[0] = T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    if ((*it)->backprop) (*it)->backprop(**it);
  }
}

// --- elementwise -------------------------------------------------------------

template <typename T>
Tensor<T> relu(const Tensor<T>& input) {
  auto x = input.node();
  auto out = detail::make_node<T>(x->shape, {x});
  for (size_t i = 0; i < x->value.size(); ++i) out->value[i] = x->value[i] > T(0) ? x->value[i] : T(0);
  if (out->requires_grad) {
    out->backprop = [x](TensorNode<T>& self) {
      x->ensure_grad();
      for (size_t i = 0; i < self.grad.size(); ++i) {
        // subgradient at exactly 0 is 0
        if (x->value[i] > T(0)) x->grad[i] += self.grad[i];
      }
    };
  }
  return Tensor<T>::wrap(out);
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& input) {
  auto x = input.node();
  auto out = detail::make_node<T>(x->shape, {x});
  for (size_t i = 0; i < x->value.size(); ++i) {
    const T z = x->value[i];
    if (z >= T(0)) {
      out->value[i] = T(1) / (T(1) + std::exp(-z));
    } else {
      const T e = std::exp(z);
      out->value[i] = e / (T(1) + e);
    }
  }
  if (out->requires_grad) {
    out->backprop = [x](TensorNode<T>& self) {
      x->ensure_grad();
      for (size_t i = 0; i < self.grad.size(); ++i) {
        const T y = self.value[i];
        x->grad[i] += self.grad[i] * y * (T(1) - y);
      }
    };
  }
  return Tensor<T>::wrap(out);
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  auto an = a.node();
  auto bn = b.node();
  if (an->shape != bn->shape)
    throw TensorError("add: shape mismatch " + shape_str(an->shape) + " vs " + shape_str(bn->shape));
  auto out = detail::make_node<T>(an->shape, {an, bn});
  for (size_t i = 0; i < an->value.size(); ++i) out->value[i] = an->value[i] + bn->value[i];
  if (out->requires_grad) {
    out->backprop = [an, bn](TensorNode<T>& self) {
      if (an->requires_grad) {
        an->ensure_grad();
        for (size_t i = 0; i < self.grad.size(); ++i) an->grad[i] += self.grad[i];
      }
      if (bn->requires_grad) {
        bn->ensure_grad();
        for (size_t i = 0; i < self.grad.size(); ++i) bn->grad[i] += self.grad[i];
      }
    };
  }
  return Tensor<T>::wrap(out);
}

template <typename T>
Tensor<T> mul_broadcast(const Tensor<T>& input, const Tensor<T>& other) {
  auto x = input.node();
  auto m = other.node();
  if (x->shape.size() != m->shape.size())
    throw TensorError("mul_broadcast: rank mismatch " + shape_str(x->shape) + " vs " + shape_str(m->shape));
  const size_t rank = x->shape.size();
  for (size_t d = 0; d < rank; ++d) {
    if (m->shape[d] != x->shape[d] && m->shape[d] != 1)
      throw TensorError("mul_broadcast: shape " + shape_str(m->shape) + " does not broadcast to " +
                        shape_str(x->shape));
  }
  auto mstrides = detail::row_major_strides(m->shape);
  for (size_t d = 0; d < rank; ++d)
    if (m->shape[d] == 1) mstrides[d] = 0;

  auto out = detail::make_node<T>(x->shape, {x, m});
  const Shape dims = x->shape;
  const int64_t total = static_cast<int64_t>(x->value.size());

  auto for_each_pair = [rank, dims, mstrides, total](auto&& fn) {
    std::vector<int64_t> coord(rank, 0);
    int64_t midx = 0;
    for (int64_t i = 0; i < total; ++i) {
      fn(i, midx);
      for (int d = static_cast<int>(rank) - 1; d >= 0; --d) {
        const auto du = static_cast<size_t>(d);
        ++coord[du];
        midx += mstrides[du];
        if (coord[du] < dims[du]) break;
        midx -= mstrides[du] * dims[du];
        coord[du] = 0;
      }
    }
  };

  for_each_pair([&](int64_t i, int64_t mi) { out->value[i] = x->value[i] * m->value[mi]; });

  if (out->requires_grad) {
    out->backprop = [x, m, for_each_pair](TensorNode<T>& self) {
      if (x->requires_grad) x->ensure_grad();
      if (m->requires_grad) m->ensure_grad();
      for_each_pair([&](int64_t i, int64_t mi) {
        if (x->requires_grad) x->grad[i] += self.grad[i] * m->value[mi];
        if (m->requires_grad) m->grad[mi] += self.grad[i] * x->value[i];
      });
    };
  }
  return Tensor<T>::wrap(out);
}

template <typename T>
Tensor<T> add_channel_bias(const Tensor<T>& input, const Tensor<T>& bias) {
  auto x = input.node();
  auto b = bias.node();
  if (x->shape.size() != 4 || b->shape.size() != 1 || b->shape[0] != x->shape[1])
    throw TensorError("add_channel_bias: input " + shape_str(x->shape) + " and bias " +
                      shape_str(b->shape) + " are incompatible");
  const int64_t n = x->shape[0], c = x->shape[1], hw = x->shape[2] * x->shape[3];
  auto out = detail::make_node<T>(x->shape, {x, b});
  for (int64_t in = 0; in < n; ++in)
    for (int64_t ic = 0; ic < c; ++ic) {
      const T bv = b->value[static_cast<size_t>(ic)];
      const int64_t base = (in * c + ic) * hw;
      for (int64_t i = 0; i < hw; ++i)
        out->value[static_cast<size_t>(base + i)] = x->value[static_cast<size_t>(base + i)] + bv;
    }
  if (out->requires_grad) {
    out->backprop = [x, b, n, c, hw](TensorNode<T>& self) {
      if (x->requires_grad) {
        x->ensure_grad();
        for (size_t i = 0; i < self.grad.size(); ++i) x->grad[i] += self.grad[i];
      }
      if (b->requires_grad) {
        b->ensure_grad();
        for (int64_t in = 0; in < n; ++in)
          for (int64_t ic = 0; ic < c; ++ic) {
            const int64_t base = (in * c + ic) * hw;
            T acc = T(0);
            for (int64_t i = 0; i < hw; ++i) acc += self.grad[static_cast<size_t>(base + i)];
            b->grad[static_cast<size_t>(ic)] += acc;
          }
      }
    };
  }
  return Tensor<T>::wrap(out);
}

template <typename T>
Tensor<T> concat_channels(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw TensorError("concat_channels: no parts given");
  std::vector<std::shared_ptr<TensorNode<T>>> nodes;
  nodes.reserve(parts.size());
  int64_t c_total = 0;
  for (size_t i = 0; i < parts.size(); ++i) {
    auto p = parts[i].node();
    if (p->shape.size() != 4)
      throw TensorError("concat_channels: part " + std::to_string(i) + " has rank " +
                        std::to_string(p->shape.size()) + ", expected 4");
    if (i > 0 && (p->shape[0] != nodes[0]->shape[0] || p->shape[2] != nodes[0]->shape[2] ||
                  p->shape[3] != nodes[0]->shape[3]))
      throw TensorError("concat_channels: part " + std::to_string(i) + " shape " + shape_str(p->shape) +
                        " does not match part 0 shape " + shape_str(nodes[0]->shape) +
                        " outside the channel axis");
    c_total += p->shape[1];
    nodes.push_back(std::move(p));
  }
  const int64_t n = nodes[0]->shape[0], h = nodes[0]->shape[2], w = nodes[0]->shape[3];
  const int64_t hw = h * w;
  auto out = detail::make_node<T>({n, c_total, h, w}, {nodes.begin(), nodes.end()});
  for (int64_t in = 0; in < n; ++in) {
    int64_t c_off = 0;
    for (const auto& p : nodes) {
      const int64_t pc = p->shape[1];
      const T* src = p->value.data() + in * pc * hw;
      T* dst = out->value.data() + (in * c_total + c_off) * hw;
      std::copy(src, src + pc * hw, dst);
      c_off += pc;
    }
  }
  if (out->requires_grad) {
    out->backprop = [nodes, n, c_total, hw](TensorNode<T>& self) {
      for (int64_t in = 0; in < n; ++in) {
        int64_t c_off = 0;
        for (const auto& p : nodes) {
          const int64_t pc = p->shape[1];
          if (p->requires_grad) {
            p->ensure_grad();
            const T* src = self.grad.data() + (in * c_total + c_off) * hw;
            T* dst = p->grad.data() + in * pc * hw;
            for (int64_t i = 0; i < pc * hw; ++i) dst[i] += src[i];
          }
          c_off += pc;
        }
      }
    };
  }
  return Tensor<T>::wrap(out);
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& input, Shape shape) {
  auto x = input.node();
  if (shape_numel(shape) != static_cast<int64_t>(x->value.size()))
    throw TensorError("reshape: cannot view " + shape_str(x->shape) + " as " + shape_str(shape));
  auto out = detail::make_node<T>(std::move(shape), {x});
  out->value = x->value;
  if (out->requires_grad) {
    out->backprop = [x](TensorNode<T>& self) {
      x->ensure_grad();
      for (size_t i = 0; i < self.grad.size(); ++i) x->grad[i] += self.grad[i];
    };
  }
  return Tensor<T>::wrap(out);
}

template <typename T>
Tensor<T> sum(const Tensor<T>& input) {
  auto x = input.node();
  auto out = detail::make_node<T>({1}, {x});
  T acc = T(0);
  for (const T v : x->value) acc += v;
  out->value[0] = acc;
  if (out->requires_grad) {
    out->backprop = [x](TensorNode<T>& self) {
      x->ensure_grad();
      const T g = self.grad[0];
      for (size_t i = 0; i < x->grad.size(); ++i) x->grad[i] += g;
    };
  }
  return Tensor<T>::wrap(out);
}

// --- pooling -----------------------------------------------------------------

template <typename T>
static void check_nchw(const std::shared_ptr<TensorNode<T>>& x, const char* op) {
  if (x->shape.size() != 4)
    throw TensorError(std::string(op) + ": expected rank-4 [N,C,H,W] input, got " + shape_str(x->shape));
}

template <typename T>
Tensor<T> pool_global(const Tensor<T>& input, PoolMode mode) {
  auto x = input.node();
  check_nchw(x, "pool_global");
  const int64_t n = x->shape[0], c = x->shape[1], hw = x->shape[2] * x->shape[3];
  auto out = detail::make_node<T>({n, c, 1, 1}, {x});
  std::vector<int64_t> argmax;
  if (mode == PoolMode::Max) argmax.resize(static_cast<size_t>(n * c));
  for (int64_t nc = 0; nc < n * c; ++nc) {
    const T* src = x->value.data() + nc * hw;
    if (mode == PoolMode::Avg) {
      T acc = T(0);
      for (int64_t i = 0; i < hw; ++i) acc += src[i];
      out->value[static_cast<size_t>(nc)] = acc / static_cast<T>(hw);
    } else {
      int64_t best = 0;
      for (int64_t i = 1; i < hw; ++i)
        if (src[i] > src[best]) best = i;  // first max wins on ties
      out->value[static_cast<size_t>(nc)] = src[best];
      argmax[static_cast<size_t>(nc)] = best;
    }
  }
  if (out->requires_grad) {
    out->backprop = [x, mode, n, c, hw, argmax = std::move(argmax)](TensorNode<T>& self) {
      x->ensure_grad();
      for (int64_t nc = 0; nc < n * c; ++nc) {
        const T g = self.grad[static_cast<size_t>(nc)];
        if (mode == PoolMode::Avg) {
          T* dst = x->grad.data() + nc * hw;
          const T share = g / static_cast<T>(hw);
          for (int64_t i = 0; i < hw; ++i) dst[i] += share;
        } else {
          x->grad[static_cast<size_t>(nc * hw + argmax[static_cast<size_t>(nc)])] += g;
        }
      }
    };
  }
  return Tensor<T>::wrap(out);
}

template <typename T>
Tensor<T> pool_channel(const Tensor<T>& input, PoolMode mode) {
  auto x = input.node();
  check_nchw(x, "pool_channel");
  const int64_t n = x->shape[0], c = x->shape[1], hw = x->shape[2] * x->shape[3];
  auto out = detail::make_node<T>({n, 1, x->shape[2], x->shape[3]}, {x});
  std::vector<int64_t> argmax;
  if (mode == PoolMode::Max) argmax.resize(static_cast<size_t>(n * hw));
  for (int64_t in = 0; in < n; ++in) {
    const T* base = x->value.data() + in * c * hw;
    for (int64_t i = 0; i < hw; ++i) {
      if (mode == PoolMode::Avg) {
        T acc = T(0);
        for (int64_t ic = 0; ic < c; ++ic) acc += base[ic * hw + i];
        out->value[static_cast<size_t>(in * hw + i)] = acc / static_cast<T>(c);
      } else {
        int64_t best = 0;
        for (int64_t ic = 1; ic < c; ++ic)
          if (base[ic * hw + i] > base[best * hw + i]) best = ic;
        out->value[static_cast<size_t>(in * hw + i)] = base[best * hw + i];
        argmax[static_cast<size_t>(in * hw + i)] = best;
      }
    }
  }
  if (out->requires_grad) {
    out->backprop = [x, mode, n, c, hw, argmax = std::move(argmax)](TensorNode<T>& self) {
      x->ensure_grad();
      for (int64_t in = 0; in < n; ++in) {
        T* base = x->grad.data() + in * c * hw;
        for (int64_t i = 0; i < hw; ++i) {
          const T g = self.grad[static_cast<size_t>(in * hw + i)];
          if (mode == PoolMode::Avg) {
            const T share = g / static_cast<T>(c);
            for (int64_t ic = 0; ic < c; ++ic) base[ic * hw + i] += share;
          } else {
            base[argmax[static_cast<size_t>(in * hw + i)] * hw + i] += g;
          }
        }
      }
    };
  }
  return Tensor<T>::wrap(out);
}

template <typename T>
static Tensor<T> pool2d_impl(const Tensor<T>& input, int window, int stride, bool is_max) {
  auto x = input.node();
  check_nchw(x, is_max ? "max_pool2d" : "avg_pool2d");
  const int64_t n = x->shape[0], c = x->shape[1], h = x->shape[2], w = x->shape[3];
  if (window < 1 || stride < 1)
    throw TensorError("pool2d: window and stride must be >= 1");
  if (window > h || window > w)
    throw TensorError("pool2d: window " + std::to_string(window) + " exceeds spatial extent [" +
                      std::to_string(h) + "," + std::to_string(w) + "]");
  const int64_t oh = (h - window) / stride + 1;
  const int64_t ow = (w - window) / stride + 1;
  auto out = detail::make_node<T>({n, c, oh, ow}, {x});
  std::vector<int64_t> argmax;
  if (is_max) argmax.resize(static_cast<size_t>(n * c * oh * ow));
  for (int64_t nc = 0; nc < n * c; ++nc) {
    const T* src = x->value.data() + nc * h * w;
    T* dst = out->value.data() + nc * oh * ow;
    for (int64_t oy = 0; oy < oh; ++oy)
      for (int64_t ox = 0; ox < ow; ++ox) {
        const int64_t y0 = oy * stride, x0 = ox * stride;
        if (is_max) {
          int64_t best = y0 * w + x0;
          for (int64_t dy = 0; dy < window; ++dy)
            for (int64_t dx = 0; dx < window; ++dx) {
              const int64_t idx = (y0 + dy) * w + (x0 + dx);
              if (src[idx] > src[best]) best = idx;  // first-in-scan-order tie break
            }
          dst[oy * ow + ox] = src[best];
          argmax[static_cast<size_t>(nc * oh * ow + oy * ow + ox)] = best;
        } else {
          T acc = T(0);
          for (int64_t dy = 0; dy < window; ++dy)
            for (int64_t dx = 0; dx < window; ++dx) acc += src[(y0 + dy) * w + (x0 + dx)];
          dst[oy * ow + ox] = acc / static_cast<T>(window * window);
        }
      }
  }
  if (out->requires_grad) {
    out->backprop = [x, is_max, window, stride, n, c, h, w, oh, ow,
                     argmax = std::move(argmax)](TensorNode<T>& self) {
      x->ensure_grad();
      for (int64_t nc = 0; nc < n * c; ++nc) {
        T* dst = x->grad.data() + nc * h * w;
        const T* g = self.grad.data() + nc * oh * ow;
        for (int64_t oy = 0; oy < oh; ++oy)
          for (int64_t ox = 0; ox < ow; ++ox) {
            if (is_max) {
              dst[argmax[static_cast<size_t>(nc * oh * ow + oy * ow + ox)]] += g[oy * ow + ox];
            } else {
              const T share = g[oy * ow + ox] / static_cast<T>(window * window);
              const int64_t y0 = oy * stride, x0 = ox * stride;
              for (int64_t dy = 0; dy < window; ++dy)
                for (int64_t dx = 0; dx < window; ++dx) dst[(y0 + dy) * w + (x0 + dx)] += share;
            }
          }
      }
    };
  }
  return Tensor<T>::wrap(out);
}

template <typename T>
Tensor<T> max_pool2d(const Tensor<T>& input, int window, int stride) {
  return pool2d_impl(input, window, stride, true);
}

template <typename T>
Tensor<T> avg_pool2d(const Tensor<T>& input, int window, int stride) {
  return pool2d_impl(input, window, stride, false);
}

// --- batch norm ---------------------------------------------------------------

template <typename T>
Tensor<T> batch_norm(const Tensor<T>& input, const Tensor<T>& scale, const Tensor<T>& shift,
                     Tensor<T>& running_mean, Tensor<T>& running_var, bool training,
                     bool update_running) {
  auto x = input.node();
  check_nchw(x, "batch_norm");
  const int64_t n = x->shape[0], c = x->shape[1], hw = x->shape[2] * x->shape[3];
  auto sc = scale.node();
  auto sh = shift.node();
  if (sc->shape != Shape{c} || sh->shape != Shape{c} || running_mean.shape() != Shape{c} ||
      running_var.shape() != Shape{c})
    throw TensorError("batch_norm: scale/shift/running stats must have shape [" + std::to_string(c) +
                      "] for input " + shape_str(x->shape));
  const int64_t m = n * hw;
  if (training && m < 2)
    throw TensorError("batch_norm: train mode needs N*H*W >= 2 per channel (variance undefined), got " +
                      std::to_string(m));

  const T eps = static_cast<T>(kBatchNormEps);
  std::vector<T> inv_std(static_cast<size_t>(c));
  std::vector<T> xhat(x->value.size());

  if (training) {
    const T mom = static_cast<T>(kBatchNormMomentum);
    for (int64_t ic = 0; ic < c; ++ic) {
      T mean = T(0);
      for (int64_t in = 0; in < n; ++in) {
        const T* src = x->value.data() + (in * c + ic) * hw;
        for (int64_t i = 0; i < hw; ++i) mean += src[i];
      }
      mean /= static_cast<T>(m);
      T var = T(0);
      for (int64_t in = 0; in < n; ++in) {
        const T* src = x->value.data() + (in * c + ic) * hw;
        for (int64_t i = 0; i < hw; ++i) {
          const T d = src[i] - mean;
          var += d * d;
        }
      }
      var /= static_cast<T>(m);  // biased batch variance
      inv_std[static_cast<size_t>(ic)] = T(1) / std::sqrt(var + eps);
      for (int64_t in = 0; in < n; ++in) {
        const T* src = x->value.data() + (in * c + ic) * hw;
        T* dst = xhat.data() + (in * c + ic) * hw;
        for (int64_t i = 0; i < hw; ++i) dst[i] = (src[i] - mean) * inv_std[static_cast<size_t>(ic)];
      }
      if (update_running) {
        auto rm = running_mean.raw();
        auto rv = running_var.raw();
        rm[static_cast<size_t>(ic)] = (T(1) - mom) * rm[static_cast<size_t>(ic)] + mom * mean;
        rv[static_cast<size_t>(ic)] = (T(1) - mom) * rv[static_cast<size_t>(ic)] + mom * var;
      }
    }
  } else {
    auto rm = running_mean.values();
    auto rv = running_var.values();
    for (int64_t ic = 0; ic < c; ++ic) {
      inv_std[static_cast<size_t>(ic)] = T(1) / std::sqrt(rv[static_cast<size_t>(ic)] + eps);
      for (int64_t in = 0; in < n; ++in) {
        const T* src = x->value.data() + (in * c + ic) * hw;
        T* dst = xhat.data() + (in * c + ic) * hw;
        for (int64_t i = 0; i < hw; ++i)
          dst[i] = (src[i] - rm[static_cast<size_t>(ic)]) * inv_std[static_cast<size_t>(ic)];
      }
    }
  }

  auto out = detail::make_node<T>(x->shape, {x, sc, sh});
  for (int64_t in = 0; in < n; ++in)
    for (int64_t ic = 0; ic < c; ++ic) {
      const T g = sc->value[static_cast<size_t>(ic)], b = sh->value[static_cast<size_t>(ic)];
      const T* src = xhat.data() + (in * c + ic) * hw;
      T* dst = out->value.data() + (in * c + ic) * hw;
      for (int64_t i = 0; i < hw; ++i) dst[i] = g * src[i] + b;
    }

  if (out->requires_grad) {
    out->backprop = [x, sc, sh, training, n, c, hw, m, inv_std = std::move(inv_std),
                     xhat = std::move(xhat)](TensorNode<T>& self) {
      if (x->requires_grad) x->ensure_grad();
      if (sc->requires_grad) sc->ensure_grad();
      if (sh->requires_grad) sh->ensure_grad();
      for (int64_t ic = 0; ic < c; ++ic) {
        T gsum = T(0), gxsum = T(0);
        for (int64_t in = 0; in < n; ++in) {
          const int64_t base = (in * c + ic) * hw;
          for (int64_t i = 0; i < hw; ++i) {
            const T g = self.grad[static_cast<size_t>(base + i)];
            gsum += g;
            gxsum += g * xhat[static_cast<size_t>(base + i)];
          }
        }
        if (sc->requires_grad) sc->grad[static_cast<size_t>(ic)] += gxsum;
        if (sh->requires_grad) sh->grad[static_cast<size_t>(ic)] += gsum;
        if (x->requires_grad) {
          const T gamma = sc->value[static_cast<size_t>(ic)];
          const T istd = inv_std[static_cast<size_t>(ic)];
          if (training) {
            const T mean_g = gsum / static_cast<T>(m);
            const T mean_gx = gxsum / static_cast<T>(m);
            for (int64_t in = 0; in < n; ++in) {
              const int64_t base = (in * c + ic) * hw;
              for (int64_t i = 0; i < hw; ++i) {
                const T g = self.grad[static_cast<size_t>(base + i)];
                x->grad[static_cast<size_t>(base + i)] +=
                    gamma * istd * (g - mean_g - xhat[static_cast<size_t>(base + i)] * mean_gx);
              }
            }
          } else {
            for (int64_t in = 0; in < n; ++in) {
              const int64_t base = (in * c + ic) * hw;
              for (int64_t i = 0; i < hw; ++i)
                x->grad[static_cast<size_t>(base + i)] +=
                    gamma * istd * self.grad[static_cast<size_t>(base + i)];
            }
          }
        }
      }
    };
  }
  return Tensor<T>::wrap(out);
}

// --- explicit instantiations ---------------------------------------------------

template class Tensor<float>;
template class Tensor<double>;

#define CBAMNET_INSTANTIATE(T)                                                                   \
  template void backward<T>(const Tensor<T>&);                                                   \
  template Tensor<T> relu<T>(const Tensor<T>&);                                                  \
  template Tensor<T> sigmoid<T>(const Tensor<T>&);                                               \
  template Tensor<T> add<T>(const Tensor<T>&, const Tensor<T>&);                                 \
  template Tensor<T> mul_broadcast<T>(const Tensor<T>&, const Tensor<T>&);                       \
  template Tensor<T> add_channel_bias<T>(const Tensor<T>&, const Tensor<T>&);                    \
  template Tensor<T> concat_channels<T>(const std::vector<Tensor<T>>&);                          \
  template Tensor<T> reshape<T>(const Tensor<T>&, Shape);                                        \
  template Tensor<T> sum<T>(const Tensor<T>&);                                                   \
  template Tensor<T> pool_global<T>(const Tensor<T>&, PoolMode);                                 \
  template Tensor<T> pool_channel<T>(const Tensor<T>&, PoolMode);                                \
  template Tensor<T> max_pool2d<T>(const Tensor<T>&, int, int);                                  \
  template Tensor<T> avg_pool2d<T>(const Tensor<T>&, int, int);                                  \
  template Tensor<T> batch_norm<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,         \
                                   Tensor<T>&, Tensor<T>&, bool, bool);

CBAMNET_INSTANTIATE(float)
CBAMNET_INSTANTIATE(double)

#undef CBAMNET_INSTANTIATE

}  // namespace cbamnet
