#include <Eigen/Core>

#include "cbamnet/tensor.hpp"
#include "tensor_detail.hpp"

namespace cbamnet {

namespace {

template <typename T>
using MatMap = Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
template <typename T>
using ConstMatMap =
    Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

struct ConvDims {
  int64_t n, c, h, w, o, kh, kw, oh, ow;
  int stride, padding;
  int64_t ckk() const { return c * kh * kw; }
  int64_t ohow() const { return oh * ow; }
};

// Patch gather: cols is [C*kh*kw, OH*OW] for one sample, zero-padded borders.
template <typename T>
void im2col(const T* xn, const ConvDims& d, T* cols) {
  for (int64_t ic = 0; ic < d.c; ++ic)
    for (int64_t ky = 0; ky < d.kh; ++ky)
      for (int64_t kx = 0; kx < d.kw; ++kx) {
        T* row = cols + ((ic * d.kh + ky) * d.kw + kx) * d.ohow();
        for (int64_t oy = 0; oy < d.oh; ++oy) {
          const int64_t y = oy * d.stride - d.padding + ky;
          T* dst = row + oy * d.ow;
          if (y < 0 || y >= d.h) {
            std::fill(dst, dst + d.ow, T(0));
            continue;
          }
          const T* src = xn + ic * d.h * d.w + y * d.w;
          for (int64_t ox = 0; ox < d.ow; ++ox) {
            const int64_t x = ox * d.stride - d.padding + kx;
            dst[ox] = (x >= 0 && x < d.w) ? src[x] : T(0);
          }
        }
      }
}

template <typename T>
void col2im_accum(const T* cols, const ConvDims& d, T* dxn) {
  for (int64_t ic = 0; ic < d.c; ++ic)
    for (int64_t ky = 0; ky < d.kh; ++ky)
      for (int64_t kx = 0; kx < d.kw; ++kx) {
        const T* row = cols + ((ic * d.kh + ky) * d.kw + kx) * d.ohow();
        for (int64_t oy = 0; oy < d.oh; ++oy) {
          const int64_t y = oy * d.stride - d.padding + ky;
          if (y < 0 || y >= d.h) continue;
          T* dst = dxn + ic * d.h * d.w + y * d.w;
          const T* src = row + oy * d.ow;
          for (int64_t ox = 0; ox < d.ow; ++ox) {
            const int64_t x = ox * d.stride - d.padding + kx;
            if (x >= 0 && x < d.w) dst[x] += src[ox];
          }
        }
      }
}

}  // namespace

template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& kernel, int stride, int padding) {
  auto x = input.node();
  auto k = kernel.node();
  if (x->shape.size() != 4 || k->shape.size() != 4)
    throw TensorError("conv2d: input and kernel must be rank 4, got " + shape_str(x->shape) + " and " +
                      shape_str(k->shape));
  if (stride < 1) throw TensorError("conv2d: stride must be >= 1");
  if (padding < 0) throw TensorError("conv2d: padding must be >= 0");
  if (k->shape[1] != x->shape[1])
    throw TensorError("conv2d: kernel channel dim " + std::to_string(k->shape[1]) +
                      " does not match input channel dim " + std::to_string(x->shape[1]) + " (input " +
                      shape_str(x->shape) + ", kernel " + shape_str(k->shape) + ")");

  ConvDims d{};
  d.n = x->shape[0];
  d.c = x->shape[1];
  d.h = x->shape[2];
  d.w = x->shape[3];
  d.o = k->shape[0];
  d.kh = k->shape[2];
  d.kw = k->shape[3];
  d.stride = stride;
  d.padding = padding;
  if (d.kh > d.h + 2 * padding || d.kw > d.w + 2 * padding)
    throw TensorError("conv2d: kernel " + shape_str(k->shape) + " exceeds padded input extent (input " +
                      shape_str(x->shape) + ", padding " + std::to_string(padding) + ")");
  d.oh = (d.h + 2 * padding - d.kh) / stride + 1;
  d.ow = (d.w + 2 * padding - d.kw) / stride + 1;

  auto out = detail::make_node<T>({d.n, d.o, d.oh, d.ow}, {x, k});
  std::vector<T> cols(static_cast<size_t>(d.ckk() * d.ohow()));
  ConstMatMap<T> mk(k->value.data(), d.o, d.ckk());
  for (int64_t in = 0; in < d.n; ++in) {
    im2col(x->value.data() + in * d.c * d.h * d.w, d, cols.data());
    ConstMatMap<T> mcols(cols.data(), d.ckk(), d.ohow());
    MatMap<T> mout(out->value.data() + in * d.o * d.ohow(), d.o, d.ohow());
    mout.noalias() = mk * mcols;
  }

  if (out->requires_grad) {
    out->backprop = [x, k, d](TensorNode<T>& self) {
      const bool need_dx = x->requires_grad;
      const bool need_dk = k->requires_grad;
      if (need_dx) x->ensure_grad();
      if (need_dk) k->ensure_grad();
      std::vector<T> cols(static_cast<size_t>(d.ckk() * d.ohow()));
      std::vector<T> dcols(need_dx ? static_cast<size_t>(d.ckk() * d.ohow()) : 0);
      ConstMatMap<T> mk(k->value.data(), d.o, d.ckk());
      for (int64_t in = 0; in < d.n; ++in) {
        ConstMatMap<T> mg(self.grad.data() + in * d.o * d.ohow(), d.o, d.ohow());
        if (need_dk) {
          im2col(x->value.data() + in * d.c * d.h * d.w, d, cols.data());
          ConstMatMap<T> mcols(cols.data(), d.ckk(), d.ohow());
          MatMap<T> mdk(k->grad.data(), d.o, d.ckk());
          mdk.noalias() += mg * mcols.transpose();
        }
        if (need_dx) {
          MatMap<T> mdcols(dcols.data(), d.ckk(), d.ohow());
          mdcols.noalias() = mk.transpose() * mg;
          col2im_accum(dcols.data(), d, x->grad.data() + in * d.c * d.h * d.w);
        }
      }
    };
  }
  return Tensor<T>::wrap(out);
}

template <typename T>
Tensor<T> linear(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias) {
  auto x = input.node();
  auto w = weight.node();
  auto b = bias.node();
  if (x->shape.size() != 2 || w->shape.size() != 2 || b->shape.size() != 1)
    throw TensorError("linear: expected input [N,D], weight [D,M], bias [M]; got " +
                      shape_str(x->shape) + ", " + shape_str(w->shape) + ", " + shape_str(b->shape));
  if (x->shape[1] != w->shape[0] || w->shape[1] != b->shape[0])
    throw TensorError("linear: dimension mismatch between input " + shape_str(x->shape) + ", weight " +
                      shape_str(w->shape) + ", bias " + shape_str(b->shape));
  const int64_t n = x->shape[0], dd = x->shape[1], m = w->shape[1];
  auto out = detail::make_node<T>({n, m}, {x, w, b});
  {
    ConstMatMap<T> mx(x->value.data(), n, dd);
    ConstMatMap<T> mw(w->value.data(), dd, m);
    MatMap<T> mo(out->value.data(), n, m);
    mo.noalias() = mx * mw;
    for (int64_t i = 0; i < n; ++i)
      for (int64_t j = 0; j < m; ++j) out->value[static_cast<size_t>(i * m + j)] += b->value[static_cast<size_t>(j)];
  }
  if (out->requires_grad) {
    out->backprop = [x, w, b, n, dd, m](TensorNode<T>& self) {
      ConstMatMap<T> mg(self.grad.data(), n, m);
      if (x->requires_grad) {
        x->ensure_grad();
        MatMap<T> mdx(x->grad.data(), n, dd);
        ConstMatMap<T> mw(w->value.data(), dd, m);
        mdx.noalias() += mg * mw.transpose();
      }
      if (w->requires_grad) {
        w->ensure_grad();
        MatMap<T> mdw(w->grad.data(), dd, m);
        ConstMatMap<T> mx(x->value.data(), n, dd);
        mdw.noalias() += mx.transpose() * mg;
      }
      if (b->requires_grad) {
        b->ensure_grad();
        for (int64_t i = 0; i < n; ++i)
          for (int64_t j = 0; j < m; ++j) b->grad[static_cast<size_t>(j)] += self.grad[static_cast<size_t>(i * m + j)];
      }
    };
  }
  return Tensor<T>::wrap(out);
}

template <typename T>
Tensor<T> linear_nt(const Tensor<T>& input, const Tensor<T>& weight) {
  auto x = input.node();
  auto w = weight.node();
  if (x->shape.size() != 2 || w->shape.size() != 2 || x->shape[1] != w->shape[1])
    throw TensorError("linear_nt: expected input [N,D] and weight [M,D]; got " + shape_str(x->shape) +
                      " and " + shape_str(w->shape));
  const int64_t n = x->shape[0], dd = x->shape[1], m = w->shape[0];
  auto out = detail::make_node<T>({n, m}, {x, w});
  {
    ConstMatMap<T> mx(x->value.data(), n, dd);
    ConstMatMap<T> mw(w->value.data(), m, dd);
    MatMap<T> mo(out->value.data(), n, m);
    mo.noalias() = mx * mw.transpose();
  }
  if (out->requires_grad) {
    out->backprop = [x, w, n, dd, m](TensorNode<T>& self) {
      ConstMatMap<T> mg(self.grad.data(), n, m);
      if (x->requires_grad) {
        x->ensure_grad();
        MatMap<T> mdx(x->grad.data(), n, dd);
        ConstMatMap<T> mw(w->value.data(), m, dd);
        mdx.noalias() += mg * mw;
      }
      if (w->requires_grad) {
        w->ensure_grad();
        MatMap<T> mdw(w->grad.data(), m, dd);
        ConstMatMap<T> mx(x->value.data(), n, dd);
        mdw.noalias() += mg.transpose() * mx;
      }
    };
  }
  return Tensor<T>::wrap(out);
}

#define CBAMNET_INSTANTIATE(T)                                                         \
  template Tensor<T> conv2d<T>(const Tensor<T>&, const Tensor<T>&, int, int);          \
  template Tensor<T> linear<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);  \
  template Tensor<T> linear_nt<T>(const Tensor<T>&, const Tensor<T>&);

CBAMNET_INSTANTIATE(float)
CBAMNET_INSTANTIATE(double)

#undef CBAMNET_INSTANTIATE

}  // namespace cbamnet
