#pragma once

// Test-only reference implementations. These stay independent of the library
// compute paths they are used to check: direct nested loops, exhaustive
// pairwise counting, no shared helpers.

#include <cstdint>
#include <span>
#include <vector>

namespace oracles {

// Direct nested-loop convolution over [N,C,H,W] with an [O,C,kh,kw] kernel.
template <typename T>
std::vector<T> conv2d_reference(const std::vector<T>& input, int64_t n, int64_t c, int64_t h, int64_t w,
                                const std::vector<T>& kernel, int64_t o, int64_t kh, int64_t kw,
                                int stride, int padding, int64_t* out_h, int64_t* out_w) {
  const int64_t oh = (h + 2 * padding - kh) / stride + 1;
  const int64_t ow = (w + 2 * padding - kw) / stride + 1;
  *out_h = oh;
  *out_w = ow;
  std::vector<T> out(static_cast<size_t>(n * o * oh * ow), T(0));
  for (int64_t in = 0; in < n; ++in)
    for (int64_t io = 0; io < o; ++io)
      for (int64_t oy = 0; oy < oh; ++oy)
        for (int64_t ox = 0; ox < ow; ++ox) {
          T acc = T(0);
          for (int64_t ic = 0; ic < c; ++ic)
            for (int64_t ky = 0; ky < kh; ++ky)
              for (int64_t kx = 0; kx < kw; ++kx) {
                const int64_t y = oy * stride - padding + ky;
                const int64_t x = ox * stride - padding + kx;
                if (y < 0 || y >= h || x < 0 || x >= w) continue;
                acc += input[static_cast<size_t>(((in * c + ic) * h + y) * w + x)] *
                       kernel[static_cast<size_t>(((io * c + ic) * kh + ky) * kw + kx)];
              }
          out[static_cast<size_t>(((in * o + io) * oh + oy) * ow + ox)] = acc;
        }
  return out;
}

// Exhaustive O(P*N) pairwise AUC with ties counted 0.5.
inline double auc_pairwise(std::span<const double> scores, std::span<const uint8_t> labels) {
  double wins = 0.0;
  int64_t pairs = 0;
  for (size_t i = 0; i < scores.size(); ++i) {
    if (!labels[i]) continue;
    for (size_t j = 0; j < scores.size(); ++j) {
      if (labels[j]) continue;
      ++pairs;
      if (scores[i] > scores[j])
        wins += 1.0;
      else if (scores[i] == scores[j])
        wins += 0.5;
    }
  }
  return wins / static_cast<double>(pairs);
}

}  // namespace oracles
