#pragma once

#include <string>
#include <vector>

#include "cbamnet/tensor.hpp"

namespace cbamnet {

// Collects attention maps emitted during a forward pass (for heatmap dumps).
template <typename T>
struct AttentionTap {
  struct Map {
    int stage;
    std::string kind;  // "channel" | "spatial"
    Shape shape;
    std::vector<T> data;
  };
  std::vector<Map> maps;
};

// Per-channel gate from pooled spatial descriptors through a shared
// two-layer MLP (no bias): sigmoid(MLP(avgpool F) + MLP(maxpool F)).
template <typename T>
struct ChannelAttention {
  int channels = 0;
  int reduction = 0;
  Tensor<T> mlp_w0;  // [C/r, C]
  Tensor<T> mlp_w1;  // [C, C/r]

  ChannelAttention() = default;
  ChannelAttention(int channels, int reduction, Rng& rng);

  Tensor<T> forward(const Tensor<T>& f) const;  // [N,C,1,1]
};

// Per-pixel gate: sigmoid(conv([channel-avg; channel-max], k x k)), padding
// (k-1)/2 so spatial dims are preserved. Descriptor order is (avg, max).
template <typename T>
struct SpatialAttention {
  int kernel_size = 0;
  Tensor<T> kernel;  // [1,2,k,k]

  SpatialAttention() = default;
  SpatialAttention(int kernel_size, Rng& rng);

  Tensor<T> forward(const Tensor<T>& f) const;  // [N,1,H,W]
};

// Channel attention first, spatial second, both applied as multiplicative
// soft masks.
template <typename T>
struct CbamModule {
  ChannelAttention<T> channel;
  SpatialAttention<T> spatial;

  CbamModule() = default;
  CbamModule(int channels, int reduction, int spatial_kernel, Rng& rng);

  Tensor<T> apply(const Tensor<T>& f, AttentionTap<T>* tap = nullptr, int stage = -1) const;
};

}  // namespace cbamnet
