#include "cbamnet/cbam.hpp"

namespace cbamnet {

template <typename T>
ChannelAttention<T>::ChannelAttention(int channels_, int reduction_, Rng& rng)
    : channels(channels_), reduction(reduction_) {
  if (channels <= 0 || reduction <= 0)
    throw ConfigError("channel attention: channels and reduction must be positive");
  if (channels % reduction != 0)
    throw ConfigError("channel attention: channels " + std::to_string(channels) +
                      " not divisible by reduction ratio " + std::to_string(reduction));
  const int64_t hidden = channels / reduction;
  mlp_w0 = Tensor<T>::uniform_fan_in({hidden, channels}, channels, rng);
  mlp_w1 = Tensor<T>::uniform_fan_in({channels, hidden}, hidden, rng);
}

template <typename T>
Tensor<T> ChannelAttention<T>::forward(const Tensor<T>& f) const {
  if (f.rank() != 4 || f.dim(1) != channels)
    throw TensorError("channel attention: input " + shape_str(f.shape()) + " does not carry " +
                      std::to_string(channels) + " channels");
  const int64_t n = f.dim(0);
  auto mlp = [&](const Tensor<T>& pooled) {
    auto flat = reshape(pooled, {n, channels});
    return linear_nt(relu(linear_nt(flat, mlp_w0)), mlp_w1);
  };
  auto logits = add(mlp(pool_global(f, PoolMode::Avg)), mlp(pool_global(f, PoolMode::Max)));
  return reshape(sigmoid(logits), {n, channels, 1, 1});
}

template <typename T>
SpatialAttention<T>::SpatialAttention(int kernel_size_, Rng& rng) : kernel_size(kernel_size_) {
  if (kernel_size < 1 || kernel_size % 2 == 0)
    throw ConfigError("spatial attention: kernel size must be odd and positive, got " +
                      std::to_string(kernel_size));
  kernel = Tensor<T>::uniform_fan_in({1, 2, kernel_size, kernel_size},
                                     2LL * kernel_size * kernel_size, rng);
}

template <typename T>
Tensor<T> SpatialAttention<T>::forward(const Tensor<T>& f) const {
  auto descriptor =
      concat_channels<T>({pool_channel(f, PoolMode::Avg), pool_channel(f, PoolMode::Max)});
  return sigmoid(conv2d(descriptor, kernel, 1, (kernel_size - 1) / 2));
}

template <typename T>
CbamModule<T>::CbamModule(int channels, int reduction, int spatial_kernel, Rng& rng)
    : channel(channels, reduction, rng), spatial(spatial_kernel, rng) {}

template <typename T>
Tensor<T> CbamModule<T>::apply(const Tensor<T>& f, AttentionTap<T>* tap, int stage) const {
  auto channel_map = channel.forward(f);
  auto refined = mul_broadcast(f, channel_map);
  auto spatial_map = spatial.forward(refined);
  auto out = mul_broadcast(refined, spatial_map);
  if (tap) {
    auto record = [&](const char* kind, const Tensor<T>& map) {
      typename AttentionTap<T>::Map m;
      m.stage = stage;
      m.kind = kind;
      m.shape = map.shape();
      m.data.assign(map.values().begin(), map.values().end());
      tap->maps.push_back(std::move(m));
    };
    record("channel", channel_map);
    record("spatial", spatial_map);
  }
  return out;
}

template struct ChannelAttention<float>;
template struct ChannelAttention<double>;
template struct SpatialAttention<float>;
template struct SpatialAttention<double>;
template struct CbamModule<float>;
template struct CbamModule<double>;

}  // namespace cbamnet
