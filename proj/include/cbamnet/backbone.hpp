#pragma once

#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "cbamnet/cbam.hpp"
#include "cbamnet/tensor.hpp"

namespace cbamnet {

enum class Family { Dense, Vgg };

std::string family_name(Family f);
Family family_from_name(const std::string& name);

// The set S of block indices whose outputs pass through an attention module.
struct PlacementSet {
  std::vector<int> indices;  // sorted, unique, 1-based

  static PlacementSet of(std::vector<int> idx);
  bool contains(int k) const;
  bool empty() const { return indices.empty(); }
  void validate(int num_blocks) const;
  std::string str() const;  // "{3,4}" or "{}"
};

struct DenseParams {
  int stem_channels = 16;
  int num_blocks = 4;
  int layers_per_block = 2;
  int growth = 8;
  double compression = 0.5;
};

struct VggParams {
  std::vector<int> convs_per_block = {1, 1, 2, 2, 2};
  std::vector<int> channels = {8, 16, 32, 32, 32};
};

struct ModelSpec {
  Family family = Family::Dense;
  DenseParams dense;
  VggParams vgg;
  PlacementSet placement;
  int reduction = 2;       // channel-attention reduction ratio
  int spatial_kernel = 7;  // spatial-attention kernel size (odd)
  int input_channels = 1;
  int input_size = 32;
  int num_labels = 6;

  int num_blocks() const;
  void validate() const;           // throws ConfigError naming the offending field/block
  std::string canonical() const;   // deterministic serialization used for digests
  uint64_t digest() const;
};

// Channel bookkeeping for one resolved spec. block_out[k-1] is the channel
// count entering attention module k.
struct ChannelPlan {
  std::vector<int64_t> block_in;
  std::vector<int64_t> block_out;
  std::vector<int64_t> transition_out;  // dense family only
  int64_t feature_channels = 0;         // channels entering the classifier head
};

ChannelPlan plan_channels(const ModelSpec& spec);

// Built-in mini backbones. Valid names: dense-mini, dense-mini-all,
// dense-mini-s34, dense-mini-s4, dense-mini-plain, vgg-mini, vgg-mini-all,
// vgg-mini-s345, vgg-mini-s5, vgg-mini-plain.
ModelSpec preset(const std::string& name);
std::vector<std::string> preset_names();

template <typename T>
class ParameterRegistry {
 public:
  struct Entry {
    std::string name;
    Tensor<T> tensor;
    bool trainable;
  };

  Tensor<T> add(const std::string& name, Tensor<T> t, bool trainable);
  const std::vector<Entry>& entries() const { return entries_; }
  std::vector<Entry>& entries() { return entries_; }
  const Entry* find(const std::string& name) const;
  int64_t count_values(bool trainable_only) const;
  uint64_t value_digest() const;
  void zero_grads();

 private:
  std::vector<Entry> entries_;
  std::map<std::string, size_t> index_;
};

template <typename T>
struct BatchNormLayer {
  Tensor<T> scale, shift, running_mean, running_var;

  BatchNormLayer() = default;
  BatchNormLayer(int64_t channels, ParameterRegistry<T>& reg, const std::string& prefix);
  Tensor<T> forward(const Tensor<T>& x, bool training, bool update_running);
};

template <typename T>
class Model {
 public:
  Model(const ModelSpec& spec, uint64_t seed);
  Model(Model&&) noexcept = default;
  Model& operator=(Model&&) noexcept = default;
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;

  const ModelSpec& spec() const { return spec_; }
  int num_blocks() const { return spec_.num_blocks(); }

  // B_k of the staged composition. For the dense family B_1 includes the
  // stem and B_k (k>1) includes the preceding transition, so attention sits
  // after each dense block and before the next transition.
  Tensor<T> block_forward(int k, const Tensor<T>& x);
  const CbamModule<T>* attention(int k) const;

  Tensor<T> forward_extract(const Tensor<T>& x, AttentionTap<T>* tap = nullptr);
  Tensor<T> head(const Tensor<T>& features);
  Tensor<T> classify(const Tensor<T>& x, AttentionTap<T>* tap = nullptr);

  ParameterRegistry<T>& params() { return reg_; }
  const ParameterRegistry<T>& params() const { return reg_; }
  uint64_t param_digest() const { return reg_.value_digest(); }

  void set_training(bool training) { training_ = training; }
  bool is_training() const { return training_; }
  // Freezes running-stat updates while keeping batch-statistics mode;
  // gradient checks need repeatable forwards through the train-mode path.
  void set_bn_stat_updates(bool enabled) { bn_updates_ = enabled; }

 private:
  struct DenseUnit {
    BatchNormLayer<T> bn;
    Tensor<T> kernel;
  };
  struct DenseBlock {
    std::vector<DenseUnit> units;
  };
  struct TransitionLayer {
    BatchNormLayer<T> bn;
    Tensor<T> kernel;  // 1x1 compression
  };
  struct VggBlock {
    std::vector<Tensor<T>> kernels;
    std::vector<Tensor<T>> biases;
  };

  Tensor<T> stem_forward(const Tensor<T>& x);
  Tensor<T> dense_block_forward(int index, const Tensor<T>& x);
  Tensor<T> transition_forward(int index, const Tensor<T>& x);
  Tensor<T> vgg_block_forward(int index, const Tensor<T>& x);

  ModelSpec spec_;
  ChannelPlan plan_;
  ParameterRegistry<T> reg_;
  bool training_ = true;
  bool bn_updates_ = true;

  // dense family
  Tensor<T> stem_kernel_;
  BatchNormLayer<T> stem_bn_;
  std::vector<DenseBlock> dense_blocks_;
  std::vector<TransitionLayer> transitions_;
  BatchNormLayer<T> final_bn_;
  // vgg family
  std::vector<VggBlock> vgg_blocks_;
  // shared
  std::map<int, CbamModule<T>> attention_;
  Tensor<T> classifier_weight_;
  Tensor<T> classifier_bias_;
};

template <typename T>
Model<T> build_model(const ModelSpec& spec, uint64_t seed) {
  return Model<T>(spec, seed);
}

}  // namespace cbamnet
