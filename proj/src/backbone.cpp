#include "cbamnet/backbone.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

namespace cbamnet {

std::string family_name(Family f) { return f == Family::Dense ? "dense" : "vgg"; }

Family family_from_name(const std::string& name) {
  if (name == "dense") return Family::Dense;
  if (name == "vgg") return Family::Vgg;
  throw ConfigError("unknown backbone family '" + name + "' (expected dense or vgg)");
}

PlacementSet PlacementSet::of(std::vector<int> idx) {
  std::sort(idx.begin(), idx.end());
  idx.erase(std::unique(idx.begin(), idx.end()), idx.end());
  PlacementSet s;
  s.indices = std::move(idx);
  return s;
}

bool PlacementSet::contains(int k) const {
  return std::binary_search(indices.begin(), indices.end(), k);
}

void PlacementSet::validate(int num_blocks) const {
  for (int k : indices)
    if (k < 1 || k > num_blocks)
      throw ConfigError("placement index " + std::to_string(k) + " outside [1," +
                        std::to_string(num_blocks) + "]");
}

std::string PlacementSet::str() const {
  std::string out = "{";
  for (size_t i = 0; i < indices.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(indices[i]);
  }
  return out + "}";
}

int ModelSpec::num_blocks() const {
  return family == Family::Dense ? dense.num_blocks : static_cast<int>(vgg.convs_per_block.size());
}

ChannelPlan plan_channels(const ModelSpec& spec) {
  ChannelPlan plan;
  if (spec.family == Family::Dense) {
    int64_t c = spec.dense.stem_channels;
    for (int k = 0; k < spec.dense.num_blocks; ++k) {
      plan.block_in.push_back(c);
      c += static_cast<int64_t>(spec.dense.layers_per_block) * spec.dense.growth;
      plan.block_out.push_back(c);
      if (k + 1 < spec.dense.num_blocks) {
        c = static_cast<int64_t>(std::floor(static_cast<double>(c) * spec.dense.compression));
        plan.transition_out.push_back(c);
      }
    }
    plan.feature_channels = plan.block_out.back();
  } else {
    int64_t c = spec.input_channels;
    for (size_t k = 0; k < spec.vgg.channels.size(); ++k) {
      plan.block_in.push_back(c);
      c = spec.vgg.channels[k];
      plan.block_out.push_back(c);
    }
    plan.feature_channels = c;
  }
  return plan;
}

void ModelSpec::validate() const {
  if (num_labels < 1) throw ConfigError("model: num_labels must be >= 1");
  if (input_channels < 1) throw ConfigError("model: input_channels must be >= 1");
  if (spatial_kernel < 1 || spatial_kernel % 2 == 0)
    throw ConfigError("model: spatial_kernel must be odd, got " + std::to_string(spatial_kernel));
  if (reduction < 1) throw ConfigError("model: reduction must be >= 1");

  int halvings = 0;
  if (family == Family::Dense) {
    if (dense.num_blocks < 1) throw ConfigError("model: dense family needs at least 1 block");
    if (dense.layers_per_block < 0) throw ConfigError("model: layers_per_block must be >= 0");
    if (dense.growth < 1) throw ConfigError("model: growth must be >= 1");
    if (!(dense.compression > 0.0 && dense.compression <= 1.0))
      throw ConfigError("model: compression must be in (0,1]");
    if (dense.stem_channels < 1) throw ConfigError("model: stem_channels must be >= 1");
    halvings = 1 + (dense.num_blocks - 1);  // stem pool + transitions
  } else {
    if (vgg.convs_per_block.empty() || vgg.convs_per_block.size() != vgg.channels.size())
      throw ConfigError("model: vgg convs_per_block and channels must be non-empty and equal length");
    for (size_t i = 0; i < vgg.channels.size(); ++i) {
      if (vgg.channels[i] < 1 || vgg.convs_per_block[i] < 1)
        throw ConfigError("model: vgg block " + std::to_string(i + 1) +
                          " has non-positive channels or conv count");
    }
    halvings = static_cast<int>(vgg.convs_per_block.size());
  }
  const int factor = 1 << halvings;
  if (input_size < factor || input_size % factor != 0)
    throw ConfigError("model: input_size " + std::to_string(input_size) + " must be a multiple of " +
                      std::to_string(factor) + " for " + family_name(family) + " downsampling");

  placement.validate(num_blocks());

  const ChannelPlan plan = plan_channels(*this);
  for (size_t k = 0; k < plan.transition_out.size(); ++k) {
    if (plan.transition_out[k] < 1)
      throw ConfigError("model: transition after block " + std::to_string(k + 1) +
                        " compresses to zero channels");
  }
  for (int k : placement.indices) {
    const int64_t c = plan.block_out[static_cast<size_t>(k - 1)];
    if (c % reduction != 0)
      throw ConfigError("model: block " + std::to_string(k) + " output channels " + std::to_string(c) +
                        " not divisible by attention reduction " + std::to_string(reduction));
  }
}

std::string ModelSpec::canonical() const {
  char comp[32];
  std::snprintf(comp, sizeof(comp), "%.17g", dense.compression);
  std::string s = "family=" + family_name(family) + ";";
  if (family == Family::Dense) {
    s += "stem=" + std::to_string(dense.stem_channels) + ";blocks=" + std::to_string(dense.num_blocks) +
         ";layers=" + std::to_string(dense.layers_per_block) + ";growth=" + std::to_string(dense.growth) +
         ";compression=" + comp + ";";
  } else {
    s += "convs=";
    for (size_t i = 0; i < vgg.convs_per_block.size(); ++i)
      s += (i ? "," : "") + std::to_string(vgg.convs_per_block[i]);
    s += ";channels=";
    for (size_t i = 0; i < vgg.channels.size(); ++i) s += (i ? "," : "") + std::to_string(vgg.channels[i]);
    s += ";";
  }
  s += "placement=" + placement.str() + ";r=" + std::to_string(reduction) +
       ";k=" + std::to_string(spatial_kernel) + ";in=" + std::to_string(input_channels) + "x" +
       std::to_string(input_size) + ";labels=" + std::to_string(num_labels);
  return s;
}

uint64_t ModelSpec::digest() const { return fnv1a64(canonical()); }

std::vector<std::string> preset_names() {
  return {"dense-mini",   "dense-mini-all", "dense-mini-s34", "dense-mini-s4", "dense-mini-plain",
          "vgg-mini",     "vgg-mini-all",   "vgg-mini-s345",  "vgg-mini-s5",   "vgg-mini-plain"};
}

ModelSpec preset(const std::string& name) {
  auto unknown = [&name]() -> ModelSpec {
    std::string names;
    for (const auto& n : preset_names()) names += (names.empty() ? "" : ", ") + n;
    throw ConfigError("unknown preset '" + name + "'; valid presets: " + names);
  };
  ModelSpec spec;
  if (name.rfind("dense-mini", 0) == 0) {
    spec.family = Family::Dense;
    if (name == "dense-mini" || name == "dense-mini-s34")
      spec.placement = PlacementSet::of({3, 4});
    else if (name == "dense-mini-all")
      spec.placement = PlacementSet::of({1, 2, 3, 4});
    else if (name == "dense-mini-s4")
      spec.placement = PlacementSet::of({4});
    else if (name == "dense-mini-plain")
      spec.placement = PlacementSet::of({});
    else
      return unknown();
  } else if (name.rfind("vgg-mini", 0) == 0) {
    spec.family = Family::Vgg;
    if (name == "vgg-mini" || name == "vgg-mini-s345")
      spec.placement = PlacementSet::of({3, 4, 5});
    else if (name == "vgg-mini-all")
      spec.placement = PlacementSet::of({1, 2, 3, 4, 5});
    else if (name == "vgg-mini-s5")
      spec.placement = PlacementSet::of({5});
    else if (name == "vgg-mini-plain")
      spec.placement = PlacementSet::of({});
    else
      return unknown();
  } else {
    return unknown();
  }
  spec.validate();
  return spec;
}

// --- registry ----------------------------------------------------------------

template <typename T>
Tensor<T> ParameterRegistry<T>::add(const std::string& name, Tensor<T> t, bool trainable) {
  if (index_.count(name)) throw ConfigError("duplicate parameter name '" + name + "'");
  index_[name] = entries_.size();
  entries_.push_back({name, t, trainable});
  return t;
}

template <typename T>
const typename ParameterRegistry<T>::Entry* ParameterRegistry<T>::find(const std::string& name) const {
  auto it = index_.find(name);
  return it == index_.end() ? nullptr : &entries_[it->second];
}

template <typename T>
int64_t ParameterRegistry<T>::count_values(bool trainable_only) const {
  int64_t n = 0;
  for (const auto& e : entries_)
    if (!trainable_only || e.trainable) n += e.tensor.numel();
  return n;
}

template <typename T>
uint64_t ParameterRegistry<T>::value_digest() const {
  uint64_t h = kFnvOffset;
  for (const auto& e : entries_) {
    h = fnv1a64(e.name, h);
    auto v = e.tensor.values();
    h = fnv1a64(v.data(), v.size() * sizeof(T), h);
  }
  return h;
}

template <typename T>
void ParameterRegistry<T>::zero_grads() {
  for (auto& e : entries_) e.tensor.zero_grad();
}

// --- layers ------------------------------------------------------------------

template <typename T>
BatchNormLayer<T>::BatchNormLayer(int64_t channels, ParameterRegistry<T>& reg,
                                  const std::string& prefix) {
  scale = reg.add(prefix + "/scale", Tensor<T>::full({channels}, T(1), true), true);
  shift = reg.add(prefix + "/shift", Tensor<T>::zeros({channels}, true), true);
  running_mean = reg.add(prefix + "/running_mean", Tensor<T>::zeros({channels}), false);
  running_var = reg.add(prefix + "/running_var", Tensor<T>::full({channels}, T(1)), false);
}

template <typename T>
Tensor<T> BatchNormLayer<T>::forward(const Tensor<T>& x, bool training, bool update_running) {
  return batch_norm(x, scale, shift, running_mean, running_var, training, update_running);
}

namespace {

Rng scoped_rng(uint64_t seed, const std::string& scope) { return Rng(mix_seed(seed, fnv1a64(scope))); }

}  // namespace

// --- model -------------------------------------------------------------------

template <typename T>
Model<T>::Model(const ModelSpec& spec, uint64_t seed) : spec_(spec) {
  spec_.validate();
  plan_ = plan_channels(spec_);

  auto conv_init = [&](const std::string& name, Shape shape) {
    const int64_t fan_in = shape[1] * shape[2] * shape[3];
    Rng rng = scoped_rng(seed, name);
    return reg_.add(name, Tensor<T>::uniform_fan_in(std::move(shape), fan_in, rng), true);
  };

  if (spec_.family == Family::Dense) {
    stem_kernel_ = conv_init("stem/conv", {spec_.dense.stem_channels, spec_.input_channels, 3, 3});
    stem_bn_ = BatchNormLayer<T>(spec_.dense.stem_channels, reg_, "stem/bn");
    for (int k = 0; k < spec_.dense.num_blocks; ++k) {
      DenseBlock block;
      int64_t c = plan_.block_in[static_cast<size_t>(k)];
      for (int l = 0; l < spec_.dense.layers_per_block; ++l) {
        const std::string prefix = "block" + std::to_string(k + 1) + "/layer" + std::to_string(l);
        DenseUnit unit;
        unit.bn = BatchNormLayer<T>(c, reg_, prefix + "/bn");
        unit.kernel = conv_init(prefix + "/conv", {spec_.dense.growth, c, 3, 3});
        block.units.push_back(std::move(unit));
        c += spec_.dense.growth;
      }
      dense_blocks_.push_back(std::move(block));
      if (spec_.placement.contains(k + 1)) {
        const std::string prefix = "attn" + std::to_string(k + 1);
        Rng rng = scoped_rng(seed, prefix);
        CbamModule<T> cbam(static_cast<int>(plan_.block_out[static_cast<size_t>(k)]), spec_.reduction,
                           spec_.spatial_kernel, rng);
        reg_.add(prefix + "/mlp_w0", cbam.channel.mlp_w0, true);
        reg_.add(prefix + "/mlp_w1", cbam.channel.mlp_w1, true);
        reg_.add(prefix + "/spatial_kernel", cbam.spatial.kernel, true);
        attention_.emplace(k + 1, std::move(cbam));
      }
      if (k + 1 < spec_.dense.num_blocks) {
        const std::string prefix = "trans" + std::to_string(k + 1);
        TransitionLayer trans;
        trans.bn = BatchNormLayer<T>(plan_.block_out[static_cast<size_t>(k)], reg_, prefix + "/bn");
        trans.kernel = conv_init(prefix + "/conv", {plan_.transition_out[static_cast<size_t>(k)],
                                                    plan_.block_out[static_cast<size_t>(k)], 1, 1});
        transitions_.push_back(std::move(trans));
      }
    }
    final_bn_ = BatchNormLayer<T>(plan_.feature_channels, reg_, "final_bn");
  } else {
    for (size_t k = 0; k < spec_.vgg.convs_per_block.size(); ++k) {
      VggBlock block;
      int64_t c_in = plan_.block_in[k];
      const int64_t c_out = plan_.block_out[k];
      for (int l = 0; l < spec_.vgg.convs_per_block[k]; ++l) {
        const std::string prefix =
            "block" + std::to_string(k + 1) + "/conv" + std::to_string(l);
        block.kernels.push_back(conv_init(prefix + "/weight", {c_out, c_in, 3, 3}));
        block.biases.push_back(reg_.add(prefix + "/bias", Tensor<T>::zeros({c_out}, true), true));
        c_in = c_out;
      }
      vgg_blocks_.push_back(std::move(block));
      if (spec_.placement.contains(static_cast<int>(k + 1))) {
        const std::string prefix = "attn" + std::to_string(k + 1);
        Rng rng = scoped_rng(seed, prefix);
        CbamModule<T> cbam(static_cast<int>(c_out), spec_.reduction, spec_.spatial_kernel, rng);
        reg_.add(prefix + "/mlp_w0", cbam.channel.mlp_w0, true);
        reg_.add(prefix + "/mlp_w1", cbam.channel.mlp_w1, true);
        reg_.add(prefix + "/spatial_kernel", cbam.spatial.kernel, true);
        attention_.emplace(static_cast<int>(k + 1), std::move(cbam));
      }
    }
  }

  {
    Rng rng = scoped_rng(seed, "classifier/weight");
    classifier_weight_ = reg_.add(
        "classifier/weight",
        Tensor<T>::uniform_fan_in({plan_.feature_channels, spec_.num_labels}, plan_.feature_channels, rng),
        true);
    classifier_bias_ = reg_.add("classifier/bias", Tensor<T>::zeros({spec_.num_labels}, true), true);
  }
}

template <typename T>
Tensor<T> Model<T>::stem_forward(const Tensor<T>& x) {
  auto h = conv2d(x, stem_kernel_, 1, 1);
  h = stem_bn_.forward(h, training_, bn_updates_);
  return max_pool2d(relu(h), 2, 2);
}

template <typename T>
Tensor<T> Model<T>::dense_block_forward(int index, const Tensor<T>& x) {
  Tensor<T> acc = x;
  for (auto& unit : dense_blocks_[static_cast<size_t>(index)].units) {
    auto h = unit.bn.forward(acc, training_, bn_updates_);
    h = conv2d(relu(h), unit.kernel, 1, 1);
    acc = concat_channels<T>({acc, h});
  }
  return acc;
}

template <typename T>
Tensor<T> Model<T>::transition_forward(int index, const Tensor<T>& x) {
  auto& trans = transitions_[static_cast<size_t>(index)];
  auto h = trans.bn.forward(x, training_, bn_updates_);
  h = conv2d(relu(h), trans.kernel, 1, 0);
  return avg_pool2d(h, 2, 2);
}

template <typename T>
Tensor<T> Model<T>::vgg_block_forward(int index, const Tensor<T>& x) {
  auto& block = vgg_blocks_[static_cast<size_t>(index)];
  Tensor<T> h = x;
  for (size_t l = 0; l < block.kernels.size(); ++l)
    h = relu(add_channel_bias(conv2d(h, block.kernels[l], 1, 1), block.biases[l]));
  return max_pool2d(h, 2, 2);
}

template <typename T>
Tensor<T> Model<T>::block_forward(int k, const Tensor<T>& x) {
  if (k < 1 || k > num_blocks())
    throw TensorError("block_forward: stage " + std::to_string(k) + " outside [1," +
                      std::to_string(num_blocks()) + "]");
  try {
    if (spec_.family == Family::Dense) {
      Tensor<T> h = k == 1 ? stem_forward(x) : transition_forward(k - 2, x);
      return dense_block_forward(k - 1, h);
    }
    return vgg_block_forward(k - 1, x);
  } catch (const TensorError& e) {
    throw TensorError("stage " + std::to_string(k) + ": " + e.what());
  }
}

template <typename T>
const CbamModule<T>* Model<T>::attention(int k) const {
  auto it = attention_.find(k);
  return it == attention_.end() ? nullptr : &it->second;
}

template <typename T>
Tensor<T> Model<T>::forward_extract(const Tensor<T>& x, AttentionTap<T>* tap) {
  Tensor<T> h = x;
  for (int k = 1; k <= num_blocks(); ++k) {
    h = block_forward(k, h);
    if (const auto* cbam = attention(k)) h = cbam->apply(h, tap, k);
  }
  return h;
}

template <typename T>
Tensor<T> Model<T>::head(const Tensor<T>& features) {
  Tensor<T> h = features;
  if (spec_.family == Family::Dense) h = relu(final_bn_.forward(h, training_, bn_updates_));
  h = pool_global(h, PoolMode::Avg);
  h = reshape(h, {h.dim(0), h.dim(1)});
  return linear(h, classifier_weight_, classifier_bias_);
}

template <typename T>
Tensor<T> Model<T>::classify(const Tensor<T>& x, AttentionTap<T>* tap) {
  if (x.rank() != 4 || x.dim(1) != spec_.input_channels || x.dim(2) != spec_.input_size ||
      x.dim(3) != spec_.input_size)
    throw TensorError("classify: input " + shape_str(x.shape()) + " does not match model input [N," +
                      std::to_string(spec_.input_channels) + "," + std::to_string(spec_.input_size) +
                      "," + std::to_string(spec_.input_size) + "]");
  return head(forward_extract(x, tap));
}

template class ParameterRegistry<float>;
template class ParameterRegistry<double>;
template struct BatchNormLayer<float>;
template struct BatchNormLayer<double>;
template class Model<float>;
template class Model<double>;

}  // namespace cbamnet
