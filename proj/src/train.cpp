#include "cbamnet/train.hpp"

#include <chrono>
#include <cmath>
#include <limits>
#include <memory>

#include "cbamnet/checkpoint.hpp"

namespace cbamnet {

void OptimizerSettings::validate() const {
  if (!(lr > 0.0)) throw ConfigError("optimizer: learning rate must be > 0");
  if (momentum < 0.0 || momentum >= 1.0) throw ConfigError("optimizer: momentum must be in [0,1)");
  if (weight_decay < 0.0) throw ConfigError("optimizer: weight_decay must be >= 0");
  if (kind == Kind::Adam && (beta1 <= 0.0 || beta1 >= 1.0 || beta2 <= 0.0 || beta2 >= 1.0 || eps <= 0.0))
    throw ConfigError("optimizer: adam betas must be in (0,1) and eps > 0");
}

void StageSpec::validate() const {
  if (epochs < 1) throw ConfigError("stage: epochs must be >= 1");
  if (batch_size < 1) throw ConfigError("stage: batch_size must be >= 1");
  if (flip_prob < 0.0 || flip_prob > 1.0) throw ConfigError("stage: flip_prob must be in [0,1]");
  optimizer.validate();
}

void TrainingPlan::validate() const {
  if (stages.empty() || stages.size() > 2)
    throw ConfigError("training plan: expected 1 or 2 stages, got " + std::to_string(stages.size()));
  for (const auto& s : stages) s.validate();
  if (loss.kinds.empty()) throw ConfigError("training plan: loss plan is empty");
  if (loss.staged && loss.kinds.size() != stages.size())
    throw ConfigError("training plan: staged loss has " + std::to_string(loss.kinds.size()) +
                      " entries for " + std::to_string(stages.size()) + " stages");
}

DatasetManifest filter_abnormal(const DatasetManifest& manifest) {
  DatasetManifest out;
  out.class_names = manifest.class_names;
  out.provenance = manifest.provenance;
  out.seed = manifest.seed;
  for (const auto& s : manifest.samples)
    if (s.abnormal()) out.samples.push_back(s);
  return out;
}

template <typename T>
TrainData<T> TrainData<T>::from_manifest(const DatasetManifest& manifest,
                                         const std::filesystem::path& image_root, int target_size) {
  TrainData<T> data;
  data.class_names = manifest.class_names;
  data.images.reserve(manifest.samples.size());
  data.labels.reserve(manifest.samples.size());
  for (const auto& sample : manifest.samples) {
    auto t = preprocess<T>(sample, image_root, target_size);
    if (data.image_shape.empty()) data.image_shape = t.shape();
    auto values = t.values();
    data.images.emplace_back(values.begin(), values.end());
    data.labels.push_back(sample.labels);
  }
  if (data.image_shape.empty())
    data.image_shape = {1, target_size, target_size};
  return data;
}

template <typename T>
TrainData<T> TrainData<T>::filter_abnormal() const {
  TrainData<T> out;
  out.image_shape = image_shape;
  out.class_names = class_names;
  for (size_t i = 0; i < images.size(); ++i) {
    bool any = false;
    for (uint8_t y : labels[i]) any = any || y != 0;
    if (any) {
      out.images.push_back(images[i]);
      out.labels.push_back(labels[i]);
    }
  }
  return out;
}

namespace {

// --- optimizers ---------------------------------------------------------------

template <typename T>
class Stepper {
 public:
  virtual ~Stepper() = default;
  virtual void step(ParameterRegistry<T>& reg) = 0;
};

template <typename T>
class SgdMomentum final : public Stepper<T> {
 public:
  explicit SgdMomentum(const OptimizerSettings& s) : s_(s) {}
  void step(ParameterRegistry<T>& reg) override {
    if (velocity_.empty()) {
      for (const auto& e : reg.entries())
        velocity_.emplace_back(e.trainable ? static_cast<size_t>(e.tensor.numel()) : 0, T(0));
    }
    const T lr = static_cast<T>(s_.lr), mu = static_cast<T>(s_.momentum),
            wd = static_cast<T>(s_.weight_decay);
    for (size_t e = 0; e < reg.entries().size(); ++e) {
      auto& entry = reg.entries()[e];
      if (!entry.trainable) continue;
      auto theta = entry.tensor.raw();
      auto grads = entry.tensor.grad();  // empty means unreachable: zero gradient
      auto& vel = velocity_[e];
      for (size_t i = 0; i < theta.size(); ++i) {
        const T g = (grads.empty() ? T(0) : grads[i]) + wd * theta[i];
        vel[i] = mu * vel[i] + g;
        theta[i] -= lr * vel[i];
      }
    }
  }

 private:
  OptimizerSettings s_;
  std::vector<std::vector<T>> velocity_;
};

template <typename T>
class Adam final : public Stepper<T> {
 public:
  explicit Adam(const OptimizerSettings& s) : s_(s) {}
  void step(ParameterRegistry<T>& reg) override {
    if (m_.empty()) {
      for (const auto& e : reg.entries()) {
        const size_t n = e.trainable ? static_cast<size_t>(e.tensor.numel()) : 0;
        m_.emplace_back(n, T(0));
        v_.emplace_back(n, T(0));
      }
    }
    ++t_;
    const T lr = static_cast<T>(s_.lr), b1 = static_cast<T>(s_.beta1), b2 = static_cast<T>(s_.beta2),
            eps = static_cast<T>(s_.eps), wd = static_cast<T>(s_.weight_decay);
    const T bc1 = T(1) - std::pow(b1, static_cast<T>(t_));
    const T bc2 = T(1) - std::pow(b2, static_cast<T>(t_));
    for (size_t e = 0; e < reg.entries().size(); ++e) {
      auto& entry = reg.entries()[e];
      if (!entry.trainable) continue;
      auto theta = entry.tensor.raw();
      auto grads = entry.tensor.grad();
      for (size_t i = 0; i < theta.size(); ++i) {
        const T g = (grads.empty() ? T(0) : grads[i]) + wd * theta[i];
        m_[e][i] = b1 * m_[e][i] + (T(1) - b1) * g;
        v_[e][i] = b2 * v_[e][i] + (T(1) - b2) * g * g;
        theta[i] -= lr * (m_[e][i] / bc1) / (std::sqrt(v_[e][i] / bc2) + eps);
      }
    }
  }

 private:
  OptimizerSettings s_;
  std::vector<std::vector<T>> m_, v_;
  int64_t t_ = 0;
};

template <typename T>
std::unique_ptr<Stepper<T>> make_stepper(const OptimizerSettings& s) {
  if (s.kind == OptimizerSettings::Kind::Adam) return std::make_unique<Adam<T>>(s);
  return std::make_unique<SgdMomentum<T>>(s);
}

template <typename T>
Tensor<T> assemble_batch(const TrainData<T>& data, const std::vector<int64_t>& order, int64_t start,
                         int64_t count, double flip_prob, Rng* aug_rng) {
  const Shape& is = data.image_shape;
  const int64_t c = is[0], h = is[1], w = is[2];
  std::vector<T> buf(static_cast<size_t>(count * c * h * w));
  for (int64_t b = 0; b < count; ++b) {
    const auto& img = data.images[static_cast<size_t>(order[static_cast<size_t>(start + b)])];
    T* dst = buf.data() + b * c * h * w;
    std::copy(img.begin(), img.end(), dst);
    if (flip_prob > 0.0 && aug_rng && aug_rng->uniform() < flip_prob) {
      for (int64_t ch = 0; ch < c; ++ch)
        for (int64_t y = 0; y < h; ++y) std::reverse(dst + (ch * h + y) * w, dst + (ch * h + y) * w + w);
    }
  }
  return Tensor<T>::from_data({count, c, h, w}, std::move(buf));
}

template <typename T>
Tensor<T> assemble_targets(const TrainData<T>& data, const std::vector<int64_t>& order, int64_t start,
                           int64_t count) {
  const int64_t l = data.num_labels();
  std::vector<T> buf(static_cast<size_t>(count * l));
  for (int64_t b = 0; b < count; ++b) {
    const auto& row = data.labels[static_cast<size_t>(order[static_cast<size_t>(start + b)])];
    for (int64_t j = 0; j < l; ++j) buf[static_cast<size_t>(b * l + j)] = static_cast<T>(row[static_cast<size_t>(j)]);
  }
  return Tensor<T>::from_data({count, l}, std::move(buf));
}

}  // namespace

template <typename T>
ScoreMatrix score_dataset(Model<T>& model, const TrainData<T>& data, int batch_size) {
  const bool was_training = model.is_training();
  model.set_training(false);
  ScoreMatrix matrix;
  matrix.n = data.size();
  matrix.l = data.num_labels();
  matrix.class_names = data.class_names;
  matrix.scores.reserve(static_cast<size_t>(matrix.n * matrix.l));
  matrix.labels.reserve(static_cast<size_t>(matrix.n * matrix.l));
  std::vector<int64_t> order(static_cast<size_t>(data.size()));
  for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int64_t>(i);
  for (int64_t start = 0; start < data.size(); start += batch_size) {
    const int64_t count = std::min<int64_t>(batch_size, data.size() - start);
    auto logits = model.classify(assemble_batch(data, order, start, count, 0.0, nullptr));
    auto probs = sigmoid(logits);
    for (const T v : probs.values()) matrix.scores.push_back(static_cast<double>(v));
  }
  for (const auto& row : data.labels)
    for (uint8_t y : row) matrix.labels.push_back(y);
  model.set_training(was_training);
  return matrix;
}

template <typename T>
RunHistory run_stage(Model<T>& model, const TrainData<T>& train, const TrainData<T>& val,
                     const StageSpec& stage, const LossKind& loss, int stage_index, uint64_t seed) {
  stage.validate();
  if (train.size() == 0)
    throw TrainError("stage " + std::to_string(stage_index) + " has no samples");

  auto stepper = make_stepper<T>(stage.optimizer);
  RunHistory history;
  std::vector<int64_t> order(static_cast<size_t>(train.size()));
  for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int64_t>(i);

  for (int epoch = 1; epoch <= stage.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    const uint64_t epoch_seed = mix_seed(mix_seed(seed, static_cast<uint64_t>(stage_index)),
                                         static_cast<uint64_t>(epoch));
    Rng shuffle_rng(epoch_seed);
    Rng aug_rng(mix_seed(epoch_seed, fnv1a64(std::string("augment"))));
    shuffle_rng.shuffle(order.begin(), order.end());

    model.set_training(true);
    double loss_sum = 0.0;
    for (int64_t start = 0; start < train.size(); start += stage.batch_size) {
      const int64_t count = std::min<int64_t>(stage.batch_size, train.size() - start);
      auto batch = assemble_batch(train, order, start, count, stage.flip_prob, &aug_rng);
      auto targets = assemble_targets(train, order, start, count);
      auto logits = model.classify(batch);
      auto loss_value = apply_loss(loss, logits, targets);
      model.params().zero_grads();
      backward(loss_value);
      stepper->step(model.params());
      loss_sum += static_cast<double>(loss_value.item()) * static_cast<double>(count);
    }

    EpochRecord record;
    record.stage = stage_index;
    record.epoch = epoch;
    record.train_loss = loss_sum / static_cast<double>(train.size());
    record.val_mean_auc = std::numeric_limits<double>::quiet_NaN();
    if (val.size() >= 2) {
      try {
        record.val_mean_auc = evaluate(score_dataset(model, val), /*with_roc=*/false).mean_auc;
      } catch (const MetricError&) {
        // fully degenerate validation split; leave NaN
      }
    }
    record.seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    history.push_back(record);
  }
  return history;
}

template <typename T>
RunResult run_plan(Model<T>& model, const TrainData<T>& train, const TrainData<T>& val,
                   const TrainingPlan& plan) {
  plan.validate();
  RunResult result;
  const int stage_count = static_cast<int>(plan.stages.size());
  for (int s = 0; s < stage_count; ++s) {
    const auto& stage = plan.stages[static_cast<size_t>(s)];
    const TrainData<T> filtered =
        stage.filter == DataFilter::AbnormalOnly ? train.filter_abnormal() : train;
    if (filtered.size() == 0)
      throw TrainError("stage " + std::to_string(s + 1) + " has no samples after its data filter");
    result.digests.at_start.push_back(model.param_digest());
    auto slice = run_stage(model, filtered, val, stage, plan.loss.resolve(s + 1, stage_count), s + 1,
                           plan.seed);
    result.history.insert(result.history.end(), slice.begin(), slice.end());
    result.digests.at_end.push_back(model.param_digest());
  }
  return result;
}

template <typename T>
void save_model(const Model<T>& model, const std::filesystem::path& path) {
  save_checkpoint(path, model.params(), model.spec().digest());
}

template <typename T>
Model<T> restore_model(const ModelSpec& spec, const std::filesystem::path& path) {
  Model<T> model(spec, /*seed=*/0);
  load_checkpoint(path, model.params(), spec.digest());
  return model;
}

#define CBAMNET_INSTANTIATE(T)                                                                      \
  template struct TrainData<T>;                                                                     \
  template ScoreMatrix score_dataset<T>(Model<T>&, const TrainData<T>&, int);                       \
  template RunHistory run_stage<T>(Model<T>&, const TrainData<T>&, const TrainData<T>&,             \
                                   const StageSpec&, const LossKind&, int, uint64_t);               \
  template RunResult run_plan<T>(Model<T>&, const TrainData<T>&, const TrainData<T>&,               \
                                 const TrainingPlan&);                                              \
  template void save_model<T>(const Model<T>&, const std::filesystem::path&);                       \
  template Model<T> restore_model<T>(const ModelSpec&, const std::filesystem::path&);

CBAMNET_INSTANTIATE(float)
CBAMNET_INSTANTIATE(double)

#undef CBAMNET_INSTANTIATE

}  // namespace cbamnet
