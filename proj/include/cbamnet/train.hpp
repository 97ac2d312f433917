#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "cbamnet/backbone.hpp"
#include "cbamnet/data.hpp"
#include "cbamnet/losses.hpp"
#include "cbamnet/metrics.hpp"

namespace cbamnet {

enum class DataFilter { All, AbnormalOnly };

struct OptimizerSettings {
  enum class Kind { Sgd, Adam };
  Kind kind = Kind::Sgd;
  double lr = 0.05;
  double momentum = 0.9;      // sgd
  double weight_decay = 0.0;
  double beta1 = 0.9;         // adam
  double beta2 = 0.999;
  double eps = 1e-8;
  void validate() const;
};

struct StageSpec {
  DataFilter filter = DataFilter::All;
  int epochs = 0;  // config-mandatory, no silent default
  int batch_size = 32;
  OptimizerSettings optimizer;
  double flip_prob = 0.0;
  void validate() const;
};

struct TrainingPlan {
  std::vector<StageSpec> stages;  // 1 or 2
  LossPlan loss;
  uint64_t seed = 0;
  void validate() const;
};

struct EpochRecord {
  int stage = 0;
  int epoch = 0;
  double train_loss = 0.0;
  double val_mean_auc = 0.0;  // NaN when the validation split is fully degenerate
  double seconds = 0.0;
};
using RunHistory = std::vector<EpochRecord>;

// Retains exactly the samples with at least one positive label, preserving
// order. The all-zero vector encodes "No Finding".
DatasetManifest filter_abnormal(const DatasetManifest& manifest);

// Preprocessed dataset cache used by the trainer: one normalized image
// tensor per sample plus its label vector.
template <typename T>
struct TrainData {
  Shape image_shape;  // {C,H,W}
  std::vector<std::vector<T>> images;
  std::vector<std::vector<uint8_t>> labels;
  std::vector<std::string> class_names;

  int64_t size() const { return static_cast<int64_t>(images.size()); }
  int64_t num_labels() const { return static_cast<int64_t>(class_names.size()); }

  static TrainData from_manifest(const DatasetManifest& manifest,
                                 const std::filesystem::path& image_root, int target_size);
  TrainData filter_abnormal() const;
};

// One training stage: per-epoch seeded shuffles, minibatch SGD over the
// resolved stage loss, epoch-end validation AUC. Deterministic given
// (seed, stage_index, data, model state).
template <typename T>
RunHistory run_stage(Model<T>& model, const TrainData<T>& train, const TrainData<T>& val,
                     const StageSpec& stage, const LossKind& loss, int stage_index, uint64_t seed);

struct StageBoundaryDigests {
  std::vector<uint64_t> at_start;
  std::vector<uint64_t> at_end;
};

struct RunResult {
  RunHistory history;
  StageBoundaryDigests digests;  // stage n+1 starts from stage n's final parameters
};

template <typename T>
RunResult run_plan(Model<T>& model, const TrainData<T>& train, const TrainData<T>& val,
                   const TrainingPlan& plan);

// Eval-mode scoring of a dataset into post-sigmoid probabilities.
template <typename T>
ScoreMatrix score_dataset(Model<T>& model, const TrainData<T>& data, int batch_size = 128);

// Checkpoint round-trip keyed by the model-spec digest.
template <typename T>
void save_model(const Model<T>& model, const std::filesystem::path& path);
template <typename T>
Model<T> restore_model(const ModelSpec& spec, const std::filesystem::path& path);

}  // namespace cbamnet
