#pragma once

#include <array>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "cbamnet/metrics.hpp"  // canonical pathology names
#include "cbamnet/tensor.hpp"

namespace cbamnet {

struct ImageF32 {
  int channels = 0;
  int height = 0;
  int width = 0;
  std::vector<float> pixels;  // C,H,W
};

// Supported pixel containers: .cxim (raw float32, lossless) and .pgm (P5).
ImageF32 read_image(const std::filesystem::path& path);
void write_cxim(const std::filesystem::path& path, const ImageF32& img);

struct Sample {
  std::string id;       // also the image locator, relative to the image root
  std::string patient_id;
  std::vector<uint8_t> labels;  // all-zero encodes "No Finding"
  std::shared_ptr<const ImageF32> image;  // synthetic mode keeps pixels in memory

  bool abnormal() const;
};

enum class Provenance { Real, Synthetic };

struct DatasetManifest {
  std::vector<Sample> samples;
  std::vector<std::string> class_names;
  Provenance provenance = Provenance::Real;
  uint64_t seed = 0;

  int64_t num_labels() const { return static_cast<int64_t>(class_names.size()); }
};

// Parses the ChestXray14 label-manifest layout: header row with columns
// "Image Index", "Finding Labels" (pipe-separated names or "No Finding"),
// "Patient ID". Labels map onto class_names order; unknown names are hard
// errors with row numbers. The default class list is the canonical 14
// pathology order; "Pleural_Thickening" is accepted for "Pleural Thickening"
// (the underscore form appears in the published manifests).
DatasetManifest load_manifest(const std::filesystem::path& csv_path,
                              std::vector<std::string> class_names = {});

struct SplitFractions {
  double train = 0.7;
  double val = 0.1;
  double test = 0.2;
  void validate() const;
};

struct SplitManifests {
  DatasetManifest train, val, test;
};

// Patient-level partition: patients shuffled by seed, then greedily assigned
// to the split with the largest remaining sample deficit. Patient-id sets
// are pairwise disjoint.
SplitManifests patient_split(const DatasetManifest& manifest, const SplitFractions& fractions,
                             uint64_t seed);

// Bilinear resize to target_size^2 (half-pixel centers), per-image
// normalization to zero mean / unit variance (constant images map to zeros),
// then optional horizontal flip with probability flip_prob (training only).
template <typename T>
Tensor<T> preprocess(const Sample& sample, const std::filesystem::path& image_root, int target_size,
                     double flip_prob = 0.0, Rng* aug_rng = nullptr);

struct CooccurrenceBoost {
  int if_class = 0;    // when this class is drawn positive...
  int then_class = 0;  // ...this later class's probability is raised
  double boost = 0.0;
};

struct SyntheticSpec {
  int num_labels = 6;
  int image_size = 32;
  int num_samples = 0;
  std::vector<double> prevalences = {0.30, 0.20, 0.15, 0.10, 0.05, 0.02};
  std::vector<CooccurrenceBoost> boosts;
  double noise_amplitude = 0.3;

  void validate() const;
};

// One distinct geometric motif per class, at a class-specific location with
// random jitter, over uniform background noise. Patients group ~3 samples.
inline constexpr std::array<const char*, 6> kMotifNames = {"Bar",  "Disk",     "Ring",
                                                           "Blob", "Gradient", "Checker"};

DatasetManifest synth_generate(const SyntheticSpec& spec, uint64_t seed);

// Writes labels.csv plus images/<id> in the shared CSV+image layout so the
// result reloads through load_manifest.
void export_dataset(const DatasetManifest& manifest, const std::filesystem::path& dir);

}  // namespace cbamnet
