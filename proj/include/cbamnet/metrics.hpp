#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cbamnet/common.hpp"

namespace cbamnet {

// Thrown by auc_binary when a class has no positives or no negatives; the
// caller decides whether that is an error or a flag.
class DegenerateClassError : public MetricError {
 public:
  using MetricError::MetricError;
};

// Mann-Whitney AUC: fraction of (positive, negative) pairs with
// score_pos > score_neg, ties counted 0.5. Rank-sum with midranks.
double auc_binary(std::span<const double> scores, std::span<const uint8_t> labels);

struct RocPoint {
  double fpr;
  double tpr;
};

// Threshold sweep over distinct scores descending, endpoints included.
std::vector<RocPoint> roc_points(std::span<const double> scores, std::span<const uint8_t> labels);

double trapezoid_area(const std::vector<RocPoint>& pts);

struct ScoreMatrix {
  int64_t n = 0;
  int64_t l = 0;
  std::vector<double> scores;   // n*l row-major, in [0,1]
  std::vector<uint8_t> labels;  // n*l row-major, 0/1
  std::vector<std::string> class_names;
};

struct ClassEval {
  std::string name;
  bool degenerate = false;
  double auc = 0.0;  // meaningless when degenerate
  std::vector<RocPoint> roc;
};

struct EvalReport {
  std::vector<ClassEval> classes;
  double mean_auc = 0.0;  // unweighted over non-degenerate classes
  int degenerate_count = 0;
};

EvalReport evaluate(const ScoreMatrix& matrix, bool with_roc = true);

// --- published ChestXray14 baselines ----------------------------------------

inline constexpr std::array<const char*, 14> kPathologyNames = {
    "Atelectasis",  "Cardiomegaly", "Effusion",  "Infiltration", "Mass",
    "Nodule",       "Pneumonia",    "Pneumothorax", "Consolidation", "Edema",
    "Emphysema",    "Fibrosis",     "Pleural Thickening", "Hernia"};

struct BaselineRow {
  const char* pathology;
  double wang2017;
  std::optional<double> chexnet;  // one published cell is malformed; stored missing
  double prior_sota;
  double cbam_densenet121;
  double cbam_vgg16;
};

struct BaselineTable {
  int version;
  std::array<BaselineRow, 14> rows;
  BaselineRow mean;
};

const BaselineTable& chestxray14_baselines();

struct DeltaRow {
  std::string name;  // pathology or "Mean AUC"
  bool degenerate = false;
  double auc = 0.0;
  std::optional<double> vs_wang2017;
  std::optional<double> vs_chexnet;
  std::optional<double> vs_prior_sota;
  std::optional<double> vs_cbam_densenet121;
  std::optional<double> vs_cbam_vgg16;
};

// Requires report classes to be exactly the canonical 14 pathologies in
// order; degenerate classes yield rows with empty deltas.
std::vector<DeltaRow> compare_to_baselines(const EvalReport& report);

}  // namespace cbamnet
