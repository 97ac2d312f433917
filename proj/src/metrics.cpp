#include "cbamnet/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace cbamnet {

double auc_binary(std::span<const double> scores, std::span<const uint8_t> labels) {
  if (scores.size() != labels.size())
    throw MetricError("auc_binary: " + std::to_string(scores.size()) + " scores vs " +
                      std::to_string(labels.size()) + " labels");
  if (scores.empty()) throw MetricError("auc_binary: empty input");
  int64_t pos = 0;
  for (uint8_t y : labels) {
    if (y != 0 && y != 1) throw MetricError("auc_binary: labels must be 0/1");
    pos += y;
  }
  const int64_t neg = static_cast<int64_t>(labels.size()) - pos;
  if (pos == 0 || neg == 0)
    throw DegenerateClassError("auc_binary: degenerate class (" + std::to_string(pos) + " positives, " +
                               std::to_string(neg) + " negatives)");

  // Midrank rank-sum. Rank sums are multiples of 0.5 and exact in doubles,
  // so the result is bitwise equal to the pairwise count with ties at 0.5.
  std::vector<size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), size_t{0});
  std::sort(idx.begin(), idx.end(), [&](size_t a, size_t b) { return scores[a] < scores[b]; });

  double pos_rank_sum = 0.0;
  size_t i = 0;
  while (i < idx.size()) {
    size_t j = i;
    while (j < idx.size() && scores[idx[j]] == scores[idx[i]]) ++j;
    // ranks are 1-based; tied block [i, j) shares the midrank
    const double midrank = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2.0;
    for (size_t k = i; k < j; ++k)
      if (labels[idx[k]]) pos_rank_sum += midrank;
    i = j;
  }
  const double p = static_cast<double>(pos);
  const double num = pos_rank_sum - p * (p + 1.0) / 2.0;
  return num / (p * static_cast<double>(neg));
}

std::vector<RocPoint> roc_points(std::span<const double> scores, std::span<const uint8_t> labels) {
  // Shares input validation (and the degenerate-class error) with auc_binary.
  (void)auc_binary(scores, labels);
  int64_t pos = 0;
  for (uint8_t y : labels) pos += y;
  const int64_t neg = static_cast<int64_t>(labels.size()) - pos;

  std::vector<size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), size_t{0});
  std::sort(idx.begin(), idx.end(), [&](size_t a, size_t b) { return scores[a] > scores[b]; });

  std::vector<RocPoint> pts;
  pts.push_back({0.0, 0.0});
  int64_t tp = 0, fp = 0;
  size_t i = 0;
  while (i < idx.size()) {
    size_t j = i;
    while (j < idx.size() && scores[idx[j]] == scores[idx[i]]) ++j;
    for (size_t k = i; k < j; ++k) {
      tp += labels[idx[k]];
      fp += 1 - labels[idx[k]];
    }
    pts.push_back({static_cast<double>(fp) / static_cast<double>(neg),
                   static_cast<double>(tp) / static_cast<double>(pos)});
    i = j;
  }
  return pts;
}

double trapezoid_area(const std::vector<RocPoint>& pts) {
  double area = 0.0;
  for (size_t i = 1; i < pts.size(); ++i)
    area += (pts[i].fpr - pts[i - 1].fpr) * (pts[i].tpr + pts[i - 1].tpr) / 2.0;
  return area;
}

EvalReport evaluate(const ScoreMatrix& matrix, bool with_roc) {
  if (matrix.n < 2) throw MetricError("evaluate: need at least 2 samples, got " + std::to_string(matrix.n));
  if (matrix.l < 1 || static_cast<int64_t>(matrix.scores.size()) != matrix.n * matrix.l ||
      matrix.labels.size() != matrix.scores.size())
    throw MetricError("evaluate: inconsistent score matrix dimensions");
  if (!matrix.class_names.empty() && static_cast<int64_t>(matrix.class_names.size()) != matrix.l)
    throw MetricError("evaluate: class name count does not match L");

  EvalReport report;
  double sum = 0.0;
  int defined = 0;
  std::vector<double> col_scores(static_cast<size_t>(matrix.n));
  std::vector<uint8_t> col_labels(static_cast<size_t>(matrix.n));
  for (int64_t c = 0; c < matrix.l; ++c) {
    for (int64_t r = 0; r < matrix.n; ++r) {
      col_scores[static_cast<size_t>(r)] = matrix.scores[static_cast<size_t>(r * matrix.l + c)];
      col_labels[static_cast<size_t>(r)] = matrix.labels[static_cast<size_t>(r * matrix.l + c)];
    }
    ClassEval ce;
    ce.name = matrix.class_names.empty() ? "class" + std::to_string(c)
                                         : matrix.class_names[static_cast<size_t>(c)];
    try {
      ce.auc = auc_binary(col_scores, col_labels);
      if (with_roc) ce.roc = roc_points(col_scores, col_labels);
      sum += ce.auc;
      ++defined;
    } catch (const DegenerateClassError&) {
      ce.degenerate = true;
      ++report.degenerate_count;
    }
    report.classes.push_back(std::move(ce));
  }
  if (defined == 0) throw MetricError("evaluate: every class is degenerate in this split");
  report.mean_auc = sum / static_cast<double>(defined);
  return report;
}

const BaselineTable& chestxray14_baselines() {
  // Published AUC columns: Wang et al. 2017, CheXNet, the strongest prior
  // ensemble, and the CBAM-enhanced DenseNet121/VGG16 results. The CheXNet
  // Consolidation cell is malformed at the source and is stored as missing.
  static const BaselineTable table{
      1,
      {{
          {"Atelectasis", 0.7003, 0.8094, 0.83390, 0.8396, 0.8509},
          {"Cardiomegaly", 0.8100, 0.9248, 0.91954, 0.9382, 0.9386},
          {"Effusion", 0.7585, 0.8638, 0.88977, 0.8994, 0.9014},
          {"Infiltration", 0.6614, 0.7345, 0.74102, 0.7387, 0.7444},
          {"Mass", 0.6933, 0.8676, 0.87315, 0.8879, 0.8860},
          {"Nodule", 0.6687, 0.7802, 0.80611, 0.8153, 0.8315},
          {"Pneumonia", 0.6580, 0.7680, 0.77648, 0.7791, 0.7915},
          {"Pneumothorax", 0.7993, 0.8887, 0.90164, 0.9169, 0.9189},
          {"Consolidation", 0.7032, std::nullopt, 0.81575, 0.8305, 0.8242},
          {"Edema", 0.8052, 0.8878, 0.91034, 0.9214, 0.9216},
          {"Emphysema", 0.8330, 0.9371, 0.92946, 0.9426, 0.9422},
          {"Fibrosis", 0.7859, 0.8047, 0.83347, 0.8417, 0.8384},
          {"Pleural Thickening", 0.6835, 0.8062, 0.81270, 0.8362, 0.8311},
          {"Hernia", 0.8717, 0.9164, 0.91723, 0.9660, 0.9529},
      }},
      {"Mean AUC", 0.7451, 0.841, 0.85433, 0.8681, 0.8695},
  };
  return table;
}

std::vector<DeltaRow> compare_to_baselines(const EvalReport& report) {
  const auto& table = chestxray14_baselines();
  if (report.classes.size() != table.rows.size()) {
    throw MetricError("compare_to_baselines: report has " + std::to_string(report.classes.size()) +
                      " classes, expected the canonical 14 pathologies");
  }
  std::string mismatches;
  for (size_t i = 0; i < table.rows.size(); ++i) {
    if (report.classes[i].name != table.rows[i].pathology) {
      if (!mismatches.empty()) mismatches += ", ";
      mismatches += "got '" + report.classes[i].name + "' expected '" + table.rows[i].pathology + "'";
    }
  }
  if (!mismatches.empty())
    throw MetricError("compare_to_baselines: class names do not match canonical order: " + mismatches);

  std::vector<DeltaRow> rows;
  auto make_row = [](const std::string& name, bool degenerate, double auc, const BaselineRow& b) {
    DeltaRow row;
    row.name = name;
    row.degenerate = degenerate;
    row.auc = auc;
    if (!degenerate) {
      row.vs_wang2017 = auc - b.wang2017;
      if (b.chexnet) row.vs_chexnet = auc - *b.chexnet;
      row.vs_prior_sota = auc - b.prior_sota;
      row.vs_cbam_densenet121 = auc - b.cbam_densenet121;
      row.vs_cbam_vgg16 = auc - b.cbam_vgg16;
    }
    return row;
  };
  for (size_t i = 0; i < table.rows.size(); ++i) {
    const auto& ce = report.classes[i];
    rows.push_back(make_row(ce.name, ce.degenerate, ce.auc, table.rows[i]));
  }
  rows.push_back(make_row("Mean AUC", false, report.mean_auc, table.mean));
  return rows;
}

}  // namespace cbamnet
