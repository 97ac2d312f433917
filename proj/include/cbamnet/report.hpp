#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "cbamnet/cbam.hpp"
#include "cbamnet/config.hpp"
#include "cbamnet/metrics.hpp"
#include "cbamnet/train.hpp"

namespace cbamnet {

// Deterministic shortest-round-trip double formatting shared by every
// emitted artifact, so identical runs produce identical bytes.
std::string fmt_double(double v);

void write_text_file(const std::filesystem::path& path, const std::string& content);

std::string render_report_csv(const EvalReport& report);
std::string render_delta_csv(const std::vector<DeltaRow>& rows);
std::string render_roc_svg(const ClassEval& cls);
std::string render_history_jsonl(const RunHistory& history);

struct PlacementSummaryRow {
  std::string backbone;
  std::string placement;
  double mean_auc = 0.0;
};
std::string render_placement_csv(const std::vector<PlacementSummaryRow>& rows);
std::string render_placement_text(const std::vector<PlacementSummaryRow>& rows);

inline constexpr std::array<const char*, 5> kStrategyColumns = {"1S-BCE", "1S-Focal", "2S-BCE",
                                                                "2S-Focal", "2S-BCE+Focal"};

struct StrategyRow {
  std::string backbone;
  std::string placement;
  std::array<double, 5> mean_auc{};
};
std::string render_strategy_csv(const std::vector<StrategyRow>& rows);
std::string render_strategy_text(const std::vector<StrategyRow>& rows);

// Evaluation artifacts for one run directory: report.csv, per-class ROC
// SVGs, and the baseline delta table when the class names are the canonical
// 14 pathologies.
void write_eval_outputs(const std::filesystem::path& dir, const EvalReport& report,
                        const EvalConfig& eval_cfg);

// Attention-map dump: flat binary arrays plus an index file, and one PGM
// heatmap per (stage, kind).
template <typename T>
void write_attention_dump(const std::filesystem::path& dir, const AttentionTap<T>& tap);

}  // namespace cbamnet
