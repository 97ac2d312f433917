#include "cbamnet/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include <json.hpp>

namespace cbamnet {

namespace fs = std::filesystem;

std::string fmt_double(double v) {
  if (std::isnan(v)) return "nan";
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  // trim to the shortest representation that round-trips
  for (int prec = 1; prec < 17; ++prec) {
    char probe[40];
    std::snprintf(probe, sizeof(probe), "%.*g", prec, v);
    double back = 0.0;
    std::sscanf(probe, "%lf", &back);
    if (back == v) return probe;
  }
  return buf;
}

void write_text_file(const fs::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write '" + path.string() + "'");
  out.write(content.data(), static_cast<std::streamsize>(content.size()));
  if (!out) throw Error("write failed for '" + path.string() + "'");
}

std::string render_report_csv(const EvalReport& report) {
  std::string out = "class,auc,degenerate\n";
  for (const auto& c : report.classes) {
    out += c.name;
    out += ",";
    out += c.degenerate ? "" : fmt_double(c.auc);
    out += ",";
    out += c.degenerate ? "1" : "0";
    out += "\n";
  }
  out += "mean,";
  out += fmt_double(report.mean_auc);
  out += ",0\n";
  return out;
}

std::string render_delta_csv(const std::vector<DeltaRow>& rows) {
  auto cell = [](const std::optional<double>& v) { return v ? fmt_double(*v) : std::string(); };
  std::string out =
      "class,auc,delta_vs_wang2017,delta_vs_chexnet,delta_vs_prior_sota,delta_vs_cbam_densenet121,"
      "delta_vs_cbam_vgg16\n";
  for (const auto& r : rows) {
    out += r.name + "," + (r.degenerate ? std::string() : fmt_double(r.auc)) + "," +
           cell(r.vs_wang2017) + "," + cell(r.vs_chexnet) + "," + cell(r.vs_prior_sota) + "," +
           cell(r.vs_cbam_densenet121) + "," + cell(r.vs_cbam_vgg16) + "\n";
  }
  return out;
}

std::string render_roc_svg(const ClassEval& cls) {
  // 440x440 canvas, 40px margins, unit square axes.
  const double origin = 40.0, span = 360.0;
  auto px = [&](double fpr) { return origin + fpr * span; };
  auto py = [&](double tpr) { return origin + span - tpr * span; };
  std::string svg =
      "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"440\" height=\"440\" "
      "viewBox=\"0 0 440 440\">\n"
      "  <rect x=\"40\" y=\"40\" width=\"360\" height=\"360\" fill=\"white\" stroke=\"black\"/>\n"
      "  <line x1=\"40\" y1=\"400\" x2=\"400\" y2=\"40\" stroke=\"#bbbbbb\" stroke-dasharray=\"4\"/>\n";
  svg += "  <polyline fill=\"none\" stroke=\"#1f77b4\" stroke-width=\"2\" points=\"";
  for (size_t i = 0; i < cls.roc.size(); ++i) {
    if (i) svg += " ";
    svg += fmt_double(px(cls.roc[i].fpr)) + "," + fmt_double(py(cls.roc[i].tpr));
  }
  svg += "\"/>\n";
  svg += "  <text x=\"220\" y=\"25\" text-anchor=\"middle\" font-family=\"sans-serif\" "
         "font-size=\"14\">" +
         cls.name + " (AUC " + fmt_double(cls.auc) + ")</text>\n";
  svg += "  <text x=\"220\" y=\"430\" text-anchor=\"middle\" font-family=\"sans-serif\" "
         "font-size=\"12\">false positive rate</text>\n";
  svg += "  <text x=\"15\" y=\"220\" text-anchor=\"middle\" font-family=\"sans-serif\" "
         "font-size=\"12\" transform=\"rotate(-90 15 220)\">true positive rate</text>\n";
  svg += "</svg>\n";
  return svg;
}

std::string render_history_jsonl(const RunHistory& history) {
  std::string out;
  for (const auto& r : history) {
    nlohmann::json line;
    line["stage"] = r.stage;
    line["epoch"] = r.epoch;
    line["loss"] = r.train_loss;
    if (std::isnan(r.val_mean_auc))
      line["val_mean_auc"] = nullptr;
    else
      line["val_mean_auc"] = r.val_mean_auc;
    line["seconds"] = r.seconds;
    out += line.dump() + "\n";
  }
  return out;
}

std::string render_placement_csv(const std::vector<PlacementSummaryRow>& rows) {
  std::string out = "backbone,placement,mean_auc\n";
  for (const auto& r : rows) out += r.backbone + "," + r.placement + "," + fmt_double(r.mean_auc) + "\n";
  return out;
}

namespace {

std::string pad(std::string s, size_t width) {
  if (s.size() < width) s.append(width - s.size(), ' ');
  return s;
}

std::string fixed4(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.4f", v);
  return buf;
}

}  // namespace

std::string render_placement_text(const std::vector<PlacementSummaryRow>& rows) {
  size_t w0 = 8, w1 = 9;
  for (const auto& r : rows) {
    w0 = std::max(w0, r.backbone.size());
    w1 = std::max(w1, r.placement.size());
  }
  std::string out = pad("backbone", w0 + 2) + pad("placement", w1 + 2) + "mean AUC\n";
  for (const auto& r : rows)
    out += pad(r.backbone, w0 + 2) + pad(r.placement, w1 + 2) + fixed4(r.mean_auc) + "\n";
  return out;
}

std::string render_strategy_csv(const std::vector<StrategyRow>& rows) {
  std::string out = "backbone,placement";
  for (const char* c : kStrategyColumns) out += std::string(",") + c;
  out += "\n";
  for (const auto& r : rows) {
    out += r.backbone + "," + r.placement;
    for (double v : r.mean_auc) out += "," + fmt_double(v);
    out += "\n";
  }
  return out;
}

std::string render_strategy_text(const std::vector<StrategyRow>& rows) {
  size_t w0 = 8, w1 = 9;
  for (const auto& r : rows) {
    w0 = std::max(w0, r.backbone.size());
    w1 = std::max(w1, r.placement.size());
  }
  std::string out = pad("backbone", w0 + 2) + pad("placement", w1 + 2);
  for (const char* c : kStrategyColumns) out += pad(c, 14);
  out += "\n";
  for (const auto& r : rows) {
    out += pad(r.backbone, w0 + 2) + pad(r.placement, w1 + 2);
    for (double v : r.mean_auc) out += pad(fixed4(v), 14);
    out += "\n";
  }
  return out;
}

void write_eval_outputs(const fs::path& dir, const EvalReport& report, const EvalConfig& eval_cfg) {
  if (eval_cfg.csv) write_text_file(dir / "report.csv", render_report_csv(report));
  if (eval_cfg.svg) {
    for (const auto& c : report.classes) {
      if (c.degenerate) continue;
      std::string name = c.name;
      std::replace(name.begin(), name.end(), ' ', '_');
      write_text_file(dir / ("roc_" + name + ".svg"), render_roc_svg(c));
    }
  }
  // Baseline deltas only apply when the classes are the canonical pathologies.
  bool canonical = report.classes.size() == kPathologyNames.size();
  for (size_t i = 0; canonical && i < kPathologyNames.size(); ++i)
    canonical = report.classes[i].name == kPathologyNames[i];
  if (canonical && eval_cfg.csv)
    write_text_file(dir / "baseline_deltas.csv", render_delta_csv(compare_to_baselines(report)));
}

namespace {

void write_pgm_heatmap(const fs::path& path, const double* data, int64_t h, int64_t w) {
  double lo = data[0], hi = data[0];
  for (int64_t i = 0; i < h * w; ++i) {
    lo = std::min(lo, data[i]);
    hi = std::max(hi, data[i]);
  }
  const double scale = hi > lo ? 255.0 / (hi - lo) : 0.0;
  std::string out = "P5\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
  for (int64_t i = 0; i < h * w; ++i)
    out += static_cast<char>(static_cast<unsigned char>(std::lround((data[i] - lo) * scale)));
  write_text_file(path, out);
}

}  // namespace

template <typename T>
void write_attention_dump(const fs::path& dir, const AttentionTap<T>& tap) {
  std::ofstream bin(dir / "attention_maps.bin", std::ios::binary | std::ios::trunc);
  if (!bin) throw Error("cannot write '" + (dir / "attention_maps.bin").string() + "'");
  nlohmann::json index = nlohmann::json::array();
  uint64_t offset = 0;
  for (const auto& m : tap.maps) {
    nlohmann::json entry;
    entry["stage"] = m.stage;
    entry["kind"] = m.kind;
    entry["dtype"] = sizeof(T) == 4 ? "f32" : "f64";
    entry["shape"] = m.shape;
    entry["offset_bytes"] = offset;
    entry["length_bytes"] = m.data.size() * sizeof(T);
    index.push_back(entry);
    bin.write(reinterpret_cast<const char*>(m.data.data()),
              static_cast<std::streamsize>(m.data.size() * sizeof(T)));
    offset += m.data.size() * sizeof(T);

    // heatmap for the first sample: channel maps as a 1xC strip, spatial maps
    // as the HxW image
    const int64_t n_stride = shape_numel(m.shape) / m.shape[0];
    std::vector<double> sample0(static_cast<size_t>(n_stride));
    for (int64_t i = 0; i < n_stride; ++i) sample0[static_cast<size_t>(i)] = static_cast<double>(m.data[static_cast<size_t>(i)]);
    const int64_t h = m.kind == "channel" ? 1 : m.shape[2];
    const int64_t w = m.kind == "channel" ? m.shape[1] : m.shape[3];
    write_pgm_heatmap(dir / ("attention_stage" + std::to_string(m.stage) + "_" + m.kind + ".pgm"),
                      sample0.data(), h, w);
  }
  if (!bin) throw Error("write failed for '" + (dir / "attention_maps.bin").string() + "'");
  write_text_file(dir / "attention_index.json", index.dump(2) + "\n");
}

template void write_attention_dump<float>(const fs::path&, const AttentionTap<float>&);
template void write_attention_dump<double>(const fs::path&, const AttentionTap<double>&);

}  // namespace cbamnet
