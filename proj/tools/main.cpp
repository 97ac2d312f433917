#include <atomic>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <exception>
#include <filesystem>
#include <iostream>
#include <optional>
#include <thread>

#include <CLI11.hpp>

#include "cbamnet/checkpoint.hpp"
#include "cbamnet/config.hpp"
#include "cbamnet/report.hpp"

namespace fs = std::filesystem;
using namespace cbamnet;

namespace {

struct CommonOpts {
  std::string config_path;
  std::optional<int64_t> seed_override;
  std::string out;
  int workers = 1;
};

ExperimentConfig load_with_overrides(const CommonOpts& opts) {
  auto cfg = load_config(opts.config_path);
  if (opts.seed_override) {
    cfg.seed = static_cast<uint64_t>(*opts.seed_override);
    cfg.training.seed = cfg.seed;
    if (cfg.dataset.synthetic)
      cfg.dataset.synthetic_seed = mix_seed(cfg.seed, fnv1a64(std::string("synthetic-data")));
  }
  return cfg;
}

fs::path resolve_out_dir(const ExperimentConfig& cfg, const CommonOpts& opts) {
  fs::path dir;
  if (!opts.out.empty()) {
    dir = opts.out;
  } else {
    const char* root_env = std::getenv("CBAMNET_OUT_ROOT");
    const fs::path root = root_env && *root_env ? fs::path(root_env) : fs::path("runs");
    char stamp[32];
    const std::time_t now = std::time(nullptr);
    std::tm tm_buf{};
    localtime_r(&now, &tm_buf);
    std::strftime(stamp, sizeof(stamp), "%Y%m%d-%H%M%S", &tm_buf);
    dir = root / (to_hex(cfg.digest) + "-" + stamp);
  }
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error("cannot create output directory '" + dir.string() + "'");
  return dir;
}

DatasetManifest build_manifest(const ExperimentConfig& cfg) {
  if (cfg.dataset.synthetic) return synth_generate(*cfg.dataset.synthetic, cfg.dataset.synthetic_seed);
  return load_manifest(cfg.dataset.real->manifest);
}

fs::path image_root_of(const ExperimentConfig& cfg) {
  return cfg.dataset.real ? cfg.dataset.real->image_root : fs::path();
}

template <typename T>
struct PreparedData {
  TrainData<T> train, val, test;
};

template <typename T>
PreparedData<T> prepare_data(const ExperimentConfig& cfg, const DatasetManifest& manifest) {
  const auto splits = patient_split(manifest, cfg.split, mix_seed(cfg.seed, fnv1a64(std::string("split"))));
  const fs::path root = image_root_of(cfg);
  PreparedData<T> data;
  data.train = TrainData<T>::from_manifest(splits.train, root, cfg.model.input_size);
  data.val = TrainData<T>::from_manifest(splits.val, root, cfg.model.input_size);
  data.test = TrainData<T>::from_manifest(splits.test, root, cfg.model.input_size);
  return data;
}

struct CellOutcome {
  double test_mean_auc = 0.0;
  RunHistory history;
};

// One training run end to end: fresh model, full plan, test-split report.
template <typename T>
CellOutcome run_cell(const ExperimentConfig& cfg, const ModelSpec& spec, const TrainingPlan& plan,
                     const PreparedData<T>& data, const fs::path& dir) {
  Model<T> model(spec, mix_seed(cfg.seed, fnv1a64(std::string("model-init"))));
  auto result = run_plan(model, data.train, data.val, plan);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error("cannot create output directory '" + dir.string() + "'");
  save_model(model, dir / "checkpoint.bin");
  write_text_file(dir / "history.jsonl", render_history_jsonl(result.history));
  const auto report = evaluate(score_dataset(model, data.test));
  write_eval_outputs(dir, report, cfg.evaluation);
  return {report.mean_auc, std::move(result.history)};
}

template <typename T>
int cmd_train_impl(const ExperimentConfig& cfg, const fs::path& out_dir) {
  const auto manifest = build_manifest(cfg);
  const auto data = prepare_data<T>(cfg, manifest);
  const auto outcome = run_cell<T>(cfg, cfg.model, cfg.training, data, out_dir);
  std::cout << "test mean AUC " << fmt_double(outcome.test_mean_auc) << "\n";
  std::cout << "outputs in " << out_dir.string() << "\n";
  return 0;
}

std::string placement_tag(const PlacementSet& placement) {
  if (placement.empty()) return "plain";
  std::string tag = "s";
  for (size_t i = 0; i < placement.indices.size(); ++i)
    tag += (i ? "-" : "") + std::to_string(placement.indices[i]);
  return tag;
}

// Runs a list of independent cells over a small worker pool; results are
// ordered by cell index regardless of scheduling.
template <typename Fn>
void run_cells(int workers, int count, Fn&& fn) {
  std::atomic<int> next{0};
  std::vector<std::exception_ptr> errors(static_cast<size_t>(count));
  auto worker = [&]() {
    for (int i = next.fetch_add(1); i < count; i = next.fetch_add(1)) {
      try {
        fn(i);
      } catch (...) {
        errors[static_cast<size_t>(i)] = std::current_exception();
      }
    }
  };
  const int n = std::max(1, std::min(workers, count));
  std::vector<std::thread> pool;
  pool.reserve(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

template <typename T>
int cmd_ablate_placement_impl(const ExperimentConfig& cfg, const fs::path& out_dir, int workers) {
  if (!cfg.ablation || cfg.ablation->placements.empty())
    throw ConfigError("config: ablation.placements: required for ablate-placement");
  const auto manifest = build_manifest(cfg);
  const auto data = prepare_data<T>(cfg, manifest);

  const auto& placements = cfg.ablation->placements;
  std::vector<PlacementSummaryRow> rows(placements.size());
  run_cells(workers, static_cast<int>(placements.size()), [&](int i) {
    ModelSpec spec = cfg.model;
    spec.placement = placements[static_cast<size_t>(i)];
    spec.validate();
    const auto tag = placement_tag(spec.placement);
    const auto outcome = run_cell<T>(cfg, spec, cfg.training, data, out_dir / "cells" / tag);
    rows[static_cast<size_t>(i)] = {family_name(spec.family), spec.placement.str(),
                                    outcome.test_mean_auc};
  });

  std::sort(rows.begin(), rows.end(), [](const auto& a, const auto& b) {
    return a.mean_auc != b.mean_auc ? a.mean_auc > b.mean_auc : a.placement < b.placement;
  });
  write_text_file(out_dir / "placement_summary.csv", render_placement_csv(rows));
  const auto text = render_placement_text(rows);
  write_text_file(out_dir / "placement_summary.txt", text);
  std::cout << text << "outputs in " << out_dir.string() << "\n";
  return 0;
}

FocalParams focal_params_of(const LossPlan& plan) {
  for (const auto& kind : plan.kinds) {
    if (const auto* f = std::get_if<FocalKind>(&kind)) return f->params;
    if (const auto* s = std::get_if<SummedKind>(&kind)) return s->focal;
  }
  return {};
}

template <typename T>
int cmd_ablate_strategy_impl(const ExperimentConfig& cfg, const fs::path& out_dir, int workers) {
  if (!cfg.ablation || cfg.ablation->placements.empty())
    throw ConfigError("config: ablation.placements: required for ablate-strategy");
  if (cfg.ablation->one_stage_epochs.empty() || cfg.ablation->two_stage_epochs.empty())
    throw ConfigError(
        "config: ablation: one_stage_epochs and two_stage_epochs are required for ablate-strategy");

  const auto manifest = build_manifest(cfg);
  const auto data = prepare_data<T>(cfg, manifest);

  const StageSpec base = cfg.training.stages.front();
  const FocalParams focal = focal_params_of(cfg.training.loss);
  const int e1 = cfg.ablation->one_stage_epochs[0];
  const int e2a = cfg.ablation->two_stage_epochs[0];
  const int e2b = cfg.ablation->two_stage_epochs[1];

  auto stage = [&](DataFilter filter, int epochs, double lr) {
    StageSpec s = base;
    s.filter = filter;
    s.epochs = epochs;
    s.optimizer.lr = lr;
    return s;
  };
  auto one_stage = [&](LossKind kind) {
    TrainingPlan plan;
    plan.stages = {stage(DataFilter::All, e1, base.optimizer.lr)};
    plan.loss = LossPlan::single(std::move(kind));
    plan.seed = cfg.seed;
    return plan;
  };
  auto two_stage = [&](LossPlan loss) {
    TrainingPlan plan;
    plan.stages = {stage(DataFilter::AbnormalOnly, e2a, base.optimizer.lr),
                   stage(DataFilter::All, e2b, base.optimizer.lr * 0.1)};
    plan.loss = std::move(loss);
    plan.seed = cfg.seed;
    return plan;
  };
  const std::array<TrainingPlan, 5> plans = {
      one_stage(BceKind{}),
      one_stage(FocalKind{focal}),
      two_stage(LossPlan::single(BceKind{})),
      two_stage(LossPlan::single(FocalKind{focal})),
      two_stage(LossPlan::make_staged({BceKind{}, FocalKind{focal}})),
  };
  const std::array<const char*, 5> tags = {"1s-bce", "1s-focal", "2s-bce", "2s-focal", "2s-bce-focal"};

  const auto& placements = cfg.ablation->placements;
  std::vector<StrategyRow> rows(placements.size());
  const int cell_count = static_cast<int>(placements.size() * plans.size());
  run_cells(workers, cell_count, [&](int cell) {
    const size_t p = static_cast<size_t>(cell) / plans.size();
    const size_t s = static_cast<size_t>(cell) % plans.size();
    ModelSpec spec = cfg.model;
    spec.placement = placements[p];
    spec.validate();
    const auto dir = out_dir / "cells" / (placement_tag(spec.placement) + "_" + tags[s]);
    const auto outcome = run_cell<T>(cfg, spec, plans[s], data, dir);
    rows[p].backbone = family_name(spec.family);
    rows[p].placement = spec.placement.str();
    rows[p].mean_auc[s] = outcome.test_mean_auc;
  });

  write_text_file(out_dir / "strategy_matrix.csv", render_strategy_csv(rows));
  const auto text = render_strategy_text(rows);
  write_text_file(out_dir / "strategy_matrix.txt", text);
  std::cout << text << "outputs in " << out_dir.string() << "\n";
  return 0;
}

template <typename T>
int cmd_report_impl(const ExperimentConfig& cfg, const fs::path& out_dir,
                    const std::string& checkpoint_path) {
  const uint64_t stored = checkpoint_spec_digest(checkpoint_path);
  if (stored != cfg.model.digest())
    throw ConfigError("config: model: spec digest " + to_hex(cfg.model.digest()) +
                      " does not match checkpoint digest " + to_hex(stored));
  Model<T> model = restore_model<T>(cfg.model, checkpoint_path);

  const auto manifest = build_manifest(cfg);
  const auto data = prepare_data<T>(cfg, manifest);
  const auto report = evaluate(score_dataset(model, data.test));
  write_eval_outputs(out_dir, report, cfg.evaluation);

  if (cfg.evaluation.attention_maps && !cfg.model.placement.empty() && data.test.size() > 0) {
    // one sampled batch through the extractor, maps dumped per stage
    const int64_t count = std::min<int64_t>(8, data.test.size());
    const Shape& is = data.test.image_shape;
    std::vector<T> buf;
    for (int64_t i = 0; i < count; ++i) {
      const auto& img = data.test.images[static_cast<size_t>(i)];
      buf.insert(buf.end(), img.begin(), img.end());
    }
    auto batch = Tensor<T>::from_data({count, is[0], is[1], is[2]}, std::move(buf));
    AttentionTap<T> tap;
    model.set_training(false);
    (void)model.forward_extract(batch, &tap);
    write_attention_dump(out_dir, tap);
  }
  std::cout << "test mean AUC " << fmt_double(report.mean_auc) << "\n";
  std::cout << "outputs in " << out_dir.string() << "\n";
  return 0;
}

int cmd_synth_data(const ExperimentConfig& cfg, const fs::path& out_dir) {
  if (!cfg.dataset.synthetic)
    throw ConfigError("config: dataset.synthetic: required for synth-data");
  const auto manifest = synth_generate(*cfg.dataset.synthetic, cfg.dataset.synthetic_seed);
  export_dataset(manifest, out_dir);
  std::cout << "wrote " << manifest.samples.size() << " samples to " << out_dir.string() << "\n";
  return 0;
}

template <typename Fn32, typename Fn64>
int dispatch_precision(Precision p, Fn32&& f32, Fn64&& f64) {
  return p == Precision::F64 ? f64() : f32();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"CBAM-enhanced CNN backbones: training, ablation, and evaluation"};
  app.require_subcommand(1);

  CommonOpts opts;
  std::string checkpoint_path;
  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--config", opts.config_path, "experiment config (JSON)")->required();
    cmd->add_option("--seed", opts.seed_override, "override the config seed");
    cmd->add_option("--out", opts.out, "output directory (default: $CBAMNET_OUT_ROOT/<digest>-<time>)");
    cmd->add_option("--workers", opts.workers, "concurrent ablation cells")->check(CLI::Range(1, 64));
  };

  auto* train = app.add_subcommand("train", "train one model per the config and evaluate it");
  add_common(train);
  auto* ablate_placement =
      app.add_subcommand("ablate-placement", "train one model per placement set and summarize");
  add_common(ablate_placement);
  auto* ablate_strategy = app.add_subcommand(
      "ablate-strategy", "run the 1S/2S x BCE/Focal/BCE+Focal grid per placement and summarize");
  add_common(ablate_strategy);
  auto* report_cmd = app.add_subcommand("report", "evaluate a checkpoint and emit reports");
  add_common(report_cmd);
  report_cmd->add_option("--checkpoint", checkpoint_path, "checkpoint to evaluate")->required();
  auto* synth = app.add_subcommand("synth-data", "materialize a synthetic dataset (CSV + images)");
  add_common(synth);

  CLI11_PARSE(app, argc, argv);

  try {
    const auto cfg = load_with_overrides(opts);
    const auto out_dir = resolve_out_dir(cfg, opts);
    if (train->parsed())
      return dispatch_precision(
          cfg.precision, [&] { return cmd_train_impl<float>(cfg, out_dir); },
          [&] { return cmd_train_impl<double>(cfg, out_dir); });
    if (ablate_placement->parsed())
      return dispatch_precision(
          cfg.precision, [&] { return cmd_ablate_placement_impl<float>(cfg, out_dir, opts.workers); },
          [&] { return cmd_ablate_placement_impl<double>(cfg, out_dir, opts.workers); });
    if (ablate_strategy->parsed())
      return dispatch_precision(
          cfg.precision, [&] { return cmd_ablate_strategy_impl<float>(cfg, out_dir, opts.workers); },
          [&] { return cmd_ablate_strategy_impl<double>(cfg, out_dir, opts.workers); });
    if (report_cmd->parsed())
      return dispatch_precision(
          cfg.precision, [&] { return cmd_report_impl<float>(cfg, out_dir, checkpoint_path); },
          [&] { return cmd_report_impl<double>(cfg, out_dir, checkpoint_path); });
    if (synth->parsed()) return cmd_synth_data(cfg, out_dir);
    std::cerr << "no subcommand selected\n";
    return 2;
  } catch (const ConfigError& e) {
    std::cerr << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
