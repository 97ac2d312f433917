#include "cbamnet/config.hpp"

#include <fstream>
#include <set>

#include <json.hpp>

namespace cbamnet {

namespace {

using nlohmann::json;

[[noreturn]] void fail(const std::string& path, const std::string& what) {
  throw ConfigError("config: " + path + ": " + what);
}

void check_keys(const json& obj, const std::string& path, const std::set<std::string>& allowed) {
  if (!obj.is_object()) fail(path, "expected an object");
  for (const auto& item : obj.items()) {
    if (!allowed.count(item.key())) fail(path, "unknown key '" + item.key() + "'");
  }
}

const json& require(const json& obj, const std::string& path, const std::string& key) {
  if (!obj.contains(key)) fail(path, "missing required key '" + key + "'");
  return obj.at(key);
}

double get_number(const json& v, const std::string& path) {
  if (!v.is_number()) fail(path, "expected a number");
  return v.get<double>();
}

int get_int(const json& v, const std::string& path) {
  if (!v.is_number_integer()) fail(path, "expected an integer");
  return v.get<int>();
}

std::string get_string(const json& v, const std::string& path) {
  if (!v.is_string()) fail(path, "expected a string");
  return v.get<std::string>();
}

bool get_bool(const json& v, const std::string& path) {
  if (!v.is_boolean()) fail(path, "expected a boolean");
  return v.get<bool>();
}

FocalParams parse_focal_params(const json& v, const std::string& path) {
  check_keys(v, path, {"alpha", "gamma"});
  FocalParams p;
  if (v.contains("alpha")) p.alpha = get_number(v.at("alpha"), path + ".alpha");
  if (v.contains("gamma")) p.gamma = get_number(v.at("gamma"), path + ".gamma");
  try {
    p.validate();
  } catch (const ConfigError& e) {
    fail(path, e.what());
  }
  return p;
}

LossKind parse_loss_kind(const json& v, const std::string& path) {
  if (v.is_string()) {
    const auto name = v.get<std::string>();
    if (name == "bce") return BceKind{};
    if (name == "focal") return FocalKind{};
    fail(path, "unknown loss '" + name + "' (expected bce, focal, or an object)");
  }
  if (v.is_object()) {
    check_keys(v, path, {"focal", "summed"});
    if (v.contains("focal") == v.contains("summed"))
      fail(path, "expected exactly one of 'focal' or 'summed'");
    if (v.contains("focal")) return FocalKind{parse_focal_params(v.at("focal"), path + ".focal")};
    const auto& s = v.at("summed");
    check_keys(s, path + ".summed", {"bce_weight", "alpha", "gamma"});
    SummedKind kind;
    if (s.contains("bce_weight"))
      kind.bce_weight = get_number(s.at("bce_weight"), path + ".summed.bce_weight");
    if (s.contains("alpha")) kind.focal.alpha = get_number(s.at("alpha"), path + ".summed.alpha");
    if (s.contains("gamma")) kind.focal.gamma = get_number(s.at("gamma"), path + ".summed.gamma");
    return kind;
  }
  fail(path, "expected a loss name or object");
}

LossPlan parse_loss_plan(const json& v, const std::string& path) {
  if (v.is_array()) {
    std::vector<LossKind> kinds;
    for (size_t i = 0; i < v.size(); ++i)
      kinds.push_back(parse_loss_kind(v.at(i), path + "[" + std::to_string(i) + "]"));
    try {
      return LossPlan::make_staged(std::move(kinds));
    } catch (const ConfigError& e) {
      fail(path, e.what());
    }
  }
  return LossPlan::single(parse_loss_kind(v, path));
}

OptimizerSettings parse_optimizer(const json& v, const std::string& path) {
  check_keys(v, path, {"kind", "lr", "momentum", "weight_decay", "beta1", "beta2", "eps"});
  OptimizerSettings s;
  if (v.contains("kind")) {
    const auto kind = get_string(v.at("kind"), path + ".kind");
    if (kind == "sgd")
      s.kind = OptimizerSettings::Kind::Sgd;
    else if (kind == "adam")
      s.kind = OptimizerSettings::Kind::Adam;
    else
      fail(path + ".kind", "expected sgd or adam, got '" + kind + "'");
  }
  s.lr = get_number(require(v, path, "lr"), path + ".lr");
  if (v.contains("momentum")) s.momentum = get_number(v.at("momentum"), path + ".momentum");
  if (v.contains("weight_decay"))
    s.weight_decay = get_number(v.at("weight_decay"), path + ".weight_decay");
  if (v.contains("beta1")) s.beta1 = get_number(v.at("beta1"), path + ".beta1");
  if (v.contains("beta2")) s.beta2 = get_number(v.at("beta2"), path + ".beta2");
  if (v.contains("eps")) s.eps = get_number(v.at("eps"), path + ".eps");
  try {
    s.validate();
  } catch (const ConfigError& e) {
    fail(path, e.what());
  }
  return s;
}

DataFilter parse_filter(const json& v, const std::string& path) {
  const auto name = get_string(v, path);
  if (name == "all") return DataFilter::All;
  if (name == "abnormal_only") return DataFilter::AbnormalOnly;
  fail(path, "expected all or abnormal_only, got '" + name + "'");
}

StageSpec parse_stage(const json& v, const std::string& path) {
  check_keys(v, path, {"filter", "epochs", "batch_size", "optimizer", "flip_prob"});
  StageSpec stage;
  if (v.contains("filter")) stage.filter = parse_filter(v.at("filter"), path + ".filter");
  stage.epochs = get_int(require(v, path, "epochs"), path + ".epochs");
  if (v.contains("batch_size")) stage.batch_size = get_int(v.at("batch_size"), path + ".batch_size");
  stage.optimizer = parse_optimizer(require(v, path, "optimizer"), path + ".optimizer");
  if (v.contains("flip_prob")) stage.flip_prob = get_number(v.at("flip_prob"), path + ".flip_prob");
  try {
    stage.validate();
  } catch (const ConfigError& e) {
    fail(path, e.what());
  }
  return stage;
}

// Two ways to describe training: an explicit stage list, or a preset
// ("one-stage" / "two-stage") expanded here. Two-stage means abnormal-only
// first, full dataset second, with the fine-tuning stage at 0.1x the
// learning rate unless stage2_lr overrides it.
TrainingPlan parse_training(const json& v, const std::string& path) {
  TrainingPlan plan;
  if (v.contains("stages")) {
    check_keys(v, path, {"stages", "loss"});
    const auto& stages = v.at("stages");
    if (!stages.is_array() || stages.empty()) fail(path + ".stages", "expected a non-empty array");
    for (size_t i = 0; i < stages.size(); ++i)
      plan.stages.push_back(parse_stage(stages.at(i), path + ".stages[" + std::to_string(i) + "]"));
    plan.loss = parse_loss_plan(require(v, path, "loss"), path + ".loss");
  } else {
    check_keys(v, path,
               {"preset", "epochs", "loss", "optimizer", "batch_size", "flip_prob", "stage2_lr"});
    const auto preset_name = get_string(require(v, path, "preset"), path + ".preset");
    const auto& epochs = require(v, path, "epochs");
    if (!epochs.is_array()) fail(path + ".epochs", "expected an array (one entry per stage)");
    OptimizerSettings opt = parse_optimizer(require(v, path, "optimizer"), path + ".optimizer");
    int batch_size = 32;
    if (v.contains("batch_size")) batch_size = get_int(v.at("batch_size"), path + ".batch_size");
    double flip_prob = 0.0;
    if (v.contains("flip_prob")) flip_prob = get_number(v.at("flip_prob"), path + ".flip_prob");

    auto stage_at = [&](size_t i, DataFilter filter, const OptimizerSettings& o) {
      StageSpec s;
      s.filter = filter;
      s.epochs = get_int(epochs.at(i), path + ".epochs[" + std::to_string(i) + "]");
      s.batch_size = batch_size;
      s.optimizer = o;
      s.flip_prob = flip_prob;
      return s;
    };
    if (preset_name == "one-stage") {
      if (epochs.size() != 1) fail(path + ".epochs", "one-stage preset expects exactly 1 entry");
      if (v.contains("stage2_lr")) fail(path + ".stage2_lr", "not applicable to the one-stage preset");
      plan.stages.push_back(stage_at(0, DataFilter::All, opt));
    } else if (preset_name == "two-stage") {
      if (epochs.size() != 2) fail(path + ".epochs", "two-stage preset expects exactly 2 entries");
      OptimizerSettings fine = opt;
      fine.lr = v.contains("stage2_lr") ? get_number(v.at("stage2_lr"), path + ".stage2_lr")
                                        : opt.lr * 0.1;
      plan.stages.push_back(stage_at(0, DataFilter::AbnormalOnly, opt));
      plan.stages.push_back(stage_at(1, DataFilter::All, fine));
    } else {
      fail(path + ".preset", "expected one-stage or two-stage, got '" + preset_name + "'");
    }
    plan.loss = parse_loss_plan(require(v, path, "loss"), path + ".loss");
  }
  try {
    plan.validate();
  } catch (const ConfigError& e) {
    fail(path, e.what());
  }
  return plan;
}

SyntheticSpec parse_synthetic(const json& v, const std::string& path, uint64_t* seed_out) {
  check_keys(v, path,
             {"num_labels", "image_size", "num_samples", "prevalences", "cooccurrence",
              "noise_amplitude", "seed"});
  SyntheticSpec spec;
  if (v.contains("num_labels")) spec.num_labels = get_int(v.at("num_labels"), path + ".num_labels");
  if (v.contains("image_size")) spec.image_size = get_int(v.at("image_size"), path + ".image_size");
  spec.num_samples = get_int(require(v, path, "num_samples"), path + ".num_samples");
  if (v.contains("prevalences")) {
    const auto& arr = v.at("prevalences");
    if (!arr.is_array()) fail(path + ".prevalences", "expected an array");
    spec.prevalences.clear();
    for (size_t i = 0; i < arr.size(); ++i)
      spec.prevalences.push_back(get_number(arr.at(i), path + ".prevalences[" + std::to_string(i) + "]"));
  } else if (spec.num_labels != 6) {
    fail(path + ".prevalences", "required when num_labels != 6 (the default list has 6 entries)");
  }
  if (v.contains("cooccurrence")) {
    const auto& arr = v.at("cooccurrence");
    if (!arr.is_array()) fail(path + ".cooccurrence", "expected an array");
    for (size_t i = 0; i < arr.size(); ++i) {
      const auto p = path + ".cooccurrence[" + std::to_string(i) + "]";
      check_keys(arr.at(i), p, {"if_class", "then_class", "boost"});
      CooccurrenceBoost b;
      b.if_class = get_int(require(arr.at(i), p, "if_class"), p + ".if_class");
      b.then_class = get_int(require(arr.at(i), p, "then_class"), p + ".then_class");
      b.boost = get_number(require(arr.at(i), p, "boost"), p + ".boost");
      spec.boosts.push_back(b);
    }
  }
  if (v.contains("noise_amplitude"))
    spec.noise_amplitude = get_number(v.at("noise_amplitude"), path + ".noise_amplitude");
  if (v.contains("seed")) *seed_out = static_cast<uint64_t>(get_int(v.at("seed"), path + ".seed"));
  try {
    spec.validate();
  } catch (const ConfigError& e) {
    fail(path, e.what());
  }
  return spec;
}

ModelSpec parse_model(const json& v, const std::string& path, std::string* preset_name,
                      int dataset_labels, int dataset_image_size) {
  check_keys(v, path,
             {"preset", "family", "placement", "reduction", "spatial_kernel", "input_size",
              "num_labels", "input_channels", "dense", "vgg"});
  ModelSpec spec;
  if (v.contains("preset")) {
    *preset_name = get_string(v.at("preset"), path + ".preset");
    if (v.contains("family") || v.contains("dense") || v.contains("vgg"))
      fail(path, "preset and explicit family sections are mutually exclusive");
    try {
      spec = preset(*preset_name);
    } catch (const ConfigError& e) {
      fail(path + ".preset", e.what());
    }
  } else {
    spec.family = family_from_name(get_string(require(v, path, "family"), path + ".family"));
    if (spec.family == Family::Dense && v.contains("dense")) {
      const auto& d = v.at("dense");
      check_keys(d, path + ".dense",
                 {"stem_channels", "num_blocks", "layers_per_block", "growth", "compression"});
      if (d.contains("stem_channels"))
        spec.dense.stem_channels = get_int(d.at("stem_channels"), path + ".dense.stem_channels");
      if (d.contains("num_blocks"))
        spec.dense.num_blocks = get_int(d.at("num_blocks"), path + ".dense.num_blocks");
      if (d.contains("layers_per_block"))
        spec.dense.layers_per_block = get_int(d.at("layers_per_block"), path + ".dense.layers_per_block");
      if (d.contains("growth")) spec.dense.growth = get_int(d.at("growth"), path + ".dense.growth");
      if (d.contains("compression"))
        spec.dense.compression = get_number(d.at("compression"), path + ".dense.compression");
    } else if (spec.family == Family::Vgg && v.contains("vgg")) {
      const auto& g = v.at("vgg");
      check_keys(g, path + ".vgg", {"convs_per_block", "channels"});
      auto ints = [&](const char* key) {
        std::vector<int> out;
        const auto& arr = require(g, path + ".vgg", key);
        if (!arr.is_array()) fail(path + ".vgg." + key, "expected an array");
        for (size_t i = 0; i < arr.size(); ++i)
          out.push_back(get_int(arr.at(i), path + ".vgg." + key + "[" + std::to_string(i) + "]"));
        return out;
      };
      spec.vgg.convs_per_block = ints("convs_per_block");
      spec.vgg.channels = ints("channels");
    } else if (v.contains("dense") || v.contains("vgg")) {
      fail(path, "family section does not match the declared family");
    }
  }
  if (v.contains("placement")) {
    const auto& arr = v.at("placement");
    if (!arr.is_array()) fail(path + ".placement", "expected an array of block indices");
    std::vector<int> idx;
    for (size_t i = 0; i < arr.size(); ++i)
      idx.push_back(get_int(arr.at(i), path + ".placement[" + std::to_string(i) + "]"));
    spec.placement = PlacementSet::of(std::move(idx));
  }
  if (v.contains("reduction")) spec.reduction = get_int(v.at("reduction"), path + ".reduction");
  if (v.contains("spatial_kernel"))
    spec.spatial_kernel = get_int(v.at("spatial_kernel"), path + ".spatial_kernel");
  if (v.contains("input_channels"))
    spec.input_channels = get_int(v.at("input_channels"), path + ".input_channels");
  spec.input_size = v.contains("input_size") ? get_int(v.at("input_size"), path + ".input_size")
                                             : dataset_image_size;
  if (v.contains("num_labels")) {
    spec.num_labels = get_int(v.at("num_labels"), path + ".num_labels");
    if (dataset_labels > 0 && spec.num_labels != dataset_labels)
      fail(path + ".num_labels", "model declares " + std::to_string(spec.num_labels) +
                                     " labels but the dataset provides " +
                                     std::to_string(dataset_labels));
  } else if (dataset_labels > 0) {
    spec.num_labels = dataset_labels;
  }
  try {
    spec.placement.validate(spec.num_blocks());
  } catch (const ConfigError& e) {
    fail(path + ".placement", e.what());
  }
  try {
    spec.validate();
  } catch (const ConfigError& e) {
    fail(path, e.what());
  }
  return spec;
}

}  // namespace

ExperimentConfig parse_config_text(const std::string& text) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: not valid JSON: ") + e.what());
  }
  check_keys(root, "<root>",
             {"schema_version", "seed", "precision", "dataset", "split", "model", "training",
              "evaluation", "ablation"});

  ExperimentConfig cfg;
  cfg.schema_version = get_int(require(root, "<root>", "schema_version"), "schema_version");
  if (cfg.schema_version != kConfigSchemaVersion)
    fail("schema_version", "unsupported version " + std::to_string(cfg.schema_version) +
                               " (this build reads version " + std::to_string(kConfigSchemaVersion) + ")");
  cfg.seed = static_cast<uint64_t>(get_int(require(root, "<root>", "seed"), "seed"));
  if (root.contains("precision")) {
    const auto p = get_string(root.at("precision"), "precision");
    if (p == "f32")
      cfg.precision = Precision::F32;
    else if (p == "f64")
      cfg.precision = Precision::F64;
    else
      fail("precision", "expected f32 or f64, got '" + p + "'");
  }

  const auto& dataset = require(root, "<root>", "dataset");
  check_keys(dataset, "dataset", {"synthetic", "real"});
  if (dataset.contains("synthetic") == dataset.contains("real"))
    fail("dataset", "exactly one of 'synthetic' or 'real' must be present");
  int dataset_labels = 0;
  int dataset_image_size = 32;
  if (dataset.contains("synthetic")) {
    cfg.dataset.synthetic_seed = mix_seed(cfg.seed, fnv1a64(std::string("synthetic-data")));
    cfg.dataset.synthetic =
        parse_synthetic(dataset.at("synthetic"), "dataset.synthetic", &cfg.dataset.synthetic_seed);
    dataset_labels = cfg.dataset.synthetic->num_labels;
    dataset_image_size = cfg.dataset.synthetic->image_size;
  } else {
    const auto& real = dataset.at("real");
    check_keys(real, "dataset.real", {"manifest", "image_root"});
    RealDatasetConfig rc;
    rc.manifest = get_string(require(real, "dataset.real", "manifest"), "dataset.real.manifest");
    rc.image_root = get_string(require(real, "dataset.real", "image_root"), "dataset.real.image_root");
    if (!std::filesystem::exists(rc.manifest))
      fail("dataset.real.manifest", "path does not exist: " + rc.manifest.string());
    if (!std::filesystem::exists(rc.image_root))
      fail("dataset.real.image_root", "path does not exist: " + rc.image_root.string());
    cfg.dataset.real = std::move(rc);
    dataset_labels = static_cast<int>(kPathologyNames.size());
  }

  if (root.contains("split")) {
    const auto& split = root.at("split");
    check_keys(split, "split", {"train", "val", "test"});
    cfg.split.train = get_number(require(split, "split", "train"), "split.train");
    cfg.split.val = get_number(require(split, "split", "val"), "split.val");
    cfg.split.test = get_number(require(split, "split", "test"), "split.test");
    try {
      cfg.split.validate();
    } catch (const ConfigError& e) {
      fail("split", e.what());
    }
  }

  cfg.model = parse_model(require(root, "<root>", "model"), "model", &cfg.model_preset, dataset_labels,
                          dataset_image_size);
  cfg.training = parse_training(require(root, "<root>", "training"), "training");
  cfg.training.seed = cfg.seed;

  if (root.contains("evaluation")) {
    const auto& ev = root.at("evaluation");
    check_keys(ev, "evaluation", {"formats", "attention_maps"});
    if (ev.contains("formats")) {
      const auto& arr = ev.at("formats");
      if (!arr.is_array()) fail("evaluation.formats", "expected an array");
      cfg.evaluation.csv = false;
      cfg.evaluation.svg = false;
      for (size_t i = 0; i < arr.size(); ++i) {
        const auto f = get_string(arr.at(i), "evaluation.formats[" + std::to_string(i) + "]");
        if (f == "csv")
          cfg.evaluation.csv = true;
        else if (f == "svg")
          cfg.evaluation.svg = true;
        else
          fail("evaluation.formats", "unknown format '" + f + "' (expected csv or svg)");
      }
    }
    if (ev.contains("attention_maps"))
      cfg.evaluation.attention_maps = get_bool(ev.at("attention_maps"), "evaluation.attention_maps");
  }

  if (root.contains("ablation")) {
    const auto& ab = root.at("ablation");
    check_keys(ab, "ablation", {"placements", "one_stage_epochs", "two_stage_epochs"});
    AblationConfig ac;
    const auto& placements = require(ab, "ablation", "placements");
    if (!placements.is_array() || placements.empty())
      fail("ablation.placements", "expected a non-empty array of placement sets");
    for (size_t i = 0; i < placements.size(); ++i) {
      const auto p = "ablation.placements[" + std::to_string(i) + "]";
      const auto& entry = placements.at(i);
      if (!entry.is_array()) fail(p, "expected an array of block indices");
      std::vector<int> idx;
      for (size_t j = 0; j < entry.size(); ++j)
        idx.push_back(get_int(entry.at(j), p + "[" + std::to_string(j) + "]"));
      auto set = PlacementSet::of(std::move(idx));
      try {
        set.validate(cfg.model.num_blocks());
      } catch (const ConfigError& e) {
        fail(p, e.what());
      }
      // attention channel divisibility etc. must hold for every cell
      ModelSpec probe = cfg.model;
      probe.placement = set;
      try {
        probe.validate();
      } catch (const ConfigError& e) {
        fail(p, e.what());
      }
      ac.placements.push_back(std::move(set));
    }
    auto epochs_list = [&](const char* key, size_t expected) {
      std::vector<int> out;
      if (!ab.contains(key)) return out;
      const auto& arr = ab.at(key);
      const std::string p = std::string("ablation.") + key;
      if (!arr.is_array() || arr.size() != expected)
        fail(p, "expected an array with " + std::to_string(expected) + " entries");
      for (size_t i = 0; i < arr.size(); ++i) {
        out.push_back(get_int(arr.at(i), p + "[" + std::to_string(i) + "]"));
        if (out.back() < 1) fail(p, "epoch budgets must be >= 1");
      }
      return out;
    };
    ac.one_stage_epochs = epochs_list("one_stage_epochs", 1);
    ac.two_stage_epochs = epochs_list("two_stage_epochs", 2);
    cfg.ablation = std::move(ac);
  }

  cfg.digest = fnv1a64(root.dump());
  return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open '" + path.string() + "'");
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse_config_text(text);
}

}  // namespace cbamnet
