#include "cbamnet/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

namespace cbamnet {

namespace fs = std::filesystem;

// --- image io ----------------------------------------------------------------

ImageF32 read_image(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("unreadable image locator '" + path.string() + "'");
  const std::string ext = path.extension().string();
  ImageF32 img;
  if (ext == ".cxim") {
    char magic[4];
    in.read(magic, 4);
    uint32_t dims[3];
    in.read(reinterpret_cast<char*>(dims), sizeof(dims));
    if (!in || std::string(magic, 4) != "CXIM")
      throw DataError("'" + path.string() + "' is not a cxim image");
    img.channels = static_cast<int>(dims[0]);
    img.height = static_cast<int>(dims[1]);
    img.width = static_cast<int>(dims[2]);
    img.pixels.resize(static_cast<size_t>(dims[0]) * dims[1] * dims[2]);
    in.read(reinterpret_cast<char*>(img.pixels.data()),
            static_cast<std::streamsize>(img.pixels.size() * sizeof(float)));
    if (!in) throw DataError("truncated cxim payload in '" + path.string() + "'");
    return img;
  }
  if (ext == ".pgm") {
    std::string tag;
    int w = 0, h = 0, maxval = 0;
    in >> tag >> w >> h >> maxval;
    if (!in || tag != "P5" || w <= 0 || h <= 0 || maxval <= 0 || maxval > 65535)
      throw DataError("'" + path.string() + "' is not a supported P5 pgm");
    in.get();  // single whitespace after maxval
    img.channels = 1;
    img.height = h;
    img.width = w;
    img.pixels.resize(static_cast<size_t>(w) * h);
    if (maxval < 256) {
      std::vector<unsigned char> raw(img.pixels.size());
      in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
      if (!in) throw DataError("truncated pgm payload in '" + path.string() + "'");
      for (size_t i = 0; i < raw.size(); ++i)
        img.pixels[i] = static_cast<float>(raw[i]) / static_cast<float>(maxval);
    } else {
      std::vector<unsigned char> raw(img.pixels.size() * 2);
      in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
      if (!in) throw DataError("truncated pgm payload in '" + path.string() + "'");
      for (size_t i = 0; i < img.pixels.size(); ++i) {
        const unsigned v = (static_cast<unsigned>(raw[2 * i]) << 8) | raw[2 * i + 1];
        img.pixels[i] = static_cast<float>(v) / static_cast<float>(maxval);
      }
    }
    return img;
  }
  throw DataError("unsupported image format '" + ext + "' for '" + path.string() +
                  "' (supported: .cxim, .pgm)");
}

void write_cxim(const fs::path& path, const ImageF32& img) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write image '" + path.string() + "'");
  out.write("CXIM", 4);
  const uint32_t dims[3] = {static_cast<uint32_t>(img.channels), static_cast<uint32_t>(img.height),
                            static_cast<uint32_t>(img.width)};
  out.write(reinterpret_cast<const char*>(dims), sizeof(dims));
  out.write(reinterpret_cast<const char*>(img.pixels.data()),
            static_cast<std::streamsize>(img.pixels.size() * sizeof(float)));
  if (!out) throw DataError("write failed for image '" + path.string() + "'");
}

bool Sample::abnormal() const {
  for (uint8_t y : labels)
    if (y) return true;
  return false;
}

// --- manifest ----------------------------------------------------------------

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      fields.push_back(cur);
      cur.clear();
    } else if (ch != '\r') {
      cur += ch;
    }
  }
  fields.push_back(cur);
  return fields;
}

}  // namespace

DatasetManifest load_manifest(const fs::path& csv_path, std::vector<std::string> class_names) {
  std::ifstream in(csv_path);
  if (!in) throw DataError("cannot open manifest '" + csv_path.string() + "'");

  DatasetManifest manifest;
  if (class_names.empty())
    manifest.class_names.assign(kPathologyNames.begin(), kPathologyNames.end());
  else
    manifest.class_names = std::move(class_names);

  std::map<std::string, size_t> label_index;
  for (size_t i = 0; i < manifest.class_names.size(); ++i)
    label_index[manifest.class_names[i]] = i;
  // The published ChestXray14 manifests spell this pathology with an
  // underscore in the Finding Labels column.
  if (label_index.count("Pleural Thickening"))
    label_index["Pleural_Thickening"] = label_index["Pleural Thickening"];

  std::string line;
  if (!std::getline(in, line)) throw DataError("manifest '" + csv_path.string() + "' is empty");
  const auto header = split_csv_line(line);
  auto column = [&](const std::string& name) {
    for (size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return i;
    throw DataError("manifest '" + csv_path.string() + "' is missing required column \"" + name + "\"");
  };
  const size_t col_index = column("Image Index");
  const size_t col_labels = column("Finding Labels");
  const size_t col_patient = column("Patient ID");
  const size_t needed = std::max({col_index, col_labels, col_patient}) + 1;

  std::map<std::string, int> seen_ids;
  int row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty() || line == "\r") continue;
    const auto fields = split_csv_line(line);
    if (fields.size() < needed)
      throw DataError("manifest row " + std::to_string(row) + ": expected at least " +
                      std::to_string(needed) + " columns, got " + std::to_string(fields.size()));
    Sample sample;
    sample.id = fields[col_index];
    sample.patient_id = fields[col_patient];
    if (auto [it, inserted] = seen_ids.emplace(sample.id, row); !inserted)
      throw DataError("manifest row " + std::to_string(row) + ": duplicate image index '" + sample.id +
                      "' (first seen at row " + std::to_string(it->second) + ")");
    sample.labels.assign(manifest.class_names.size(), 0);
    const std::string& tokens = fields[col_labels];
    if (tokens != "No Finding") {
      std::stringstream ss(tokens);
      std::string token;
      while (std::getline(ss, token, '|')) {
        auto it = label_index.find(token);
        if (it == label_index.end())
          throw DataError("manifest row " + std::to_string(row) + ": unknown pathology token '" +
                          token + "'");
        sample.labels[it->second] = 1;
      }
    }
    manifest.samples.push_back(std::move(sample));
  }
  return manifest;
}

// --- split -------------------------------------------------------------------

void SplitFractions::validate() const {
  if (!(train > 0.0 && val > 0.0 && test > 0.0))
    throw ConfigError("split fractions must all be positive");
  if (std::abs(train + val + test - 1.0) > 1e-9)
    throw ConfigError("split fractions must sum to 1, got " + std::to_string(train + val + test));
}

SplitManifests patient_split(const DatasetManifest& manifest, const SplitFractions& fractions,
                             uint64_t seed) {
  fractions.validate();

  // Patients in order of first appearance, then seeded shuffle.
  std::vector<std::string> patients;
  std::map<std::string, std::vector<size_t>> by_patient;
  for (size_t i = 0; i < manifest.samples.size(); ++i) {
    const auto& pid = manifest.samples[i].patient_id;
    auto [it, inserted] = by_patient.try_emplace(pid);
    if (inserted) patients.push_back(pid);
    it->second.push_back(i);
  }
  if (patients.size() < 3)
    throw DataError("patient_split: need at least 3 patients, got " + std::to_string(patients.size()));

  Rng rng(seed);
  rng.shuffle(patients.begin(), patients.end());

  const double total = static_cast<double>(manifest.samples.size());
  const double targets[3] = {fractions.train * total, fractions.val * total, fractions.test * total};
  double counts[3] = {0, 0, 0};
  std::array<std::vector<size_t>, 3> members;
  for (const auto& pid : patients) {
    int best = 0;
    for (int s = 1; s < 3; ++s)
      if (targets[s] - counts[s] > targets[best] - counts[best]) best = s;
    const auto& idx = by_patient[pid];
    counts[best] += static_cast<double>(idx.size());
    members[static_cast<size_t>(best)].insert(members[static_cast<size_t>(best)].end(), idx.begin(),
                                              idx.end());
  }

  SplitManifests out;
  DatasetManifest* dest[3] = {&out.train, &out.val, &out.test};
  for (int s = 0; s < 3; ++s) {
    auto& m = *dest[s];
    m.class_names = manifest.class_names;
    m.provenance = manifest.provenance;
    m.seed = manifest.seed;
    auto& idx = members[static_cast<size_t>(s)];
    std::sort(idx.begin(), idx.end());  // keep original manifest order within each split
    for (size_t i : idx) m.samples.push_back(manifest.samples[i]);
  }
  return out;
}

// --- preprocessing -----------------------------------------------------------

namespace {

// Half-pixel-center bilinear sampling with edge clamping.
void bilinear_resize(const float* src, int sh, int sw, double* dst, int th, int tw) {
  const double sy = static_cast<double>(sh) / th;
  const double sx = static_cast<double>(sw) / tw;
  for (int y = 0; y < th; ++y) {
    double fy = (y + 0.5) * sy - 0.5;
    fy = std::clamp(fy, 0.0, static_cast<double>(sh - 1));
    const int y0 = static_cast<int>(fy);
    const int y1 = std::min(y0 + 1, sh - 1);
    const double wy = fy - y0;
    for (int x = 0; x < tw; ++x) {
      double fx = (x + 0.5) * sx - 0.5;
      fx = std::clamp(fx, 0.0, static_cast<double>(sw - 1));
      const int x0 = static_cast<int>(fx);
      const int x1 = std::min(x0 + 1, sw - 1);
      const double wx = fx - x0;
      const double top = src[y0 * sw + x0] * (1.0 - wx) + src[y0 * sw + x1] * wx;
      const double bot = src[y1 * sw + x0] * (1.0 - wx) + src[y1 * sw + x1] * wx;
      dst[y * tw + x] = top * (1.0 - wy) + bot * wy;
    }
  }
}

}  // namespace

template <typename T>
Tensor<T> preprocess(const Sample& sample, const fs::path& image_root, int target_size,
                     double flip_prob, Rng* aug_rng) {
  if (target_size < 8) throw ConfigError("preprocess: target_size must be >= 8");
  std::shared_ptr<const ImageF32> image = sample.image;
  if (!image) image = std::make_shared<const ImageF32>(read_image(image_root / sample.id));

  const int c = image->channels, th = target_size, tw = target_size;
  std::vector<double> resized(static_cast<size_t>(c) * th * tw);
  for (int ch = 0; ch < c; ++ch)
    bilinear_resize(image->pixels.data() + static_cast<size_t>(ch) * image->height * image->width,
                    image->height, image->width, resized.data() + static_cast<size_t>(ch) * th * tw, th,
                    tw);

  // Per-image standardization; constant images map to zeros.
  double mean = 0.0;
  for (double v : resized) mean += v;
  mean /= static_cast<double>(resized.size());
  double var = 0.0;
  for (double v : resized) var += (v - mean) * (v - mean);
  var /= static_cast<double>(resized.size());
  std::vector<T> out(resized.size(), T(0));
  if (var > 1e-12) {
    const double inv = 1.0 / std::sqrt(var);
    for (size_t i = 0; i < resized.size(); ++i) out[i] = static_cast<T>((resized[i] - mean) * inv);
  }

  if (flip_prob > 0.0 && aug_rng && aug_rng->uniform() < flip_prob) {
    for (int ch = 0; ch < c; ++ch)
      for (int y = 0; y < th; ++y) {
        T* row = out.data() + (static_cast<size_t>(ch) * th + y) * tw;
        std::reverse(row, row + tw);
      }
  }
  return Tensor<T>::from_data({c, th, tw}, std::move(out));
}

// --- synthetic generator -------------------------------------------------------

void SyntheticSpec::validate() const {
  if (num_labels < 1 || num_labels > static_cast<int>(kMotifNames.size()))
    throw ConfigError("synthetic: num_labels must be in [1," +
                      std::to_string(kMotifNames.size()) + "] (one distinct motif per class)");
  if (image_size < 16) throw ConfigError("synthetic: image_size must be >= 16");
  if (num_samples < 1) throw ConfigError("synthetic: num_samples must be >= 1");
  if (static_cast<int>(prevalences.size()) != num_labels)
    throw ConfigError("synthetic: prevalences length " + std::to_string(prevalences.size()) +
                      " != num_labels " + std::to_string(num_labels));
  for (double p : prevalences)
    if (!(p >= 0.0 && p <= 1.0)) throw ConfigError("synthetic: prevalences must lie in [0,1]");
  for (const auto& b : boosts) {
    if (b.if_class < 0 || b.if_class >= num_labels || b.then_class < 0 || b.then_class >= num_labels)
      throw ConfigError("synthetic: boost references class outside [0," + std::to_string(num_labels - 1) +
                        "]");
    if (b.if_class >= b.then_class)
      throw ConfigError("synthetic: boosts must point forward (if_class < then_class) since labels are "
                        "drawn in class order");
  }
  if (noise_amplitude < 0.0) throw ConfigError("synthetic: noise_amplitude must be >= 0");
}

namespace {

struct Painter {
  int size;
  std::vector<float>& px;
  void paint(int x, int y, float v) {
    if (x < 0 || y < 0 || x >= size || y >= size) return;
    auto& cell = px[static_cast<size_t>(y) * size + x];
    cell = std::max(cell, v);
  }
};

void render_motif(int cls, int size, int cx, int cy, std::vector<float>& px) {
  Painter p{size, px};
  const int r = std::max(3, size / 8);
  const float hi = 1.0f;
  switch (cls) {
    case 0:  // oriented bar (diagonal)
      for (int t = -r; t <= r; ++t)
        for (int d = -1; d <= 1; ++d) p.paint(cx + t, cy + t + d, hi);
      break;
    case 1:  // filled disk
      for (int y = -r; y <= r; ++y)
        for (int x = -r; x <= r; ++x)
          if (x * x + y * y <= r * r) p.paint(cx + x, cy + y, hi);
      break;
    case 2:  // ring
      for (int y = -r - 1; y <= r + 1; ++y)
        for (int x = -r - 1; x <= r + 1; ++x) {
          const double d = std::sqrt(static_cast<double>(x * x + y * y));
          if (std::abs(d - r) <= 1.2) p.paint(cx + x, cy + y, hi);
        }
      break;
    case 3:  // blob hugging its cell corner
      for (int y = -r; y <= r; ++y)
        for (int x = -r; x <= r; ++x) {
          const double d2 = x * x + y * y;
          const double sigma = 0.7 * r;
          p.paint(cx - r + x, cy - r + y, hi * static_cast<float>(std::exp(-d2 / (2 * sigma * sigma))));
        }
      break;
    case 4:  // horizontal gradient patch
      for (int y = -r; y <= r; ++y)
        for (int x = -r; x <= r; ++x)
          p.paint(cx + x, cy + y, hi * static_cast<float>(x + r) / static_cast<float>(2 * r));
      break;
    default:  // checker patch
      for (int y = -r; y <= r; ++y)
        for (int x = -r; x <= r; ++x)
          p.paint(cx + x, cy + y, (((x + r) / 2 + (y + r) / 2) % 2 == 0) ? hi : 0.2f * hi);
      break;
  }
}

}  // namespace

DatasetManifest synth_generate(const SyntheticSpec& spec, uint64_t seed) {
  spec.validate();
  DatasetManifest manifest;
  manifest.provenance = Provenance::Synthetic;
  manifest.seed = seed;
  manifest.class_names.assign(kMotifNames.begin(), kMotifNames.begin() + spec.num_labels);

  // Class-specific base locations on a 3x2 grid.
  const int s = spec.image_size;
  const int cxs[6] = {s / 4, s / 2, (3 * s) / 4, s / 4, s / 2, (3 * s) / 4};
  const int cys[6] = {s / 4, s / 4, s / 4, (5 * s) / 7, (5 * s) / 7, (5 * s) / 7};

  Rng rng(mix_seed(seed, fnv1a64(std::string("synth"))));
  manifest.samples.reserve(static_cast<size_t>(spec.num_samples));
  for (int i = 0; i < spec.num_samples; ++i) {
    Sample sample;
    char idbuf[48];
    std::snprintf(idbuf, sizeof(idbuf), "images/SYN%05d.cxim", i);
    sample.id = idbuf;
    std::snprintf(idbuf, sizeof(idbuf), "SP%04d", i / 3);
    sample.patient_id = idbuf;

    sample.labels.assign(static_cast<size_t>(spec.num_labels), 0);
    for (int c = 0; c < spec.num_labels; ++c) {
      double p = spec.prevalences[static_cast<size_t>(c)];
      bool boosted = false;
      for (const auto& b : spec.boosts)
        if (b.then_class == c && sample.labels[static_cast<size_t>(b.if_class)]) {
          p += b.boost;
          boosted = true;
        }
      if (boosted) p = std::clamp(p, 1e-9, 1.0 - 1e-9);
      sample.labels[static_cast<size_t>(c)] = rng.uniform() < p ? 1 : 0;
    }

    auto img = std::make_shared<ImageF32>();
    img->channels = 1;
    img->height = s;
    img->width = s;
    img->pixels.resize(static_cast<size_t>(s) * s);
    for (auto& v : img->pixels) v = static_cast<float>(spec.noise_amplitude * rng.uniform());
    for (int c = 0; c < spec.num_labels; ++c) {
      if (!sample.labels[static_cast<size_t>(c)]) continue;
      const int jx = static_cast<int>(rng.uniform_int(5)) - 2;
      const int jy = static_cast<int>(rng.uniform_int(5)) - 2;
      render_motif(c, s, cxs[c] + jx, cys[c] + jy, img->pixels);
    }
    sample.image = std::move(img);
    manifest.samples.push_back(std::move(sample));
  }
  return manifest;
}

void export_dataset(const DatasetManifest& manifest, const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir / "images", ec);
  if (ec) throw DataError("cannot create output directory '" + (dir / "images").string() + "'");

  std::ofstream csv(dir / "labels.csv", std::ios::trunc);
  if (!csv) throw DataError("cannot write '" + (dir / "labels.csv").string() + "'");
  csv << "Image Index,Finding Labels,Patient ID\n";
  for (const auto& sample : manifest.samples) {
    std::string findings;
    for (size_t c = 0; c < sample.labels.size(); ++c) {
      if (!sample.labels[c]) continue;
      if (!findings.empty()) findings += "|";
      findings += manifest.class_names[c];
    }
    if (findings.empty()) findings = "No Finding";
    csv << sample.id << "," << findings << "," << sample.patient_id << "\n";
    if (sample.image) write_cxim(dir / sample.id, *sample.image);
  }
  if (!csv) throw DataError("write failed for '" + (dir / "labels.csv").string() + "'");
}

template Tensor<float> preprocess<float>(const Sample&, const fs::path&, int, double, Rng*);
template Tensor<double> preprocess<double>(const Sample&, const fs::path&, int, double, Rng*);

}  // namespace cbamnet
