#include "smanet/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>

#include "smanet/common.hpp"
#include "smanet/rng.hpp"

namespace smanet {

namespace {

constexpr double kBackground = 0.10;
constexpr double kWedge = 0.85;
constexpr double kBlob = 0.95;
constexpr double kBrightThreshold = 0.45;
constexpr double kMaxDriftDeg = 2.0;

double wrap_angle_deg(double a) {
  a = std::fmod(a, 360.0);
  return a < 0.0 ? a + 360.0 : a;
}

// Absolute angular distance in degrees, in [0,180].
double angular_distance(double a, double b) {
  double d = std::fabs(wrap_angle_deg(a) - wrap_angle_deg(b));
  return d > 180.0 ? 360.0 - d : d;
}

}  // namespace

std::vector<int> DatasetManifest::class_counts(int num_classes) const {
  std::vector<int> counts(static_cast<std::size_t>(num_classes), 0);
  for (const ManifestEntry& e : entries) {
    require<ConfigError>(e.label >= 0 && e.label < num_classes, "manifest label ", e.label,
                         " out of range for ", num_classes, " classes");
    ++counts[static_cast<std::size_t>(e.label)];
  }
  return counts;
}

std::vector<int> DatasetManifest::distinct_eyes() const {
  std::set<int> eyes;
  for (const ManifestEntry& e : entries) eyes.insert(e.eye_id);
  return {eyes.begin(), eyes.end()};
}

void GeneratorConfig::validate() const {
  require<ConfigError>(num_eyes >= 1 && sequences_per_eye >= 1, "generator needs eyes/sequences");
  require<ConfigError>(slices_per_sequence >= 1, "slices_per_sequence must be positive");
  require<ConfigError>(image_size >= 16, "image_size must be at least 16, got ", image_size);
  require<ConfigError>(noise_sigma >= 0.0, "noise_sigma must be non-negative");
  require<ConfigError>(num_classes == 2 || num_classes == 3, "generator supports 2 or 3 classes");
  require<ConfigError>(static_cast<int>(class_weights.size()) == num_classes,
                       "class_weights must have one entry per class");
  for (double w : class_weights) require<ConfigError>(w > 0.0, "class weights must be positive");
  require<ConfigError>(dominant_bias >= 1.0, "dominant_bias must be at least 1");
  std::vector<ApertureRange> ranges;
  for (int k = 0; k < num_classes; ++k) ranges.push_back(range_for(k));
  for (const ApertureRange& r : ranges) {
    require<ConfigError>(r.lo_deg >= 0.0 && r.hi_deg <= 180.0 && r.lo_deg <= r.hi_deg,
                         "aperture range must satisfy 0 <= lo <= hi <= 180");
  }
  for (std::size_t a = 0; a < ranges.size(); ++a) {
    for (std::size_t b = a + 1; b < ranges.size(); ++b) {
      const bool disjoint =
          ranges[a].hi_deg < ranges[b].lo_deg || ranges[b].hi_deg < ranges[a].lo_deg;
      require<ConfigError>(disjoint, "class aperture ranges overlap between classes ", a,
                           " and ", b);
    }
  }
}

ApertureRange GeneratorConfig::range_for(int label) const {
  switch (label) {
    case 0:
      return open_range;
    case 1:
      return narrow_range;
    case 2:
      return synechiae_range;
    default:
      throw ConfigError(str_cat("no aperture range for label ", label));
  }
}

namespace {

// Exact class quotas from the weights (largest remainder), so proportion-
// exact configurations realize their counts exactly.
std::vector<int> class_quotas(const GeneratorConfig& cfg) {
  const int total = cfg.num_eyes * cfg.sequences_per_eye;
  double weight_sum = 0.0;
  for (double w : cfg.class_weights) weight_sum += w;
  std::vector<int> quota(cfg.class_weights.size(), 0);
  std::vector<std::pair<double, int>> remainders;
  int assigned = 0;
  for (std::size_t k = 0; k < cfg.class_weights.size(); ++k) {
    const double ideal = total * cfg.class_weights[k] / weight_sum;
    quota[k] = static_cast<int>(std::floor(ideal));
    assigned += quota[k];
    remainders.push_back({ideal - std::floor(ideal), static_cast<int>(k)});
  }
  std::sort(remainders.begin(), remainders.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return a.second < b.second;
  });
  for (int i = 0; i < total - assigned; ++i) {
    ++quota[static_cast<std::size_t>(remainders[static_cast<std::size_t>(i)].second)];
  }
  return quota;
}

// Labels for every sequence, eye-major order. Each eye has a dominant class;
// draws are biased toward it but constrained by the global quotas.
std::vector<int> assign_labels(const GeneratorConfig& cfg, Rng& rng) {
  std::vector<int> remaining = class_quotas(cfg);
  std::vector<int> labels;
  labels.reserve(static_cast<std::size_t>(cfg.num_eyes) * cfg.sequences_per_eye);
  for (int eye = 0; eye < cfg.num_eyes; ++eye) {
    const int dominant = eye % cfg.num_classes;
    for (int s = 0; s < cfg.sequences_per_eye; ++s) {
      double total_weight = 0.0;
      for (int k = 0; k < cfg.num_classes; ++k) {
        total_weight += remaining[static_cast<std::size_t>(k)] *
                        (k == dominant ? cfg.dominant_bias : 1.0);
      }
      double draw = rng.uniform() * total_weight;
      int chosen = cfg.num_classes - 1;
      for (int k = 0; k < cfg.num_classes; ++k) {
        const double w = remaining[static_cast<std::size_t>(k)] *
                         (k == dominant ? cfg.dominant_bias : 1.0);
        if (draw < w) {
          chosen = k;
          break;
        }
        draw -= w;
      }
      while (remaining[static_cast<std::size_t>(chosen)] == 0) {
        chosen = (chosen + 1) % cfg.num_classes;
      }
      --remaining[static_cast<std::size_t>(chosen)];
      labels.push_back(chosen);
    }
  }
  return labels;
}

void render_wedge_into(float* slice, int s, double center_angle, double aperture, bool blob) {
  const double apex = s / 2.0;
  const double blob_radius = 0.10 * s;
  for (int y = 0; y < s; ++y) {
    for (int x = 0; x < s; ++x) {
      const double dx = (x + 0.5) - apex;
      const double dy = (y + 0.5) - apex;
      const double angle = std::atan2(dy, dx) * (180.0 / 3.14159265358979323846);
      double value = kBackground;
      if (angular_distance(angle, center_angle) <= aperture / 2.0) value = kWedge;
      if (blob && std::sqrt(dx * dx + dy * dy) <= blob_radius) value = kBlob;
      slice[static_cast<std::size_t>(y) * s + x] = static_cast<float>(value);
    }
  }
}

void render_sequence(const GeneratorConfig& cfg, int label, Rng& rng, Tensor& out) {
  const int s = cfg.image_size;
  const int t_count = cfg.slices_per_sequence;
  const ApertureRange range = cfg.range_for(label);
  const double aperture0 = rng.uniform(range.lo_deg, range.hi_deg);
  const double center_angle = rng.uniform(0.0, 360.0);
  const double drift = rng.uniform(-kMaxDriftDeg, kMaxDriftDeg);
  const bool blob = cfg.num_classes == 3 && label == 2;
  float* values = out.values().data();
  for (int t = 0; t < t_count; ++t) {
    double aperture = aperture0;
    if (t_count > 1) {
      aperture += drift * (static_cast<double>(t) / (t_count - 1) - 0.5);
    }
    aperture = std::clamp(aperture, range.lo_deg, range.hi_deg);
    float* slice = values + static_cast<std::size_t>(t) * s * s;
    render_wedge_into(slice, s, center_angle, aperture, blob);
    for (std::size_t i = 0; i < static_cast<std::size_t>(s) * s; ++i) {
      const double value = slice[i] + cfg.noise_sigma * rng.normal();
      slice[i] = static_cast<float>(std::clamp(value, 0.0, 1.0));
    }
  }
}

std::string sequence_filename(int eye, int sequence_id) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), "seq/e%03d_s%04d.smat", eye, sequence_id);
  return buf;
}

std::string format_double(double v) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

}  // namespace

DatasetManifest generate_synthetic(const GeneratorConfig& cfg,
                                   const std::filesystem::path& root) {
  cfg.validate();
  std::filesystem::create_directories(root / "seq");
  Rng label_rng(Rng::derive(cfg.seed, 0));
  const std::vector<int> labels = assign_labels(cfg, label_rng);

  DatasetManifest manifest;
  int sequence_id = 0;
  for (int eye = 0; eye < cfg.num_eyes; ++eye) {
    Rng eye_rng(Rng::derive(cfg.seed, 1000 + static_cast<std::uint64_t>(eye)));
    for (int s = 0; s < cfg.sequences_per_eye; ++s, ++sequence_id) {
      const int label = labels[static_cast<std::size_t>(sequence_id)];
      Tensor slices({cfg.slices_per_sequence, 1, cfg.image_size, cfg.image_size});
      render_sequence(cfg, label, eye_rng, slices);
      const std::string rel = sequence_filename(eye, sequence_id);
      save_tensor_file(root / rel, slices);
      manifest.entries.push_back({rel, label, eye});
    }
  }
  save_manifest(root, manifest);

  std::ofstream echo(root / "gen_config.cfg");
  require<IoError>(echo.is_open(), "cannot write generator config echo");
  echo << "gen.seed=" << cfg.seed << "\n";
  echo << "gen.num_eyes=" << cfg.num_eyes << "\n";
  echo << "gen.sequences_per_eye=" << cfg.sequences_per_eye << "\n";
  echo << "gen.slices_per_sequence=" << cfg.slices_per_sequence << "\n";
  echo << "gen.image_size=" << cfg.image_size << "\n";
  echo << "gen.noise_sigma=" << format_double(cfg.noise_sigma) << "\n";
  echo << "gen.num_classes=" << cfg.num_classes << "\n";
  echo << "gen.open_range=" << format_double(cfg.open_range.lo_deg) << ","
       << format_double(cfg.open_range.hi_deg) << "\n";
  echo << "gen.narrow_range=" << format_double(cfg.narrow_range.lo_deg) << ","
       << format_double(cfg.narrow_range.hi_deg) << "\n";
  echo << "gen.synechiae_range=" << format_double(cfg.synechiae_range.lo_deg) << ","
       << format_double(cfg.synechiae_range.hi_deg) << "\n";
  {
    echo << "gen.class_weights=";
    for (std::size_t i = 0; i < cfg.class_weights.size(); ++i) {
      echo << (i ? "," : "") << format_double(cfg.class_weights[i]);
    }
    echo << "\n";
  }
  echo << "gen.dominant_bias=" << format_double(cfg.dominant_bias) << "\n";
  return manifest;
}

void save_manifest(const std::filesystem::path& root, const DatasetManifest& manifest) {
  std::ofstream os(root / "manifest.csv", std::ios::binary);
  require<IoError>(os.is_open(), "cannot write manifest.csv under ", root.string());
  os << "sequence_path,label,eye_id\n";
  for (const ManifestEntry& e : manifest.entries) {
    os << e.path << "," << e.label << "," << e.eye_id << "\n";
  }
}

DatasetManifest load_manifest(const std::filesystem::path& root) {
  std::ifstream is(root / "manifest.csv");
  require<IoError>(is.is_open(), "missing manifest.csv under ", root.string());
  std::string line;
  require<IoError>(static_cast<bool>(std::getline(is, line)), "empty manifest");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  require<IoError>(line == "sequence_path,label,eye_id", "unexpected manifest header: ", line);
  DatasetManifest manifest;
  while (std::getline(is, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const std::size_t c1 = line.find(',');
    const std::size_t c2 = line.find(',', c1 + 1);
    require<IoError>(c1 != std::string::npos && c2 != std::string::npos,
                     "malformed manifest row: ", line);
    ManifestEntry e;
    e.path = line.substr(0, c1);
    e.label = std::stoi(line.substr(c1 + 1, c2 - c1 - 1));
    e.eye_id = std::stoi(line.substr(c2 + 1));
    require<IoError>(e.label >= 0 && e.eye_id >= 0, "negative label/eye in manifest row: ", line);
    manifest.entries.push_back(std::move(e));
  }
  return manifest;
}

std::vector<SequenceSample> load_sequences(const std::filesystem::path& root,
                                           const DatasetManifest& manifest) {
  std::vector<SequenceSample> samples;
  samples.reserve(manifest.entries.size());
  int id = 0;
  for (const ManifestEntry& e : manifest.entries) {
    SequenceSample s;
    s.slices = load_tensor_file(root / e.path);
    require<IoError>(s.slices.rank() == 4 && s.slices.dim(1) == 1,
                     "sequence file must hold [T,1,S,S]: ", e.path);
    for (float v : s.slices.values()) {
      require<IoError>(v >= 0.0f && v <= 1.0f, "pixel outside [0,1] in ", e.path);
    }
    s.label = e.label;
    s.eye_id = e.eye_id;
    s.sequence_id = id++;
    samples.push_back(std::move(s));
  }
  return samples;
}

std::pair<DatasetManifest, DatasetManifest> split_grouped(const DatasetManifest& manifest,
                                                          double test_fraction,
                                                          std::uint64_t seed) {
  require<ConfigError>(test_fraction > 0.0 && test_fraction < 1.0,
                       "test_fraction must lie in (0,1), got ", test_fraction);
  std::vector<int> eyes = manifest.distinct_eyes();
  require<ConfigError>(eyes.size() >= 2, "grouped split needs at least 2 eyes, got ",
                       eyes.size());
  Rng rng(seed);
  rng.shuffle(eyes);
  const int num_test = std::clamp(
      static_cast<int>(std::lround(test_fraction * static_cast<double>(eyes.size()))), 1,
      static_cast<int>(eyes.size()) - 1);
  std::set<int> test_eyes(eyes.begin(), eyes.begin() + num_test);
  DatasetManifest train, test;
  for (const ManifestEntry& e : manifest.entries) {
    (test_eyes.count(e.eye_id) ? test : train).entries.push_back(e);
  }
  return {std::move(train), std::move(test)};
}

Tensor render_wedge_slice(int size, double center_angle_deg, double aperture_deg, bool blob) {
  require<ConfigError>(size >= 16, "wedge rendering needs size >= 16");
  Tensor out({1, 1, size, size});
  render_wedge_into(out.values().data(), size, center_angle_deg, aperture_deg, blob);
  return out;
}

namespace {

double bilinear_sample(const float* img, int s, double x, double y) {
  // pixel centers at integer+0.5 coordinates
  const double fx = std::clamp(x - 0.5, 0.0, static_cast<double>(s - 1));
  const double fy = std::clamp(y - 0.5, 0.0, static_cast<double>(s - 1));
  const int x0 = static_cast<int>(fx);
  const int y0 = static_cast<int>(fy);
  const int x1 = std::min(x0 + 1, s - 1);
  const int y1 = std::min(y0 + 1, s - 1);
  const double ax = fx - x0;
  const double ay = fy - y0;
  const double top = (1.0 - ax) * img[static_cast<std::size_t>(y0) * s + x0] +
                     ax * img[static_cast<std::size_t>(y0) * s + x1];
  const double bot = (1.0 - ax) * img[static_cast<std::size_t>(y1) * s + x0] +
                     ax * img[static_cast<std::size_t>(y1) * s + x1];
  return (1.0 - ay) * top + ay * bot;
}

}  // namespace

double measure_aperture_deg(const Tensor& slices, int slice_index) {
  require<ShapeError>(slices.rank() == 4 && slices.dim(1) == 1,
                      "aperture measurement expects [T,1,S,S]");
  const int s = slices.dim(2);
  require<ShapeError>(slices.dim(3) == s, "aperture measurement expects square slices");
  const float* img =
      slices.values().data() + static_cast<std::size_t>(slice_index) * s * s;
  const double apex = s / 2.0;
  const double radii[3] = {0.30 * s, 0.35 * s, 0.40 * s};
  double sum = 0.0;
  for (double r : radii) {
    int bright = 0;
    for (int d = 0; d < 720; ++d) {
      const double theta = d * (3.14159265358979323846 / 360.0);
      const double x = apex + r * std::cos(theta);
      const double y = apex + r * std::sin(theta);
      if (bilinear_sample(img, s, x, y) > kBrightThreshold) ++bright;
    }
    sum += 360.0 * static_cast<double>(bright) / 720.0;
  }
  return sum / 3.0;
}

int aperture_threshold_classify(const SequenceSample& sample, int num_classes) {
  const int t_count = sample.slices.dim(0);
  double mean = 0.0;
  for (int t = 0; t < t_count; ++t) mean += measure_aperture_deg(sample.slices, t);
  mean /= t_count;
  if (num_classes == 3 && mean < 12.0) return 2;
  if (mean < 45.0) return 1;
  return 0;
}

}  // namespace smanet
