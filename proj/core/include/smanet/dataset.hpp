#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "smanet/tensor.hpp"

namespace smanet {

struct SequenceSample {
  Tensor slices;  // [T,1,S,S], pixel values in [0,1]
  int label = 0;
  int eye_id = 0;
  int sequence_id = 0;
};

struct ManifestEntry {
  std::string path;  // relative to the dataset root
  int label = 0;
  int eye_id = 0;
};

struct DatasetManifest {
  std::vector<ManifestEntry> entries;

  std::vector<int> class_counts(int num_classes) const;
  std::vector<int> distinct_eyes() const;
};

struct ApertureRange {
  double lo_deg = 0.0;
  double hi_deg = 0.0;
};

// Synthetic angle-wedge generator settings. Class 0 renders a wide wedge,
// class 1 a narrow one; class 2 (three-class mode) an almost-closed wedge
// with a bright contact blob at the apex.
struct GeneratorConfig {
  std::uint64_t seed = 42;
  int num_eyes = 20;
  int sequences_per_eye = 24;
  int slices_per_sequence = 5;
  int image_size = 32;
  double noise_sigma = 0.05;
  int num_classes = 3;
  ApertureRange open_range{55.0, 80.0};
  ApertureRange narrow_range{18.0, 35.0};
  ApertureRange synechiae_range{0.0, 8.0};
  std::vector<double> class_weights = {1.0, 1.0, 1.0};
  double dominant_bias = 4.0;

  void validate() const;
  ApertureRange range_for(int label) const;
};

// Renders every sequence under root/seq/ and writes root/manifest.csv plus a
// config echo. (seed, config) determines every output byte.
DatasetManifest generate_synthetic(const GeneratorConfig& config,
                                   const std::filesystem::path& root);

DatasetManifest load_manifest(const std::filesystem::path& root);
void save_manifest(const std::filesystem::path& root, const DatasetManifest& manifest);

std::vector<SequenceSample> load_sequences(const std::filesystem::path& root,
                                           const DatasetManifest& manifest);

// Partitions eyes (never individual sequences) into train/test. The realized
// test fraction is within one eye of the target.
std::pair<DatasetManifest, DatasetManifest> split_grouped(const DatasetManifest& manifest,
                                                          double test_fraction,
                                                          std::uint64_t seed);

// Noise-free wedge image: background 0.10, wedge 0.85, contact blob 0.95,
// apex at the image center. Returns [1,1,size,size].
Tensor render_wedge_slice(int size, double center_angle_deg, double aperture_deg, bool blob);

// Wedge opening angle in degrees recovered from one rendered slice by
// thresholding annuli around the image-center apex.
double measure_aperture_deg(const Tensor& slices, int slice_index);

// Mean measured aperture thresholded at 12 and 45 degrees; the reference
// classifier that bounds how separable the generated classes are.
int aperture_threshold_classify(const SequenceSample& sample, int num_classes);

}  // namespace smanet
