#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "cstyolo/metrics.hpp"

namespace cstyolo::data {

namespace fs = std::filesystem;

/// Interleaved 8-bit RGB.
struct Image {
  int width = 0;
  int height = 0;
  std::vector<uint8_t> pixels;

  uint8_t* at(int x, int y) { return pixels.data() + (static_cast<size_t>(y) * width + x) * 3; }
  const uint8_t* at(int x, int y) const {
    return pixels.data() + (static_cast<size_t>(y) * width + x) * 3;
  }
  static Image filled(int w, int h, uint8_t v);
};

Image read_png(const fs::path& path);
void write_png(const fs::path& path, const Image& img);
/// 24-bit uncompressed BMP only.
Image read_bmp(const fs::path& path);
void write_bmp(const fs::path& path, const Image& img);
/// Chooses the decoder by file signature.
Image read_image(const fs::path& path);

/// Class ids follow this order: WBC=0, RBC=1, Platelets=2.
const std::vector<std::string>& blood_cell_classes();

struct Object {
  std::string name;
  int xmin = 0, ymin = 0, xmax = 0, ymax = 0;
};

struct Annotation {
  std::string filename;
  int width = 0, height = 0, depth = 3;
  std::vector<Object> objects;
};

Annotation parse_voc_xml(const fs::path& path);
Annotation parse_voc_xml_string(const std::string& xml, const std::string& source = "<string>");
std::string serialize_voc_xml(const Annotation& a);

/// Names in `a` not present in `classes`, in first-seen order.
std::vector<std::string> unknown_classes(const Annotation& a, const std::vector<std::string>& classes);
/// Converts objects to ground truths clamped to the image; unknown classes throw.
std::vector<GroundTruth> to_ground_truth(const Annotation& a, const std::vector<std::string>& classes,
                                         int image_index = 0);

struct SplitManifest {
  std::string dataset;
  /// Split name -> stems, in file order.
  std::vector<std::pair<std::string, std::vector<std::string>>> splits;

  const std::vector<std::string>& split(const std::string& name) const;
  bool has_split(const std::string& name) const;
};

/// Format: `dataset NAME`, then per split `split NAME COUNT` followed by COUNT
/// stems, one per line. Blank lines and `#` comments are ignored.
SplitManifest read_manifest(const fs::path& path);
void write_manifest(const fs::path& path, const SplitManifest& m);

struct DatasetRecord {
  std::string stem;
  fs::path image_path;
  Image image;
  Annotation annotation;
};

/// Loads `<root>/images/<stem>.{png,bmp}` and `<root>/annotations/<stem>.xml`
/// for every stem of one split.
std::vector<DatasetRecord> load_split(const fs::path& root, const SplitManifest& m,
                                      const std::string& split);

/// Aspect-preserving resize into a square canvas with symmetric padding.
struct LetterboxTransform {
  double scale = 1;
  double pad_x = 0;
  double pad_y = 0;
  int target = 0;

  Box forward(const Box& b) const;
  Box inverse(const Box& b) const;
};

constexpr uint8_t kLetterboxGray = 114;

/// `target` must be a positive multiple of 32.
std::pair<Image, LetterboxTransform> letterbox(const Image& img, int target);
LetterboxTransform letterbox_transform(int width, int height, int target);

struct SynthOptions {
  uint64_t seed = 7;
  int n_images = 200;
  int image_size = 256;
  int min_objects = 3;
  int max_objects = 8;
  double train_fraction = 0.8;
  double val_fraction = 0.1;
};

struct SynthSummary {
  std::map<std::string, int> objects_per_class;
  SplitManifest manifest;
};

/// Writes images/, annotations/ and manifest.txt under `out`.
SynthSummary synth_blobs(const fs::path& out, const SynthOptions& opt);

}  // namespace cstyolo::data
