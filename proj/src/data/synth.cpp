#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>

#include "cstyolo/data.hpp"
#include "cstyolo/errors.hpp"

namespace cstyolo::data {

namespace {

struct Style {
  double r_min, r_max;
  double rgb[3];
  double inner[3];  // centre colour (nucleus / pale centre)
  double inner_frac;
};

// Indexed like blood_cell_classes(): large, medium, tiny.
const Style kStyles[3] = {
    {14.0, 22.0, {170, 130, 200}, {90, 40, 140}, 0.6},
    {8.0, 12.0, {205, 85, 95}, {235, 150, 155}, 0.4},
    {2.5, 4.5, {100, 55, 135}, {80, 40, 115}, 0.5},
};

void background(Image& img, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  const int g = 9;
  std::vector<double> lattice(g * g);
  for (double& v : lattice) v = u(rng);
  const double base[3] = {232, 205, 212};
  const double tint[3] = {12, 18, 14};
  std::normal_distribution<double> grain(0.0, 5.0);
  const double cell = (img.width - 1.0) / (g - 1);
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      const double fx = x / cell, fy = y / cell;
      const int x0 = std::min(static_cast<int>(fx), g - 2), y0 = std::min(static_cast<int>(fy), g - 2);
      const double tx = fx - x0, ty = fy - y0;
      const double n = (1 - ty) * ((1 - tx) * lattice[y0 * g + x0] + tx * lattice[y0 * g + x0 + 1]) +
                       ty * ((1 - tx) * lattice[(y0 + 1) * g + x0] + tx * lattice[(y0 + 1) * g + x0 + 1]);
      const double e = grain(rng);
      uint8_t* p = img.at(x, y);
      for (int c = 0; c < 3; ++c) p[c] = static_cast<uint8_t>(std::clamp(base[c] + tint[c] * n + e, 0.0, 255.0));
    }
  }
}

void blend(uint8_t* p, const double rgb[3], double a) {
  for (int c = 0; c < 3; ++c) p[c] = static_cast<uint8_t>(std::lround(p[c] * (1 - a) + rgb[c] * a));
}

void draw_ellipse(Image& img, double cx, double cy, double rx, double ry, const Style& s, double jitter) {
  const int x0 = std::max(0, static_cast<int>(std::floor(cx - rx - 1)));
  const int x1 = std::min(img.width - 1, static_cast<int>(std::ceil(cx + rx + 1)));
  const int y0 = std::max(0, static_cast<int>(std::floor(cy - ry - 1)));
  const int y1 = std::min(img.height - 1, static_cast<int>(std::ceil(cy + ry + 1)));
  const double edge = std::min(rx, ry);
  double outer[3], inner[3];
  for (int c = 0; c < 3; ++c) {
    outer[c] = std::clamp(s.rgb[c] + jitter, 0.0, 255.0);
    inner[c] = std::clamp(s.inner[c] + jitter, 0.0, 255.0);
  }
  for (int y = y0; y <= y1; ++y) {
    for (int x = x0; x <= x1; ++x) {
      const double dx = (x + 0.5 - cx) / rx, dy = (y + 0.5 - cy) / ry;
      const double q = std::sqrt(dx * dx + dy * dy);
      const double a = std::clamp((1.0 - q) * edge + 0.5, 0.0, 1.0);
      if (a <= 0) continue;
      uint8_t* p = img.at(x, y);
      blend(p, outer, a);
      const double ai = std::clamp((s.inner_frac - q) * edge + 0.5, 0.0, 1.0);
      if (ai > 0) blend(p, inner, ai);
    }
  }
}

}  // namespace

SynthSummary synth_blobs(const fs::path& out, const SynthOptions& opt) {
  if (opt.n_images < 1) throw ConfigError("synth: n_images must be >= 1");
  if (opt.image_size < 48) throw ConfigError("synth: image_size must be >= 48");
  if (opt.min_objects < 0 || opt.max_objects < opt.min_objects) {
    throw ConfigError("synth: invalid object count range");
  }
  fs::create_directories(out / "images");
  fs::create_directories(out / "annotations");
  const auto& names = blood_cell_classes();
  std::mt19937_64 rng(opt.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_int_distribution<int> count(opt.min_objects, opt.max_objects);
  std::uniform_int_distribution<int> cls_pick(0, 2);

  SynthSummary summary;
  for (const auto& n : names) summary.objects_per_class[n] = 0;
  std::vector<std::string> stems;
  const int S = opt.image_size;
  for (int i = 0; i < opt.n_images; ++i) {
    char stem[32];
    std::snprintf(stem, sizeof stem, "synth_%04d", i);
    stems.push_back(stem);
    Image img = Image::filled(S, S, 0);
    background(img, rng);
    Annotation a;
    a.filename = std::string(stem) + ".png";
    a.width = S;
    a.height = S;
    const int want = count(rng);
    std::vector<Box> placed;
    for (int k = 0; k < want; ++k) {
      const int c = cls_pick(rng);
      const Style& s = kStyles[c];
      const double r = s.r_min + (s.r_max - s.r_min) * unit(rng);
      const double aspect = 0.8 + 0.4 * unit(rng);
      const double rx = r * std::sqrt(aspect), ry = r / std::sqrt(aspect);
      const double jitter = 20.0 * (unit(rng) - 0.5);
      for (int attempt = 0; attempt < 50; ++attempt) {
        const double cx = rx + 1 + (S - 2 * rx - 2) * unit(rng);
        const double cy = ry + 1 + (S - 2 * ry - 2) * unit(rng);
        const Box b{std::floor(cx - rx), std::floor(cy - ry), std::ceil(cx + rx), std::ceil(cy + ry)};
        bool clear = true;
        for (const Box& p : placed) {
          // keep a margin so boxes never overlap
          if (b.x1 < p.x2 + 2 && p.x1 < b.x2 + 2 && b.y1 < p.y2 + 2 && p.y1 < b.y2 + 2) clear = false;
        }
        if (!clear) continue;
        draw_ellipse(img, cx, cy, rx, ry, s, jitter);
        placed.push_back(b);
        a.objects.push_back({names[c], static_cast<int>(b.x1), static_cast<int>(b.y1),
                             static_cast<int>(b.x2), static_cast<int>(b.y2)});
        summary.objects_per_class[names[c]]++;
        break;
      }
    }
    write_png(out / "images" / (std::string(stem) + ".png"), img);
    std::ofstream xml(out / "annotations" / (std::string(stem) + ".xml"));
    if (!xml) throw LoadError("cannot write annotation for " + std::string(stem));
    xml << serialize_voc_xml(a);
  }
  const int n_train = static_cast<int>(std::lround(opt.n_images * opt.train_fraction));
  const int n_val = std::min(opt.n_images - n_train,
                             static_cast<int>(std::lround(opt.n_images * opt.val_fraction)));
  SplitManifest& m = summary.manifest;
  m.dataset = "synth";
  m.splits.push_back({"train", {stems.begin(), stems.begin() + n_train}});
  m.splits.push_back({"val", {stems.begin() + n_train, stems.begin() + n_train + n_val}});
  m.splits.push_back({"test", {stems.begin() + n_train + n_val, stems.end()}});
  write_manifest(out / "manifest.txt", m);
  return summary;
}

}  // namespace cstyolo::data
