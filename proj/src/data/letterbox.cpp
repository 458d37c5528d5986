#include <algorithm>
#include <cmath>

#include "cstyolo/data.hpp"
#include "cstyolo/errors.hpp"

namespace cstyolo::data {

Box LetterboxTransform::forward(const Box& b) const {
  return {b.x1 * scale + pad_x, b.y1 * scale + pad_y, b.x2 * scale + pad_x, b.y2 * scale + pad_y};
}

Box LetterboxTransform::inverse(const Box& b) const {
  return {(b.x1 - pad_x) / scale, (b.y1 - pad_y) / scale, (b.x2 - pad_x) / scale,
          (b.y2 - pad_y) / scale};
}

LetterboxTransform letterbox_transform(int width, int height, int target) {
  if (target <= 0 || target % 32 != 0) {
    throw ContractError("letterbox: target " + std::to_string(target) + " is not a multiple of 32");
  }
  if (width <= 0 || height <= 0) throw ContractError("letterbox: empty image");
  LetterboxTransform t;
  t.target = target;
  t.scale = std::min(double(target) / width, double(target) / height);
  const int nw = static_cast<int>(std::lround(width * t.scale));
  const int nh = static_cast<int>(std::lround(height * t.scale));
  t.pad_x = (target - nw) / 2;
  t.pad_y = (target - nh) / 2;
  return t;
}

std::pair<Image, LetterboxTransform> letterbox(const Image& img, int target) {
  const LetterboxTransform t = letterbox_transform(img.width, img.height, target);
  const int nw = static_cast<int>(std::lround(img.width * t.scale));
  const int nh = static_cast<int>(std::lround(img.height * t.scale));
  Image out = Image::filled(target, target, kLetterboxGray);
  const int ox = static_cast<int>(t.pad_x), oy = static_cast<int>(t.pad_y);
  const bool identity = nw == img.width && nh == img.height;
  for (int y = 0; y < nh; ++y) {
    for (int x = 0; x < nw; ++x) {
      uint8_t* dst = out.at(ox + x, oy + y);
      if (identity) {
        std::copy_n(img.at(x, y), 3, dst);
        continue;
      }
      // bilinear, pixel centres aligned
      const double sx = std::clamp((x + 0.5) / t.scale - 0.5, 0.0, img.width - 1.0);
      const double sy = std::clamp((y + 0.5) / t.scale - 0.5, 0.0, img.height - 1.0);
      const int x0 = static_cast<int>(sx), y0 = static_cast<int>(sy);
      const int x1 = std::min(x0 + 1, img.width - 1), y1 = std::min(y0 + 1, img.height - 1);
      const double fx = sx - x0, fy = sy - y0;
      for (int c = 0; c < 3; ++c) {
        const double v = (1 - fy) * ((1 - fx) * img.at(x0, y0)[c] + fx * img.at(x1, y0)[c]) +
                         fy * ((1 - fx) * img.at(x0, y1)[c] + fx * img.at(x1, y1)[c]);
        dst[c] = static_cast<uint8_t>(std::clamp(std::lround(v), 0L, 255L));
      }
    }
  }
  return {out, t};
}

}  // namespace cstyolo::data
