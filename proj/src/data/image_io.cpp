#include <png.h>

#include <array>
#include <cstring>
#include <fstream>

#include "cstyolo/data.hpp"
#include "cstyolo/errors.hpp"

namespace cstyolo::data {

namespace {

uint32_t le32(const uint8_t* p) { return p[0] | (p[1] << 8) | (p[2] << 16) | (uint32_t(p[3]) << 24); }
uint16_t le16(const uint8_t* p) { return uint16_t(p[0] | (p[1] << 8)); }
void put32(std::vector<uint8_t>& v, size_t at, uint32_t x) {
  for (int i = 0; i < 4; ++i) v[at + i] = uint8_t(x >> (8 * i));
}

std::vector<uint8_t> read_all(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError("cannot open image " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

Image Image::filled(int w, int h, uint8_t v) {
  Image img;
  img.width = w;
  img.height = h;
  img.pixels.assign(static_cast<size_t>(w) * h * 3, v);
  return img;
}

Image read_png(const fs::path& path) {
  png_image png;
  std::memset(&png, 0, sizeof png);
  png.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&png, path.string().c_str())) {
    throw LoadError("cannot read PNG " + path.string() + ": " + png.message);
  }
  png.format = PNG_FORMAT_RGB;
  Image img;
  img.width = static_cast<int>(png.width);
  img.height = static_cast<int>(png.height);
  img.pixels.resize(PNG_IMAGE_SIZE(png));
  if (!png_image_finish_read(&png, nullptr, img.pixels.data(), 0, nullptr)) {
    const std::string msg = png.message;
    png_image_free(&png);
    throw LoadError("cannot decode PNG " + path.string() + ": " + msg);
  }
  return img;
}

void write_png(const fs::path& path, const Image& img) {
  png_image png;
  std::memset(&png, 0, sizeof png);
  png.version = PNG_IMAGE_VERSION;
  png.width = static_cast<png_uint_32>(img.width);
  png.height = static_cast<png_uint_32>(img.height);
  png.format = PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&png, path.string().c_str(), 0, img.pixels.data(), 0, nullptr)) {
    throw LoadError("cannot write PNG " + path.string() + ": " + png.message);
  }
}

Image read_bmp(const fs::path& path) {
  const auto b = read_all(path);
  if (b.size() < 54 || b[0] != 'B' || b[1] != 'M') throw LoadError("not a BMP file: " + path.string());
  const uint32_t offset = le32(&b[10]);
  const int32_t w = static_cast<int32_t>(le32(&b[18]));
  const int32_t h = static_cast<int32_t>(le32(&b[22]));
  if (le16(&b[28]) != 24 || le32(&b[30]) != 0 || w <= 0 || h == 0) {
    throw LoadError("unsupported BMP (need 24-bit uncompressed): " + path.string());
  }
  const bool bottom_up = h > 0;
  const int height = bottom_up ? h : -h;
  const size_t stride = (static_cast<size_t>(w) * 3 + 3) / 4 * 4;
  if (b.size() < offset + stride * height) throw LoadError("truncated BMP: " + path.string());
  Image img = Image::filled(w, height, 0);
  for (int y = 0; y < height; ++y) {
    const uint8_t* row = &b[offset + stride * (bottom_up ? height - 1 - y : y)];
    for (int x = 0; x < w; ++x) {
      uint8_t* p = img.at(x, y);
      p[0] = row[3 * x + 2];
      p[1] = row[3 * x + 1];
      p[2] = row[3 * x];
    }
  }
  return img;
}

void write_bmp(const fs::path& path, const Image& img) {
  const size_t stride = (static_cast<size_t>(img.width) * 3 + 3) / 4 * 4;
  const size_t size = 54 + stride * img.height;
  std::vector<uint8_t> b(size, 0);
  b[0] = 'B';
  b[1] = 'M';
  put32(b, 2, static_cast<uint32_t>(size));
  put32(b, 10, 54);
  put32(b, 14, 40);
  put32(b, 18, static_cast<uint32_t>(img.width));
  put32(b, 22, static_cast<uint32_t>(img.height));
  b[26] = 1;
  b[28] = 24;
  put32(b, 34, static_cast<uint32_t>(stride * img.height));
  for (int y = 0; y < img.height; ++y) {
    uint8_t* row = &b[54 + stride * (img.height - 1 - y)];
    for (int x = 0; x < img.width; ++x) {
      const uint8_t* p = img.at(x, y);
      row[3 * x] = p[2];
      row[3 * x + 1] = p[1];
      row[3 * x + 2] = p[0];
    }
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw LoadError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(b.data()), static_cast<std::streamsize>(b.size()));
}

Image read_image(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError("cannot open image " + path.string());
  std::array<char, 8> sig{};
  in.read(sig.data(), sig.size());
  if (in.gcount() >= 8 && std::memcmp(sig.data(), "\x89PNG\r\n\x1a\n", 8) == 0) return read_png(path);
  if (in.gcount() >= 2 && sig[0] == 'B' && sig[1] == 'M') return read_bmp(path);
  throw LoadError("unsupported image format: " + path.string());
}

}  // namespace cstyolo::data
