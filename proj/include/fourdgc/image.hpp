#pragma once

#include <fstream>

#include "fourdgc/common.hpp"

namespace fourdgc {

/// Row-major HxWx3 image with values in [0, 1].
struct Image {
  int width = 0, height = 0;
  std::vector<double> pixels;  // [(y*width + x)*3 + ch]

  Image() = default;
  Image(int w, int h, double fill = 0.0) : width(w), height(h), pixels(size_t(w) * h * 3, fill) {}

  double& at(int x, int y, int ch) { return pixels[(size_t(y) * width + x) * 3 + ch]; }
  double at(int x, int y, int ch) const { return pixels[(size_t(y) * width + x) * 3 + ch]; }
  size_t count() const { return pixels.size(); }
  bool same_shape(const Image& o) const { return width == o.width && height == o.height; }
};

/// Binary PPM (P6, 8-bit). CLI interchange format for rendered views.
inline void write_ppm(const Image& img, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open for write: " + path);
  f << "P6\n" << img.width << " " << img.height << "\n255\n";
  std::vector<uint8_t> row(size_t(img.width) * 3);
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x)
      for (int ch = 0; ch < 3; ++ch) {
        const double v = std::clamp(img.at(x, y, ch), 0.0, 1.0);
        row[size_t(x) * 3 + ch] = static_cast<uint8_t>(std::lround(v * 255.0));
      }
    f.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size()));
  }
  if (!f) throw IoError("write failed: " + path);
}

inline Image read_ppm(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open: " + path);
  std::string magic;
  f >> magic;
  if (magic != "P6") throw FormatError("not a P6 ppm: " + path);
  auto next_int = [&f, &path]() {
    // skip whitespace and '#' comments
    int c = f.get();
    while (c == '#' || std::isspace(c)) {
      if (c == '#')
        while (c != '\n' && c != EOF) c = f.get();
      c = f.get();
    }
    int v = 0;
    bool any = false;
    while (c >= '0' && c <= '9') {
      v = v * 10 + (c - '0');
      any = true;
      c = f.get();
    }
    if (!any) throw FormatError("bad ppm header: " + path);
    return v;
  };
  const int w = next_int();
  const int h = next_int();
  const int maxval = next_int();
  if (maxval != 255) throw FormatError("ppm maxval must be 255: " + path);
  Image img(w, h);
  std::vector<uint8_t> data(size_t(w) * h * 3);
  f.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(data.size()));
  if (f.gcount() != static_cast<std::streamsize>(data.size()))
    throw FormatError("truncated ppm: " + path);
  for (size_t i = 0; i < data.size(); ++i) img.pixels[i] = data[i] / 255.0;
  return img;
}

}  // namespace fourdgc
