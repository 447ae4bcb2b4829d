#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include "stungage/error.hpp"

namespace stungage {

/// Row-major 8-bit grayscale image.
class GrayImage {
 public:
  GrayImage() = default;
  GrayImage(int width, int height, std::uint8_t fill = 0)
      : width_(width), height_(height), pixels_(static_cast<std::size_t>(width) * height, fill) {
    if (width < 0 || height < 0) throw StreamError("negative image dimensions");
  }
  GrayImage(int width, int height, std::vector<std::uint8_t> pixels)
      : width_(width), height_(height), pixels_(std::move(pixels)) {
    if (pixels_.size() != static_cast<std::size_t>(width) * height)
      throw StreamError("pixel buffer does not match " + std::to_string(width) + "x" +
                        std::to_string(height));
  }

  int width() const noexcept { return width_; }
  int height() const noexcept { return height_; }
  std::size_t size() const noexcept { return pixels_.size(); }
  bool empty() const noexcept { return pixels_.empty(); }

  std::uint8_t& at(int x, int y) { return pixels_[static_cast<std::size_t>(y) * width_ + x]; }
  std::uint8_t at(int x, int y) const { return pixels_[static_cast<std::size_t>(y) * width_ + x]; }

  std::span<std::uint8_t> pixels() noexcept { return pixels_; }
  std::span<const std::uint8_t> pixels() const noexcept { return pixels_; }

  /// Sub-image copy; the rectangle must lie inside the image.
  GrayImage crop(int x0, int y0, int w, int h) const {
    if (x0 < 0 || y0 < 0 || w < 0 || h < 0 || x0 + w > width_ || y0 + h > height_)
      throw StreamError("crop rectangle outside image");
    GrayImage out(w, h);
    for (int y = 0; y < h; ++y) {
      const auto* row = pixels_.data() + static_cast<std::size_t>(y0 + y) * width_ + x0;
      std::copy(row, row + w, out.pixels_.data() + static_cast<std::size_t>(y) * w);
    }
    return out;
  }

  bool operator==(const GrayImage&) const = default;

 private:
  int width_ = 0;
  int height_ = 0;
  std::vector<std::uint8_t> pixels_;
};

/// Luma: round(0.299 R + 0.587 G + 0.114 B), clamped to [0, 255].
inline std::uint8_t grayscale_convert(std::uint8_t r, std::uint8_t g, std::uint8_t b) {
  const double y = 0.299 * r + 0.587 * g + 0.114 * b;
  return static_cast<std::uint8_t>(std::clamp(std::lround(y), 0L, 255L));
}

namespace detail {

inline void skip_pnm_space(std::istream& in) {
  while (true) {
    int c = in.peek();
    if (c == '#') {
      std::string line;
      std::getline(in, line);
    } else if (std::isspace(c)) {
      in.get();
    } else {
      return;
    }
  }
}

inline int read_pnm_int(std::istream& in, const std::string& path) {
  skip_pnm_space(in);
  int v = -1;
  if (!(in >> v) || v < 0) throw StreamError("corrupt header in " + path);
  return v;
}

}  // namespace detail

/// Reads a binary (P5) or plain (P2) graymap with maxval <= 255.
inline GrayImage read_pgm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw StreamError("cannot open " + path);
  char magic[2] = {0, 0};
  in.read(magic, 2);
  if (!in || magic[0] != 'P' || (magic[1] != '5' && magic[1] != '2'))
    throw StreamError("not a graymap: " + path);
  const int w = detail::read_pnm_int(in, path);
  const int h = detail::read_pnm_int(in, path);
  const int maxval = detail::read_pnm_int(in, path);
  if (maxval <= 0 || maxval > 255) throw StreamError("unsupported maxval in " + path);
  std::vector<std::uint8_t> px(static_cast<std::size_t>(w) * h);
  if (magic[1] == '5') {
    in.get();  // single whitespace after maxval
    in.read(reinterpret_cast<char*>(px.data()), static_cast<std::streamsize>(px.size()));
    if (in.gcount() != static_cast<std::streamsize>(px.size()))
      throw StreamError("truncated pixel data in " + path);
  } else {
    for (auto& p : px) {
      const int v = detail::read_pnm_int(in, path);
      if (v > maxval) throw StreamError("pixel exceeds maxval in " + path);
      p = static_cast<std::uint8_t>(v);
    }
  }
  if (maxval != 255)
    for (auto& p : px) p = static_cast<std::uint8_t>(std::lround(p * 255.0 / maxval));
  return GrayImage(w, h, std::move(px));
}

inline void write_pgm(const std::string& path, const GrayImage& img) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw StreamError("cannot write " + path);
  out << "P5\n" << img.width() << ' ' << img.height() << "\n255\n";
  out.write(reinterpret_cast<const char*>(img.pixels().data()),
            static_cast<std::streamsize>(img.size()));
}

}  // namespace stungage
