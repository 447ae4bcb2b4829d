#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "stungage/error.hpp"
#include "stungage/image.hpp"

namespace stungage {

struct GmmParams {
  int components = 3;               // K
  double learning_rate = 0.01;      // rho
  double background_fraction = 0.8; // T_b
  double match_sigma = 2.5;         // match radius in standard deviations
  double variance_init = 225.0;
  double variance_floor = 4.0;

  void validate() const {
    if (components < 1 || components > 255)
      throw ConfigError("foreground.components must lie in [1,255]");
    if (!(learning_rate > 0.0 && learning_rate < 1.0))
      throw ConfigError("foreground.learning_rate must lie in (0,1)");
    if (!(background_fraction > 0.0 && background_fraction <= 1.0))
      throw ConfigError("foreground.background_fraction must lie in (0,1]");
    if (!(match_sigma > 0.0)) throw ConfigError("foreground.match_sigma must be positive");
    if (!(variance_floor > 0.0)) throw ConfigError("foreground.variance_floor must be positive");
    if (!(variance_init >= variance_floor))
      throw ConfigError("foreground.variance_init must be >= variance_floor");
  }
};

/// Binary W x H mask with a cached count of set pixels.
class ForegroundMask {
 public:
  ForegroundMask() = default;
  ForegroundMask(int width, int height) : width_(width), height_(height),
      bits_(static_cast<std::size_t>(width) * height, 0) {}
  ForegroundMask(int width, int height, std::vector<std::uint8_t> bits)
      : width_(width), height_(height), bits_(std::move(bits)) {
    for (auto& b : bits_) b = b ? 1 : 0;
    recount();
  }

  int width() const noexcept { return width_; }
  int height() const noexcept { return height_; }
  std::size_t count() const noexcept { return count_; }

  bool at(int x, int y) const { return bits_[static_cast<std::size_t>(y) * width_ + x] != 0; }
  void set(int x, int y, bool v) {
    auto& b = bits_[static_cast<std::size_t>(y) * width_ + x];
    count_ += static_cast<std::size_t>(v) - static_cast<std::size_t>(b);
    b = v ? 1 : 0;
  }

  std::span<const std::uint8_t> bits() const noexcept { return bits_; }

  bool operator==(const ForegroundMask& o) const {
    return width_ == o.width_ && height_ == o.height_ && bits_ == o.bits_;
  }

 private:
  friend class BackgroundModel;
  friend ForegroundMask median_filter(const ForegroundMask&, int);

  void recount() {
    count_ = static_cast<std::size_t>(std::count(bits_.begin(), bits_.end(), std::uint8_t{1}));
  }

  int width_ = 0;
  int height_ = 0;
  std::vector<std::uint8_t> bits_;
  std::size_t count_ = 0;
};

/// Per-pixel Gaussian mixture background model over grayscale frames.
///
/// Each pixel keeps up to K components ordered by weight / sigma, highest
/// first. For an observation x the first component with
/// (x - mean)^2 <= match_sigma^2 * variance matches. The pixel is background
/// iff the matched component's preceding cumulative weight is below
/// background_fraction (so the leading component is always background).
/// Classification uses the model state before the update. Update:
///   w_i   <- (1 - rho) w_i + rho [i matched]
///   mean  <- mean + rho d,  var <- max(floor, var + rho (d^2 - var))
/// An unmatched observation appends a component {x, variance_init, rho}, or
/// replaces the last one when K are in use. Weights are renormalized to sum 1
/// and components are stable-sorted by the key again.
class BackgroundModel {
 public:
  BackgroundModel(int width, int height, GmmParams params = {})
      : width_(width), height_(height), params_(params) {
    params_.validate();
    if (width <= 0 || height <= 0) throw ConfigError("background model needs a positive frame size");
    const std::size_t n = static_cast<std::size_t>(width) * height;
    const auto k = static_cast<std::size_t>(params_.components);
    mean_.assign(n * k, 0.0);
    var_.assign(n * k, params_.variance_init);
    sigma_.assign(n * k, std::sqrt(params_.variance_init));
    weight_.assign(n * k, 0.0);
    used_.assign(n, 1);
    for (std::size_t p = 0; p < n; ++p) weight_[p * k] = 1.0;
    match_sq_ = params_.match_sigma * params_.match_sigma;
  }

  /// Sets every pixel's leading component mean to the frame value.
  void seed(const GrayImage& frame) {
    check_dims(frame);
    const auto k = static_cast<std::size_t>(params_.components);
    auto px = frame.pixels();
    for (std::size_t p = 0; p < px.size(); ++p) mean_[p * k] = px[p];
  }

  int width() const noexcept { return width_; }
  int height() const noexcept { return height_; }
  const GmmParams& params() const noexcept { return params_; }

  struct Component {
    double mean, variance, weight;
  };

  std::vector<Component> components(int x, int y) const {
    const auto k = static_cast<std::size_t>(params_.components);
    const std::size_t base = (static_cast<std::size_t>(y) * width_ + x) * k;
    std::vector<Component> out;
    for (std::size_t i = 0; i < used_[base / k]; ++i)
      out.push_back({mean_[base + i], var_[base + i], weight_[base + i]});
    return out;
  }

  /// Classifies `frame` against the current model, then folds it in.
  ForegroundMask update_classify(const GrayImage& frame) {
    check_dims(frame);
    ForegroundMask mask(width_, height_);
    auto px = frame.pixels();
    const auto k = static_cast<std::size_t>(params_.components);
    std::size_t count = 0;
    for (std::size_t p = 0; p < px.size(); ++p) {
      const bool fg = update_pixel(p * k, used_[p], static_cast<double>(px[p]));
      mask.bits_[p] = fg ? 1 : 0;
      count += fg;
    }
    mask.count_ = count;
    return mask;
  }

 private:
  void check_dims(const GrayImage& frame) const {
    if (frame.width() != width_ || frame.height() != height_)
      throw Error("foreground-extraction",
                  "frame is " + std::to_string(frame.width()) + "x" + std::to_string(frame.height()) +
                      ", model is " + std::to_string(width_) + "x" + std::to_string(height_));
  }

  bool update_pixel(std::size_t base, std::uint8_t& used, double x) {
    double* mean = mean_.data() + base;
    double* var = var_.data() + base;
    double* sigma = sigma_.data() + base;
    double* w = weight_.data() + base;
    const double rho = params_.learning_rate;
    const int n = used;

    int match = -1;
    for (int i = 0; i < n; ++i) {
      const double d = x - mean[i];
      if (d * d <= match_sq_ * var[i]) {
        match = i;
        break;
      }
    }
    bool foreground = true;
    if (match >= 0) {
      double cumulative = 0.0;
      for (int i = 0; i < match; ++i) cumulative += w[i];
      foreground = !(cumulative < params_.background_fraction);
    }

    for (int i = 0; i < n; ++i) w[i] = (1.0 - rho) * w[i] + (i == match ? rho : 0.0);
    int count = n;
    if (match >= 0) {
      const double d = x - mean[match];
      mean[match] += rho * d;
      var[match] = std::max(params_.variance_floor, var[match] + rho * (d * d - var[match]));
      sigma[match] = std::sqrt(var[match]);
    } else {
      const int slot = n < params_.components ? n : n - 1;
      mean[slot] = x;
      var[slot] = params_.variance_init;
      sigma[slot] = std::sqrt(params_.variance_init);
      w[slot] = rho;
      count = slot + 1;
      used = static_cast<std::uint8_t>(count);
    }

    double total = 0.0;
    for (int i = 0; i < count; ++i) total += w[i];
    for (int i = 0; i < count; ++i) w[i] /= total;

    // Stable insertion sort on weight / sigma, descending.
    double key[256];
    for (int i = 0; i < count; ++i) key[i] = w[i] / sigma[i];
    for (int i = 1; i < count; ++i) {
      int j = i;
      while (j > 0 && key[j - 1] < key[j]) {
        std::swap(key[j - 1], key[j]);
        std::swap(mean[j - 1], mean[j]);
        std::swap(var[j - 1], var[j]);
        std::swap(sigma[j - 1], sigma[j]);
        std::swap(w[j - 1], w[j]);
        --j;
      }
    }
    return foreground;
  }

  int width_;
  int height_;
  GmmParams params_;
  double match_sq_ = 0.0;
  std::vector<double> mean_, var_, sigma_, weight_;
  std::vector<std::uint8_t> used_;
};

/// Boolean median (majority vote) over a k x k window with edge replication.
inline ForegroundMask median_filter(const ForegroundMask& mask, int k) {
  if (k < 1 || k % 2 == 0) throw Error("foreground-extraction", "median kernel must be odd and >= 1");
  const int w = mask.width();
  const int h = mask.height();
  ForegroundMask out(w, h);
  if (w == 0 || h == 0) return out;
  const int r = k / 2;
  const int half = (k * k) / 2;
  // Horizontal window sums with clamped columns, then vertical.
  std::vector<int> rows(static_cast<std::size_t>(w) * h);
  for (int y = 0; y < h; ++y) {
    const auto* src = mask.bits_.data() + static_cast<std::size_t>(y) * w;
    int* dst = rows.data() + static_cast<std::size_t>(y) * w;
    for (int x = 0; x < w; ++x) {
      int s = 0;
      for (int dx = -r; dx <= r; ++dx) s += src[std::clamp(x + dx, 0, w - 1)];
      dst[x] = s;
    }
  }
  std::size_t count = 0;
  for (int y = 0; y < h; ++y) {
    auto* dst = out.bits_.data() + static_cast<std::size_t>(y) * w;
    for (int x = 0; x < w; ++x) {
      int s = 0;
      for (int dy = -r; dy <= r; ++dy)
        s += rows[static_cast<std::size_t>(std::clamp(y + dy, 0, h - 1)) * w + x];
      const bool on = s > half;
      dst[x] = on ? 1 : 0;
      count += on;
    }
  }
  out.count_ = count;
  return out;
}

inline std::size_t foreground_count(const ForegroundMask& mask) { return mask.count(); }

/// Binary PBM (P4), foreground = 1 (black).
inline void write_pbm(const std::string& path, const ForegroundMask& mask) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw StreamError("cannot write " + path);
  out << "P4\n" << mask.width() << ' ' << mask.height() << '\n';
  std::vector<char> row(static_cast<std::size_t>((mask.width() + 7) / 8));
  for (int y = 0; y < mask.height(); ++y) {
    std::fill(row.begin(), row.end(), 0);
    for (int x = 0; x < mask.width(); ++x)
      if (mask.at(x, y)) row[static_cast<std::size_t>(x / 8)] |= static_cast<char>(0x80 >> (x % 8));
    out.write(row.data(), static_cast<std::streamsize>(row.size()));
  }
}

}  // namespace stungage
