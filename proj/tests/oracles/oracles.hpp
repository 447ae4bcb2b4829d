#pragma once

// Reference implementations written straight from the definitions. They are
// slow on purpose and share no code with the library.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <utility>
#include <vector>

namespace oracle {

// Per-pixel mixture kept as a plain list of structs.
struct Gaussian {
  double w, mu, var;
};

struct GmmSettings {
  int k = 3;
  double rho = 0.01;
  double tb = 0.8;
  double lambda = 2.5;
  double var0 = 225.0;
  double var_min = 4.0;
};

class NaiveGmm {
 public:
  NaiveGmm(int n_pixels, GmmSettings s) : s_(s), px_(static_cast<std::size_t>(n_pixels)) {
    for (auto& p : px_) p.push_back({1.0, 0.0, s.var0});
  }

  void seed(const std::vector<std::uint8_t>& frame) {
    for (std::size_t i = 0; i < px_.size(); ++i) px_[i][0].mu = frame[i];
  }

  std::vector<std::uint8_t> step(const std::vector<std::uint8_t>& frame) {
    std::vector<std::uint8_t> mask(frame.size());
    for (std::size_t i = 0; i < frame.size(); ++i) mask[i] = pixel(px_[i], frame[i]) ? 1 : 0;
    return mask;
  }

 private:
  bool pixel(std::vector<Gaussian>& g, double x) {
    std::optional<std::size_t> hit;
    for (std::size_t i = 0; i < g.size() && !hit; ++i) {
      const double d = x - g[i].mu;
      if (d * d <= s_.lambda * s_.lambda * g[i].var) hit = i;
    }
    bool fg = true;
    if (hit) {
      double before = 0.0;
      for (std::size_t i = 0; i < *hit; ++i) before += g[i].w;
      fg = before >= s_.tb;
    }
    for (std::size_t i = 0; i < g.size(); ++i) g[i].w = (1.0 - s_.rho) * g[i].w + (hit && *hit == i ? s_.rho : 0.0);
    if (hit) {
      auto& c = g[*hit];
      const double d = x - c.mu;
      c.mu += s_.rho * d;
      c.var = std::max(s_.var_min, c.var + s_.rho * (d * d - c.var));
    } else if (static_cast<int>(g.size()) < s_.k) {
      g.push_back({s_.rho, x, s_.var0});
    } else {
      g.back() = {s_.rho, x, s_.var0};
    }
    double total = 0.0;
    for (const auto& c : g) total += c.w;
    for (auto& c : g) c.w /= total;
    std::stable_sort(g.begin(), g.end(), [](const Gaussian& a, const Gaussian& b) {
      return a.w / std::sqrt(a.var) > b.w / std::sqrt(b.var);
    });
    return fg;
  }

  GmmSettings s_;
  std::vector<std::vector<Gaussian>> px_;
};

// Majority by sorting the clamped k x k neighborhood and taking its middle.
inline std::vector<std::uint8_t> sort_median(const std::vector<std::uint8_t>& m, int w, int h, int k) {
  std::vector<std::uint8_t> out(m.size());
  const int r = k / 2;
  std::vector<std::uint8_t> win;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      win.clear();
      for (int dy = -r; dy <= r; ++dy)
        for (int dx = -r; dx <= r; ++dx) {
          const int xx = std::clamp(x + dx, 0, w - 1);
          const int yy = std::clamp(y + dy, 0, h - 1);
          win.push_back(m[static_cast<std::size_t>(yy * w + xx)]);
        }
      std::sort(win.begin(), win.end());
      out[static_cast<std::size_t>(y * w + x)] = win[win.size() / 2];
    }
  return out;
}

// All maximal in-band intervals of length >= min_len, by checking every
// (start, end) pair against the definition.
inline std::vector<std::pair<std::int64_t, std::int64_t>> runs_by_definition(
    const std::vector<std::optional<std::size_t>>& c, std::size_t lo, std::size_t hi, int min_len) {
  auto in = [&](std::int64_t i) {
    return i >= 0 && i < static_cast<std::int64_t>(c.size()) && c[static_cast<std::size_t>(i)] &&
           *c[static_cast<std::size_t>(i)] >= lo && *c[static_cast<std::size_t>(i)] <= hi;
  };
  std::vector<std::pair<std::int64_t, std::int64_t>> out;
  const auto n = static_cast<std::int64_t>(c.size());
  for (std::int64_t a = 0; a < n; ++a)
    for (std::int64_t b = a; b < n; ++b) {
      bool all = true;
      for (std::int64_t i = a; i <= b && all; ++i) all = in(i);
      if (all && !in(a - 1) && !in(b + 1) && b - a + 1 >= min_len) out.emplace_back(a, b);
    }
  return out;
}

// Linear scan with an explicit in-band flag array.
inline std::vector<std::pair<std::int64_t, std::int64_t>> runs_by_scan(const std::vector<std::optional<std::size_t>>& c,
                                                                       std::size_t lo, std::size_t hi, int min_len) {
  std::vector<char> flag(c.size());
  for (std::size_t i = 0; i < c.size(); ++i) flag[i] = c[i] && *c[i] >= lo && *c[i] <= hi;
  std::vector<std::pair<std::int64_t, std::int64_t>> out;
  std::size_t i = 0;
  while (i < flag.size()) {
    if (!flag[i]) {
      ++i;
      continue;
    }
    std::size_t j = i;
    while (j + 1 < flag.size() && flag[j + 1]) ++j;
    if (static_cast<int>(j - i + 1) >= min_len) out.emplace_back(i, j);
    i = j + 1;
  }
  return out;
}

// Direct sum from raw counts in long double.
inline long double chi_square(const std::vector<std::uint64_t>& a, const std::vector<std::uint64_t>& b) {
  long double na = 0, nb = 0;
  for (auto v : a) na += v;
  for (auto v : b) nb += v;
  long double d = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const long double pa = a[i] / na;
    const long double pb = b[i] / nb;
    if (pa + pb > 0) d += (pa - pb) * (pa - pb) / (pa + pb);
  }
  return d;
}

// Two-sided Student t p-value: 1 - 2 * integral_0^|t| pdf, composite Simpson.
inline double t_two_sided(double t, double df, int intervals = 20000) {
  const double x1 = std::abs(t);
  if (x1 == 0.0) return 1.0;
  const double logc = std::lgamma((df + 1) / 2) - std::lgamma(df / 2) - 0.5 * std::log(df * M_PI);
  auto pdf = [&](double x) { return std::exp(logc - (df + 1) / 2 * std::log1p(x * x / df)); };
  const double h = x1 / intervals;
  long double s = pdf(0.0) + pdf(x1);
  for (int i = 1; i < intervals; ++i) s += (i % 2 ? 4.0L : 2.0L) * pdf(i * h);
  const long double area = s * h / 3.0L;
  return static_cast<double>(1.0L - 2.0L * area);
}

// Pinhole projection with the rotation built by Rodrigues' formula.
struct Vec3 {
  double x, y, z;
};

inline std::pair<double, double> project(const Vec3& rvec, const Vec3& t, double fx, double fy, double cx, double cy,
                                         const Vec3& p) {
  const double th = std::sqrt(rvec.x * rvec.x + rvec.y * rvec.y + rvec.z * rvec.z);
  Vec3 q = p;
  if (th > 0) {
    const Vec3 k{rvec.x / th, rvec.y / th, rvec.z / th};
    const double c = std::cos(th), s = std::sin(th);
    const double kd = k.x * p.x + k.y * p.y + k.z * p.z;
    const Vec3 kx{k.y * p.z - k.z * p.y, k.z * p.x - k.x * p.z, k.x * p.y - k.y * p.x};
    q = {p.x * c + kx.x * s + k.x * kd * (1 - c), p.y * c + kx.y * s + k.y * kd * (1 - c),
         p.z * c + kx.z * s + k.z * kd * (1 - c)};
  }
  q = {q.x + t.x, q.y + t.y, q.z + t.z};
  return {fx * q.x / q.z + cx, fy * q.y / q.z + cy};
}

// Per-second energies: window k is [start + k fps, start + (k+1) fps).
struct Window {
  std::int64_t k;
  double energy;
};

inline std::vector<Window> window_energy(const std::vector<std::pair<std::int64_t, double>>& samples,
                                         std::int64_t start, std::int64_t end, int fps) {
  std::vector<Window> out;
  for (std::int64_t k = 0; start + k * fps <= end; ++k) {
    const std::int64_t a = start + k * fps;
    const std::int64_t b = a + fps - 1;
    double e = 0.0;
    int n = 0;
    for (const auto& [ts, x] : samples)
      if (ts >= a && ts <= b && ts <= end) {
        e += x * x;
        ++n;
      }
    if (n == 0) continue;
    if (b > end && 2 * n < fps) continue;
    out.push_back({k, e});
  }
  return out;
}

}  // namespace oracle
