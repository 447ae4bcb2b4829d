#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <vector>

#include "stungage/error.hpp"
#include "stungage/image.hpp"

namespace stungage {

/// Intensity histogram with B bins, B a power of two dividing 256.
struct Histogram {
  std::vector<std::uint64_t> counts;
  std::uint64_t total = 0;

  int bins() const noexcept { return static_cast<int>(counts.size()); }
  bool operator==(const Histogram&) const = default;
};

inline bool valid_bin_count(int bins) {
  return bins >= 1 && bins <= 256 && std::has_single_bit(static_cast<unsigned>(bins));
}

/// Bin of intensity v is floor(v * B / 256).
inline Histogram build_scaled_histogram(const GrayImage& frame, int bins) {
  if (!valid_bin_count(bins)) throw Error("presence-analysis", "bin count must divide 256");
  const int shift = 8 - std::countr_zero(static_cast<unsigned>(bins));
  std::array<std::uint64_t, 256> raw{};
  for (auto v : frame.pixels()) ++raw[v];
  Histogram h;
  h.counts.assign(static_cast<std::size_t>(bins), 0);
  for (int v = 0; v < 256; ++v) h.counts[static_cast<std::size_t>(v >> shift)] += raw[static_cast<std::size_t>(v)];
  h.total = frame.size();
  return h;
}

enum class ChiSquareVariant {
  symmetric,  // (pA - pB)^2 / (pA + pB)
  one_sided,  // (pA - pB)^2 / pA
};

/// Chi-square distance between unit-normalized histograms. The symmetric form
/// lies in [0, 2].
inline double chi_square_distance(const Histogram& a, const Histogram& b,
                                  ChiSquareVariant variant = ChiSquareVariant::symmetric) {
  if (a.bins() != b.bins()) throw Error("presence-analysis", "histogram bin counts differ");
  if (a.total == 0 || b.total == 0) throw Error("presence-analysis", "empty histogram");
  const double na = static_cast<double>(a.total);
  const double nb = static_cast<double>(b.total);
  double d = 0.0;
  for (std::size_t i = 0; i < a.counts.size(); ++i) {
    const double pa = static_cast<double>(a.counts[i]) / na;
    const double pb = static_cast<double>(b.counts[i]) / nb;
    const double diff = pa - pb;
    if (variant == ChiSquareVariant::symmetric) {
      if (pa + pb > 0.0) d += diff * diff / (pa + pb);
    } else if (pa > 0.0) {
      d += diff * diff / pa;
    }
  }
  return d;
}

/// True iff the face was detected in at least `min_fraction` of the non-gap
/// frames. `face_flags` holds one entry per frame of the event; nullopt is a
/// missing frame.
inline bool visual_presence(std::span<const std::optional<bool>> face_flags, double min_fraction) {
  std::size_t present = 0;
  std::size_t detected = 0;
  for (const auto& f : face_flags) {
    if (!f) continue;
    ++present;
    detected += *f;
  }
  if (present == 0) return false;
  return static_cast<double>(detected) >= min_fraction * static_cast<double>(present);
}

struct ContextualResult {
  bool present = false;
  double min_distance = std::numeric_limits<double>::infinity();
};

/// Pairs the first `n` histograms from each side by index and keeps the
/// smallest chi-square distance.
inline ContextualResult contextual_presence(std::span<const Histogram> instructor,
                                            std::span<const Histogram> student, std::size_t n,
                                            double max_distance,
                                            ChiSquareVariant variant = ChiSquareVariant::symmetric) {
  const std::size_t m = std::min({n, instructor.size(), student.size()});
  ContextualResult r;
  for (std::size_t i = 0; i < m; ++i)
    r.min_distance = std::min(r.min_distance, chi_square_distance(instructor[i], student[i], variant));
  r.present = m > 0 && r.min_distance <= max_distance;
  return r;
}

}  // namespace stungage
