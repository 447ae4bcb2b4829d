#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string_view>
#include <utility>
#include <vector>

#include "stungage/error.hpp"
#include "stungage/image.hpp"

namespace stungage {

enum class CropPosition { upper_right = 0, lower_right = 1, middle_bottom = 2 };

inline std::string_view to_string(CropPosition p) {
  switch (p) {
    case CropPosition::upper_right: return "upper-right";
    case CropPosition::lower_right: return "lower-right";
    case CropPosition::middle_bottom: return "middle-bottom";
  }
  return "?";
}

/// A 30-row by 50-column window where slide numbers usually sit.
struct CropRegion {
  int x = 0;
  int y = 0;
  CropPosition position = CropPosition::upper_right;

  static constexpr int kWidth = 50;
  static constexpr int kHeight = 30;
  static constexpr int kInset = 5;
};

inline constexpr int kMinSegmentationWidth = CropRegion::kWidth + 2 * CropRegion::kInset;
inline constexpr int kMinSegmentationHeight = 2 * CropRegion::kHeight + 2 * CropRegion::kInset;

inline std::array<CropRegion, 3> crop_layout(int width, int height) {
  if (width < kMinSegmentationWidth || height < kMinSegmentationHeight)
    throw Error("slide-segmentation", "frame " + std::to_string(width) + "x" + std::to_string(height) +
                                          " too small for slide-number crops");
  const int right = width - CropRegion::kInset - CropRegion::kWidth;
  const int bottom = height - CropRegion::kInset - CropRegion::kHeight;
  return {{{right, CropRegion::kInset, CropPosition::upper_right},
           {right, bottom, CropPosition::lower_right},
           {(width - CropRegion::kWidth) / 2, bottom, CropPosition::middle_bottom}}};
}

using CropSet = std::array<GrayImage, 3>;

inline CropSet crop_regions(const GrayImage& frame) {
  const auto layout = crop_layout(frame.width(), frame.height());
  CropSet out;
  for (std::size_t i = 0; i < 3; ++i)
    out[i] = frame.crop(layout[i].x, layout[i].y, CropRegion::kWidth, CropRegion::kHeight);
  return out;
}

/// Mean squared intensity difference.
inline double mse(const GrayImage& a, const GrayImage& b) {
  if (a.width() != b.width() || a.height() != b.height())
    throw Error("slide-segmentation", "mse shape mismatch");
  if (a.empty()) return 0.0;
  std::int64_t sum = 0;
  auto pa = a.pixels();
  auto pb = b.pixels();
  for (std::size_t i = 0; i < pa.size(); ++i) {
    const int d = static_cast<int>(pa[i]) - static_cast<int>(pb[i]);
    sum += d * d;
  }
  return static_cast<double>(sum) / static_cast<double>(pa.size());
}

struct Segment {
  std::int64_t start = 0;
  std::int64_t end = 0;  // inclusive
  bool significant = true;

  std::int64_t length() const noexcept { return end - start + 1; }
  bool operator==(const Segment&) const = default;
};

/// Streaming slide-transition detector over the three crop positions.
///
/// Until a position is locked, a transition needs exactly one position whose
/// consecutive-frame MSE exceeds the threshold; that position is then locked.
/// Afterwards a transition needs the locked position to change while the other
/// two stay within the threshold. Each new slide is compared with the
/// number-free template at the locked position; a match marks it
/// insignificant.
class TransitionDetector {
 public:
  struct Transition {
    std::int64_t frame = 0;
    bool significant = true;
  };

  explicit TransitionDetector(double threshold, std::optional<CropSet> template_crops = std::nullopt)
      : threshold_(threshold), template_(std::move(template_crops)) {
    if (!(threshold > 0.0)) throw ConfigError("segments.mse_threshold must be positive");
  }

  std::optional<Transition> feed(std::int64_t frame, CropSet crops) {
    if (!previous_) {
      if (!template_) template_ = crops;
      first_ = crops;
      previous_ = std::move(crops);
      return std::nullopt;
    }
    std::array<bool, 3> changed{};
    int n_changed = 0;
    for (std::size_t i = 0; i < 3; ++i) {
      changed[i] = mse(crops[i], (*previous_)[i]) > threshold_;
      n_changed += changed[i];
    }
    std::optional<Transition> out;
    if (!locked_) {
      if (n_changed == 1) {
        for (std::size_t i = 0; i < 3; ++i)
          if (changed[i]) locked_ = static_cast<CropPosition>(i);
        out = Transition{frame, significant(crops)};
      }
    } else if (n_changed == 1 && changed[static_cast<std::size_t>(*locked_)]) {
      out = Transition{frame, significant(crops)};
    }
    previous_ = std::move(crops);
    return out;
  }

  /// Significance of the segment that starts at the first frame. Unknown until
  /// the slide-number position is locked; an unlocked stream counts as
  /// significant.
  bool first_segment_significant() const {
    if (!locked_ || !first_) return true;
    return significant(*first_);
  }

  std::optional<CropPosition> locked_position() const noexcept { return locked_; }

 private:
  bool significant(const CropSet& crops) const {
    const auto i = static_cast<std::size_t>(*locked_);
    return mse(crops[i], (*template_)[i]) > threshold_;
  }

  double threshold_;
  std::optional<CropSet> template_;
  std::optional<CropSet> first_;
  std::optional<CropSet> previous_;
  std::optional<CropPosition> locked_;
};

/// Tiles [first frame, last frame] by detected slide transitions. `frames`
/// holds (timestamp, image) pairs in increasing timestamp order.
inline std::vector<Segment> detect_transitions(
    std::span<const std::pair<std::int64_t, GrayImage>> frames, double threshold,
    const std::optional<GrayImage>& template_frame = std::nullopt) {
  if (frames.empty()) throw Error("slide-segmentation", "empty stream");
  std::optional<CropSet> tmpl;
  if (template_frame) tmpl = crop_regions(*template_frame);
  TransitionDetector detector(threshold, std::move(tmpl));
  std::vector<TransitionDetector::Transition> transitions;
  for (const auto& [ts, img] : frames)
    if (auto t = detector.feed(ts, crop_regions(img))) transitions.push_back(*t);

  std::vector<Segment> out;
  std::int64_t start = frames.front().first;
  bool sig = detector.first_segment_significant();
  for (const auto& t : transitions) {
    out.push_back({start, t.frame - 1, sig});
    start = t.frame;
    sig = t.significant;
  }
  out.push_back({start, frames.back().first, sig});
  return out;
}

inline bool valid_slice_minutes(int minutes) { return minutes == 3 || minutes == 5 || minutes == 15; }

/// Fixed-length slices over frames [0, length). A trailing partial slice
/// shorter than a tenth of the slice length is merged into the previous one.
inline std::vector<Segment> time_slice_segments(std::int64_t length, int slice_minutes, int fps) {
  if (!valid_slice_minutes(slice_minutes))
    throw Error("slide-segmentation", "slice must be 3, 5 or 15 minutes, got " + std::to_string(slice_minutes));
  if (fps <= 0) throw ConfigError("fps must be positive");
  std::vector<Segment> out;
  if (length <= 0) return out;
  const std::int64_t slice = static_cast<std::int64_t>(slice_minutes) * 60 * fps;
  for (std::int64_t s = 0; s < length; s += slice) out.push_back({s, std::min(s + slice, length) - 1, true});
  if (out.size() > 1 && out.back().length() * 10 < slice) {
    const auto tail_end = out.back().end;
    out.pop_back();
    out.back().end = tail_end;
  }
  return out;
}

}  // namespace stungage
