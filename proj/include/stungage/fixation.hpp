#pragma once

#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "stungage/error.hpp"

namespace stungage {

/// Spatial band [low, high] on the foreground pixel count and the minimum
/// run length in frames.
struct ThresholdSet {
  std::size_t low = 0;
  std::size_t high = 0;
  int min_frames = 1;

  /// Resolves area fractions against a W x H frame.
  static ThresholdSet from_fractions(double low_fraction, double high_fraction, int min_frames,
                                     int width, int height) {
    const double area = static_cast<double>(width) * height;
    ThresholdSet th{static_cast<std::size_t>(std::ceil(low_fraction * area)),
                    static_cast<std::size_t>(std::floor(high_fraction * area)), min_frames};
    th.validate(static_cast<std::size_t>(area));
    return th;
  }

  void validate(std::size_t area) const {
    if (low == 0) throw ConfigError("fixation spatial low threshold resolves to 0 pixels");
    if (!(low < high)) throw ConfigError("fixation spatial low < high violated");
    if (high > area) throw ConfigError("fixation spatial high exceeds frame area");
    if (min_frames < 1) throw ConfigError("fixation min_frames must be >= 1");
  }

  bool in_band(std::size_t count) const noexcept { return low <= count && count <= high; }
};

struct FixationEvent {
  std::int64_t start = 0;  // inclusive frame index
  std::int64_t end = 0;    // inclusive frame index
  std::string source;

  std::int64_t length() const noexcept { return end - start + 1; }
  bool operator==(const FixationEvent&) const = default;
};

/// Incremental run detector: feed one count (or a gap) per consecutive frame
/// index. A gap frame never qualifies.
class RunTracker {
 public:
  RunTracker(ThresholdSet th, std::string source) : th_(th), source_(std::move(source)) {}

  /// Returns the event closed by this frame, if any.
  std::optional<FixationEvent> feed(std::int64_t frame, std::optional<std::size_t> count) {
    if (next_ && frame != *next_)
      throw Error("fixation-detection", "frames must be fed consecutively (expected " +
                                            std::to_string(*next_) + ", got " + std::to_string(frame) + ")");
    next_ = frame + 1;
    if (count && th_.in_band(*count)) {
      if (!run_start_) run_start_ = frame;
      return std::nullopt;
    }
    return close(frame - 1);
  }

  /// Closes a run that reaches the end of the stream.
  std::optional<FixationEvent> finish() {
    if (!next_) return std::nullopt;
    return close(*next_ - 1);
  }

  /// Start of the in-band run containing the last fed frame, if any.
  std::optional<std::int64_t> open_run_start() const noexcept { return run_start_; }

  /// Zero-based position of the last fed frame inside its open run.
  std::optional<std::int64_t> position_in_run() const noexcept {
    if (!run_start_ || !next_) return std::nullopt;
    return *next_ - 1 - *run_start_;
  }

  const ThresholdSet& thresholds() const noexcept { return th_; }

 private:
  std::optional<FixationEvent> close(std::int64_t last) {
    if (!run_start_) return std::nullopt;
    FixationEvent ev{*run_start_, last, source_};
    run_start_.reset();
    if (ev.length() >= th_.min_frames) return ev;
    return std::nullopt;
  }

  ThresholdSet th_;
  std::string source_;
  std::optional<std::int64_t> run_start_;
  std::optional<std::int64_t> next_;
};

/// Maximal in-band runs of at least `min_frames` frames. Index i of `counts`
/// is frame `first_frame + i`; std::nullopt marks a missing frame.
inline std::vector<FixationEvent> detect_fixation_events(
    std::span<const std::optional<std::size_t>> counts, const ThresholdSet& th,
    const std::string& source = {}, std::int64_t first_frame = 0) {
  RunTracker tracker(th, source);
  std::vector<FixationEvent> out;
  for (std::size_t i = 0; i < counts.size(); ++i)
    if (auto ev = tracker.feed(first_frame + static_cast<std::int64_t>(i), counts[i])) out.push_back(*ev);
  if (auto ev = tracker.finish()) out.push_back(*ev);
  return out;
}

inline std::vector<FixationEvent> detect_fixation_events(std::span<const std::size_t> counts,
                                                         const ThresholdSet& th,
                                                         const std::string& source = {}) {
  std::vector<std::optional<std::size_t>> series(counts.begin(), counts.end());
  return detect_fixation_events(std::span<const std::optional<std::size_t>>(series), th, source);
}

/// Student event whose start is nearest the instructor event's start within
/// +-tolerance frames (ties go to the earlier one). Without a candidate the
/// instructor event is reused on the student's timeline.
inline FixationEvent match_student_event(const FixationEvent& instructor_event,
                                         std::span<const FixationEvent> student_events,
                                         std::int64_t tolerance,
                                         const std::string& student_source = {}) {
  const FixationEvent* best = nullptr;
  std::int64_t best_gap = 0;
  for (const auto& ev : student_events) {
    const std::int64_t gap = std::abs(ev.start - instructor_event.start);
    if (gap > tolerance) continue;
    if (!best || gap < best_gap || (gap == best_gap && ev.start < best->start)) {
      best = &ev;
      best_gap = gap;
    }
  }
  if (best) return *best;
  FixationEvent reused = instructor_event;
  if (!student_source.empty()) reused.source = student_source;
  return reused;
}

}  // namespace stungage
