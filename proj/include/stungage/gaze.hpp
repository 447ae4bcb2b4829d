#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <vector>

#include "stungage/error.hpp"
#include "stungage/pose.hpp"
#include "stungage/records.hpp"

namespace stungage {

inline CandidatePoints select_candidate_landmarks(const FaceFrameRecord& record) {
  if (!record.face_detected || !record.landmarks)
    throw Error("gaze-analysis", "no landmarks at frame " + std::to_string(record.timestamp));
  return select_candidate_landmarks(*record.landmarks);
}

/// Head pose from the six candidate landmarks: DLT seed, LM refinement.
inline LmReport estimate_head_pose(const CandidatePoints& points, const FaceModel3D& model,
                                   const CameraIntrinsics& k, const LmOptions& opts = {}) {
  const auto initial = solve_pose_dlt(points, model.points, k);
  return refine_pose_lm(initial, points, model.points, k, opts);
}

/// Pixel position of the nose end projected under the recovered pose.
inline Point2 gaze_projection(const FaceFrameRecord& record, const FaceModel3D& model,
                              const CameraIntrinsics& k, const LmOptions& opts = {}) {
  const auto report = estimate_head_pose(select_candidate_landmarks(record), model, k, opts);
  return project_point(report.pose, k, model.nose());
}

struct ProjectionSample {
  std::int64_t timestamp = 0;
  double x = 0.0;

  bool operator==(const ProjectionSample&) const = default;
};

struct TimedPoint {
  std::int64_t timestamp = 0;
  Point2 point;
};

/// Drops the vertical axis; x is divided by `width` unless `normalize` is off.
inline std::vector<ProjectionSample> horizontal_series(std::span<const TimedPoint> points, double width,
                                                       bool normalize = true) {
  if (!(width > 0.0)) throw Error("gaze-analysis", "frame width must be positive");
  std::vector<ProjectionSample> out;
  out.reserve(points.size());
  for (const auto& p : points) out.push_back({p.timestamp, normalize ? p.point.x() / width : p.point.x()});
  return out;
}

struct EnergySeries {
  std::vector<std::int64_t> windows;  // window index k, relative to the event start
  std::vector<double> energies;       // sum of x^2 over window k
};

/// Per-second gazing energy over [start, end]. Window k covers
/// [start + k fps, start + (k + 1) fps). Empty windows are omitted; a window
/// running past `end` is kept only with at least fps / 2 samples. Samples
/// outside [start, end] are ignored.
inline EnergySeries gazing_energy(std::span<const ProjectionSample> samples, std::int64_t start,
                                  std::int64_t end, int fps) {
  if (fps <= 0) throw ConfigError("fps must be positive");
  EnergySeries out;
  if (end < start) return out;
  const std::int64_t n_windows = (end - start) / fps + 1;
  std::vector<double> sum(static_cast<std::size_t>(n_windows), 0.0);
  std::vector<int> hits(static_cast<std::size_t>(n_windows), 0);
  std::int64_t last_ts = std::numeric_limits<std::int64_t>::min();
  for (const auto& s : samples) {
    if (s.timestamp < last_ts) throw Error("gaze-analysis", "projection samples out of order");
    last_ts = s.timestamp;
    if (s.timestamp < start || s.timestamp > end) continue;
    const auto w = static_cast<std::size_t>((s.timestamp - start) / fps);
    sum[w] += s.x * s.x;
    ++hits[w];
  }
  for (std::int64_t k = 0; k < n_windows; ++k) {
    const auto i = static_cast<std::size_t>(k);
    if (hits[i] == 0) continue;
    const bool partial = start + (k + 1) * fps - 1 > end;
    if (partial && 2 * hits[i] < fps) continue;
    out.windows.push_back(k);
    out.energies.push_back(sum[i]);
  }
  return out;
}

}  // namespace stungage
