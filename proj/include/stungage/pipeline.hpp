#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "stungage/config.hpp"
#include "stungage/eval.hpp"
#include "stungage/fixation.hpp"
#include "stungage/foreground.hpp"
#include "stungage/gaze.hpp"
#include "stungage/presence.hpp"
#include "stungage/scoring.hpp"
#include "stungage/segmentation.hpp"
#include "stungage/stats.hpp"

// Building blocks shared by the offline and live runners. Both feed the same
// per-frame kernels in the same order, which is what makes their scorecards
// byte-identical.

namespace stungage {

/// GMM update, median filter, pixel count. The model is created on the first
/// frame and optionally seeded with it.
class ForegroundCounter {
 public:
  explicit ForegroundCounter(ForegroundConfig cfg) : cfg_(cfg) {}

  std::size_t operator()(const GrayImage& frame) { return foreground_count(mask(frame)); }

  ForegroundMask mask(const GrayImage& frame) {
    if (!model_) {
      model_.emplace(frame.width(), frame.height(), cfg_.gmm);
      if (cfg_.seed_first_frame) model_->seed(frame);
    }
    return median_filter(model_->update_classify(frame), cfg_.median_kernel);
  }

 private:
  ForegroundConfig cfg_;
  std::optional<BackgroundModel> model_;
};

inline ThresholdSet stream_thresholds(const SessionConfig& cfg, int width, int height) {
  return ThresholdSet::from_fractions(cfg.fixation.spatial_low, cfg.fixation.spatial_high,
                                      cfg.fixation.resolved_min_frames(cfg.fps), width, height);
}

/// Gaze projection for one face record, or nullopt when no usable pose exists.
inline std::optional<double> gaze_x(const FaceFrameRecord& record, const ParticipantConfig& participant,
                                    const GazeConfig& gaze) {
  if (!record.face_detected || !record.landmarks) return std::nullopt;
  try {
    const auto k = participant.camera();
    const Point2 p = gaze_projection(record, gaze.face_model, k, gaze.lm);
    if (!std::isfinite(p.x())) return std::nullopt;
    return gaze.normalize ? p.x() / participant.camera_width : p.x();
  } catch (const Error&) {
    return std::nullopt;
  }
}

/// Per-frame face state of one participant: detection flag for every tick and
/// gaze projections for the frames that were solved.
class FaceTrack {
 public:
  void set_flag(std::int64_t ts, bool face) {
    if (ts < 0) throw StreamError("negative face timestamp");
    const auto i = static_cast<std::size_t>(ts);
    if (flags_.size() <= i) flags_.resize(i + 1, kMissing);
    flags_[i] = face ? kFace : kNoFace;
  }
  void set_x(std::int64_t ts, double x) { x_[ts] = x; }

  std::optional<bool> flag(std::int64_t ts) const {
    if (ts < 0 || static_cast<std::size_t>(ts) >= flags_.size() || flags_[static_cast<std::size_t>(ts)] == kMissing)
      return std::nullopt;
    return flags_[static_cast<std::size_t>(ts)] == kFace;
  }

  std::vector<std::optional<bool>> flags(std::int64_t first, std::int64_t last) const {
    std::vector<std::optional<bool>> out;
    for (std::int64_t t = first; t <= last; ++t) out.push_back(flag(t));
    return out;
  }

  std::vector<ProjectionSample> samples(std::int64_t first, std::int64_t last) const {
    std::vector<ProjectionSample> out;
    for (auto it = x_.lower_bound(first); it != x_.end() && it->first <= last; ++it) out.push_back({it->first, it->second});
    return out;
  }

  void prune_before(std::int64_t ts) { x_.erase(x_.begin(), x_.lower_bound(ts)); }

 private:
  static constexpr std::int8_t kMissing = -1;
  static constexpr std::int8_t kNoFace = 0;
  static constexpr std::int8_t kFace = 1;
  std::vector<std::int8_t> flags_;
  std::map<std::int64_t, double> x_;
};

/// Histograms keyed by timestamp, filled only for frames some event needs.
class HistogramStore {
 public:
  void put(std::int64_t ts, Histogram h) { h_.insert_or_assign(ts, std::move(h)); }
  bool contains(std::int64_t ts) const { return h_.contains(ts); }

  /// Histograms of the present frames among the first `n` frames of
  /// [start, end].
  std::vector<Histogram> first_n(std::int64_t start, std::int64_t end, int n) const {
    const std::int64_t last = std::min(end, start + n - 1);
    std::vector<Histogram> out;
    for (auto it = h_.lower_bound(start); it != h_.end() && it->first <= last; ++it) out.push_back(it->second);
    return out;
  }

  void prune_before(std::int64_t ts) { h_.erase(h_.begin(), h_.lower_bound(ts)); }

 private:
  std::map<std::int64_t, Histogram> h_;
};

/// Frames at the start of an event whose histograms feed contextual presence.
inline bool in_histogram_window(const FixationEvent& e, std::int64_t ts, int n) {
  return ts >= e.start && ts <= std::min(e.end, e.start + n - 1);
}

struct StudentInputs {
  const ParticipantConfig* participant = nullptr;
  std::span<const FixationEvent> events;  // closed events on the student's own screen
  const HistogramStore* screen = nullptr;
  const FaceTrack* face = nullptr;
};

struct EventOutcome {
  FixationEvent event;
  ContextualResult instructor;
  std::vector<FixationEvent> matched;               // per student
  std::vector<std::optional<EventVerdict>> verdicts;  // per student; empty when the instructor was absent
  std::optional<EnergySeries> instructor_energy;
  std::vector<std::optional<EnergySeries>> student_energy;
};

struct CascadeTrace {
  int visual = 0;
  int contextual = 0;
  int cognitive = 0;
};

/// Instructor contextual presence, then the cascade for every student.
inline EventOutcome evaluate_event(const SessionConfig& cfg, const FixationEvent& event,
                                   const HistogramStore& presentation, const HistogramStore& instructor_screen,
                                   const FaceTrack& instructor_face, std::span<const StudentInputs> students,
                                   CascadeTrace* trace = nullptr) {
  const auto& pc = cfg.presence;
  const auto n = static_cast<std::size_t>(pc.first_frames);
  EventOutcome out;
  out.event = event;
  const auto pres_hist = presentation.first_n(event.start, event.end, pc.first_frames);
  out.instructor = contextual_presence(pres_hist, instructor_screen.first_n(event.start, event.end, pc.first_frames),
                                       n, pc.max_distance, pc.chi_square);
  const CascadeOptions opts{cfg.gaze.alpha, cfg.scoring.exclude_insufficient};
  const auto tol = cfg.fixation.resolved_tolerance(cfg.fps);

  std::optional<EnergySeries> instructor_energy;
  auto instr_energy = [&]() -> const EnergySeries& {
    if (!instructor_energy) {
      const auto s = instructor_face.samples(event.start, event.end);
      instructor_energy = gazing_energy(s, event.start, event.end, cfg.fps);
    }
    return *instructor_energy;
  };

  for (const auto& st : students) {
    const auto& sid = st.participant->pid.id;
    const FixationEvent m = match_student_event(event, st.events, tol, sid);
    out.matched.push_back(m);
    out.student_energy.emplace_back();
    if (!out.instructor.present) {
      out.verdicts.emplace_back();
      continue;
    }
    EventVerdict base;
    base.event_start = event.start;
    base.event_end = event.end;
    base.student = sid;
    auto visual = [&] {
      if (trace) ++trace->visual;
      const auto flags = st.face->flags(m.start, m.end);
      return visual_presence(flags, pc.visual_fraction);
    };
    auto contextual = [&] {
      if (trace) ++trace->contextual;
      return contextual_presence(pres_hist, st.screen->first_n(m.start, m.end, pc.first_frames), n,
                                 pc.max_distance, pc.chi_square);
    };
    auto cognitive = [&] {
      if (trace) ++trace->cognitive;
      const auto s = st.face->samples(event.start, event.end);
      out.student_energy.back() = gazing_energy(s, event.start, event.end, cfg.fps);
      return t_test_equal_mean(instr_energy().energies, out.student_energy.back()->energies, cfg.gaze.test);
    };
    out.verdicts.push_back(classify_event(base, visual, contextual, cognitive, opts));
  }
  out.instructor_energy = instructor_energy;
  return out;
}

struct SegmentResult {
  SegmentScorecard card;
  SegmentMode mode = SegmentMode::automatic;
  int slice_minutes = 5;
  std::vector<std::pair<std::string, Label>> baseline;  // per student
};

/// Scorecard for one segment from the outcomes of events that start inside it.
inline SegmentResult score_segment(const SessionConfig& cfg, std::int64_t id, const Segment& seg,
                                   std::span<const EventOutcome> outcomes,
                                   std::span<const FaceTrack* const> student_faces) {
  const auto students = cfg.students();
  std::vector<std::string> ids;
  for (const auto* s : students) ids.push_back(s->pid.id);
  std::vector<const EventOutcome*> inside;
  for (const auto& o : outcomes)
    if (o.event.start >= seg.start && o.event.start <= seg.end) inside.push_back(&o);
  auto present_buf = std::make_unique<bool[]>(inside.size());
  std::vector<std::vector<std::optional<EventVerdict>>> verdicts(students.size());
  for (std::size_t i = 0; i < inside.size(); ++i) {
    present_buf[i] = inside[i]->instructor.present;
    for (std::size_t s = 0; s < students.size(); ++s) verdicts[s].push_back(inside[i]->verdicts[s]);
  }
  std::span<const bool> present(present_buf.get(), inside.size());
  SegmentResult r;
  r.card = build_scorecard(id, seg.start, seg.end, ids, present, verdicts);
  for (std::size_t s = 0; s < students.size(); ++s) {
    const auto flags = student_faces[s]->flags(seg.start, seg.end);
    r.baseline.emplace_back(ids[s], baseline_continuous_gaze(flags, seg.length()));
  }
  return r;
}

inline std::optional<Label> predict_label(const StudentScore& s, double threshold) {
  if (!s.score) return std::nullopt;
  return *s.score >= threshold ? Label::engaged : Label::non_engaged;
}

inline Json prediction_json(const SegmentResult& r, double threshold) {
  Json rows = Json::array();
  for (const auto& s : r.card.students) {
    const auto label = predict_label(s, threshold);
    rows.push_back(Json{{"segment", r.card.segment},
                        {"student", s.id},
                        {"prediction", label ? Json(std::string(to_string(*label))) : Json(nullptr)},
                        {"Cs", optional_json(s.score)}});
  }
  return rows;
}

inline Json baseline_json(const SegmentResult& r) {
  Json rows = Json::array();
  for (const auto& [id, label] : r.baseline)
    rows.push_back(Json{{"segment", r.card.segment}, {"student", id}, {"baseline", std::string(to_string(label))}});
  return rows;
}

inline Json event_json(const FixationEvent& e) { return Json{{"source", e.source}, {"start", e.start}, {"end", e.end}}; }

inline Json energy_json(const std::string& who, const FixationEvent& e, const EnergySeries& s) {
  return Json{{"participant", who}, {"event_start", e.start}, {"event_end", e.end},
              {"windows", s.windows}, {"energies", s.energies}};
}

}  // namespace stungage
