#pragma once

#include <future>
#include <set>
#include <string>
#include <vector>

#include "stungage/ingest.hpp"
#include "stungage/pipeline.hpp"

namespace stungage {

struct RunOptions {
  std::optional<SegmentMode> mode;  // overrides the session config
  std::optional<int> slice_minutes;
  bool parallel = true;
};

inline SessionConfig apply_overrides(SessionConfig cfg, const RunOptions& opts) {
  if (opts.mode) cfg.segments.mode = *opts.mode;
  if (opts.slice_minutes) cfg.segments.slice_minutes = *opts.slice_minutes;
  cfg.validate();
  return cfg;
}

struct ScreenScan {
  std::string name;
  int width = 0;
  int height = 0;
  std::int64_t first_ts = -1;
  std::int64_t last_ts = -1;
  std::vector<std::pair<std::int64_t, std::size_t>> counts;  // present frames only

  /// Dense series from first_ts to last_ts; gaps are nullopt.
  std::vector<std::optional<std::size_t>> dense() const {
    std::vector<std::optional<std::size_t>> out;
    if (counts.empty()) return out;
    out.resize(static_cast<std::size_t>(last_ts - first_ts + 1));
    for (const auto& [ts, c] : counts) out[static_cast<std::size_t>(ts - first_ts)] = c;
    return out;
  }
};

struct TransitionScan {
  std::vector<TransitionDetector::Transition> transitions;
  bool first_significant = true;
};

struct OfflineResult {
  SessionConfig config;
  std::int64_t ticks = 0;
  std::vector<Segment> tiling;  // every segment, significant or not; index = segment id
  std::vector<SegmentResult> segments;  // significant segments in id order
  std::vector<FixationEvent> instructor_events;
  std::vector<std::vector<FixationEvent>> student_events;
  std::vector<EventOutcome> outcomes;
  std::vector<ScreenScan> scans;  // presentation first, then students
  FaceTrack instructor_face;
  std::vector<FaceTrack> student_faces;
};

namespace detail {

inline ScreenScan scan_screen(ScreenSource& src, const std::string& name, const ForegroundConfig& fg,
                              TransitionScan* transitions, const SegmentConfig& seg,
                              const std::optional<GrayImage>& tmpl) {
  ScreenScan scan;
  scan.name = name;
  ForegroundCounter counter(fg);
  std::optional<TransitionDetector> detector;
  if (transitions) {
    std::optional<CropSet> t;
    if (tmpl) t = crop_regions(*tmpl);
    detector.emplace(seg.mse_threshold, std::move(t));
  }
  while (auto r = src.next()) {
    if (scan.first_ts < 0) {
      scan.first_ts = r->timestamp;
      scan.width = r->pixels.width();
      scan.height = r->pixels.height();
    }
    scan.last_ts = r->timestamp;
    scan.counts.emplace_back(r->timestamp, counter(r->pixels));
    if (detector)
      if (auto t = detector->feed(r->timestamp, crop_regions(r->pixels))) transitions->transitions.push_back(*t);
  }
  if (detector) transitions->first_significant = detector->first_segment_significant();
  return scan;
}

inline std::vector<FixationEvent> scan_events(const SessionConfig& cfg, const ScreenScan& scan,
                                              const std::string& source) {
  if (scan.counts.empty()) return {};
  const auto th = stream_thresholds(cfg, scan.width, scan.height);
  const auto series = scan.dense();
  return detect_fixation_events(std::span<const std::optional<std::size_t>>(series), th, source, scan.first_ts);
}

inline HistogramStore histogram_pass(ScreenSource& src, const std::set<std::int64_t>& needed, int bins) {
  HistogramStore store;
  if (needed.empty()) return store;
  const auto last = *needed.rbegin();
  while (auto r = src.next()) {
    if (r->timestamp > last) break;
    if (needed.contains(r->timestamp)) store.put(r->timestamp, build_scaled_histogram(r->pixels, bins));
  }
  return store;
}

inline bool inside_any(std::span<const FixationEvent> events, std::int64_t ts) {
  auto it = std::upper_bound(events.begin(), events.end(), ts,
                             [](std::int64_t v, const FixationEvent& e) { return v < e.start; });
  if (it == events.begin()) return false;
  --it;
  return ts <= it->end;
}

inline std::pair<FaceTrack, std::int64_t> face_pass(FaceSource& src, const ParticipantConfig& p, const GazeConfig& gaze,
                                                    std::span<const FixationEvent> solve_windows) {
  FaceTrack track;
  std::int64_t last = -1;
  while (auto r = src.next()) {
    last = r->timestamp;
    track.set_flag(r->timestamp, r->face_detected);
    if (inside_any(solve_windows, r->timestamp))
      if (auto x = gaze_x(*r, p, gaze)) track.set_x(r->timestamp, *x);
  }
  return {std::move(track), last};
}

template <class F>
auto run_task(bool parallel, F&& f) {
  return std::async(parallel ? std::launch::async : std::launch::deferred, std::forward<F>(f));
}

}  // namespace detail

/// Automatic tiling of [0, ticks) from slide transitions.
inline std::vector<Segment> tile_transitions(const TransitionScan& scan, std::int64_t ticks) {
  std::vector<Segment> out;
  if (ticks <= 0) return out;
  std::int64_t start = 0;
  bool sig = scan.first_significant;
  for (const auto& t : scan.transitions) {
    out.push_back({start, t.frame - 1, sig});
    start = t.frame;
    sig = t.significant;
  }
  out.push_back({start, ticks - 1, sig});
  return out;
}

/// Whole-session batch run: scan every stream, detect events and segments,
/// then revisit only the frames the events need.
inline OfflineResult run_offline(const SessionSource& session, const RunOptions& opts = {}) {
  OfflineResult res;
  res.config = apply_overrides(session.config(), opts);
  const auto& cfg = res.config;
  const auto& instructor = cfg.instructor();
  const auto students = cfg.students();
  const auto tmpl = session.slide_template();

  // Pass 1: foreground counts per screen stream, transitions on the presentation.
  TransitionScan transitions;
  std::vector<std::future<ScreenScan>> scans;
  scans.push_back(detail::run_task(opts.parallel, [&] {
    auto src = session.open_presentation();
    return detail::scan_screen(*src, "presentation", cfg.foreground, &transitions, cfg.segments, tmpl);
  }));
  for (const auto* s : students)
    scans.push_back(detail::run_task(opts.parallel, [&, s] {
      auto src = session.open_screen(s->pid.id);
      return detail::scan_screen(*src, s->pid.id, cfg.foreground, nullptr, cfg.segments, std::nullopt);
    }));
  for (auto& f : scans) res.scans.push_back(f.get());

  std::int64_t last_ts = -1;
  for (const auto& s : res.scans) last_ts = std::max(last_ts, s.last_ts);
  std::optional<std::int64_t> instructor_screen_last;

  res.instructor_events = detail::scan_events(cfg, res.scans[0], instructor.pid.id);
  for (std::size_t i = 0; i < students.size(); ++i)
    res.student_events.push_back(detail::scan_events(cfg, res.scans[i + 1], students[i]->pid.id));

  // Pass 2: histograms for the first n frames of each relevant event.
  const int n = cfg.presence.first_frames;
  std::set<std::int64_t> instructor_frames;
  for (const auto& e : res.instructor_events)
    for (std::int64_t t = e.start; in_histogram_window(e, t, n); ++t) instructor_frames.insert(t);

  auto pres_f = detail::run_task(opts.parallel, [&] {
    auto src = session.open_presentation();
    return detail::histogram_pass(*src, instructor_frames, cfg.presence.bins);
  });
  auto instr_f = detail::run_task(opts.parallel, [&] {
    if (!session.has_presentation()) return std::pair<HistogramStore, std::int64_t>{};
    auto src = session.open_screen(instructor.pid.id);
    HistogramStore store;
    std::int64_t last = -1;
    while (auto r = src->next()) {
      last = r->timestamp;
      if (instructor_frames.contains(r->timestamp))
        store.put(r->timestamp, build_scaled_histogram(r->pixels, cfg.presence.bins));
    }
    return std::pair<HistogramStore, std::int64_t>{std::move(store), last};
  });
  std::vector<std::future<HistogramStore>> student_hist_f;
  for (std::size_t i = 0; i < students.size(); ++i)
    student_hist_f.push_back(detail::run_task(opts.parallel, [&, i] {
      std::set<std::int64_t> frames = instructor_frames;
      for (const auto& e : res.student_events[i])
        for (std::int64_t t = e.start; in_histogram_window(e, t, n); ++t) frames.insert(t);
      auto src = session.open_screen(students[i]->pid.id);
      return detail::histogram_pass(*src, frames, cfg.presence.bins);
    }));

  // Faces: detection flags everywhere, poses inside instructor events.
  auto instr_face_f = detail::run_task(opts.parallel, [&] {
    auto src = session.open_face(instructor.pid.id);
    return detail::face_pass(*src, instructor, cfg.gaze, res.instructor_events);
  });
  std::vector<std::future<std::pair<FaceTrack, std::int64_t>>> face_f;
  for (const auto* s : students)
    face_f.push_back(detail::run_task(opts.parallel, [&, s] {
      auto src = session.open_face(s->pid.id);
      return detail::face_pass(*src, *s, cfg.gaze, res.instructor_events);
    }));

  const HistogramStore presentation = pres_f.get();
  auto [instr_store, instr_last] = instr_f.get();
  if (session.has_presentation()) instructor_screen_last = instr_last;
  std::vector<HistogramStore> student_hist;
  for (auto& f : student_hist_f) student_hist.push_back(f.get());
  {
    auto [track, last] = instr_face_f.get();
    res.instructor_face = std::move(track);
    last_ts = std::max(last_ts, last);
  }
  for (auto& f : face_f) {
    auto [track, last] = f.get();
    res.student_faces.push_back(std::move(track));
    last_ts = std::max(last_ts, last);
  }
  if (instructor_screen_last) last_ts = std::max(last_ts, *instructor_screen_last);
  res.ticks = last_ts + 1;

  // Events.
  const HistogramStore& instructor_screen = session.has_presentation() ? instr_store : presentation;
  std::vector<StudentInputs> inputs;
  for (std::size_t i = 0; i < students.size(); ++i)
    inputs.push_back({students[i], res.student_events[i], &student_hist[i], &res.student_faces[i]});
  for (const auto& e : res.instructor_events)
    res.outcomes.push_back(evaluate_event(cfg, e, presentation, instructor_screen, res.instructor_face, inputs));

  // Segments.
  if (cfg.segments.mode == SegmentMode::automatic) res.tiling = tile_transitions(transitions, res.ticks);
  else if (res.ticks > 0) res.tiling = time_slice_segments(res.ticks, cfg.segments.slice_minutes, cfg.fps);

  std::vector<const FaceTrack*> faces;
  for (const auto& f : res.student_faces) faces.push_back(&f);
  OverallTracker overall;
  for (std::size_t id = 0; id < res.tiling.size(); ++id) {
    const auto& seg = res.tiling[id];
    if (!seg.significant) continue;
    auto r = score_segment(cfg, static_cast<std::int64_t>(id), seg, res.outcomes, faces);
    r.card.overall = overall.add(r.card.aggregate);
    r.mode = cfg.segments.mode;
    r.slice_minutes = cfg.segments.slice_minutes;
    res.segments.push_back(std::move(r));
  }
  return res;
}

}  // namespace stungage
