#pragma once

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <deque>
#include <functional>
#include <mutex>
#include <thread>

#include "stungage/ingest.hpp"
#include "stungage/offline.hpp"
#include "stungage/pipeline.hpp"

namespace stungage {

/// Every record with timestamp t across the session's streams.
struct Tick {
  std::int64_t t = 0;
  std::optional<GrayImage> presentation;
  std::optional<GrayImage> instructor_screen;  // only with a separate presentation stream
  std::vector<std::optional<GrayImage>> student_screens;
  std::optional<FaceFrameRecord> instructor_face;
  std::vector<std::optional<FaceFrameRecord>> student_faces;

  std::size_t weight() const {
    std::size_t w = presentation.has_value() + instructor_screen.has_value() + instructor_face.has_value();
    for (const auto& s : student_screens) w += s.has_value();
    for (const auto& f : student_faces) w += f.has_value();
    return w;
  }
};

/// Merges all streams of a session into consecutive ticks 0, 1, ... up to the
/// largest timestamp seen.
class TickReader {
 public:
  explicit TickReader(const SessionSource& session) {
    const auto& cfg = session.config();
    separate_ = session.has_presentation();
    presentation_.src = session.open_presentation();
    if (separate_) instructor_screen_.src = session.open_screen(cfg.instructor().pid.id);
    instructor_face_.src = session.open_face(cfg.instructor().pid.id);
    for (const auto* s : cfg.students()) {
      student_screens_.push_back({session.open_screen(s->pid.id), std::nullopt, false});
      student_faces_.push_back({session.open_face(s->pid.id), std::nullopt, false});
    }
  }

  std::optional<Tick> next() {
    bool any = presentation_.pending() || instructor_face_.pending() || (separate_ && instructor_screen_.pending());
    for (auto& s : student_screens_) any = any || s.pending();
    for (auto& f : student_faces_) any = any || f.pending();
    if (!any) return std::nullopt;
    Tick tick;
    tick.t = t_;
    tick.presentation = take_image(presentation_);
    if (separate_) tick.instructor_screen = take_image(instructor_screen_);
    tick.instructor_face = instructor_face_.take(t_);
    for (auto& s : student_screens_) tick.student_screens.push_back(take_image(s));
    for (auto& f : student_faces_) tick.student_faces.push_back(f.take(t_));
    ++t_;
    return tick;
  }

 private:
  template <class Src, class Rec>
  struct Slot {
    std::unique_ptr<Src> src;
    std::optional<Rec> peek;
    bool done = false;

    bool pending() {
      if (!peek && !done) {
        peek = src->next();
        done = !peek;
      }
      return peek.has_value();
    }
    std::optional<Rec> take(std::int64_t t) {
      if (!pending() || peek->timestamp != t) return std::nullopt;
      std::optional<Rec> out = std::move(peek);
      peek.reset();
      return out;
    }
  };
  using ScreenSlot = Slot<ScreenSource, ScreenFrameRecord>;
  using FaceSlot = Slot<FaceSource, FaceFrameRecord>;

  std::optional<GrayImage> take_image(ScreenSlot& s) {
    auto r = s.take(t_);
    if (!r) return std::nullopt;
    return std::move(r->pixels);
  }

  bool separate_ = false;
  std::int64_t t_ = 0;
  ScreenSlot presentation_;
  ScreenSlot instructor_screen_;
  FaceSlot instructor_face_;
  std::vector<ScreenSlot> student_screens_;
  std::vector<FaceSlot> student_faces_;
};

/// Segment boundaries decided tick by tick, with mode switches applied at
/// tick granularity. Manual segments are held back until the following
/// segment is long enough that the end-of-session merge can no longer apply.
class LiveSegmenter {
 public:
  struct Closed {
    std::int64_t id = 0;
    Segment segment;
    SegmentMode mode = SegmentMode::automatic;
    int slice_minutes = 5;
  };

  LiveSegmenter(const SegmentConfig& cfg, int fps, std::optional<CropSet> tmpl)
      : detector_(cfg.mse_threshold, std::move(tmpl)),
        fps_(fps),
        mode_(cfg.mode),
        slice_(cfg.slice_minutes),
        first_auto_(cfg.mode == SegmentMode::automatic) {
    if (mode_ == SegmentMode::manual) boundary_ = slice_len();
  }

  /// Takes effect from tick `t` on.
  void set_mode(std::int64_t t, SegmentMode mode, int slice_minutes) {
    if (mode == mode_ && (mode == SegmentMode::automatic || slice_minutes == slice_)) {
      slice_ = slice_minutes;
      return;
    }
    release_held();
    if (mode == SegmentMode::manual) {
      const std::int64_t len = static_cast<std::int64_t>(slice_minutes) * 60 * fps_;
      std::int64_t b = std::max(t, start_ + len);
      if (b == t && t > start_) {
        // The open segment is already a full slice long: it ends here, under
        // the mode that produced it.
        close(t - 1);
        release_held();
        start_ = t;
        sig_ = true;
        b = t + len;
      }
      boundary_ = b;
    }
    mode_ = mode;
    slice_ = slice_minutes;
  }

  void feed(std::int64_t t, const std::optional<GrayImage>& presentation) {
    ticks_ = t + 1;
    if (mode_ == SegmentMode::manual && t == boundary_) {
      close(t - 1);
      start_ = t;
      sig_ = true;
      boundary_ = t + slice_len();
    }
    if (presentation) {
      const auto tr = detector_.feed(t, crop_regions(*presentation));
      if (tr && mode_ == SegmentMode::automatic) {
        if (t > start_) close(t - 1);
        start_ = t;
        sig_ = tr->significant;
      }
    }
    if (held_ && (t - start_ + 1) * 10 >= held_len_) release_held();
  }

  void finish() {
    if (ticks_ <= start_) {
      release_held();
      return;
    }
    if (held_ && mode_ == SegmentMode::manual && (ticks_ - start_) * 10 < held_len_) {
      held_->segment.end = ticks_ - 1;
      release_held();
    } else {
      release_held();
      close(ticks_ - 1);
      release_held();
    }
    start_ = ticks_;
  }

  std::deque<Closed>& ready() noexcept { return ready_; }
  SegmentMode mode() const noexcept { return mode_; }
  int slice_minutes() const noexcept { return slice_; }
  std::int64_t current_start() const noexcept { return start_; }

 private:
  std::int64_t slice_len() const { return static_cast<std::int64_t>(slice_) * 60 * fps_; }

  void close(std::int64_t end) {
    bool sig = sig_;
    if (first_ && first_auto_ && mode_ == SegmentMode::automatic) sig = detector_.first_segment_significant();
    first_ = false;
    Closed c{next_id_++, {start_, end, sig}, mode_, slice_};
    if (mode_ == SegmentMode::manual) {
      release_held();
      held_ = c;
      held_len_ = slice_len();
    } else {
      ready_.push_back(c);
    }
  }

  void release_held() {
    if (held_) ready_.push_back(*held_);
    held_.reset();
  }

  TransitionDetector detector_;
  int fps_;
  SegmentMode mode_;
  int slice_;
  bool first_auto_;
  bool first_ = true;
  bool sig_ = true;
  std::int64_t start_ = 0;
  std::int64_t ticks_ = 0;
  std::int64_t boundary_ = 0;
  std::int64_t next_id_ = 0;
  std::optional<Closed> held_;
  std::int64_t held_len_ = 0;
  std::deque<Closed> ready_;
};

struct ModeCommand {
  SegmentMode mode = SegmentMode::automatic;
  std::optional<int> slice_minutes;
};

struct CommandAck {
  bool accepted = false;
  bool changed = false;
  SegmentMode mode = SegmentMode::automatic;
  int slice_minutes = 5;
  std::string error;
};

struct EngineStats {
  std::int64_t ticks = 0;
  double total_ms = 0.0;
  double max_ms = 0.0;
  std::int64_t segments_emitted = 0;

  double mean_ms() const { return ticks ? total_ms / static_cast<double>(ticks) : 0.0; }
};

/// Incremental pipeline. process() must see ticks 0, 1, 2, ... in order;
/// scorecards reach the sink as soon as a segment closes and all of its
/// events are evaluated.
class LiveEngine {
 public:
  using Sink = std::function<void(const SegmentResult&)>;

  LiveEngine(SessionConfig cfg, bool separate_presentation, std::optional<GrayImage> slide_template, Sink sink)
      : cfg_(std::move(cfg)),
        separate_(separate_presentation),
        sink_(std::move(sink)),
        segmenter_(cfg_.segments, cfg_.fps,
                   slide_template ? std::optional<CropSet>(crop_regions(*slide_template)) : std::nullopt),
        presentation_(cfg_.foreground),
        requested_{cfg_.segments.mode, cfg_.segments.slice_minutes} {
    cfg_.validate();
    for (const auto* s : cfg_.students()) {
      students_.push_back(s);
      student_screens_.emplace_back(cfg_.foreground);
    }
    student_hist_.resize(students_.size());
    student_faces_.resize(students_.size());
    student_events_.resize(students_.size());
  }

  const SessionConfig& config() const noexcept { return cfg_; }

  /// Thread-safe; applied at the start of the next tick.
  CommandAck post_command(const ModeCommand& cmd) {
    CommandAck ack;
    std::lock_guard lock(cmd_mu_);
    const int slice = cmd.slice_minutes.value_or(requested_.second);
    if (cmd.slice_minutes && !valid_slice_minutes(*cmd.slice_minutes)) {
      ack.error = "slice must be 3, 5 or 15 minutes";
    } else {
      ack.accepted = true;
      std::pair<SegmentMode, int> next{cmd.mode, slice};
      ack.changed = next.first != requested_.first ||
                    (next.first == SegmentMode::manual && next.second != requested_.second);
      requested_ = next;
      commands_.push_back(next);
    }
    ack.mode = requested_.first;
    ack.slice_minutes = requested_.second;
    return ack;
  }

  std::pair<SegmentMode, int> requested_mode() const {
    std::lock_guard lock(cmd_mu_);
    return requested_;
  }

  /// True while any screen stream is inside a candidate fixation run or an
  /// event awaits evaluation.
  bool fixation_active() const noexcept { return fixation_active_.load(std::memory_order_relaxed); }

  const EngineStats& stats() const noexcept { return stats_; }

  /// Safe to read from other threads.
  std::int64_t ticks_processed() const noexcept { return ticks_done_.load(std::memory_order_relaxed); }

  void process(const Tick& tick) {
    const auto t0 = std::chrono::steady_clock::now();
    if (tick.t != next_tick_)
      throw Error("session-service", "tick " + std::to_string(tick.t) + " out of order (expected " +
                                          std::to_string(next_tick_) + ")");
    next_tick_ = tick.t + 1;
    apply_commands(tick.t);
    step(tick);
    evaluate_ready(tick.t, false);
    emit_ready(false);
    prune(tick.t);
    const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    ++stats_.ticks;
    stats_.total_ms += ms;
    stats_.max_ms = std::max(stats_.max_ms, ms);
    ticks_done_.store(stats_.ticks, std::memory_order_relaxed);
  }

  void finish() {
    if (finished_) return;
    finished_ = true;
    if (auto e = presentation_.finish()) pending_.push_back(*e);
    for (std::size_t s = 0; s < students_.size(); ++s)
      if (auto e = student_screens_[s].finish()) student_events_[s].push_back(*e);
    segmenter_.finish();
    evaluate_ready(next_tick_, true);
    emit_ready(true);
    fixation_active_ = false;
  }

 private:
  struct ScreenPipeline {
    explicit ScreenPipeline(const ForegroundConfig& fg) : counter(fg) {}

    std::optional<FixationEvent> feed(const SessionConfig& cfg, std::int64_t t, const std::optional<GrayImage>& frame,
                                      const std::string& source) {
      if (!tracker) {
        if (!frame) return std::nullopt;
        tracker.emplace(stream_thresholds(cfg, frame->width(), frame->height()), source);
      }
      std::optional<std::size_t> count;
      if (frame) count = counter(*frame);
      return tracker->feed(t, count);
    }
    std::optional<FixationEvent> finish() { return tracker ? tracker->finish() : std::nullopt; }
    std::optional<std::int64_t> open_start() const { return tracker ? tracker->open_run_start() : std::nullopt; }
    std::optional<std::int64_t> position() const { return tracker ? tracker->position_in_run() : std::nullopt; }

    ForegroundCounter counter;
    std::optional<RunTracker> tracker;
  };

  void apply_commands(std::int64_t t) {
    std::deque<std::pair<SegmentMode, int>> cmds;
    {
      std::lock_guard lock(cmd_mu_);
      cmds.swap(commands_);
    }
    for (const auto& [mode, slice] : cmds) segmenter_.set_mode(t, mode, slice);
  }

  void step(const Tick& tick) {
    const auto t = tick.t;
    const int n = cfg_.presence.first_frames;
    const int bins = cfg_.presence.bins;
    const auto& instructor = cfg_.instructor();

    if (auto e = presentation_.feed(cfg_, t, tick.presentation, instructor.pid.id)) pending_.push_back(*e);
    const auto pres_pos = presentation_.position();
    const bool pres_open = pres_pos.has_value();
    const bool pres_head = pres_open && *pres_pos < n;
    if (pres_head) {
      if (tick.presentation) presentation_hist_.put(t, build_scaled_histogram(*tick.presentation, bins));
      if (separate_ && tick.instructor_screen)
        instructor_hist_.put(t, build_scaled_histogram(*tick.instructor_screen, bins));
    }
    bool any_open = pres_open;
    for (std::size_t s = 0; s < students_.size(); ++s) {
      const auto& frame = tick.student_screens[s];
      if (auto e = student_screens_[s].feed(cfg_, t, frame, students_[s]->pid.id)) student_events_[s].push_back(*e);
      const auto pos = student_screens_[s].position();
      any_open = any_open || pos.has_value();
      if (frame && (pres_head || (pos && *pos < n))) student_hist_[s].put(t, build_scaled_histogram(*frame, bins));
    }

    auto take_face = [&](const std::optional<FaceFrameRecord>& r, FaceTrack& track, const ParticipantConfig& p) {
      if (!r) return;
      track.set_flag(t, r->face_detected);
      if (pres_open)
        if (auto x = gaze_x(*r, p, cfg_.gaze)) track.set_x(t, *x);
    };
    take_face(tick.instructor_face, instructor_face_, instructor);
    for (std::size_t s = 0; s < students_.size(); ++s) take_face(tick.student_faces[s], student_faces_[s], *students_[s]);

    segmenter_.feed(t, tick.presentation);
    fixation_active_.store(any_open || !pending_.empty(), std::memory_order_relaxed);
  }

  bool event_ready(const FixationEvent& e, std::int64_t t) const {
    const auto horizon = e.start + cfg_.fixation.resolved_tolerance(cfg_.fps);
    if (t < horizon) return false;
    for (const auto& p : student_screens_) {
      const auto open = p.open_start();
      if (open && *open <= horizon) return false;
    }
    return true;
  }

  void evaluate_ready(std::int64_t t, bool final) {
    const auto& instructor_store = separate_ ? instructor_hist_ : presentation_hist_;
    while (!pending_.empty() && (final || event_ready(pending_.front(), t))) {
      std::vector<StudentInputs> inputs;
      for (std::size_t s = 0; s < students_.size(); ++s)
        inputs.push_back({students_[s], student_events_[s], &student_hist_[s], &student_faces_[s]});
      outcomes_.push_back(evaluate_event(cfg_, pending_.front(), presentation_hist_, instructor_store,
                                         instructor_face_, inputs));
      pending_.pop_front();
    }
  }

  void emit_ready(bool final) {
    auto& ready = segmenter_.ready();
    while (!ready.empty()) {
      const auto& c = ready.front();
      if (!final) {
        const auto open = presentation_.open_start();
        if (open && *open <= c.segment.end) return;
        if (!pending_.empty() && pending_.front().start <= c.segment.end) return;
      }
      if (c.segment.significant) {
        std::vector<const FaceTrack*> faces;
        for (const auto& f : student_faces_) faces.push_back(&f);
        std::vector<EventOutcome> inside(outcomes_.begin(), outcomes_.end());
        auto r = score_segment(cfg_, c.id, c.segment, inside, faces);
        r.card.overall = overall_.add(r.card.aggregate);
        r.mode = c.mode;
        r.slice_minutes = c.slice_minutes;
        ++stats_.segments_emitted;
        if (sink_) sink_(r);
      }
      while (!outcomes_.empty() && outcomes_.front().event.start <= c.segment.end) outcomes_.pop_front();
      ready.pop_front();
    }
  }

  void prune(std::int64_t t) {
    std::int64_t low = t + 1;
    if (!pending_.empty()) low = std::min(low, pending_.front().start);
    if (auto open = presentation_.open_start()) low = std::min(low, *open);
    low -= cfg_.fixation.resolved_tolerance(cfg_.fps);
    if (low <= pruned_) return;
    pruned_ = low;
    presentation_hist_.prune_before(low);
    instructor_hist_.prune_before(low);
    instructor_face_.prune_before(low);
    for (auto& h : student_hist_) h.prune_before(low);
    for (auto& f : student_faces_) f.prune_before(low);
    for (auto& ev : student_events_) {
      auto keep = std::find_if(ev.begin(), ev.end(), [&](const FixationEvent& e) { return e.start >= low; });
      ev.erase(ev.begin(), keep);
    }
  }

  SessionConfig cfg_;
  bool separate_;
  Sink sink_;
  LiveSegmenter segmenter_;
  ScreenPipeline presentation_;
  std::vector<const ParticipantConfig*> students_;
  std::vector<ScreenPipeline> student_screens_;
  HistogramStore presentation_hist_;
  HistogramStore instructor_hist_;
  std::vector<HistogramStore> student_hist_;
  FaceTrack instructor_face_;
  std::vector<FaceTrack> student_faces_;
  std::vector<std::vector<FixationEvent>> student_events_;
  std::deque<FixationEvent> pending_;
  std::deque<EventOutcome> outcomes_;
  OverallTracker overall_;
  EngineStats stats_;
  std::int64_t next_tick_ = 0;
  std::int64_t pruned_ = std::numeric_limits<std::int64_t>::min();
  bool finished_ = false;
  std::atomic<bool> fixation_active_{false};
  std::atomic<std::int64_t> ticks_done_{0};

  mutable std::mutex cmd_mu_;
  std::pair<SegmentMode, int> requested_;
  std::deque<std::pair<SegmentMode, int>> commands_;
};

struct DropCounters {
  std::atomic<std::uint64_t> screen{0};
  std::atomic<std::uint64_t> face{0};
};

/// Bounded tick queue between the reader and the engine. `budget` caps the
/// number of queued frames (0 = unbounded). Under pressure, screen frames are
/// stripped first, oldest tick first; face frames go only while no fixation
/// run is active. Ticks themselves are never dropped.
class TickQueue {
 public:
  TickQueue(std::size_t budget, bool allow_drops) : budget_(budget), allow_drops_(allow_drops) {}

  void push(Tick tick, const std::function<bool()>& fixation_active, DropCounters& drops) {
    std::unique_lock lock(mu_);
    std::size_t w = tick.weight();
    while (budget_ > 0 && load_ + w > budget_) {
      if (allow_drops_ && strip(tick, w, fixation_active, drops)) continue;
      not_full_.wait(lock);
    }
    load_ += w;
    q_.push_back(std::move(tick));
    not_empty_.notify_one();
  }

  std::optional<Tick> pop() {
    std::unique_lock lock(mu_);
    not_empty_.wait(lock, [&] { return !q_.empty() || closed_; });
    if (q_.empty()) return std::nullopt;
    Tick t = std::move(q_.front());
    q_.pop_front();
    load_ -= t.weight();
    not_full_.notify_one();
    return t;
  }

  void close() {
    std::lock_guard lock(mu_);
    closed_ = true;
    not_empty_.notify_all();
  }

 private:
  static std::size_t strip_screens(Tick& t) {
    std::size_t n = t.presentation.has_value() + t.instructor_screen.has_value();
    t.presentation.reset();
    t.instructor_screen.reset();
    for (auto& s : t.student_screens) {
      n += s.has_value();
      s.reset();
    }
    return n;
  }
  static std::size_t strip_faces(Tick& t) {
    std::size_t n = t.instructor_face.has_value();
    t.instructor_face.reset();
    for (auto& f : t.student_faces) {
      n += f.has_value();
      f.reset();
    }
    return n;
  }

  bool strip(Tick& incoming, std::size_t& w, const std::function<bool()>& fixation_active, DropCounters& drops) {
    for (auto& t : q_)
      if (auto n = strip_screens(t)) {
        load_ -= n;
        drops.screen += n;
        return true;
      }
    if (auto n = strip_screens(incoming)) {
      w -= n;
      drops.screen += n;
      return true;
    }
    if (fixation_active()) return false;
    for (auto& t : q_)
      if (auto n = strip_faces(t)) {
        load_ -= n;
        drops.face += n;
        return true;
      }
    if (auto n = strip_faces(incoming)) {
      w -= n;
      drops.face += n;
      return true;
    }
    return false;
  }

  std::mutex mu_;
  std::condition_variable not_empty_;
  std::condition_variable not_full_;
  std::deque<Tick> q_;
  std::size_t load_ = 0;
  std::size_t budget_;
  bool allow_drops_;
  bool closed_ = false;
};

struct LiveOptions {
  bool realtime = false;        // pace the reader at the session fps
  std::size_t queue_budget = 0;  // frames; 0 = unbounded
  bool allow_drops = true;
};

struct LiveSummary {
  EngineStats stats;
  std::uint64_t screen_drops = 0;
  std::uint64_t face_drops = 0;
};

/// Reader thread feeding the engine through a TickQueue.
class LiveRunner {
 public:
  LiveRunner(const SessionSource& session, const RunOptions& run, LiveOptions opts, LiveEngine::Sink sink)
      : session_(session),
        opts_(opts),
        engine_(apply_overrides(session.config(), run), session.has_presentation(), session.slide_template(),
                std::move(sink)) {}

  LiveEngine& engine() noexcept { return engine_; }
  const DropCounters& drops() const noexcept { return drops_; }

  LiveSummary run() {
    TickQueue queue(opts_.queue_budget, opts_.allow_drops);
    std::exception_ptr reader_error;
    std::atomic<bool> stop{false};
    std::thread reader([&] {
      try {
        TickReader ticks(session_);
        const auto start = std::chrono::steady_clock::now();
        const auto period = std::chrono::duration<double>(1.0 / engine_.config().fps);
        while (!stop) {
          auto tick = ticks.next();
          if (!tick) break;
          if (opts_.realtime)
            std::this_thread::sleep_until(start + std::chrono::duration_cast<std::chrono::steady_clock::duration>(
                                                      period * static_cast<double>(tick->t)));
          queue.push(std::move(*tick), [&] { return engine_.fixation_active(); }, drops_);
        }
      } catch (...) {
        reader_error = std::current_exception();
      }
      queue.close();
    });
    try {
      while (auto tick = queue.pop()) engine_.process(*tick);
    } catch (...) {
      stop = true;
      while (queue.pop()) {
      }
      reader.join();
      throw;
    }
    reader.join();
    if (reader_error) std::rethrow_exception(reader_error);
    engine_.finish();
    return {engine_.stats(), drops_.screen.load(), drops_.face.load()};
  }

 private:
  const SessionSource& session_;
  LiveOptions opts_;
  LiveEngine engine_;
  DropCounters drops_;
};

/// Replays a session through the live engine synchronously, without a queue.
inline std::vector<SegmentResult> replay_live(const SessionSource& session, const RunOptions& run = {}) {
  std::vector<SegmentResult> out;
  LiveEngine engine(apply_overrides(session.config(), run), session.has_presentation(), session.slide_template(),
                    [&](const SegmentResult& r) { out.push_back(r); });
  TickReader reader(session);
  while (auto tick = reader.next()) engine.process(*tick);
  engine.finish();
  return out;
}

}  // namespace stungage
