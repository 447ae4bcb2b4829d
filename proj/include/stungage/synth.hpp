#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <memory>
#include <numbers>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "stungage/eval.hpp"
#include "stungage/fixation.hpp"
#include "stungage/ingest.hpp"
#include "stungage/pose.hpp"

// Procedural sessions with known ground truth: slide decks with rendered
// slide numbers and animations, screens showing the lecture or something
// else, and faces following or ignoring the animation.

namespace stungage::synth {

inline constexpr std::array<std::array<std::uint8_t, 7>, 10> kDigits = {{
    {0b01110, 0b10001, 0b10011, 0b10101, 0b11001, 0b10001, 0b01110},
    {0b00100, 0b01100, 0b00100, 0b00100, 0b00100, 0b00100, 0b01110},
    {0b01110, 0b10001, 0b00001, 0b00010, 0b00100, 0b01000, 0b11111},
    {0b11111, 0b00010, 0b00100, 0b00010, 0b00001, 0b10001, 0b01110},
    {0b00010, 0b00110, 0b01010, 0b10010, 0b11111, 0b00010, 0b00010},
    {0b11111, 0b10000, 0b11110, 0b00001, 0b00001, 0b10001, 0b01110},
    {0b00110, 0b01000, 0b10000, 0b11110, 0b10001, 0b10001, 0b01110},
    {0b11111, 0b00001, 0b00010, 0b00100, 0b01000, 0b01000, 0b01000},
    {0b01110, 0b10001, 0b10001, 0b01110, 0b10001, 0b10001, 0b01110},
    {0b01110, 0b10001, 0b10001, 0b01111, 0b00001, 0b00010, 0b01100},
}};

inline void fill_rect(GrayImage& img, int x, int y, int w, int h, std::uint8_t v) {
  const int x0 = std::max(0, x), y0 = std::max(0, y);
  const int x1 = std::min(img.width(), x + w), y1 = std::min(img.height(), y + h);
  for (int yy = y0; yy < y1; ++yy)
    for (int xx = x0; xx < x1; ++xx) img.at(xx, yy) = v;
}

inline void draw_digit(GrayImage& img, int x, int y, int digit, int scale, std::uint8_t ink) {
  const auto& rows = kDigits.at(static_cast<std::size_t>(digit));
  for (int r = 0; r < 7; ++r)
    for (int c = 0; c < 5; ++c)
      if (rows[static_cast<std::size_t>(r)] & (1 << (4 - c))) fill_rect(img, x + c * scale, y + r * scale, scale, scale, ink);
}

inline void draw_number(GrayImage& img, int x, int y, int number, int scale, std::uint8_t ink) {
  const std::string s = std::to_string(number);
  for (std::size_t i = 0; i < s.size(); ++i)
    draw_digit(img, x + static_cast<int>(i) * 6 * scale, y, s[i] - '0', scale, ink);
}

inline std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
  std::uint64_t z = a ^ (b + 0x9e3779b97f4a7c15ULL + (a << 6) + (a >> 2));
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline void add_noise(GrayImage& img, double sigma, std::uint64_t seed) {
  if (sigma <= 0.0) return;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, sigma);
  for (auto& p : img.pixels()) p = static_cast<std::uint8_t>(std::clamp(std::lround(p + n(rng)), 0L, 255L));
}

inline GrayImage resize_nearest(const GrayImage& src, int width, int height) {
  GrayImage out(width, height);
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x)
      out.at(x, y) = src.at(static_cast<int>(static_cast<std::int64_t>(x) * src.width() / width),
                            static_cast<int>(static_cast<std::int64_t>(y) * src.height() / height));
  return out;
}

/// A text document in another tab: white page, dark lines.
inline GrayImage document_frame(int width, int height) {
  GrayImage img(width, height, 250);
  for (int y = 12; y + 4 < height - 8; y += 10) {
    const int len = width / 2 + ((y * 37) % (width / 3));
    fill_rect(img, 10, y, std::min(len, width - 20), 4, 30);
  }
  return img;
}

/// A different video: dark scene with a bright blob orbiting.
inline GrayImage video_frame(int width, int height, std::int64_t t, int fps) {
  GrayImage img(width, height, 40);
  const double ph = 2.0 * std::numbers::pi * static_cast<double>(t) / (4.0 * fps);
  const int bw = width / 6, bh = height / 5;
  const int cx = static_cast<int>(width / 2 + width / 4 * std::cos(ph)) - bw / 2;
  const int cy = static_cast<int>(height / 2 + height / 5 * std::sin(ph)) - bh / 2;
  fill_rect(img, cx, cy, bw, bh, 210);
  return img;
}

struct SlideSpec {
  std::optional<int> number;  // none: title or closing slide
  double seconds = 20.0;
  std::vector<std::pair<double, double>> events;  // (offset s, duration s) of animations
};

struct DeckSpec {
  int width = 320;
  int height = 180;
  std::vector<SlideSpec> slides;
};

/// Slide deck rendered frame by frame. Slide bodies stay clear of the three
/// slide-number crop regions; only the lower-right one carries the number.
class Deck {
 public:
  Deck(DeckSpec spec, int fps) : spec_(std::move(spec)), fps_(fps) {
    if (spec_.width < 160 || spec_.height < 120) throw ConfigError("synthetic deck needs at least 160x120");
    body_x0_ = 10;
    body_y0_ = 40;
    body_w_ = spec_.width - 80;
    body_h_ = spec_.height - 85;
    box_w_ = std::max(8, spec_.width / 10);
    box_h_ = std::max(8, spec_.height / 8);
    template_ = GrayImage(spec_.width, spec_.height, 235);
    fill_rect(template_, body_x0_, 8, body_w_, 20, 180);
    std::int64_t t = 0;
    for (std::size_t i = 0; i < spec_.slides.size(); ++i) {
      const auto& s = spec_.slides[i];
      const auto len = static_cast<std::int64_t>(std::llround(s.seconds * fps_));
      starts_.push_back(t);
      GrayImage img = template_;
      const auto panel = static_cast<std::uint8_t>(205 - 12 * static_cast<int>(i % 6));
      fill_rect(img, body_x0_, body_y0_, body_w_, body_h_, panel);
      for (int row = 0; row < 6; ++row) {
        const int y = body_y0_ + 6 + row * (body_h_ - 12) / 6;
        const int w = body_w_ / 3 + static_cast<int>(mix(i, static_cast<std::uint64_t>(row)) % static_cast<std::uint64_t>(body_w_ / 2));
        fill_rect(img, body_x0_ + 8, y, w, 5, static_cast<std::uint8_t>(panel - 90));
      }
      if (s.number) {
        const auto layout = crop_layout(spec_.width, spec_.height);
        draw_number(img, layout[1].x + 8, layout[1].y + 4, *s.number, 3, 20);
      }
      bodies_.push_back(std::move(img));
      for (const auto& [off, dur] : s.events) {
        const auto a = t + static_cast<std::int64_t>(std::llround(off * fps_));
        const auto b = a + static_cast<std::int64_t>(std::llround(dur * fps_)) - 1;
        if (b >= t + len) throw ConfigError("synthetic animation runs past its slide");
        events_.push_back({a, b, "deck"});
      }
      t += len;
    }
    length_ = t;
  }

  int fps() const noexcept { return fps_; }
  int width() const noexcept { return spec_.width; }
  int height() const noexcept { return spec_.height; }
  std::int64_t length() const noexcept { return length_; }
  const GrayImage& template_frame() const noexcept { return template_; }
  const std::vector<FixationEvent>& events() const noexcept { return events_; }
  const DeckSpec& spec() const noexcept { return spec_; }

  std::size_t slide_at(std::int64_t t) const {
    auto it = std::upper_bound(starts_.begin(), starts_.end(), t);
    return static_cast<std::size_t>(std::distance(starts_.begin(), it)) - 1;
  }

  /// First frame of every slide after the first.
  std::vector<std::int64_t> transitions() const { return {starts_.begin() + 1, starts_.end()}; }

  std::vector<bool> significant() const {
    std::vector<bool> out;
    for (const auto& s : spec_.slides) out.push_back(s.number.has_value());
    return out;
  }

  std::optional<std::size_t> event_at(std::int64_t t) const {
    for (std::size_t i = 0; i < events_.size(); ++i)
      if (t >= events_[i].start && t <= events_[i].end) return i;
    return std::nullopt;
  }

  /// Horizontal box centre in [-0.5, 0.5] across the slide body while an
  /// animation runs.
  std::optional<double> box_position(std::int64_t t) const {
    const auto e = event_at(t);
    if (!e) return std::nullopt;
    return (box_left(t, *e) + box_w_ / 2.0 - body_x0_) / body_w_ - 0.5;
  }

  GrayImage render(std::int64_t t) const {
    if (t < 0 || t >= length_) throw StreamError("frame outside the deck");
    GrayImage img = bodies_[slide_at(t)];
    if (const auto e = event_at(t)) {
      const int y = body_y0_ + 4 + static_cast<int>(*e % 3) * (body_h_ - box_h_ - 8) / 2;
      fill_rect(img, box_left(t, *e), y, box_w_, box_h_, 30);
    }
    return img;
  }

 private:
  int box_left(std::int64_t t, std::size_t e) const {
    const std::int64_t range = body_w_ - box_w_;
    const std::int64_t speed = std::max(1, box_w_ / 5);
    std::int64_t p = ((t - events_[e].start) * speed) % (2 * range);
    if (p > range) p = 2 * range - p;
    return body_x0_ + static_cast<int>(p);
  }

  DeckSpec spec_;
  int fps_;
  int body_x0_, body_y0_, body_w_, body_h_, box_w_, box_h_;
  GrayImage template_;
  std::vector<GrayImage> bodies_;
  std::vector<std::int64_t> starts_;
  std::vector<FixationEvent> events_;
  std::int64_t length_ = 0;
};

/// Ten slides, title and closing slide unnumbered, one animation per body slide.
inline DeckSpec ten_slide_deck(int width = 320, int height = 180, double seconds = 8.0) {
  DeckSpec d{width, height, {}};
  for (int i = 0; i < 10; ++i) {
    SlideSpec s;
    s.seconds = seconds;
    if (i > 0 && i < 9) {
      s.number = i;
      s.events.push_back({seconds * 0.35, seconds * 0.4});
    }
    d.slides.push_back(s);
  }
  return d;
}

/// Sixty-eight landmarks for a head pose: the six candidates come from the
/// face model, the rest from a ring around it.
inline Landmarks render_landmarks(const Pose& pose, const CameraIntrinsics& k, const FaceModel3D& model, double noise,
                                  std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, noise > 0.0 ? noise : 1.0);
  Landmarks lm;
  for (std::size_t i = 0; i < kLandmarkCount; ++i) {
    const double a = 2.0 * std::numbers::pi * static_cast<double>(i) / kLandmarkCount;
    lm[i] = project_point(pose, k, Point3(70.0 * std::cos(a), 80.0 * std::sin(a), 30.0));
  }
  for (std::size_t c = 0; c < kCandidateLandmarks.size(); ++c)
    lm[static_cast<std::size_t>(kCandidateLandmarks[c] - 1)] = project_point(pose, k, model.points[c]);
  if (noise > 0.0)
    for (auto& p : lm) p += Point2(n(rng), n(rng));
  return lm;
}

enum class ScreenContent { lecture, document, video };

struct StudentSpec {
  std::string id;
  bool face = true;  // visible to the camera
  ScreenContent screen = ScreenContent::lecture;
  bool attentive = true;  // head follows the animation
};

/// Ground truth used by the scenario suite: engaged iff every gate holds.
inline Label expected_label(const StudentSpec& s) {
  return s.face && s.screen == ScreenContent::lecture && s.attentive ? Label::engaged : Label::non_engaged;
}

struct ScenarioSpec {
  DeckSpec deck;
  int fps = 10;
  std::string instructor = "I";
  std::vector<StudentSpec> students;
  bool separate_presentation = false;
  std::vector<std::size_t> instructor_away;  // animation indices with the instructor on another tab
  double landmark_noise = 0.3;
  double screen_noise = 0.0;
  std::uint64_t seed = 7;
  bool provide_template = true;
  SegmentMode mode = SegmentMode::automatic;
  int slice_minutes = 5;
};

/// Head translation in mm: attentive viewers follow the animation, distracted
/// ones look off to the side.
inline Pose head_pose(const Deck& deck, std::int64_t t, bool attentive, std::uint64_t salt) {
  const double slow = std::sin(2.0 * std::numbers::pi * static_cast<double>(t) / (7.0 * deck.fps()) +
                               static_cast<double>(salt % 7));
  double tx = 15.0 * slow;
  double yaw = 0.05 * slow;
  if (const auto bx = deck.box_position(t)) {
    tx = 220.0 * *bx;
    yaw = -0.4 * *bx;
  }
  if (!attentive) {
    tx = 180.0 + 25.0 * slow;
    yaw = 0.45;
  }
  Pose p;
  p.rotation = Eigen::Vector3d(0.05 * slow, yaw, 0.02);
  p.translation = Eigen::Vector3d(tx, 10.0, 600.0);
  return p;
}

inline SessionConfig scenario_config(const ScenarioSpec& spec) {
  SessionConfig cfg;
  cfg.fps = spec.fps;
  ParticipantConfig instr;
  instr.pid = {spec.instructor, Role::instructor};
  cfg.participants.push_back(instr);
  for (const auto& s : spec.students) {
    ParticipantConfig p;
    p.pid = {s.id, Role::student};
    cfg.participants.push_back(p);
  }
  cfg.segments.mode = spec.mode;
  cfg.segments.slice_minutes = spec.slice_minutes;
  cfg.validate();
  return cfg;
}

/// Re-openable in-memory session rendering frames on demand.
inline std::shared_ptr<MemorySession> make_session(const ScenarioSpec& spec) {
  auto deck = std::make_shared<const Deck>(spec.deck, spec.fps);
  auto session = std::make_shared<MemorySession>(scenario_config(spec));
  const auto cfg = session->config();
  const auto doc = std::make_shared<const GrayImage>(document_frame(deck->width(), deck->height()));
  const std::uint64_t seed = spec.seed;
  const double noise = spec.screen_noise;

  auto lecture = [deck, noise, seed](std::uint64_t salt) {
    return [deck, noise, seed, salt, t = std::int64_t{0}]() mutable -> std::optional<ScreenFrameRecord> {
      if (t >= deck->length()) return std::nullopt;
      GrayImage img = deck->render(t);
      add_noise(img, noise, mix(mix(seed, salt), static_cast<std::uint64_t>(t)));
      return ScreenFrameRecord{t++, std::move(img)};
    };
  };

  std::vector<std::pair<std::int64_t, std::int64_t>> away;
  for (auto i : spec.instructor_away) {
    const auto& e = deck->events().at(i);
    away.emplace_back(e.start, e.end);
  }
  if (spec.separate_presentation) {
    session->set_presentation([lecture] { return std::make_unique<GeneratedScreen>(lecture(1), "presentation"); });
    session->set_screen(spec.instructor, [deck, doc, noise, seed, away] {
      auto gen = [deck, doc, noise, seed, away, t = std::int64_t{0}]() mutable -> std::optional<ScreenFrameRecord> {
        if (t >= deck->length()) return std::nullopt;
        bool off = false;
        for (const auto& [a, b] : away) off = off || (t >= a && t <= b);
        GrayImage img = off ? *doc : deck->render(t);
        add_noise(img, noise, mix(mix(seed, 2), static_cast<std::uint64_t>(t)));
        return ScreenFrameRecord{t++, std::move(img)};
      };
      return std::make_unique<GeneratedScreen>(gen, "instructor screen");
    });
  } else {
    session->set_screen(spec.instructor, [lecture] { return std::make_unique<GeneratedScreen>(lecture(1), "instructor screen"); });
  }

  auto faces = [deck, seed, noise = spec.landmark_noise, model = cfg.gaze.face_model](
                   const ParticipantConfig& p, bool visible, bool attentive, std::uint64_t salt) {
    const auto k = p.camera();
    return [deck, seed, noise, model, k, visible, attentive, salt, t = std::int64_t{0}]() mutable
           -> std::optional<FaceFrameRecord> {
      if (t >= deck->length()) return std::nullopt;
      FaceFrameRecord r;
      r.timestamp = t;
      r.face_detected = visible;
      if (visible) {
        std::mt19937_64 rng(mix(mix(seed, salt + 1000), static_cast<std::uint64_t>(t)));
        r.landmarks = render_landmarks(head_pose(*deck, t, attentive, salt), k, model, noise, rng);
      }
      ++t;
      return r;
    };
  };
  const auto& instr = cfg.instructor();
  session->set_face(spec.instructor, [faces, instr] {
    return std::make_unique<GeneratedFace>(faces(instr, true, true, 1), "instructor face");
  });

  for (std::size_t i = 0; i < spec.students.size(); ++i) {
    const auto& s = spec.students[i];
    const std::uint64_t salt = 10 + i;
    switch (s.screen) {
      case ScreenContent::lecture:
        session->set_screen(s.id, [lecture, salt, id = s.id] {
          return std::make_unique<GeneratedScreen>(lecture(salt), "P" + id + " screen");
        });
        break;
      case ScreenContent::document:
        session->set_screen(s.id, [deck, doc, id = s.id] {
          auto gen = [deck, doc, t = std::int64_t{0}]() mutable -> std::optional<ScreenFrameRecord> {
            if (t >= deck->length()) return std::nullopt;
            return ScreenFrameRecord{t++, *doc};
          };
          return std::make_unique<GeneratedScreen>(gen, "P" + id + " screen");
        });
        break;
      case ScreenContent::video:
        session->set_screen(s.id, [deck, fps = spec.fps, id = s.id] {
          auto gen = [deck, fps, t = std::int64_t{0}]() mutable -> std::optional<ScreenFrameRecord> {
            if (t >= deck->length()) return std::nullopt;
            auto img = video_frame(deck->width(), deck->height(), t, fps);
            return ScreenFrameRecord{t++, std::move(img)};
          };
          return std::make_unique<GeneratedScreen>(gen, "P" + id + " screen");
        });
        break;
    }
    const auto* pc = &session->config().participants[i + 1];
    session->set_face(s.id, [faces, p = *pc, s, salt] {
      return std::make_unique<GeneratedFace>(faces(p, s.face, s.attentive, salt), "P" + s.id + " face");
    });
  }
  if (spec.provide_template) session->set_template(deck->template_frame());
  return session;
}

/// One student per observed behavior: engaged, reading another tab, watching
/// another video, on the phone.
inline ScenarioSpec four_behaviors(int width = 320, int height = 180, int fps = 10) {
  ScenarioSpec spec;
  spec.fps = fps;
  spec.deck = {width, height, {}};
  for (int i = 0; i < 3; ++i) {
    SlideSpec s;
    s.number = i + 1;
    s.seconds = 30.0;
    s.events = {{4.0, 7.0}, {17.0, 8.0}};
    spec.deck.slides.push_back(s);
  }
  spec.students = {{"engaged", true, ScreenContent::lecture, true},
                   {"reading", true, ScreenContent::document, true},
                   {"video", true, ScreenContent::video, true},
                   {"mobile", false, ScreenContent::lecture, true}};
  return spec;
}

/// Throughput reference: one instructor and four engaged students.
inline ScenarioSpec bench_scenario(std::int64_t frames, int width = 640, int height = 360, int fps = 30) {
  ScenarioSpec spec;
  spec.fps = fps;
  spec.deck = {width, height, {}};
  const double total = static_cast<double>(frames) / fps;
  const int slides = std::max(1, static_cast<int>(total / 20.0));
  for (int i = 0; i < slides; ++i) {
    SlideSpec s;
    s.number = i + 1;
    s.seconds = total / slides;
    if (s.seconds >= 10.0) s.events = {{s.seconds * 0.3, s.seconds * 0.4}};
    spec.deck.slides.push_back(s);
  }
  for (int i = 0; i < 4; ++i) spec.students.push_back({"S" + std::to_string(i + 1), true, ScreenContent::lecture, true});
  return spec;
}

/// Labeled histogram-pair corpus for tuning the contextual-presence distance:
/// `same/` holds pairs of one slide under noise and a second capture
/// resolution; `diff/` pairs a slide with other content.
inline void write_calibration_corpus(const fs::path& dir, int pairs = 20, std::uint64_t seed = 3) {
  const Deck deck(ten_slide_deck(320, 180, 4.0), 10);
  const auto doc = document_frame(320, 180);
  fs::create_directories(dir / "same");
  fs::create_directories(dir / "diff");
  std::mt19937_64 rng(seed);
  for (int i = 0; i < pairs; ++i) {
    const auto t = static_cast<std::int64_t>(rng() % static_cast<std::uint64_t>(deck.length()));
    GrayImage a = deck.render(t);
    GrayImage b = deck.render(t);
    add_noise(b, 2.0, rng());
    if (i % 2) b = resize_nearest(b, 240, 135);
    const auto name = "pair" + std::to_string(i);
    write_pgm((dir / "same" / (name + "_a.pgm")).string(), a);
    write_pgm((dir / "same" / (name + "_b.pgm")).string(), b);
    GrayImage c = i % 2 ? doc : video_frame(320, 180, t, 10);
    add_noise(c, 2.0, rng());
    write_pgm((dir / "diff" / (name + "_a.pgm")).string(), a);
    write_pgm((dir / "diff" / (name + "_b.pgm")).string(), c);
  }
}

}  // namespace stungage::synth
