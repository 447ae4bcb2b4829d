#include <fstream>
#include <random>

#include <gtest/gtest.h>

#include "stungage/ingest.hpp"
#include "stungage/synth.hpp"

using namespace stungage;

namespace {

class TempDir {
 public:
  TempDir() {
    static int counter = 0;
    path_ = fs::temp_directory_path() /
            ("stungage_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  const fs::path& path() const { return path_; }

 private:
  fs::path path_;
};

nlohmann::json two_participants() {
  return {{"fps", 10},
          {"participants", {{{"id", "I"}, {"role", "instructor"}}, {{"id", "S1"}, {"role", "student"}}}}};
}

void write_text(const fs::path& p, const std::string& s) {
  fs::create_directories(p.parent_path());
  std::ofstream(p) << s;
}

// Minimal valid session on disk: two participants, three 64x72 frames each.
void minimal_session(const fs::path& dir) {
  write_text(dir / "session.cfg", two_participants().dump());
  for (const char* id : {"I", "S1"}) {
    const auto base = dir / (std::string("P") + id);
    fs::create_directories(base / "screen");
    for (int t = 0; t < 3; ++t) write_pgm((base / "screen" / ("frame_" + std::to_string(t) + ".pgm")).string(), GrayImage(64, 72, 100));
    write_text(base / "face.jsonl", "{\"ts\":0,\"face\":false}\n{\"ts\":1,\"face\":false}\n");
  }
}

}  // namespace

TEST(Config, DefaultsAndRoundTrip) {
  const auto c = parse_session_config(two_participants());
  EXPECT_EQ(c.fps, 10);
  EXPECT_EQ(c.instructor().pid.id, "I");
  EXPECT_EQ(c.students().size(), 1u);
  EXPECT_EQ(c.presence.bins, 32);
  EXPECT_EQ(c.presence.first_frames, 5);
  EXPECT_EQ(c.presence.max_distance, 0.25);
  EXPECT_EQ(c.gaze.alpha, 0.001);
  EXPECT_EQ(c.segments.slice_minutes, 5);
  EXPECT_EQ(c.fixation.resolved_min_frames(c.fps), 20);
  EXPECT_EQ(c.fixation.resolved_tolerance(c.fps), 30);
  EXPECT_EQ(c.participants[0].camera().fx, 640.0);
  EXPECT_EQ(c.participants[0].camera().cy, 240.0);
  const auto again = parse_session_config(to_json(c));
  EXPECT_EQ(to_json(again), to_json(c));
}

TEST(Config, RejectsUnknownFields) {
  auto j = two_participants();
  j["colour"] = 1;
  EXPECT_THROW(parse_session_config(j), ConfigError);
  j = two_participants();
  j["presence"] = {{"bins", 32}, {"binz", 4}};
  try {
    parse_session_config(j);
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("presence.binz"), std::string::npos);
    EXPECT_EQ(e.module(), "config");
  }
}

TEST(Config, ValidationErrors) {
  const std::vector<nlohmann::json> bad{
      {{"fps", 0}},
      {{"presence", {{"bins", 24}}}},
      {{"presence", {{"max_distance", 0}}}},
      {{"presence", {{"chi_square", "cosine"}}}},
      {{"fixation", {{"spatial_low", 0.3}, {"spatial_high", 0.2}}}},
      {{"fixation", {{"spatial_high", 1.5}}}},
      {{"gaze", {{"alpha", 1.0}}}},
      {{"gaze", {{"test", "z"}}}},
      {{"segments", {{"slice_minutes", 7}}}},
      {{"segments", {{"mode", "hourly"}}}},
      {{"foreground", {{"median_kernel", 4}}}},
      {{"scoring", {{"engaged_threshold", 120}}}},
      {{"fps", "ten"}},
  };
  for (const auto& patch : bad) {
    auto j = two_participants();
    j.merge_patch(patch);
    EXPECT_THROW(parse_session_config(j), ConfigError) << patch.dump();
  }
  auto dup = two_participants();
  dup["participants"][1]["id"] = "I";
  EXPECT_THROW(parse_session_config(dup), ConfigError);
  auto two_instr = two_participants();
  two_instr["participants"][1]["role"] = "instructor";
  EXPECT_THROW(parse_session_config(two_instr), ConfigError);
  auto half_k = two_participants();
  half_k["participants"][0]["intrinsics"] = {{"fx", 500}};
  EXPECT_THROW(parse_session_config(half_k), ConfigError);
}

TEST(FaceRecords, ParseAndSerialize) {
  FaceFrameRecord r{7, true, Landmarks{}};
  for (std::size_t i = 0; i < kLandmarkCount; ++i) (*r.landmarks)[i] = Point2(i * 1.5, 100.0 - i);
  EXPECT_EQ(parse_face_record(to_json(r)), r);
  const auto none = parse_face_record(nlohmann::json::parse(R"({"ts":3,"face":false})"));
  EXPECT_FALSE(none.face_detected);
  EXPECT_FALSE(none.landmarks);
  EXPECT_THROW(parse_face_record(nlohmann::json::parse(R"({"ts":3})")), StreamError);
  EXPECT_THROW(parse_face_record(nlohmann::json::parse(R"({"ts":"3","face":true})")), StreamError);
  EXPECT_THROW(parse_face_record(nlohmann::json::parse(R"({"ts":3,"face":true,"lm":[[1,2]]})")), StreamError);
}

TEST(DirectorySessionTest, ReadsMinimalSession) {
  TempDir tmp;
  minimal_session(tmp.path());
  DirectorySession s(tmp.path());
  auto screen = s.open_screen("S1");
  int n = 0;
  while (auto r = screen->next()) {
    EXPECT_EQ(r->timestamp, n++);
    EXPECT_EQ(r->pixels.width(), 64);
  }
  EXPECT_EQ(n, 3);
  EXPECT_FALSE(s.has_presentation());
  EXPECT_THROW(s.open_screen("nobody"), StreamError);
}

TEST(DirectorySessionTest, MissingFaceStream) {
  TempDir tmp;
  minimal_session(tmp.path());
  fs::remove(tmp.path() / "PS1" / "face.jsonl");
  try {
    DirectorySession s(tmp.path());
    FAIL();
  } catch (const StreamError& e) {
    EXPECT_EQ(e.module(), "stream-ingest");
    EXPECT_NE(std::string(e.what()).find("S1"), std::string::npos);
  }
}

TEST(DirectorySessionTest, MissingDirectoryAndConfig) {
  EXPECT_THROW(DirectorySession("/nonexistent/session"), StreamError);
  TempDir tmp;
  EXPECT_THROW(DirectorySession{tmp.path()}, ConfigError);
}

TEST(DirectorySessionTest, SizeChangeAndTooSmall) {
  TempDir tmp;
  minimal_session(tmp.path());
  write_pgm((tmp.path() / "PS1" / "screen" / "frame_2.pgm").string(), GrayImage(80, 72, 1));
  DirectorySession s(tmp.path());
  auto screen = s.open_screen("S1");
  screen->next();
  screen->next();
  EXPECT_THROW(screen->next(), StreamError);
  write_pgm((tmp.path() / "PI" / "screen" / "frame_0.pgm").string(), GrayImage(40, 40, 1));
  EXPECT_THROW(s.open_screen("I")->next(), StreamError);
}

TEST(DirectorySessionTest, BadFrameNameAndFaceOrder) {
  TempDir tmp;
  minimal_session(tmp.path());
  write_text(tmp.path() / "PS1" / "face.jsonl", "{\"ts\":4,\"face\":false}\n{\"ts\":2,\"face\":false}\n");
  DirectorySession s(tmp.path());
  auto face = s.open_face("S1");
  face->next();
  EXPECT_THROW(face->next(), StreamError);
  write_text(tmp.path() / "PS1" / "face.jsonl", "{\"ts\":4,\"face\":false}\nnot json\n");
  face = s.open_face("S1");
  face->next();
  EXPECT_THROW(face->next(), StreamError);
  write_pgm((tmp.path() / "PS1" / "screen" / "frame_x.pgm").string(), GrayImage(64, 72, 1));
  EXPECT_THROW(s.open_screen("S1"), StreamError);
}

TEST(DirectorySessionTest, RawStream) {
  TempDir tmp;
  minimal_session(tmp.path());
  fs::remove_all(tmp.path() / "PS1" / "screen");
  {
    std::ofstream raw(tmp.path() / "PS1" / "screen.raw", std::ios::binary);
    raw << "64 72 10\n";
    for (int t = 0; t < 4; ++t) {
      const std::string px(64 * 72, static_cast<char>(t * 10));
      raw.write(px.data(), static_cast<std::streamsize>(px.size()));
    }
  }
  DirectorySession s(tmp.path());
  auto screen = s.open_screen("S1");
  for (int t = 0; t < 4; ++t) {
    auto r = screen->next();
    ASSERT_TRUE(r);
    EXPECT_EQ(r->timestamp, t);
    EXPECT_EQ(r->pixels.at(3, 3), t * 10);
  }
  EXPECT_FALSE(screen->next());
  {
    std::ofstream raw(tmp.path() / "PS1" / "screen.raw", std::ios::binary);
    raw << "64 72 25\n";
  }
  EXPECT_THROW(s.open_screen("S1"), StreamError);
  {
    std::ofstream raw(tmp.path() / "PS1" / "screen.raw", std::ios::binary);
    raw << "64 72 10\nabc";
  }
  EXPECT_THROW(s.open_screen("S1")->next(), StreamError);
}

TEST(WriteSession, RoundTripsSyntheticSession) {
  synth::ScenarioSpec spec;
  spec.deck = synth::ten_slide_deck(320, 180, 3.0);
  spec.fps = 5;
  spec.students = {{"A", true, synth::ScreenContent::lecture, true}};
  spec.separate_presentation = true;
  const auto mem = synth::make_session(spec);
  TempDir tmp;
  write_session(tmp.path(), *mem);
  DirectorySession disk(tmp.path());
  auto disk_cfg = to_json(disk.config());
  EXPECT_EQ(disk_cfg["segments"]["template"], "template.pgm");
  disk_cfg["segments"].erase("template");
  EXPECT_EQ(disk_cfg, to_json(mem->config()));
  EXPECT_TRUE(disk.has_presentation());
  ASSERT_TRUE(disk.slide_template().has_value());
  EXPECT_EQ(*disk.slide_template(), *mem->slide_template());
  for (const auto& p : mem->config().participants) {
    auto a = mem->open_screen(p.pid.id), b = disk.open_screen(p.pid.id);
    while (auto ra = a->next()) {
      auto rb = b->next();
      ASSERT_TRUE(rb);
      EXPECT_EQ(ra->timestamp, rb->timestamp);
      EXPECT_EQ(ra->pixels, rb->pixels);
    }
    EXPECT_FALSE(b->next());
    auto fa = mem->open_face(p.pid.id), fb = disk.open_face(p.pid.id);
    while (auto ra = fa->next()) {
      auto rb = fb->next();
      ASSERT_TRUE(rb);
      EXPECT_EQ(ra->timestamp, rb->timestamp);
      EXPECT_EQ(ra->face_detected, rb->face_detected);
      if (!ra->landmarks) continue;
      for (std::size_t i = 0; i < kLandmarkCount; ++i)
        EXPECT_NEAR(((*ra->landmarks)[i] - (*rb->landmarks)[i]).norm(), 0.0, 1e-9);
    }
  }
}

TEST(MemorySessionTest, MissingStreams) {
  MemorySession s(parse_session_config(two_participants()));
  EXPECT_THROW(s.open_screen("I"), StreamError);
  EXPECT_THROW(s.open_face("S1"), StreamError);
  s.set_screen("I", std::vector<ScreenFrameRecord>{{1, GrayImage(64, 72)}, {1, GrayImage(64, 72)}});
  auto sc = s.open_screen("I");
  sc->next();
  EXPECT_THROW(sc->next(), StreamError);
}
