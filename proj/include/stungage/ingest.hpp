#pragma once

#include <algorithm>
#include <charconv>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "stungage/config.hpp"
#include "stungage/error.hpp"
#include "stungage/image.hpp"
#include "stungage/records.hpp"
#include "stungage/segmentation.hpp"

namespace stungage {

namespace fs = std::filesystem;

/// Single-consumer, timestamp-ordered stream of screen frames.
class ScreenSource {
 public:
  virtual ~ScreenSource() = default;
  virtual std::optional<ScreenFrameRecord> next() = 0;
};

class FaceSource {
 public:
  virtual ~FaceSource() = default;
  virtual std::optional<FaceFrameRecord> next() = 0;
};

namespace detail {

// Enforces strictly increasing timestamps and a fixed frame size.
class ScreenChecks {
 public:
  explicit ScreenChecks(std::string name) : name_(std::move(name)) {}

  void check(const ScreenFrameRecord& r) {
    if (last_ && r.timestamp <= *last_)
      throw StreamError(name_ + ": out-of-order timestamp " + std::to_string(r.timestamp) + " at index " +
                        std::to_string(index_));
    if (r.pixels.width() < kMinSegmentationWidth || r.pixels.height() < kMinSegmentationHeight)
      throw StreamError(name_ + ": frame " + std::to_string(r.timestamp) + " smaller than " +
                        std::to_string(kMinSegmentationWidth) + "x" + std::to_string(kMinSegmentationHeight));
    if (width_ && (r.pixels.width() != width_ || r.pixels.height() != height_))
      throw StreamError(name_ + ": frame size changed at timestamp " + std::to_string(r.timestamp));
    width_ = r.pixels.width();
    height_ = r.pixels.height();
    last_ = r.timestamp;
    ++index_;
  }

 private:
  std::string name_;
  std::optional<std::int64_t> last_;
  std::size_t index_ = 0;
  int width_ = 0;
  int height_ = 0;
};

class FaceChecks {
 public:
  explicit FaceChecks(std::string name) : name_(std::move(name)) {}

  void check(const FaceFrameRecord& r) {
    if (last_ && r.timestamp < *last_)
      throw StreamError(name_ + ": out-of-order timestamp " + std::to_string(r.timestamp) + " at index " +
                        std::to_string(index_));
    if (last_ && r.timestamp == *last_)
      throw StreamError(name_ + ": duplicate timestamp " + std::to_string(r.timestamp) + " at index " +
                        std::to_string(index_));
    if (r.landmarks && !r.face_detected)
      throw StreamError(name_ + ": landmarks without a detected face at index " + std::to_string(index_));
    if (r.landmarks)
      for (const auto& p : *r.landmarks)
        if (!p.allFinite()) throw StreamError(name_ + ": non-finite landmark at index " + std::to_string(index_));
    last_ = r.timestamp;
    ++index_;
  }

 private:
  std::string name_;
  std::optional<std::int64_t> last_;
  std::size_t index_ = 0;
};

inline std::optional<std::int64_t> parse_frame_name(const std::string& name) {
  constexpr std::string_view prefix = "frame_";
  constexpr std::string_view suffix = ".pgm";
  if (name.size() <= prefix.size() + suffix.size() || !name.starts_with(prefix) || !name.ends_with(suffix))
    return std::nullopt;
  std::int64_t ts = 0;
  const char* first = name.data() + prefix.size();
  const char* last = name.data() + name.size() - suffix.size();
  auto [ptr, ec] = std::from_chars(first, last, ts);
  if (ec != std::errc() || ptr != last || ts < 0) return std::nullopt;
  return ts;
}

}  // namespace detail

/// `frame_<ts>.pgm` files in one directory, read lazily in timestamp order.
class PgmDirectoryScreen final : public ScreenSource {
 public:
  PgmDirectoryScreen(const fs::path& dir, std::string name) : checks_(name) {
    if (!fs::is_directory(dir)) throw StreamError(name + ": missing screen directory " + dir.string());
    for (const auto& entry : fs::directory_iterator(dir)) {
      const auto fname = entry.path().filename().string();
      if (auto ts = detail::parse_frame_name(fname)) files_.emplace_back(*ts, entry.path());
      else if (fname.ends_with(".pgm")) throw StreamError(name + ": unexpected frame file name " + fname);
    }
    std::sort(files_.begin(), files_.end());
  }

  std::optional<ScreenFrameRecord> next() override {
    if (pos_ >= files_.size()) return std::nullopt;
    const auto& [ts, path] = files_[pos_++];
    ScreenFrameRecord r{ts, read_pgm(path.string())};
    checks_.check(r);
    return r;
  }

 private:
  detail::ScreenChecks checks_;
  std::vector<std::pair<std::int64_t, fs::path>> files_;
  std::size_t pos_ = 0;
};

/// Packed raw stream: ASCII header line "W H fps", then W*H bytes per frame,
/// frame i carrying timestamp i.
class RawPackedScreen final : public ScreenSource {
 public:
  RawPackedScreen(const fs::path& path, std::string name) : in_(path, std::ios::binary), checks_(name), name_(name) {
    if (!in_) throw StreamError(name + ": cannot open " + path.string());
    std::string header;
    std::getline(in_, header);
    std::istringstream hs(header);
    if (!(hs >> width_ >> height_ >> fps_) || width_ <= 0 || height_ <= 0 || fps_ <= 0)
      throw StreamError(name + ": corrupt raw header in " + path.string());
  }

  int fps() const noexcept { return fps_; }

  std::optional<ScreenFrameRecord> next() override {
    std::vector<std::uint8_t> px(static_cast<std::size_t>(width_) * height_);
    in_.read(reinterpret_cast<char*>(px.data()), static_cast<std::streamsize>(px.size()));
    const auto got = in_.gcount();
    if (got == 0) return std::nullopt;
    if (got != static_cast<std::streamsize>(px.size()))
      throw StreamError(name_ + ": corrupt frame " + std::to_string(index_) + " (truncated)");
    ScreenFrameRecord r{index_++, GrayImage(width_, height_, std::move(px))};
    checks_.check(r);
    return r;
  }

 private:
  std::ifstream in_;
  detail::ScreenChecks checks_;
  std::string name_;
  int width_ = 0;
  int height_ = 0;
  int fps_ = 0;
  std::int64_t index_ = 0;
};

/// Adapts a generator callable; used for in-memory and synthetic streams.
class GeneratedScreen final : public ScreenSource {
 public:
  using Generator = std::function<std::optional<ScreenFrameRecord>()>;
  GeneratedScreen(Generator gen, std::string name) : gen_(std::move(gen)), checks_(std::move(name)) {}

  std::optional<ScreenFrameRecord> next() override {
    auto r = gen_();
    if (r) checks_.check(*r);
    return r;
  }

 private:
  Generator gen_;
  detail::ScreenChecks checks_;
};

inline nlohmann::json to_json(const FaceFrameRecord& r) {
  nlohmann::json j{{"ts", r.timestamp}, {"face", r.face_detected}};
  if (r.landmarks) {
    nlohmann::json lm = nlohmann::json::array();
    for (const auto& p : *r.landmarks) lm.push_back({p.x(), p.y()});
    j["lm"] = std::move(lm);
  }
  return j;
}

inline FaceFrameRecord parse_face_record(const nlohmann::json& j) {
  if (!j.is_object() || !j.contains("ts") || !j.contains("face"))
    throw StreamError("face record needs 'ts' and 'face'");
  FaceFrameRecord r;
  if (!j["ts"].is_number_integer()) throw StreamError("face record 'ts' must be an integer");
  if (!j["face"].is_boolean()) throw StreamError("face record 'face' must be a boolean");
  r.timestamp = j["ts"].get<std::int64_t>();
  r.face_detected = j["face"].get<bool>();
  if (j.contains("lm") && !j["lm"].is_null()) {
    const auto& lm = j["lm"];
    if (!lm.is_array() || lm.size() != kLandmarkCount)
      throw StreamError("face record at ts " + std::to_string(r.timestamp) + " must carry exactly 68 landmarks");
    Landmarks pts;
    for (std::size_t i = 0; i < kLandmarkCount; ++i) {
      if (!lm[i].is_array() || lm[i].size() != 2 || !lm[i][0].is_number() || !lm[i][1].is_number())
        throw StreamError("landmark " + std::to_string(i) + " at ts " + std::to_string(r.timestamp) + " is not [x,y]");
      pts[i] = Point2(lm[i][0].get<double>(), lm[i][1].get<double>());
    }
    r.landmarks = pts;
  }
  return r;
}

/// Line-delimited JSON face records `{ts, face, lm?}`.
class JsonlFaceStream final : public FaceSource {
 public:
  JsonlFaceStream(const fs::path& path, std::string name) : in_(path), checks_(name), name_(name) {
    if (!in_) throw StreamError(name + ": cannot open " + path.string());
  }

  std::optional<FaceFrameRecord> next() override {
    std::string line;
    while (std::getline(in_, line)) {
      ++line_no_;
      if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
      FaceFrameRecord r;
      try {
        r = parse_face_record(nlohmann::json::parse(line));
      } catch (const nlohmann::json::exception& e) {
        throw StreamError(name_ + ": corrupt face record on line " + std::to_string(line_no_) + ": " + e.what());
      } catch (const StreamError& e) {
        throw StreamError(name_ + ": line " + std::to_string(line_no_) + ": " + e.what());
      }
      checks_.check(r);
      return r;
    }
    return std::nullopt;
  }

 private:
  std::ifstream in_;
  detail::FaceChecks checks_;
  std::string name_;
  std::size_t line_no_ = 0;
};

class GeneratedFace final : public FaceSource {
 public:
  using Generator = std::function<std::optional<FaceFrameRecord>()>;
  GeneratedFace(Generator gen, std::string name) : gen_(std::move(gen)), checks_(std::move(name)) {}

  std::optional<FaceFrameRecord> next() override {
    auto r = gen_();
    if (r) checks_.check(*r);
    return r;
  }

 private:
  Generator gen_;
  detail::FaceChecks checks_;
};

/// Streams over a shared, immutable vector.
template <class Record>
std::function<std::optional<Record>()> vector_generator(std::shared_ptr<const std::vector<Record>> data) {
  return [data, i = std::size_t{0}]() mutable -> std::optional<Record> {
    if (i >= data->size()) return std::nullopt;
    return (*data)[i++];
  };
}

/// Re-openable access to one recorded or generated session. Every open_*
/// call starts the stream from the beginning and yields the same sequence.
class SessionSource {
 public:
  virtual ~SessionSource() = default;
  virtual const SessionConfig& config() const = 0;
  virtual std::unique_ptr<ScreenSource> open_screen(const std::string& participant) const = 0;
  virtual std::unique_ptr<FaceSource> open_face(const std::string& participant) const = 0;
  /// A separate recording of the shared presentation. Without one the
  /// instructor's own screen is the presentation stream.
  virtual bool has_presentation() const { return false; }
  virtual std::unique_ptr<ScreenSource> open_presentation() const {
    return open_screen(config().instructor().pid.id);
  }
  /// Number-free slide used as the segmentation template.
  virtual std::optional<GrayImage> slide_template() const { return std::nullopt; }
};

/// On-disk layout:
///   session.cfg                      JSON session config
///   P<id>/screen/frame_<ts>.pgm      or P<id>/screen.raw
///   P<id>/face.jsonl
///   presentation/frame_<ts>.pgm      optional, or presentation.raw
class DirectorySession final : public SessionSource {
 public:
  explicit DirectorySession(fs::path dir) : dir_(std::move(dir)) {
    if (!fs::is_directory(dir_)) throw StreamError("session directory " + dir_.string() + " does not exist");
    config_ = load_session_config((dir_ / "session.cfg").string());
    if (config_.participants.empty()) throw ConfigError("session declares no participants");
    for (const auto& p : config_.participants) {
      const auto base = dir_ / ("P" + p.pid.id);
      if (!fs::is_directory(base / "screen") && !fs::is_regular_file(base / "screen.raw"))
        throw StreamError("participant '" + p.pid.id + "' has no screen stream");
      if (!fs::is_regular_file(base / "face.jsonl"))
        throw StreamError("participant '" + p.pid.id + "' has no face stream");
    }
  }

  const SessionConfig& config() const override { return config_; }
  const fs::path& directory() const noexcept { return dir_; }

  std::unique_ptr<ScreenSource> open_screen(const std::string& participant) const override {
    require(participant);
    return open_screen_at(dir_ / ("P" + participant), "screen", "P" + participant);
  }

  std::unique_ptr<FaceSource> open_face(const std::string& participant) const override {
    require(participant);
    return std::make_unique<JsonlFaceStream>(dir_ / ("P" + participant) / "face.jsonl", "P" + participant + " face");
  }

  bool has_presentation() const override {
    return fs::is_directory(dir_ / "presentation") || fs::is_regular_file(dir_ / "presentation.raw");
  }

  std::unique_ptr<ScreenSource> open_presentation() const override {
    if (!has_presentation()) return open_screen(config_.instructor().pid.id);
    return open_screen_at(dir_, "presentation", "presentation");
  }

  std::optional<GrayImage> slide_template() const override {
    if (!config_.segments.template_path) return std::nullopt;
    fs::path p = *config_.segments.template_path;
    if (p.is_relative()) p = dir_ / p;
    return read_pgm(p.string());
  }

 private:
  void require(const std::string& participant) const {
    for (const auto& p : config_.participants)
      if (p.pid.id == participant) return;
    throw StreamError("unknown participant '" + participant + "'");
  }

  std::unique_ptr<ScreenSource> open_screen_at(const fs::path& base, const std::string& stem,
                                               const std::string& name) const {
    if (fs::is_directory(base / stem)) return std::make_unique<PgmDirectoryScreen>(base / stem, name + " screen");
    auto raw = std::make_unique<RawPackedScreen>(base / (stem + ".raw"), name + " screen");
    if (raw->fps() != config_.fps)
      throw StreamError(name + ": raw stream fps " + std::to_string(raw->fps()) + " differs from session fps " +
                        std::to_string(config_.fps));
    return raw;
  }

  fs::path dir_;
  SessionConfig config_;
};

/// Session assembled from stream factories (in-memory recordings, synthetic
/// generators).
class MemorySession final : public SessionSource {
 public:
  using ScreenFactory = std::function<std::unique_ptr<ScreenSource>()>;
  using FaceFactory = std::function<std::unique_ptr<FaceSource>()>;

  explicit MemorySession(SessionConfig config) : config_(std::move(config)) { config_.validate(); }

  void set_screen(const std::string& id, ScreenFactory f) { screens_[id] = std::move(f); }
  void set_face(const std::string& id, FaceFactory f) { faces_[id] = std::move(f); }
  void set_presentation(ScreenFactory f) { presentation_ = std::move(f); }
  void set_template(GrayImage img) { template_ = std::move(img); }

  void set_screen(const std::string& id, std::vector<ScreenFrameRecord> frames) {
    auto data = std::make_shared<const std::vector<ScreenFrameRecord>>(std::move(frames));
    set_screen(id, [data, id] { return std::make_unique<GeneratedScreen>(vector_generator(data), "P" + id + " screen"); });
  }
  void set_face(const std::string& id, std::vector<FaceFrameRecord> records) {
    auto data = std::make_shared<const std::vector<FaceFrameRecord>>(std::move(records));
    set_face(id, [data, id] { return std::make_unique<GeneratedFace>(vector_generator(data), "P" + id + " face"); });
  }

  const SessionConfig& config() const override { return config_; }
  SessionConfig& mutable_config() { return config_; }

  std::unique_ptr<ScreenSource> open_screen(const std::string& id) const override {
    auto it = screens_.find(id);
    if (it == screens_.end()) throw StreamError("participant '" + id + "' has no screen stream");
    return it->second();
  }
  std::unique_ptr<FaceSource> open_face(const std::string& id) const override {
    auto it = faces_.find(id);
    if (it == faces_.end()) throw StreamError("participant '" + id + "' has no face stream");
    return it->second();
  }
  bool has_presentation() const override { return static_cast<bool>(presentation_); }
  std::unique_ptr<ScreenSource> open_presentation() const override {
    if (presentation_) return presentation_();
    return open_screen(config_.instructor().pid.id);
  }
  std::optional<GrayImage> slide_template() const override { return template_; }

 private:
  SessionConfig config_;
  std::map<std::string, ScreenFactory> screens_;
  std::map<std::string, FaceFactory> faces_;
  ScreenFactory presentation_;
  std::optional<GrayImage> template_;
};

struct ParticipantStreams {
  ParticipantId participant;
  std::unique_ptr<ScreenSource> screen;
  std::unique_ptr<FaceSource> face;
};

/// Opens every declared participant's screen and face stream.
inline std::vector<ParticipantStreams> open_streams(const SessionSource& session) {
  std::vector<ParticipantStreams> out;
  for (const auto& p : session.config().participants)
    out.push_back({p.pid, session.open_screen(p.pid.id), session.open_face(p.pid.id)});
  return out;
}

inline std::vector<ParticipantStreams> open_streams(const fs::path& session_dir) {
  DirectorySession session(session_dir);
  return open_streams(session);
}

/// Writes a session in the on-disk layout. Streams are drained from `session`.
inline void write_session(const fs::path& dir, const SessionSource& session) {
  fs::create_directories(dir);
  {
    std::ofstream cfg(dir / "session.cfg");
    cfg << to_json(session.config()).dump(2) << '\n';
  }
  auto dump_screen = [](ScreenSource& src, const fs::path& out) {
    fs::create_directories(out);
    while (auto r = src.next()) write_pgm((out / ("frame_" + std::to_string(r->timestamp) + ".pgm")).string(), r->pixels);
  };
  for (const auto& p : session.config().participants) {
    const auto base = dir / ("P" + p.pid.id);
    auto screen = session.open_screen(p.pid.id);
    dump_screen(*screen, base / "screen");
    std::ofstream face(base / "face.jsonl");
    auto fsrc = session.open_face(p.pid.id);
    while (auto r = fsrc->next()) face << to_json(*r).dump() << '\n';
  }
  if (session.has_presentation()) {
    auto pres = session.open_presentation();
    dump_screen(*pres, dir / "presentation");
  }
  if (auto tmpl = session.slide_template()) {
    write_pgm((dir / "template.pgm").string(), *tmpl);
    // Point the written config at the template.
    auto cfg = session.config();
    cfg.segments.template_path = "template.pgm";
    std::ofstream out(dir / "session.cfg");
    out << to_json(cfg).dump(2) << '\n';
  }
}

}  // namespace stungage
