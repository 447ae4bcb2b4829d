#pragma once

#include <fstream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "stungage/error.hpp"
#include "stungage/foreground.hpp"
#include "stungage/pose.hpp"
#include "stungage/presence.hpp"
#include "stungage/records.hpp"
#include "stungage/segmentation.hpp"
#include "stungage/stats.hpp"

namespace stungage {

struct ParticipantConfig {
  ParticipantId pid;
  int camera_width = 640;
  int camera_height = 480;
  std::optional<CameraIntrinsics> intrinsics;

  CameraIntrinsics camera() const {
    return intrinsics ? *intrinsics : CameraIntrinsics::for_frame(camera_width, camera_height);
  }
};

struct ForegroundConfig {
  GmmParams gmm;
  int median_kernel = 3;
  bool seed_first_frame = true;
};

struct FixationConfig {
  double spatial_low = 0.005;   // fraction of the frame area
  double spatial_high = 0.20;
  std::optional<int> min_frames;       // default 2 s
  std::optional<int> match_tolerance;  // default 3 s

  int resolved_min_frames(int fps) const { return min_frames.value_or(2 * fps); }
  int resolved_tolerance(int fps) const { return match_tolerance.value_or(3 * fps); }
};

struct PresenceConfig {
  int first_frames = 5;
  int bins = 32;
  double max_distance = 0.25;
  double visual_fraction = 0.5;
  ChiSquareVariant chi_square = ChiSquareVariant::symmetric;
};

struct GazeConfig {
  double alpha = 0.001;
  TTestVariant test = TTestVariant::pooled;
  bool normalize = true;
  LmOptions lm;
  FaceModel3D face_model = FaceModel3D::generic();
};

enum class SegmentMode { automatic, manual };

inline std::string_view to_string(SegmentMode m) { return m == SegmentMode::automatic ? "automatic" : "manual"; }

struct SegmentConfig {
  SegmentMode mode = SegmentMode::automatic;
  int slice_minutes = 5;
  double mse_threshold = 100.0;
  std::optional<std::string> template_path;  // number-free slide; default: first presentation frame
};

struct ScoringConfig {
  bool exclude_insufficient = true;
  double engaged_threshold = 50.0;  // C_s at or above this predicts "engaged"
};

struct SessionConfig {
  int fps = 30;
  std::vector<ParticipantConfig> participants;
  ForegroundConfig foreground;
  FixationConfig fixation;
  PresenceConfig presence;
  GazeConfig gaze;
  SegmentConfig segments;
  ScoringConfig scoring;

  const ParticipantConfig& instructor() const {
    for (const auto& p : participants)
      if (p.pid.role == Role::instructor) return p;
    throw ConfigError("session has no instructor");
  }

  std::vector<const ParticipantConfig*> students() const {
    std::vector<const ParticipantConfig*> out;
    for (const auto& p : participants)
      if (p.pid.role == Role::student) out.push_back(&p);
    return out;
  }

  void validate() const {
    if (fps <= 0) throw ConfigError("fps must be positive");
    foreground.gmm.validate();
    if (foreground.median_kernel < 1 || foreground.median_kernel % 2 == 0)
      throw ConfigError("foreground.median_kernel must be odd and >= 1");
    if (!(fixation.spatial_low > 0.0)) throw ConfigError("fixation.spatial_low must be positive");
    if (!(fixation.spatial_high > 0.0)) throw ConfigError("fixation.spatial_high must be positive");
    if (!(fixation.spatial_low < fixation.spatial_high))
      throw ConfigError("fixation.spatial_low < fixation.spatial_high violated");
    if (fixation.spatial_high > 1.0) throw ConfigError("fixation.spatial_high must be <= 1 (fraction of frame area)");
    if (fixation.min_frames && *fixation.min_frames < 1) throw ConfigError("fixation.min_frames must be >= 1");
    if (fixation.match_tolerance && *fixation.match_tolerance < 1)
      throw ConfigError("fixation.match_tolerance must be >= 1");
    if (presence.first_frames < 1) throw ConfigError("presence.first_frames must be >= 1");
    if (!valid_bin_count(presence.bins)) throw ConfigError("presence.bins must be a power of two dividing 256");
    if (!(presence.max_distance > 0.0)) throw ConfigError("presence.max_distance must be positive");
    if (!(presence.visual_fraction > 0.0 && presence.visual_fraction <= 1.0))
      throw ConfigError("presence.visual_fraction must lie in (0,1]");
    if (!(gaze.alpha > 0.0 && gaze.alpha < 1.0)) throw ConfigError("gaze.alpha must lie in (0,1)");
    if (gaze.lm.max_iter < 1) throw ConfigError("gaze.lm.max_iter must be >= 1");
    if (!(gaze.lm.lambda0 > 0.0)) throw ConfigError("gaze.lm.lambda0 must be positive");
    if (!(gaze.lm.tol > 0.0)) throw ConfigError("gaze.lm.tol must be positive");
    gaze.face_model.validate();
    if (!valid_slice_minutes(segments.slice_minutes)) throw ConfigError("segments.slice_minutes must be 3, 5 or 15");
    if (!(segments.mse_threshold > 0.0)) throw ConfigError("segments.mse_threshold must be positive");
    if (!(scoring.engaged_threshold >= 0.0 && scoring.engaged_threshold <= 100.0))
      throw ConfigError("scoring.engaged_threshold must lie in [0,100]");

    std::set<std::string> ids;
    int instructors = 0;
    for (const auto& p : participants) {
      if (p.pid.id.empty()) throw ConfigError("participant id must not be empty");
      if (!ids.insert(p.pid.id).second) throw ConfigError("duplicate participant id '" + p.pid.id + "'");
      instructors += p.pid.role == Role::instructor;
      if (p.camera_width <= 0 || p.camera_height <= 0)
        throw ConfigError("participant '" + p.pid.id + "' camera size must be positive");
      if (p.intrinsics) p.intrinsics->validate(p.camera_width, p.camera_height);
    }
    if (!participants.empty() && instructors != 1)
      throw ConfigError("participants must contain exactly one instructor");
  }
};

namespace detail {

inline void reject_unknown(const nlohmann::json& j, std::initializer_list<const char*> known, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be an object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool ok = false;
    for (const char* k : known) ok = ok || it.key() == k;
    if (!ok) throw ConfigError("unknown field '" + (where.empty() ? "" : where + ".") + it.key() + "'");
  }
}

template <class T>
void read_field(const nlohmann::json& j, const char* key, T& out, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError("field '" + where + "." + key + "' has the wrong type");
  }
}

template <class T>
void read_optional(const nlohmann::json& j, const char* key, std::optional<T>& out, const std::string& where) {
  if (!j.contains(key) || j.at(key).is_null()) return;
  T v{};
  read_field(j, key, v, where);
  out = v;
}

}  // namespace detail

/// Parses the JSON session document; absent fields keep their defaults.
inline SessionConfig parse_session_config(const nlohmann::json& j) {
  using detail::read_field;
  using detail::read_optional;
  detail::reject_unknown(j, {"fps", "participants", "foreground", "fixation", "presence", "gaze", "segments", "scoring"}, "");
  SessionConfig c;
  read_field(j, "fps", c.fps, "");

  if (j.contains("participants")) {
    if (!j["participants"].is_array()) throw ConfigError("field 'participants' must be an array");
    for (const auto& pj : j["participants"]) {
      detail::reject_unknown(pj, {"id", "role", "camera", "intrinsics"}, "participants[]");
      ParticipantConfig p;
      read_field(pj, "id", p.pid.id, "participants[]");
      std::string role = "student";
      read_field(pj, "role", role, "participants[]");
      if (role == "instructor") p.pid.role = Role::instructor;
      else if (role == "student") p.pid.role = Role::student;
      else throw ConfigError("participant '" + p.pid.id + "' has unknown role '" + role + "'");
      if (pj.contains("camera")) {
        detail::reject_unknown(pj["camera"], {"width", "height"}, "participants[].camera");
        read_field(pj["camera"], "width", p.camera_width, "camera");
        read_field(pj["camera"], "height", p.camera_height, "camera");
      }
      if (pj.contains("intrinsics") && !pj["intrinsics"].is_null()) {
        const auto& ij = pj["intrinsics"];
        detail::reject_unknown(ij, {"fx", "fy", "cx", "cy"}, "participants[].intrinsics");
        CameraIntrinsics k;
        for (const char* key : {"fx", "fy", "cx", "cy"})
          if (!ij.contains(key)) throw ConfigError(std::string("intrinsics.") + key + " is required");
        read_field(ij, "fx", k.fx, "intrinsics");
        read_field(ij, "fy", k.fy, "intrinsics");
        read_field(ij, "cx", k.cx, "intrinsics");
        read_field(ij, "cy", k.cy, "intrinsics");
        p.intrinsics = k;
      }
      c.participants.push_back(std::move(p));
    }
  }

  if (j.contains("foreground")) {
    const auto& f = j["foreground"];
    const std::string w = "foreground";
    detail::reject_unknown(f, {"components", "learning_rate", "background_fraction", "match_sigma", "variance_init",
                               "variance_floor", "median_kernel", "seed_first_frame"}, w);
    read_field(f, "components", c.foreground.gmm.components, w);
    read_field(f, "learning_rate", c.foreground.gmm.learning_rate, w);
    read_field(f, "background_fraction", c.foreground.gmm.background_fraction, w);
    read_field(f, "match_sigma", c.foreground.gmm.match_sigma, w);
    read_field(f, "variance_init", c.foreground.gmm.variance_init, w);
    read_field(f, "variance_floor", c.foreground.gmm.variance_floor, w);
    read_field(f, "median_kernel", c.foreground.median_kernel, w);
    read_field(f, "seed_first_frame", c.foreground.seed_first_frame, w);
  }
  if (j.contains("fixation")) {
    const auto& f = j["fixation"];
    const std::string w = "fixation";
    detail::reject_unknown(f, {"spatial_low", "spatial_high", "min_frames", "match_tolerance"}, w);
    read_field(f, "spatial_low", c.fixation.spatial_low, w);
    read_field(f, "spatial_high", c.fixation.spatial_high, w);
    read_optional(f, "min_frames", c.fixation.min_frames, w);
    read_optional(f, "match_tolerance", c.fixation.match_tolerance, w);
  }
  if (j.contains("presence")) {
    const auto& f = j["presence"];
    const std::string w = "presence";
    detail::reject_unknown(f, {"first_frames", "bins", "max_distance", "visual_fraction", "chi_square"}, w);
    read_field(f, "first_frames", c.presence.first_frames, w);
    read_field(f, "bins", c.presence.bins, w);
    read_field(f, "max_distance", c.presence.max_distance, w);
    read_field(f, "visual_fraction", c.presence.visual_fraction, w);
    std::string chi = "symmetric";
    read_field(f, "chi_square", chi, w);
    if (chi == "symmetric") c.presence.chi_square = ChiSquareVariant::symmetric;
    else if (chi == "one_sided") c.presence.chi_square = ChiSquareVariant::one_sided;
    else throw ConfigError("presence.chi_square must be 'symmetric' or 'one_sided'");
  }
  if (j.contains("gaze")) {
    const auto& f = j["gaze"];
    const std::string w = "gaze";
    detail::reject_unknown(f, {"alpha", "test", "normalize", "lm", "face_model"}, w);
    read_field(f, "alpha", c.gaze.alpha, w);
    read_field(f, "normalize", c.gaze.normalize, w);
    std::string test = "student";
    read_field(f, "test", test, w);
    if (test == "student") c.gaze.test = TTestVariant::pooled;
    else if (test == "welch") c.gaze.test = TTestVariant::welch;
    else throw ConfigError("gaze.test must be 'student' or 'welch'");
    if (f.contains("lm")) {
      detail::reject_unknown(f["lm"], {"max_iter", "lambda0", "tol"}, "gaze.lm");
      read_field(f["lm"], "max_iter", c.gaze.lm.max_iter, "gaze.lm");
      read_field(f["lm"], "lambda0", c.gaze.lm.lambda0, "gaze.lm");
      read_field(f["lm"], "tol", c.gaze.lm.tol, "gaze.lm");
    }
    if (f.contains("face_model")) {
      const auto& m = f["face_model"];
      if (!m.is_array() || m.size() != 6) throw ConfigError("gaze.face_model must list 6 [x,y,z] points");
      for (std::size_t i = 0; i < 6; ++i) {
        if (!m[i].is_array() || m[i].size() != 3) throw ConfigError("gaze.face_model points must be [x,y,z]");
        c.gaze.face_model.points[i] = Point3(m[i][0].get<double>(), m[i][1].get<double>(), m[i][2].get<double>());
      }
    }
  }
  if (j.contains("segments")) {
    const auto& f = j["segments"];
    const std::string w = "segments";
    detail::reject_unknown(f, {"mode", "slice_minutes", "mse_threshold", "template"}, w);
    std::string mode = "automatic";
    read_field(f, "mode", mode, w);
    if (mode == "automatic") c.segments.mode = SegmentMode::automatic;
    else if (mode == "manual") c.segments.mode = SegmentMode::manual;
    else throw ConfigError("segments.mode must be 'automatic' or 'manual'");
    read_field(f, "slice_minutes", c.segments.slice_minutes, w);
    read_field(f, "mse_threshold", c.segments.mse_threshold, w);
    read_optional(f, "template", c.segments.template_path, w);
  }
  if (j.contains("scoring")) {
    const auto& f = j["scoring"];
    detail::reject_unknown(f, {"exclude_insufficient", "engaged_threshold"}, "scoring");
    read_field(f, "exclude_insufficient", c.scoring.exclude_insufficient, "scoring");
    read_field(f, "engaged_threshold", c.scoring.engaged_threshold, "scoring");
  }
  c.validate();
  return c;
}

inline SessionConfig load_session_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in, nullptr, true, /*ignore_comments=*/true);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("parse error in " + path + ": " + e.what());
  }
  return parse_session_config(j);
}

inline nlohmann::json to_json(const SessionConfig& c) {
  nlohmann::json parts = nlohmann::json::array();
  for (const auto& p : c.participants) {
    nlohmann::json pj{{"id", p.pid.id}, {"role", std::string(to_string(p.pid.role))},
                      {"camera", {{"width", p.camera_width}, {"height", p.camera_height}}}};
    if (p.intrinsics)
      pj["intrinsics"] = {{"fx", p.intrinsics->fx}, {"fy", p.intrinsics->fy}, {"cx", p.intrinsics->cx}, {"cy", p.intrinsics->cy}};
    parts.push_back(pj);
  }
  nlohmann::json model = nlohmann::json::array();
  for (const auto& pt : c.gaze.face_model.points) model.push_back({pt.x(), pt.y(), pt.z()});
  nlohmann::json fixation{{"spatial_low", c.fixation.spatial_low}, {"spatial_high", c.fixation.spatial_high}};
  if (c.fixation.min_frames) fixation["min_frames"] = *c.fixation.min_frames;
  if (c.fixation.match_tolerance) fixation["match_tolerance"] = *c.fixation.match_tolerance;
  nlohmann::json segments{{"mode", std::string(to_string(c.segments.mode))},
                          {"slice_minutes", c.segments.slice_minutes},
                          {"mse_threshold", c.segments.mse_threshold}};
  if (c.segments.template_path) segments["template"] = *c.segments.template_path;
  return {{"fps", c.fps},
          {"participants", parts},
          {"foreground",
           {{"components", c.foreground.gmm.components},
            {"learning_rate", c.foreground.gmm.learning_rate},
            {"background_fraction", c.foreground.gmm.background_fraction},
            {"match_sigma", c.foreground.gmm.match_sigma},
            {"variance_init", c.foreground.gmm.variance_init},
            {"variance_floor", c.foreground.gmm.variance_floor},
            {"median_kernel", c.foreground.median_kernel},
            {"seed_first_frame", c.foreground.seed_first_frame}}},
          {"fixation", fixation},
          {"presence",
           {{"first_frames", c.presence.first_frames},
            {"bins", c.presence.bins},
            {"max_distance", c.presence.max_distance},
            {"visual_fraction", c.presence.visual_fraction},
            {"chi_square", c.presence.chi_square == ChiSquareVariant::symmetric ? "symmetric" : "one_sided"}}},
          {"gaze",
           {{"alpha", c.gaze.alpha},
            {"test", c.gaze.test == TTestVariant::pooled ? "student" : "welch"},
            {"normalize", c.gaze.normalize},
            {"lm", {{"max_iter", c.gaze.lm.max_iter}, {"lambda0", c.gaze.lm.lambda0}, {"tol", c.gaze.lm.tol}}},
            {"face_model", model}}},
          {"segments", segments},
          {"scoring",
           {{"exclude_insufficient", c.scoring.exclude_insufficient},
            {"engaged_threshold", c.scoring.engaged_threshold}}}};
}

}  // namespace stungage
