#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

#include "stungage/image.hpp"
#include "stungage/pose.hpp"

namespace stungage {

enum class Role { instructor, student };

inline std::string_view to_string(Role r) { return r == Role::instructor ? "instructor" : "student"; }

struct ParticipantId {
  std::string id;
  Role role = Role::student;

  bool operator==(const ParticipantId&) const = default;
};

/// One screen-capture frame; timestamps are frame indices at the session fps.
struct ScreenFrameRecord {
  std::int64_t timestamp = 0;
  GrayImage pixels;
};

/// Face detector output for one camera frame.
struct FaceFrameRecord {
  std::int64_t timestamp = 0;
  bool face_detected = false;
  std::optional<Landmarks> landmarks;

  bool operator==(const FaceFrameRecord&) const = default;
};

}  // namespace stungage
