#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "stungage/error.hpp"
#include "stungage/presence.hpp"
#include "stungage/stats.hpp"

namespace stungage {

/// Outcome of the visual -> contextual -> cognitive cascade for one student
/// and one fixation event. Later stages stay empty once a stage fails.
struct EventVerdict {
  std::int64_t event_start = 0;
  std::int64_t event_end = 0;
  std::string student;
  bool visual = false;
  std::optional<bool> contextual;
  std::optional<bool> cognitive;
  bool counted = true;  // false: excluded from this student's denominator
  std::optional<double> distance;
  std::optional<double> p;

  bool engaged() const noexcept { return visual && contextual.value_or(false) && cognitive.value_or(false); }
  bool operator==(const EventVerdict&) const = default;
};

struct CascadeOptions {
  double alpha = 0.001;
  bool exclude_insufficient = true;
};

/// Runs the three gates in order and stops at the first failure. The stage
/// callables are only invoked when the previous gate passed:
///   visual()     -> bool
///   contextual() -> ContextualResult
///   cognitive()  -> TTestResult, may throw InsufficientDataError
template <class Visual, class Contextual, class Cognitive>
EventVerdict classify_event(EventVerdict base, Visual&& visual, Contextual&& contextual, Cognitive&& cognitive,
                            const CascadeOptions& opts = {}) {
  base.visual = visual();
  if (!base.visual) return base;
  const ContextualResult ctx = contextual();
  base.contextual = ctx.present;
  base.distance = ctx.min_distance;
  if (!ctx.present) return base;
  try {
    const TTestResult t = cognitive();
    base.p = t.p;
    base.cognitive = cognitive_presence(t, opts.alpha);
  } catch (const InsufficientDataError&) {
    if (opts.exclude_insufficient) {
      base.counted = false;
    } else {
      base.cognitive = false;
    }
  }
  return base;
}

/// Per-student denominator: events where the instructor was contextually
/// present, minus those the student's verdict excludes. `verdicts[i]` belongs to
/// event i; a missing verdict counts as included.
inline int count_fixation_denominator(std::span<const bool> instructor_present,
                                      std::span<const std::optional<EventVerdict>> verdicts) {
  int f = 0;
  for (std::size_t i = 0; i < instructor_present.size(); ++i) {
    if (!instructor_present[i]) continue;
    if (i < verdicts.size() && verdicts[i] && !verdicts[i]->counted) continue;
    ++f;
  }
  return f;
}

/// 100 * engaged / counted, or nullopt (N/A) for an empty denominator.
inline std::optional<double> current_score(int engaged, int counted) {
  if (engaged < 0 || engaged > counted) throw std::logic_error("engaged events exceed counted events");
  if (counted == 0) return std::nullopt;
  return 100.0 * engaged / counted;
}

/// Mean of the available scores.
inline std::optional<double> aggregate_score(std::span<const std::optional<double>> scores) {
  double sum = 0.0;
  int n = 0;
  for (const auto& s : scores)
    if (s) {
      sum += *s;
      ++n;
    }
  if (n == 0) return std::nullopt;
  return sum / n;
}

/// Share of the segment's events with the instructor contextually present.
inline std::optional<double> presentation_score(std::span<const bool> instructor_present) {
  int present = 0;
  for (bool b : instructor_present) present += b;
  return current_score(present, static_cast<int>(instructor_present.size()));
}

struct StudentScore {
  std::string id;
  int engaged = 0;  // F_s
  int counted = 0;  // f
  std::optional<double> score;  // C_s
  std::vector<EventVerdict> verdicts;

  bool operator==(const StudentScore&) const = default;
};

struct SegmentScorecard {
  std::int64_t segment = 0;
  std::int64_t start = 0;
  std::int64_t end = 0;
  std::vector<StudentScore> students;
  std::optional<double> aggregate;
  int instructor_present = 0;  // F_i
  int events = 0;              // f for the instructor
  std::optional<double> presentation;  // C_i
  std::optional<double> overall;       // running mean of segment aggregates

  bool operator==(const SegmentScorecard&) const = default;
};

/// Builds a scorecard from the segment's events. `instructor_present[i]` and
/// `verdicts[s][i]` refer to event i; student verdicts may be missing for
/// events where the instructor was absent.
inline SegmentScorecard build_scorecard(std::int64_t segment, std::int64_t start, std::int64_t end,
                                        std::span<const std::string> students,
                                        std::span<const bool> instructor_present,
                                        std::span<const std::vector<std::optional<EventVerdict>>> verdicts) {
  SegmentScorecard card;
  card.segment = segment;
  card.start = start;
  card.end = end;
  card.events = static_cast<int>(instructor_present.size());
  for (bool b : instructor_present) card.instructor_present += b;
  card.presentation = presentation_score(instructor_present);
  std::vector<std::optional<double>> scores;
  for (std::size_t s = 0; s < students.size(); ++s) {
    StudentScore row;
    row.id = students[s];
    const auto& vs = verdicts[s];
    row.counted = count_fixation_denominator(instructor_present, vs);
    for (std::size_t i = 0; i < instructor_present.size(); ++i) {
      if (i >= vs.size() || !vs[i]) continue;
      row.verdicts.push_back(*vs[i]);
      if (instructor_present[i] && vs[i]->counted && vs[i]->engaged()) ++row.engaged;
    }
    row.score = current_score(row.engaged, row.counted);
    scores.push_back(row.score);
    card.students.push_back(std::move(row));
  }
  card.aggregate = aggregate_score(scores);
  return card;
}

/// Running mean over the aggregates of all segments so far (N/A skipped).
class OverallTracker {
 public:
  std::optional<double> add(const std::optional<double>& aggregate) {
    if (aggregate) {
      sum_ += *aggregate;
      ++n_;
    }
    if (n_ == 0) return std::nullopt;
    return sum_ / n_;
  }

 private:
  double sum_ = 0.0;
  int n_ = 0;
};

using Json = nlohmann::ordered_json;

inline Json optional_json(const std::optional<double>& v) { return v ? Json(*v) : Json(nullptr); }
inline Json optional_json(const std::optional<bool>& v) { return v ? Json(*v) : Json(nullptr); }

inline Json to_json(const EventVerdict& v) {
  return Json{{"start", v.event_start},  {"end", v.event_end},
              {"visual", v.visual},      {"contextual", optional_json(v.contextual)},
              {"cognitive", optional_json(v.cognitive)}, {"counted", v.counted},
              {"distance", optional_json(v.distance)},   {"p", optional_json(v.p)}};
}

inline Json to_json(const SegmentScorecard& c) {
  Json students = Json::array();
  for (const auto& s : c.students) {
    Json verdicts = Json::array();
    for (const auto& v : s.verdicts) verdicts.push_back(to_json(v));
    students.push_back(Json{{"id", s.id}, {"Fs", s.engaged}, {"f", s.counted}, {"Cs", optional_json(s.score)},
                            {"verdicts", verdicts}});
  }
  return Json{{"segment", c.segment},
              {"start", c.start},
              {"end", c.end},
              {"per_student", students},
              {"aggregate", optional_json(c.aggregate)},
              {"Fi", c.instructor_present},
              {"fi", c.events},
              {"Ci", optional_json(c.presentation)},
              {"overall", optional_json(c.overall)}};
}

}  // namespace stungage
