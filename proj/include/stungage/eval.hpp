#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>

#include "stungage/error.hpp"

namespace stungage {

enum class Label { engaged, non_engaged };

inline std::string_view to_string(Label l) { return l == Label::engaged ? "engaged" : "non-engaged"; }

inline Label parse_label(std::string_view s) {
  if (s == "engaged") return Label::engaged;
  if (s == "non-engaged" || s == "non_engaged") return Label::non_engaged;
  throw Error("eval-harness", "unknown label '" + std::string(s) + "'");
}

/// (segment, student) pair.
using LabelKey = std::pair<std::int64_t, std::string>;
using Predictions = std::map<LabelKey, std::optional<Label>>;  // nullopt = N/A
using GroundTruth = std::map<LabelKey, Label>;

/// Positive class is "engaged".
struct ConfusionCounts {
  int tp = 0;
  int fp = 0;
  int tn = 0;
  int fn = 0;
  int not_available = 0;  // N/A predictions, excluded from the four cells

  int total() const noexcept { return tp + fp + tn + fn; }
  bool operator==(const ConfusionCounts&) const = default;
};

inline ConfusionCounts confusion(const Predictions& predictions, const GroundTruth& labels) {
  if (predictions.size() != labels.size())
    throw Error("eval-harness", "prediction and label keys differ in number");
  ConfusionCounts c;
  for (const auto& [key, truth] : labels) {
    auto it = predictions.find(key);
    if (it == predictions.end())
      throw Error("eval-harness", "no prediction for segment " + std::to_string(key.first) + ", student " + key.second);
    if (!it->second) {
      ++c.not_available;
      continue;
    }
    const bool pred = *it->second == Label::engaged;
    const bool real = truth == Label::engaged;
    if (pred && real) ++c.tp;
    else if (pred && !real) ++c.fp;
    else if (!pred && !real) ++c.tn;
    else ++c.fn;
  }
  return c;
}

/// TN / (TN + FP): non-engaged students the system caught.
inline std::optional<double> specificity(const ConfusionCounts& c) {
  if (c.tn + c.fp == 0) return std::nullopt;
  return static_cast<double>(c.tn) / (c.tn + c.fp);
}

/// TN / (TN + FN): reliability of a non-engaged call.
inline std::optional<double> npv(const ConfusionCounts& c) {
  if (c.tn + c.fn == 0) return std::nullopt;
  return static_cast<double>(c.tn) / (c.tn + c.fn);
}

/// (1 + b^2) npv spec / (b^2 npv + spec); 0 when both inputs are 0.
inline double f_beta(double spec, double npv_value, double beta = 2.0) {
  const double b2 = beta * beta;
  const double denom = b2 * npv_value + spec;
  if (denom == 0.0) return 0.0;
  return (1.0 + b2) * npv_value * spec / denom;
}

inline std::optional<double> f_beta(const ConfusionCounts& c, double beta = 2.0) {
  const auto s = specificity(c);
  const auto n = npv(c);
  if (!s || !n) return std::nullopt;
  return f_beta(*s, *n, beta);
}

/// Continuous-gaze baseline: engaged iff the face is on screen for more than
/// half of the class. Missing frames count as not looking.
inline Label baseline_continuous_gaze(std::span<const std::optional<bool>> face_flags, std::int64_t class_length) {
  if (class_length <= 0) return Label::non_engaged;
  std::int64_t looking = 0;
  for (const auto& f : face_flags) looking += f.value_or(false);
  return 2 * looking > class_length ? Label::engaged : Label::non_engaged;
}

}  // namespace stungage
