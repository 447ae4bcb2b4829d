#include <random>

#include <gtest/gtest.h>

#include "stungage/eval.hpp"
#include "stungage/scoring.hpp"

using namespace stungage;

namespace {

struct Calls {
  int visual = 0, contextual = 0, cognitive = 0;
};

EventVerdict verdict(bool visual, std::optional<bool> contextual = std::nullopt,
                     std::optional<bool> cognitive = std::nullopt) {
  EventVerdict v;
  v.event_start = 0;
  v.event_end = 9;
  v.student = "A";
  v.visual = visual;
  v.contextual = contextual;
  v.cognitive = cognitive;
  return v;
}

EventVerdict run(bool v, bool c, std::optional<double> p, Calls& calls, CascadeOptions opts = {}) {
  return classify_event(
      verdict(false),
      [&] {
        ++calls.visual;
        return v;
      },
      [&] {
        ++calls.contextual;
        return ContextualResult{c, c ? 0.1 : 0.9};
      },
      [&]() -> TTestResult {
        ++calls.cognitive;
        if (!p) throw InsufficientDataError("few windows");
        return {1.0, 10.0, *p};
      },
      opts);
}

}  // namespace

TEST(Cascade, StopsAtFirstFailure) {
  Calls a;
  auto v = run(false, true, 0.5, a);
  EXPECT_EQ(a.contextual + a.cognitive, 0);
  EXPECT_FALSE(v.contextual.has_value());
  EXPECT_FALSE(v.engaged());

  Calls b;
  v = run(true, false, 0.5, b);
  EXPECT_EQ(b.contextual, 1);
  EXPECT_EQ(b.cognitive, 0);
  EXPECT_EQ(v.contextual, false);
  EXPECT_EQ(v.distance, 0.9);
  EXPECT_FALSE(v.cognitive.has_value());

  Calls c;
  v = run(true, true, 0.5, c);
  EXPECT_EQ(c.cognitive, 1);
  EXPECT_TRUE(v.engaged());
  EXPECT_EQ(v.p, 0.5);
}

TEST(Cascade, AlphaBoundaryAndInsufficientData) {
  Calls calls;
  EXPECT_TRUE(run(true, true, 0.001, calls).engaged());
  EXPECT_FALSE(run(true, true, 0.0009, calls).engaged());
  const auto excluded = run(true, true, std::nullopt, calls);
  EXPECT_FALSE(excluded.counted);
  EXPECT_FALSE(excluded.cognitive.has_value());
  const auto failed = run(true, true, std::nullopt, calls, {0.001, false});
  EXPECT_TRUE(failed.counted);
  EXPECT_EQ(failed.cognitive, false);
}

TEST(Cascade, EachGateFlipsTheVerdict) {
  for (int mask = 0; mask < 8; ++mask) {
    Calls calls;
    const bool v = mask & 1, c = mask & 2, g = mask & 4;
    EXPECT_EQ(run(v, c, g ? 0.5 : 0.0001, calls).engaged(), mask == 7) << mask;
  }
}

TEST(Score, FormulaTable) {
  EXPECT_EQ(current_score(0, 0), std::nullopt);
  EXPECT_EQ(current_score(0, 4), 0.0);
  EXPECT_EQ(current_score(3, 4), 75.0);
  EXPECT_EQ(current_score(4, 4), 100.0);
  EXPECT_NEAR(*current_score(1, 3), 100.0 / 3.0, 1e-12);
  EXPECT_THROW(current_score(5, 4), std::logic_error);
  for (int f = 1; f <= 20; ++f)
    for (int e = 0; e <= f; ++e) {
      const double s = *current_score(e, f);
      EXPECT_GE(s, 0.0);
      EXPECT_LE(s, 100.0);
      EXPECT_DOUBLE_EQ(s, 100.0 * e / f);
    }
}

TEST(Score, AggregateSkipsNotAvailable) {
  const std::vector<std::optional<double>> s{50.0, std::nullopt, 100.0};
  EXPECT_EQ(aggregate_score(s), 75.0);
  const std::vector<std::optional<double>> none{std::nullopt};
  EXPECT_EQ(aggregate_score(none), std::nullopt);
  const std::array<bool, 4> present{true, false, true, true};
  EXPECT_EQ(presentation_score(present), 75.0);
  EXPECT_EQ(presentation_score(std::span<const bool>{}), std::nullopt);
}

TEST(Score, DenominatorExcludesAbsentInstructorAndExcludedEvents) {
  const std::array<bool, 4> present{true, false, true, true};
  EventVerdict excluded{};
  excluded.counted = false;
  const std::vector<std::optional<EventVerdict>> vs{EventVerdict{}, std::nullopt, excluded, std::nullopt};
  EXPECT_EQ(count_fixation_denominator(present, vs), 2);
}

TEST(Scorecard, BuildsPerStudentRowsAndAggregate) {
  const std::vector<std::string> ids{"A", "B", "C"};
  const std::array<bool, 3> present{true, true, false};
  const EventVerdict yes = verdict(true, true, true);
  const EventVerdict no = verdict(true, false);
  EventVerdict skip = yes;
  skip.cognitive.reset();
  skip.counted = false;
  const std::vector<std::vector<std::optional<EventVerdict>>> vs{
      {yes, no, std::nullopt}, {yes, yes, std::nullopt}, {skip, skip, std::nullopt}};
  const auto card = build_scorecard(4, 100, 200, ids, present, vs);
  EXPECT_EQ(card.segment, 4);
  EXPECT_EQ(card.events, 3);
  EXPECT_EQ(card.instructor_present, 2);
  EXPECT_NEAR(*card.presentation, 200.0 / 3.0, 1e-12);
  EXPECT_EQ(card.students[0].score, 50.0);
  EXPECT_EQ(card.students[1].score, 100.0);
  EXPECT_EQ(card.students[2].counted, 0);
  EXPECT_EQ(card.students[2].score, std::nullopt);
  EXPECT_EQ(card.aggregate, 75.0);
}

TEST(Scorecard, NoEventsMeansZeroDenominator) {
  const std::vector<std::string> ids{"A"};
  const std::vector<std::vector<std::optional<EventVerdict>>> vs{{}};
  const auto card = build_scorecard(0, 0, 10, ids, {}, vs);
  EXPECT_EQ(card.students[0].counted, 0);
  EXPECT_EQ(card.students[0].score, std::nullopt);
  EXPECT_EQ(card.aggregate, std::nullopt);
  EXPECT_EQ(card.presentation, std::nullopt);
}

TEST(Scorecard, OverallIsRunningMean) {
  OverallTracker t;
  EXPECT_EQ(t.add(std::nullopt), std::nullopt);
  EXPECT_EQ(t.add(40.0), 40.0);
  EXPECT_EQ(t.add(std::nullopt), 40.0);
  EXPECT_EQ(t.add(80.0), 60.0);
}

TEST(Metrics, WorkedExamples) {
  ConfusionCounts c{};
  c.tn = 9;
  c.fp = 1;
  EXPECT_DOUBLE_EQ(*specificity(c), 0.9);
  EXPECT_EQ(npv(c), 1.0);
  ConfusionCounts d{};
  d.tn = 9;
  d.fn = 3;
  EXPECT_DOUBLE_EQ(*npv(d), 0.75);
  EXPECT_EQ(specificity(d), 1.0);
  EXPECT_NEAR(f_beta(0.8, 0.9), 0.8182, 5e-5);
  EXPECT_EQ(f_beta(0.0, 0.0), 0.0);
  EXPECT_DOUBLE_EQ(f_beta(0.8, 0.9, 0.0), 0.9);
  EXPECT_DOUBLE_EQ(f_beta(0.7, 0.7), 0.7);
  EXPECT_EQ(specificity(ConfusionCounts{}), std::nullopt);
  ConfusionCounts all_positive{};
  all_positive.tp = 3;
  EXPECT_EQ(f_beta(all_positive), std::nullopt);
}

TEST(Metrics, FBetaBoundedAndMonotone) {
  std::mt19937_64 rng(12);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int i = 0; i < 5000; ++i) {
    const double s = u(rng), n = u(rng), e = u(rng) * 0.1;
    const double f = f_beta(s, n);
    EXPECT_GE(f, std::min(s, n) - 1e-12);
    EXPECT_LE(f, std::max(s, n) + 1e-12);
    EXPECT_GE(f_beta(std::min(1.0, s + e), n), f - 1e-12);
    EXPECT_GE(f_beta(s, std::min(1.0, n + e)), f - 1e-12);
  }
}

TEST(Metrics, SpecificityWeighsMoreThanNpv) {
  // Swapping a high specificity for a high NPV lowers F2.
  EXPECT_GT(f_beta(0.9, 0.6), f_beta(0.6, 0.9));
}

TEST(Confusion, MatchesDirectTally) {
  std::mt19937_64 rng(21);
  Predictions pred;
  GroundTruth truth;
  int tp = 0, fp = 0, tn = 0, fn = 0, na = 0;
  for (int seg = 0; seg < 30; ++seg)
    for (const char* s : {"A", "B", "C"}) {
      const Label t = rng() % 2 ? Label::engaged : Label::non_engaged;
      const auto r = rng() % 5;
      std::optional<Label> p;
      if (r == 0) ++na;
      else p = r % 2 ? Label::engaged : Label::non_engaged;
      if (p && *p == Label::engaged) (t == Label::engaged ? tp : fp)++;
      if (p && *p == Label::non_engaged) (t == Label::non_engaged ? tn : fn)++;
      pred[{seg, s}] = p;
      truth[{seg, s}] = t;
    }
  EXPECT_EQ(confusion(pred, truth), (ConfusionCounts{tp, fp, tn, fn, na}));
  pred.erase(pred.begin());
  EXPECT_THROW(confusion(pred, truth), Error);
  pred[{99, "Z"}] = Label::engaged;
  EXPECT_THROW(confusion(pred, truth), Error);
}

TEST(Labels, ParseAndPrint) {
  EXPECT_EQ(parse_label("engaged"), Label::engaged);
  EXPECT_EQ(parse_label("non-engaged"), Label::non_engaged);
  EXPECT_EQ(to_string(Label::non_engaged), "non-engaged");
  EXPECT_THROW(parse_label("bored"), Error);
}

TEST(Baseline, ContinuousGaze) {
  using F = std::vector<std::optional<bool>>;
  EXPECT_EQ(baseline_continuous_gaze(F(10, true), 10), Label::engaged);
  F forty(10, true);
  for (int i = 0; i < 4; ++i) forty[static_cast<std::size_t>(i)] = false;
  EXPECT_EQ(baseline_continuous_gaze(forty, 10), Label::engaged);
  F half(10, true);
  for (int i = 0; i < 5; ++i) half[static_cast<std::size_t>(i)] = false;
  EXPECT_EQ(baseline_continuous_gaze(half, 10), Label::non_engaged);
  F gaps(10, std::nullopt);
  for (int i = 0; i < 6; ++i) gaps[static_cast<std::size_t>(i)] = true;
  EXPECT_EQ(baseline_continuous_gaze(gaps, 10), Label::engaged);
  gaps[0] = std::nullopt;
  gaps[1] = std::nullopt;
  EXPECT_EQ(baseline_continuous_gaze(gaps, 10), Label::non_engaged);
  EXPECT_EQ(baseline_continuous_gaze({}, 0), Label::non_engaged);
}
