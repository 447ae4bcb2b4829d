#include <random>

#include <gtest/gtest.h>

#include "oracles/oracles.hpp"
#include "stungage/gaze.hpp"
#include "stungage/stats.hpp"

using namespace stungage;

namespace {

struct Truth {
  oracle::Vec3 r, t;
};

Truth random_pose(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::uniform_real_distribution<double> angle(0.0, 30.0 * std::numbers::pi / 180.0);
  std::uniform_real_distribution<double> depth(400.0, 800.0);
  oracle::Vec3 axis{u(rng), u(rng), u(rng)};
  const double n = std::sqrt(axis.x * axis.x + axis.y * axis.y + axis.z * axis.z);
  const double a = angle(rng);
  return {{axis.x / n * a, axis.y / n * a, axis.z / n * a}, {u(rng) * 60.0, u(rng) * 40.0, depth(rng)}};
}

CandidatePoints render(const Truth& truth, const CameraIntrinsics& k, const FaceModel3D& model, double noise,
                       std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  CandidatePoints out;
  for (std::size_t i = 0; i < 6; ++i) {
    const auto& p = model.points[i];
    const auto [x, y] = oracle::project(truth.r, truth.t, k.fx, k.fy, k.cx, k.cy, {p.x(), p.y(), p.z()});
    out[i] = Point2(x + (noise > 0 ? noise * n(rng) : 0.0), y + (noise > 0 ? noise * n(rng) : 0.0));
  }
  return out;
}

}  // namespace

TEST(Projection, AgreesWithRodriguesOracle) {
  std::mt19937_64 rng(1);
  const auto k = CameraIntrinsics::for_frame(640, 480);
  for (int i = 0; i < 200; ++i) {
    const auto truth = random_pose(rng);
    const Pose pose{{truth.r.x, truth.r.y, truth.r.z}, {truth.t.x, truth.t.y, truth.t.z}};
    const Point3 x(50.0 * (i % 5 - 2), 10.0 * (i % 7), 30.0);
    const auto [u, v] = oracle::project(truth.r, truth.t, k.fx, k.fy, k.cx, k.cy, {x.x(), x.y(), x.z()});
    const Point2 got = project_point(pose, k, x);
    EXPECT_NEAR(got.x(), u, 1e-9);
    EXPECT_NEAR(got.y(), v, 1e-9);
  }
  EXPECT_THROW(project_point(Pose{{0, 0, 0}, {0, 0, -10}}, k, Point3(0, 0, 0)), Error);
}

TEST(Pose, NoiselessRoundTrip) {
  std::mt19937_64 rng(2);
  const auto k = CameraIntrinsics::for_frame(640, 480);
  const auto model = FaceModel3D::generic();
  for (int i = 0; i < 200; ++i) {
    const auto truth = random_pose(rng);
    const auto pts = render(truth, k, model, 0.0, rng);
    const auto rep = estimate_head_pose(pts, model, k);
    const Pose want{{truth.r.x, truth.r.y, truth.r.z}, {truth.t.x, truth.t.y, truth.t.z}};
    EXPECT_LT(rotation_distance(rep.pose, want), 1e-4);
    EXPECT_LT((rep.pose.translation - want.translation).norm() / want.translation.norm(), 1e-3);
    EXPECT_LE(rep.final_cost, rep.initial_cost);
  }
}

TEST(Pose, NoisyFitStaysNearPixelNoise) {
  std::mt19937_64 rng(3);
  const auto k = CameraIntrinsics::for_frame(640, 480);
  const auto model = FaceModel3D::generic();
  int good = 0;
  for (int i = 0; i < 200; ++i) {
    const auto truth = random_pose(rng);
    const auto pts = render(truth, k, model, 0.5, rng);
    const auto rep = estimate_head_pose(pts, model, k);
    if (std::sqrt(rep.final_cost / 6.0) <= 1.0) ++good;
  }
  EXPECT_GE(good, 190);
}

TEST(Pose, LmNeverIncreasesCost) {
  std::mt19937_64 rng(4);
  const auto k = CameraIntrinsics::for_frame(640, 480);
  const auto model = FaceModel3D::generic();
  for (int i = 0; i < 100; ++i) {
    const auto truth = random_pose(rng);
    const auto pts = render(truth, k, model, 2.0, rng);
    Pose start{{truth.r.x + 0.05, truth.r.y, truth.r.z - 0.05}, {truth.t.x + 10, truth.t.y, truth.t.z + 30}};
    const auto rep = refine_pose_lm(start, pts, model.points, k);
    EXPECT_LE(rep.final_cost, rep.initial_cost);
  }
}

TEST(Pose, DegenerateInputs) {
  const auto k = CameraIntrinsics::for_frame(640, 480);
  const auto model = FaceModel3D::generic();
  std::vector<Point2> five(5, Point2(1, 1));
  EXPECT_THROW(solve_pose_dlt(five, std::span(model.points).first(5), k), DegenerateError);
  std::vector<Point2> same(6, Point2(320, 240));
  EXPECT_THROW(solve_pose_dlt(same, model.points, k), DegenerateError);
  std::vector<Point3> flat(6, Point3(1, 2, 3));
  std::vector<Point2> spread{{0, 0}, {10, 0}, {0, 10}, {10, 10}, {5, 5}, {3, 8}};
  EXPECT_THROW(solve_pose_dlt(spread, flat, k), DegenerateError);
  EXPECT_THROW(solve_pose_dlt(spread, std::span(model.points).first(5), k), Error);
  try {
    solve_pose_dlt(same, model.points, k);
  } catch (const Error& e) {
    EXPECT_EQ(e.module(), "gaze-analysis");
  }
}

TEST(FaceModel, Validation) {
  EXPECT_NO_THROW(FaceModel3D::generic().validate());
  auto coplanar = FaceModel3D::generic();
  for (auto& p : coplanar.points) p.z() = 0.0;
  EXPECT_THROW(coplanar.validate(), ConfigError);
  auto dup = FaceModel3D::generic();
  dup.points[1] = dup.points[0];
  EXPECT_THROW(dup.validate(), ConfigError);
}

TEST(GazeProjection, NeedsLandmarks) {
  FaceFrameRecord r{5, false, std::nullopt};
  EXPECT_THROW(gaze_projection(r, FaceModel3D::generic(), CameraIntrinsics::for_frame(640, 480)), Error);
}

TEST(Energy, MatchesWindowOracle) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 300; ++trial) {
    const int fps = 1 + static_cast<int>(rng() % 30);
    const std::int64_t start = static_cast<std::int64_t>(rng() % 50);
    const std::int64_t end = start + static_cast<std::int64_t>(rng() % 200);
    std::vector<ProjectionSample> samples;
    std::vector<std::pair<std::int64_t, double>> raw;
    for (std::int64_t ts = 0; ts < end + 20; ++ts) {
      if (rng() % 5 == 0) continue;
      const double x = std::uniform_real_distribution<double>(-1, 1)(rng);
      samples.push_back({ts, x});
      raw.emplace_back(ts, x);
    }
    const auto got = gazing_energy(samples, start, end, fps);
    const auto want = oracle::window_energy(raw, start, end, fps);
    ASSERT_EQ(got.windows.size(), want.size());
    for (std::size_t i = 0; i < want.size(); ++i) {
      EXPECT_EQ(got.windows[i], want[i].k);
      EXPECT_NEAR(got.energies[i], want[i].energy, 1e-12);
    }
  }
}

TEST(Energy, OrderAndFpsErrors) {
  std::vector<ProjectionSample> back{{5, 0.1}, {4, 0.1}};
  EXPECT_THROW(gazing_energy(back, 0, 10, 2), Error);
  EXPECT_THROW(gazing_energy({}, 0, 10, 0), ConfigError);
  EXPECT_TRUE(gazing_energy({}, 10, 0, 5).windows.empty());
}

TEST(HorizontalSeries, NormalizesByWidth) {
  std::vector<TimedPoint> pts{{0, Point2(320, 10)}, {1, Point2(64, 99)}};
  const auto s = horizontal_series(pts, 640);
  EXPECT_DOUBLE_EQ(s[0].x, 0.5);
  EXPECT_DOUBLE_EQ(s[1].x, 0.1);
  EXPECT_DOUBLE_EQ(horizontal_series(pts, 640, false)[1].x, 64.0);
  EXPECT_THROW(horizontal_series(pts, 0), Error);
}

TEST(IncompleteBeta, KnownValues) {
  EXPECT_NEAR(regularized_incomplete_beta(1, 1, 0.3), 0.3, 1e-14);
  EXPECT_NEAR(regularized_incomplete_beta(2, 1, 0.3), 0.09, 1e-14);
  EXPECT_NEAR(regularized_incomplete_beta(1, 2, 0.3), 1 - 0.49, 1e-14);
  EXPECT_NEAR(regularized_incomplete_beta(0.5, 0.5, 0.5), 0.5, 1e-14);
  EXPECT_EQ(regularized_incomplete_beta(3, 4, 0.0), 0.0);
  EXPECT_EQ(regularized_incomplete_beta(3, 4, 1.0), 1.0);
  EXPECT_THROW(regularized_incomplete_beta(0, 1, 0.5), Error);
  EXPECT_THROW(regularized_incomplete_beta(1, 1, 1.5), Error);
}

TEST(StudentT, MatchesNumericIntegration) {
  for (double df = 2; df <= 60; df += 3)
    for (double t = 0.0; t <= 10.0; t += 0.37) {
      const double want = oracle::t_two_sided(t, df);
      EXPECT_NEAR(student_t_two_sided_p(t, df), want, 1e-6) << t << " " << df;
      EXPECT_EQ(student_t_two_sided_p(-t, df), student_t_two_sided_p(t, df));
    }
  // Table value: t = 2.228 at df = 10 is the two-sided 5% point.
  EXPECT_NEAR(student_t_two_sided_p(2.228, 10), 0.05, 1e-4);
  EXPECT_THROW(student_t_two_sided_p(1.0, 0.0), Error);
}

TEST(TTest, DirectComputation) {
  const std::vector<double> a{1, 2, 3, 4}, b{2, 4, 6, 8};
  const auto r = t_test_equal_mean(a, b);
  // means 2.5, 5; ss 5, 20; pooled var 25/6; se^2 = 25/12
  EXPECT_NEAR(r.t, -2.5 / std::sqrt(25.0 / 12.0), 1e-12);
  EXPECT_EQ(r.df, 6.0);
  EXPECT_NEAR(r.p, oracle::t_two_sided(r.t, 6), 1e-6);
  const auto w = t_test_equal_mean(a, b, TTestVariant::welch);
  const double va = 5.0 / 3 / 4, vb = 20.0 / 3 / 4;
  EXPECT_NEAR(w.df, (va + vb) * (va + vb) / (va * va / 3 + vb * vb / 3), 1e-12);
  EXPECT_NEAR(w.t, -2.5 / std::sqrt(va + vb), 1e-12);
}

TEST(TTest, DegenerateVarianceAndSmallSamples) {
  const std::vector<double> c{3, 3, 3}, d{4, 4};
  EXPECT_EQ(t_test_equal_mean(c, c).p, 1.0);
  EXPECT_EQ(t_test_equal_mean(c, d).p, 0.0);
  const std::vector<double> one{1.0};
  EXPECT_THROW(t_test_equal_mean(one, c), InsufficientDataError);
  EXPECT_THROW(t_test_equal_mean(c, one), InsufficientDataError);
  EXPECT_TRUE(cognitive_presence({0, 5, 0.001}, 0.001));
  EXPECT_FALSE(cognitive_presence({0, 5, 0.000999}, 0.001));
}

TEST(TTest, SymmetricAndShiftInvariant) {
  std::mt19937_64 rng(6);
  std::normal_distribution<double> n(0, 1);
  for (int i = 0; i < 100; ++i) {
    std::vector<double> a(5 + i % 7), b(4 + i % 5);
    for (auto& x : a) x = n(rng);
    for (auto& x : b) x = n(rng) + 0.3;
    const auto ab = t_test_equal_mean(a, b), ba = t_test_equal_mean(b, a);
    EXPECT_NEAR(ab.p, ba.p, 1e-14);
    for (auto& x : a) x += 100;
    for (auto& x : b) x += 100;
    EXPECT_NEAR(t_test_equal_mean(a, b).p, ab.p, 1e-8);
  }
}
