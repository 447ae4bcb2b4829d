#pragma once

#include <array>
#include <cmath>
#include <limits>
#include <span>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/SVD>

#include "stungage/error.hpp"

namespace stungage {

using Point2 = Eigen::Vector2d;
using Point3 = Eigen::Vector3d;

/// Pinhole intrinsics in pixels; lens distortion is modeled as zero.
struct CameraIntrinsics {
  double fx = 0.0;
  double fy = 0.0;
  double cx = 0.0;
  double cy = 0.0;

  /// Uncalibrated-webcam approximation: focal length = frame width,
  /// principal point at the frame center.
  static CameraIntrinsics for_frame(int width, int height) {
    return {static_cast<double>(width), static_cast<double>(width), width / 2.0, height / 2.0};
  }

  void validate(int width, int height) const {
    if (!(fx > 0.0) || !(fy > 0.0)) throw ConfigError("focal lengths must be positive");
    if (!(cx >= 0.0 && cx <= width && cy >= 0.0 && cy <= height))
      throw ConfigError("principal point outside the camera frame");
  }
};

/// 1-based indices into the 68-point landmark layout used for pose recovery:
/// eye corners, lip corners, nose end, chin.
inline constexpr std::array<int, 6> kCandidateLandmarks = {37, 46, 49, 55, 31, 9};
inline constexpr std::size_t kNoseSlot = 4;
inline constexpr std::size_t kLandmarkCount = 68;

using Landmarks = std::array<Point2, kLandmarkCount>;
using CandidatePoints = std::array<Point2, 6>;

inline CandidatePoints select_candidate_landmarks(const Landmarks& lm) {
  CandidatePoints out;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = lm[static_cast<std::size_t>(kCandidateLandmarks[i] - 1)];
  return out;
}

/// Rigid six-point face model in millimeters, ordered like
/// kCandidateLandmarks. Axes: x toward image right, y down, z away from the
/// camera, so the identity rotation is a frontal face.
struct FaceModel3D {
  std::array<Point3, 6> points;

  static FaceModel3D generic() {
    return {{Point3(-43.3, -32.7, 26.0), Point3(43.3, -32.7, 26.0), Point3(-28.9, 28.9, 24.1),
             Point3(28.9, 28.9, 24.1), Point3(0.0, 0.0, 0.0), Point3(0.0, 63.6, 12.5)}};
  }

  const Point3& nose() const { return points[kNoseSlot]; }

  void validate() const {
    for (std::size_t i = 0; i < points.size(); ++i) {
      if (!points[i].allFinite()) throw ConfigError("face model point is not finite");
      for (std::size_t j = i + 1; j < points.size(); ++j)
        if ((points[i] - points[j]).norm() < 1e-9) throw ConfigError("face model points must be distinct");
    }
    Point3 c = Point3::Zero();
    for (const auto& p : points) c += p;
    c /= static_cast<double>(points.size());
    Eigen::Matrix<double, 6, 3> centered;
    for (std::size_t i = 0; i < points.size(); ++i) centered.row(static_cast<Eigen::Index>(i)) = (points[i] - c).transpose();
    Eigen::JacobiSVD<Eigen::Matrix<double, 6, 3>> svd(centered);
    const auto s = svd.singularValues();
    if (s(2) <= 1e-6 * s(0)) throw ConfigError("face model points must not be coplanar");
  }
};

/// Camera-relative rigid pose: x_cam = R(rotation) * X + translation.
struct Pose {
  Eigen::Vector3d rotation = Eigen::Vector3d::Zero();     // axis * angle, angle in [0, pi]
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();

  Eigen::Matrix3d rotation_matrix() const {
    const double angle = rotation.norm();
    if (angle == 0.0) return Eigen::Matrix3d::Identity();
    return Eigen::AngleAxisd(angle, rotation / angle).toRotationMatrix();
  }

  static Pose from_matrix(const Eigen::Matrix3d& r, const Eigen::Vector3d& t) {
    const Eigen::AngleAxisd aa(r);
    return {aa.axis() * aa.angle(), t};
  }
};

/// Rotation angle between two poses' rotations, radians.
inline double rotation_distance(const Pose& a, const Pose& b) {
  const Eigen::AngleAxisd aa(a.rotation_matrix().transpose() * b.rotation_matrix());
  return std::abs(aa.angle());
}

inline Point2 project_point(const Pose& pose, const CameraIntrinsics& k, const Point3& x) {
  const Eigen::Vector3d c = pose.rotation_matrix() * x + pose.translation;
  if (!(c.z() > 0.0)) throw Error("gaze-analysis", "point projects from behind the camera");
  return {k.fx * c.x() / c.z() + k.cx, k.fy * c.y() / c.z() + k.cy};
}

/// Linear pose estimate from >= 6 non-coplanar correspondences.
///
/// Image points are mapped to normalized camera coordinates with K^-1, both
/// point sets are similarity-normalized, and the 3x4 projection [R|t] (up to
/// scale) is the right singular vector of the smallest singular value of the
/// 2n x 12 system. The sign makes model points lie in front of the camera,
/// the rotation block is projected onto SO(3) and the scale is the mean
/// singular value of that block.
inline Pose solve_pose_dlt(std::span<const Point2> image, std::span<const Point3> model,
                           const CameraIntrinsics& k) {
  const std::size_t n = image.size();
  if (n != model.size()) throw Error("gaze-analysis", "correspondence count mismatch");
  if (n < 6) throw DegenerateError("DLT needs at least 6 correspondences");

  std::vector<Point2> uv(n);
  Point2 uc = Point2::Zero();
  Point3 xc = Point3::Zero();
  for (std::size_t i = 0; i < n; ++i) {
    if (!image[i].allFinite() || !model[i].allFinite()) throw Error("gaze-analysis", "non-finite correspondence");
    uv[i] = Point2((image[i].x() - k.cx) / k.fx, (image[i].y() - k.cy) / k.fy);
    uc += uv[i];
    xc += model[i];
  }
  uc /= static_cast<double>(n);
  xc /= static_cast<double>(n);
  double uspread = 0.0;
  double xspread = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    uspread += (uv[i] - uc).norm();
    xspread += (model[i] - xc).norm();
  }
  uspread /= static_cast<double>(n);
  xspread /= static_cast<double>(n);
  if (!(uspread > 1e-12)) throw DegenerateError("image points are coincident");
  if (!(xspread > 1e-12)) throw DegenerateError("model points are coincident");
  const double us = std::sqrt(2.0) / uspread;
  const double xs = std::sqrt(3.0) / xspread;

  Eigen::Matrix<double, Eigen::Dynamic, 12> a(2 * static_cast<Eigen::Index>(n), 12);
  for (std::size_t i = 0; i < n; ++i) {
    const Eigen::Vector3d x = xs * (model[i] - xc);
    const Point2 u = us * (uv[i] - uc);
    const auto r = 2 * static_cast<Eigen::Index>(i);
    a.row(r) << x.x(), x.y(), x.z(), 1.0, 0, 0, 0, 0, -u.x() * x.x(), -u.x() * x.y(), -u.x() * x.z(), -u.x();
    a.row(r + 1) << 0, 0, 0, 0, x.x(), x.y(), x.z(), 1.0, -u.y() * x.x(), -u.y() * x.y(), -u.y() * x.z(), -u.y();
  }
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(a, Eigen::ComputeFullV);
  const auto& s = svd.singularValues();
  if (!(s(10) > 1e-9 * s(0))) throw DegenerateError("DLT system is rank deficient");
  const Eigen::VectorXd h = svd.matrixV().col(11);
  Eigen::Matrix<double, 3, 4> pn;
  pn << h(0), h(1), h(2), h(3), h(4), h(5), h(6), h(7), h(8), h(9), h(10), h(11);

  // Undo normalizations: P = Tu^-1 * Pn * Tx.
  Eigen::Matrix3d tu_inv = Eigen::Matrix3d::Identity();
  tu_inv(0, 0) = tu_inv(1, 1) = 1.0 / us;
  tu_inv(0, 2) = uc.x();
  tu_inv(1, 2) = uc.y();
  Eigen::Matrix4d tx = Eigen::Matrix4d::Identity();
  tx.topLeftCorner<3, 3>() *= xs;
  tx.block<3, 1>(0, 3) = -xs * xc;
  Eigen::Matrix<double, 3, 4> p = tu_inv * pn * tx;

  double depth = 0.0;
  for (std::size_t i = 0; i < n; ++i) depth += p.row(2).head<3>().dot(model[i]) + p(2, 3);
  if (depth < 0.0) p = -p;

  const Eigen::Matrix3d m = p.leftCols<3>();
  Eigen::JacobiSVD<Eigen::Matrix3d> msvd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Eigen::Matrix3d r = msvd.matrixU() * msvd.matrixV().transpose();
  if (r.determinant() < 0.0) {
    Eigen::Matrix3d flip = Eigen::Matrix3d::Identity();
    flip(2, 2) = -1.0;
    r = msvd.matrixU() * flip * msvd.matrixV().transpose();
  }
  const double scale = msvd.singularValues().mean();
  if (!(scale > 0.0)) throw DegenerateError("DLT projection has zero scale");
  return Pose::from_matrix(r, p.col(3) / scale);
}

struct LmOptions {
  int max_iter = 50;
  double lambda0 = 1e-3;
  double tol = 1e-10;
};

struct LmReport {
  Pose pose;
  double initial_cost = 0.0;  // sum of squared pixel residuals
  double final_cost = 0.0;
  int iterations = 0;
};

namespace detail {

// Sum of squared reprojection residuals; +inf if a point falls behind the camera.
inline double reprojection_cost(const Eigen::Matrix3d& r, const Eigen::Vector3d& t,
                                std::span<const Point2> image, std::span<const Point3> model,
                                const CameraIntrinsics& k) {
  double cost = 0.0;
  for (std::size_t i = 0; i < image.size(); ++i) {
    const Eigen::Vector3d c = r * model[i] + t;
    if (!(c.z() > 0.0)) return std::numeric_limits<double>::infinity();
    const double ex = k.fx * c.x() / c.z() + k.cx - image[i].x();
    const double ey = k.fy * c.y() / c.z() + k.cy - image[i].y();
    cost += ex * ex + ey * ey;
  }
  return cost;
}

inline Eigen::Matrix3d skew(const Eigen::Vector3d& v) {
  Eigen::Matrix3d m;
  m << 0, -v.z(), v.y(), v.z(), 0, -v.x(), -v.y(), v.x(), 0;
  return m;
}

}  // namespace detail

/// Levenberg-Marquardt refinement of the reprojection error.
///
/// Rotation updates are left-multiplied increments exp([dw]x) R. The damped
/// system is (J^T J + lambda diag(J^T J)) d = -J^T r; lambda is divided by 10
/// after an accepted step and multiplied by 10 after a rejected one. Stops
/// when the step norm or the accepted cost decrease drops below `tol`, or after
/// `max_iter` solves. Only cost-decreasing steps are accepted.
inline LmReport refine_pose_lm(const Pose& initial, std::span<const Point2> image,
                               std::span<const Point3> model, const CameraIntrinsics& k,
                               const LmOptions& opts = {}) {
  if (image.size() != model.size()) throw Error("gaze-analysis", "correspondence count mismatch");
  if (!initial.rotation.allFinite() || !initial.translation.allFinite())
    throw Error("gaze-analysis", "initial pose is not finite");
  Eigen::Matrix3d r = initial.rotation_matrix();
  Eigen::Vector3d t = initial.translation;
  double cost = detail::reprojection_cost(r, t, image, model, k);
  if (!std::isfinite(cost)) throw Error("gaze-analysis", "non-finite reprojection residuals at the initial pose");

  LmReport report;
  report.initial_cost = cost;
  bool accepted = false;
  double lambda = opts.lambda0;
  const auto n = static_cast<Eigen::Index>(image.size());
  Eigen::MatrixXd jac(2 * n, 6);
  Eigen::VectorXd res(2 * n);

  for (int iter = 0; iter < opts.max_iter; ++iter) {
    for (Eigen::Index i = 0; i < n; ++i) {
      const Eigen::Vector3d rx = r * model[static_cast<std::size_t>(i)];
      const Eigen::Vector3d c = rx + t;
      const double iz = 1.0 / c.z();
      Eigen::Matrix<double, 2, 3> dproj;
      dproj << k.fx * iz, 0.0, -k.fx * c.x() * iz * iz, 0.0, k.fy * iz, -k.fy * c.y() * iz * iz;
      jac.block<2, 3>(2 * i, 0) = -dproj * detail::skew(rx);
      jac.block<2, 3>(2 * i, 3) = dproj;
      res(2 * i) = k.fx * c.x() * iz + k.cx - image[static_cast<std::size_t>(i)].x();
      res(2 * i + 1) = k.fy * c.y() * iz + k.cy - image[static_cast<std::size_t>(i)].y();
    }
    const Eigen::Matrix<double, 6, 6> jtj = jac.transpose() * jac;
    const Eigen::Matrix<double, 6, 1> g = jac.transpose() * res;

    bool stop = false;
    while (true) {
      Eigen::Matrix<double, 6, 6> damped = jtj;
      for (int d = 0; d < 6; ++d) damped(d, d) += lambda * std::max(jtj(d, d), 1e-12);
      const Eigen::Matrix<double, 6, 1> step = damped.ldlt().solve(-g);
      ++report.iterations;
      if (!step.allFinite() || step.norm() < opts.tol) {
        stop = true;
        break;
      }
      const Eigen::Vector3d dw = step.head<3>();
      const double angle = dw.norm();
      const Eigen::Matrix3d dr =
          angle > 0.0 ? Eigen::AngleAxisd(angle, dw / angle).toRotationMatrix() : Eigen::Matrix3d::Identity();
      const Eigen::Matrix3d r_new = dr * r;
      const Eigen::Vector3d t_new = t + step.tail<3>();
      const double cost_new = detail::reprojection_cost(r_new, t_new, image, model, k);
      if (cost_new < cost) {
        const double decrease = cost - cost_new;
        r = r_new;
        t = t_new;
        cost = cost_new;
        lambda /= 10.0;
        accepted = true;
        stop = decrease < opts.tol;
        break;
      }
      lambda *= 10.0;
      if (lambda > 1e16 || report.iterations >= opts.max_iter) {
        stop = true;
        break;
      }
    }
    if (stop || report.iterations >= opts.max_iter) break;
  }
  if (!accepted) {
    report.pose = initial;
    report.final_cost = report.initial_cost;
  } else {
    report.pose = Pose::from_matrix(r, t);
    report.final_cost = detail::reprojection_cost(report.pose.rotation_matrix(), t, image, model, k);
    // Axis-angle round trip can cost a few ulps; never hand back a worse pose.
    if (!(report.final_cost <= report.initial_cost)) {
      report.pose = initial;
      report.final_cost = report.initial_cost;
    }
  }
  return report;
}

}  // namespace stungage
