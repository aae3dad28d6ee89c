#include "ambigraph/geometry.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/SVD>

#include "ambigraph/errors.hpp"

namespace ambigraph {

Mat3 hat(const Vec3& w) {
  Mat3 m;
  m << 0.0, -w.z(), w.y(),
       w.z(), 0.0, -w.x(),
       -w.y(), w.x(), 0.0;
  return m;
}

Rotation Rotation::exp(const Vec3& w) {
  const double theta2 = w.squaredNorm();
  const Mat3 w_hat = hat(w);
  if (theta2 < 1e-24) {
    return Rotation(Mat3::Identity() + w_hat);
  }
  const double theta = std::sqrt(theta2);
  // Taylor branches keep full precision for tiny angles.
  double a;
  double b;
  if (theta < 1e-4) {
    a = 1.0 - theta2 / 6.0;
    b = 0.5 - theta2 / 24.0;
  } else {
    a = std::sin(theta) / theta;
    b = (1.0 - std::cos(theta)) / theta2;
  }
  return Rotation(Mat3::Identity() + a * w_hat + b * w_hat * w_hat);
}

Rotation Rotation::about_axis(const Vec3& axis, double angle_rad) {
  return exp(axis.normalized() * angle_rad);
}

Vec3 Rotation::log() const {
  const Eigen::AngleAxisd aa(Eigen::Quaterniond(m_).normalized());
  Vec3 w = aa.axis() * aa.angle();
  if (aa.angle() > kPi) {
    w = aa.axis() * (aa.angle() - 2.0 * kPi);
  }
  return w;
}

bool Rotation::is_valid(double tol) const {
  const Mat3 should_be_identity = m_ * m_.transpose();
  if ((should_be_identity - Mat3::Identity()).cwiseAbs().maxCoeff() > tol) {
    return false;
  }
  return std::abs(m_.determinant() - 1.0) <= tol;
}

RigidPose RigidPose::from_matrix(const Mat4& m) {
  return {Rotation(m.topLeftCorner<3, 3>()), m.topRightCorner<3, 1>()};
}

RigidPose RigidPose::inverse() const {
  const Rotation rt = rotation.inverse();
  return {rt, -(rt * translation)};
}

Mat4 RigidPose::matrix() const {
  Mat4 m = Mat4::Identity();
  m.topLeftCorner<3, 3>() = rotation.matrix();
  m.topRightCorner<3, 1>() = translation;
  return m;
}

RigidPose RigidPose::operator*(const RigidPose& o) const {
  return {rotation * o.rotation, rotation * o.translation + translation};
}

Mat3 CameraIntrinsics::matrix() const {
  Mat3 k;
  k << fx, skew, cx,
       0.0, fy, cy,
       0.0, 0.0, 1.0;
  return k;
}

Vec2 project(const CameraIntrinsics& k, const Vec3& c, const RigidPose& p) {
  const Vec3 x = p.apply(c);
  if (x.z() <= 1e-12) {
    throw NonPositiveDepth("point projects with non-positive depth");
  }
  const double u = x.x() / x.z();
  const double v = x.y() / x.z();
  return {k.fx * u + k.skew * v + k.cx, k.fy * v + k.cy};
}

double reprojection_error(const CameraIntrinsics& k, const CornerSet3D& corners3d,
                          const CornerSet2D& corners2d, const RigidPose& p) {
  double sum = 0.0;
  for (std::size_t i = 0; i < corners3d.size(); ++i) {
    sum += (project(k, corners3d[i], p) - corners2d[i]).squaredNorm();
  }
  return sum;
}

double error_ratio(double r_a, double r_b) {
  const double hi = std::max(r_a, r_b);
  if (hi <= 0.0) {
    return 1.0;
  }
  return std::min(r_a, r_b) / hi;
}

double chordal_distance(const Rotation& a, const Rotation& b) {
  return (a.matrix() - b.matrix()).norm();
}

double angular_difference_deg(const Rotation& a, const Rotation& b) {
  const double d2 = (Mat3::Identity() - a.matrix() * b.matrix().transpose()).squaredNorm();
  const double arg = std::clamp(1.0 - 0.25 * d2, -1.0, 1.0);
  return kRadToDeg * std::acos(arg);
}

Rotation nearest_rotation(const Mat3& m) {
  const Eigen::JacobiSVD<Mat3> svd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Vec3 sv = svd.singularValues();
  if (sv(1) < 1e-12) {
    throw DegenerateMatrix("matrix has rank < 2; rotation projection undefined");
  }
  const Mat3& u = svd.matrixU();
  const Mat3& v = svd.matrixV();
  Mat3 d = Mat3::Identity();
  d(2, 2) = (u * v.transpose()).determinant() < 0.0 ? -1.0 : 1.0;
  return Rotation(u * d * v.transpose());
}

}  // namespace ambigraph
