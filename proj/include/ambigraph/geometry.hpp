#pragma once

#include <array>

#include <Eigen/Core>
#include <Eigen/Geometry>

namespace ambigraph {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Mat4 = Eigen::Matrix4d;

/// Skew-symmetric cross-product matrix, hat(w) * v == w.cross(v).
Mat3 hat(const Vec3& w);

/// Element of SO(3) stored as a 3x3 matrix.
///
/// Construction from a raw matrix does not re-orthonormalise; callers that
/// produce matrices from noisy arithmetic should go through
/// nearest_rotation() first. Solvers update rotations by left-multiplying
/// Exp(w) for a tangent increment w.
class Rotation {
 public:
  Rotation() : m_(Mat3::Identity()) {}
  explicit Rotation(const Mat3& m) : m_(m) {}

  static Rotation identity() { return Rotation(); }
  static Rotation exp(const Vec3& w);
  static Rotation about_axis(const Vec3& axis, double angle_rad);

  /// Axis-angle vector with angle in [0, pi].
  Vec3 log() const;

  const Mat3& matrix() const { return m_; }
  double operator()(int r, int c) const { return m_(r, c); }

  Rotation inverse() const { return Rotation(m_.transpose()); }
  Rotation transpose() const { return inverse(); }

  Rotation operator*(const Rotation& o) const { return Rotation(m_ * o.m_); }
  Vec3 operator*(const Vec3& v) const { return m_ * v; }

  /// Orthonormality and det = +1 within `tol` entrywise.
  bool is_valid(double tol = 1e-9) const;

  bool operator==(const Rotation& o) const { return m_ == o.m_; }

 private:
  Mat3 m_;
};

/// Rigid transform x -> R x + t.
struct RigidPose {
  Rotation rotation;
  Vec3 translation = Vec3::Zero();

  RigidPose() = default;
  RigidPose(const Rotation& r, const Vec3& t) : rotation(r), translation(t) {}

  static RigidPose identity() { return {}; }
  static RigidPose from_matrix(const Mat4& m);

  Vec3 apply(const Vec3& x) const { return rotation * x + translation; }
  RigidPose inverse() const;
  Mat4 matrix() const;

  /// (this * o).apply(x) == this->apply(o.apply(x)).
  RigidPose operator*(const RigidPose& o) const;
};

struct CameraIntrinsics {
  double fx = 1.0;
  double fy = 1.0;
  double cx = 0.0;
  double cy = 0.0;
  double skew = 0.0;

  Mat3 matrix() const;
  bool is_valid() const { return fx > 0.0 && fy > 0.0; }
};

/// Image corners of one marker, in the same order as CornerSet3D.
using CornerSet2D = std::array<Vec2, 4>;
/// Marker-frame corners (z = 0, centred on the origin).
using CornerSet3D = std::array<Vec3, 4>;

/// Pinhole projection of marker-frame point `c` seen from pose `p` (marker to camera).
/// Throws NonPositiveDepth when the camera-frame depth is <= 1e-12.
Vec2 project(const CameraIntrinsics& k, const Vec3& c, const RigidPose& p);

/// Sum of squared corner residuals in pixels^2.
double reprojection_error(const CameraIntrinsics& k, const CornerSet3D& corners3d,
                          const CornerSet2D& corners2d, const RigidPose& p);

/// min/max of two reprojection errors; (0, 0) maps to 1 (fully ambiguous).
double error_ratio(double r_a, double r_b);

/// Frobenius norm ||Ra - Rb||_F, in [0, 2 sqrt 2].
double chordal_distance(const Rotation& a, const Rotation& b);

/// (180/pi) acos(1 - ||I - Ra Rb^T||_F^2 / 4), acos argument clamped to [-1, 1].
double angular_difference_deg(const Rotation& a, const Rotation& b);

/// Orthogonal Procrustes projection onto SO(3).
/// Throws DegenerateMatrix when two singular values fall below 1e-12.
Rotation nearest_rotation(const Mat3& m);

constexpr double kPi = 3.14159265358979323846;
constexpr double kRadToDeg = 180.0 / kPi;
constexpr double kDegToRad = kPi / 180.0;

}  // namespace ambigraph
