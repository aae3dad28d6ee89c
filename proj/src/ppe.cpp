#include "ambigraph/ppe.hpp"

#include <algorithm>
#include <cmath>
#include <optional>
#include <random>

#include <Eigen/Dense>

#include "ambigraph/errors.hpp"

namespace ambigraph {
namespace {

using Mat32 = Eigen::Matrix<double, 3, 2>;
using Vec6 = Eigen::Matrix<double, 6, 1>;
using Mat6 = Eigen::Matrix<double, 6, 6>;

Vec2 normalize_pixel(const CameraIntrinsics& k, const Vec2& px) {
  const double y = (px.y() - k.cy) / k.fy;
  const double x = (px.x() - k.cx - k.skew * y) / k.fx;
  return {x, y};
}

void check_corners(const CornerSet2D& c) {
  double scale = 0.0;
  for (int i = 0; i < 4; ++i) {
    for (int j = i + 1; j < 4; ++j) {
      scale = std::max(scale, (c[i] - c[j]).norm());
    }
  }
  if (!(scale > 0.0) || !std::isfinite(scale)) {
    throw DegenerateCorners("marker corners coincide");
  }
  for (int i = 0; i < 4; ++i) {
    for (int j = i + 1; j < 4; ++j) {
      if ((c[i] - c[j]).norm() < 1e-9 * scale) {
        throw DegenerateCorners("repeated marker corner");
      }
    }
  }
  // Any three collinear corners make the homography singular.
  for (int skip = 0; skip < 4; ++skip) {
    std::array<Vec2, 3> p;
    int n = 0;
    for (int i = 0; i < 4; ++i) {
      if (i != skip) p[n++] = c[i];
    }
    const Vec2 a = p[1] - p[0];
    const Vec2 b = p[2] - p[0];
    if (std::abs(a.x() * b.y() - a.y() * b.x()) < 1e-9 * scale * scale) {
      throw DegenerateCorners("three marker corners are collinear");
    }
  }
}

// Plane-to-image homography through the four correspondences (normalised DLT).
Mat3 plane_homography(const std::array<Vec2, 4>& plane, const std::array<Vec2, 4>& image) {
  auto conditioner = [](const std::array<Vec2, 4>& pts) {
    Vec2 mean = Vec2::Zero();
    for (const auto& p : pts) mean += p;
    mean /= 4.0;
    double spread = 0.0;
    for (const auto& p : pts) spread += (p - mean).norm();
    spread /= 4.0;
    const double s = std::sqrt(2.0) / spread;
    Mat3 t;
    t << s, 0, -s * mean.x(), 0, s, -s * mean.y(), 0, 0, 1;
    return t;
  };
  const Mat3 tp = conditioner(plane);
  const Mat3 ti = conditioner(image);

  Eigen::Matrix<double, 8, 9> a;
  for (int i = 0; i < 4; ++i) {
    const Vec3 x = tp * plane[i].homogeneous();
    const Vec3 u = ti * image[i].homogeneous();
    a.row(2 * i) << 0, 0, 0, -x.x(), -x.y(), -1, u.y() * x.x(), u.y() * x.y(), u.y();
    a.row(2 * i + 1) << x.x(), x.y(), 1, 0, 0, 0, -u.x() * x.x(), -u.x() * x.y(), -u.x();
  }
  const Eigen::JacobiSVD<Eigen::Matrix<double, 8, 9>> svd(a, Eigen::ComputeFullV);
  const Eigen::Matrix<double, 9, 1> h = svd.matrixV().col(8);
  Mat3 hn;
  hn << h(0), h(1), h(2), h(3), h(4), h(5), h(6), h(7), h(8);
  return ti.inverse() * hn * tp;
}

// The two rotations consistent with the first-order behaviour of the
// homography at the plane origin: image position v of the origin and the
// 2x2 Jacobian jac of the plane-to-image map there.
std::array<Mat3, 2> infinitesimal_rotations(const Vec2& v, const Eigen::Matrix2d& jac) {
  const Vec3 ray = Vec3(v.x(), v.y(), 1.0).normalized();
  const Mat3 rv = Eigen::Quaterniond::FromTwoVectors(Vec3::UnitZ(), ray).toRotationMatrix();

  Eigen::Matrix<double, 2, 3> proj;
  proj << 1, 0, -v.x(), 0, 1, -v.y();
  const Eigen::Matrix2d b = proj * rv.leftCols<2>();
  const Eigen::Matrix2d a = b.inverse() * jac;

  // a = gamma * top-left 2x2 block of a rotation; the block's largest singular value is 1.
  const Eigen::JacobiSVD<Eigen::Matrix2d> svd(a);
  const double gamma = svd.singularValues()(0);
  if (!(gamma > 1e-12)) {
    throw DegenerateCorners("degenerate homography Jacobian");
  }
  const Eigen::Matrix2d m = a / gamma;
  double b0 = std::sqrt(std::max(0.0, 1.0 - m.col(0).squaredNorm()));
  double b1 = std::sqrt(std::max(0.0, 1.0 - m.col(1).squaredNorm()));
  if (m.col(0).dot(m.col(1)) > 0.0) {
    b1 = -b1;  // columns must stay orthogonal
  }

  std::array<Mat3, 2> out;
  for (int sign = 0; sign < 2; ++sign) {
    const double s = sign == 0 ? 1.0 : -1.0;
    Mat32 cols;
    cols.topRows<2>() = m;
    cols(2, 0) = s * b0;
    cols(2, 1) = s * b1;
    Mat3 r;
    r.col(0) = cols.col(0);
    r.col(1) = cols.col(1);
    r.col(2) = cols.col(0).cross(cols.col(1));
    out[sign] = rv * nearest_rotation(r).matrix();
  }
  return out;
}

// Least-squares translation for a known rotation from normalised image points.
Vec3 translation_for(const Mat3& r, const CornerSet3D& model, const std::array<Vec2, 4>& uv) {
  Eigen::Matrix<double, 8, 3> a;
  Eigen::Matrix<double, 8, 1> rhs;
  for (int i = 0; i < 4; ++i) {
    const Vec3 x = r * model[i];
    a.row(2 * i) << 1, 0, -uv[i].x();
    a.row(2 * i + 1) << 0, 1, -uv[i].y();
    rhs(2 * i) = uv[i].x() * x.z() - x.x();
    rhs(2 * i + 1) = uv[i].y() * x.z() - x.y();
  }
  return a.colPivHouseholderQr().solve(rhs);
}

bool all_in_front(const CornerSet3D& model, const RigidPose& p) {
  return std::all_of(model.begin(), model.end(), [&](const Vec3& c) { return p.apply(c).z() > 1e-12; });
}

std::optional<double> safe_error(const CameraIntrinsics& k, const CornerSet3D& model, const CornerSet2D& obs,
                                 const RigidPose& p) {
  if (!all_in_front(model, p)) return std::nullopt;
  return reprojection_error(k, model, obs, p);
}

}  // namespace

CornerSet3D canonical_corners(double size) {
  const double h = 0.5 * size;
  return {Vec3(-h, h, 0.0), Vec3(h, h, 0.0), Vec3(h, -h, 0.0), Vec3(-h, -h, 0.0)};
}

RigidPose polish_pose(const CameraIntrinsics& k, const CornerSet3D& corners3d, const CornerSet2D& corners2d,
                      const RigidPose& initial, int max_iterations) {
  RigidPose pose = initial;
  auto cost = safe_error(k, corners3d, corners2d, pose);
  if (!cost) return pose;
  double lambda = 1e-6;
  for (int iter = 0; iter < max_iterations; ++iter) {
    Mat6 h = Mat6::Zero();
    Vec6 g = Vec6::Zero();
    for (int i = 0; i < 4; ++i) {
      const Vec3 xc = pose.apply(corners3d[i]);
      const double iz = 1.0 / xc.z();
      Eigen::Matrix<double, 2, 3> dproj;
      dproj << k.fx * iz, k.skew * iz, -(k.fx * xc.x() + k.skew * xc.y()) * iz * iz,
               0.0, k.fy * iz, -k.fy * xc.y() * iz * iz;
      Eigen::Matrix<double, 3, 6> dx;
      dx.leftCols<3>() = -hat(pose.rotation * corners3d[i]);
      dx.rightCols<3>() = Mat3::Identity();
      const Eigen::Matrix<double, 2, 6> j = dproj * dx;
      const Vec2 r = project(k, corners3d[i], pose) - corners2d[i];
      h += j.transpose() * j;
      g += j.transpose() * r;
    }
    if (g.lpNorm<Eigen::Infinity>() < 1e-14) break;

    bool accepted = false;
    while (lambda < 1e12) {
      Mat6 damped = h;
      damped.diagonal() *= (1.0 + lambda);
      const Vec6 step = -damped.ldlt().solve(g);
      const RigidPose trial(Rotation::exp(step.head<3>()) * pose.rotation, pose.translation + step.tail<3>());
      const auto trial_cost = safe_error(k, corners3d, corners2d, trial);
      if (trial_cost && *trial_cost <= *cost) {
        const bool stalled = *cost - *trial_cost <= 1e-15 * (*cost) || step.norm() < 1e-15;
        pose = trial;
        cost = trial_cost;
        lambda = std::max(lambda * 0.1, 1e-12);
        accepted = !stalled;
        break;
      }
      lambda *= 10.0;
    }
    if (!accepted) break;
  }
  pose.rotation = nearest_rotation(pose.rotation.matrix());
  return pose;
}

PpeSolution ppe_solve_full(const CornerSet2D& corners2d, double marker_size, const CameraIntrinsics& k,
                           const PpeOptions& options) {
  if (!k.is_valid()) {
    throw DegenerateCorners("camera intrinsics must have positive focal lengths");
  }
  check_corners(corners2d);

  const CornerSet3D model = canonical_corners(marker_size);
  std::array<Vec2, 4> plane;
  std::array<Vec2, 4> uv;
  for (int i = 0; i < 4; ++i) {
    plane[i] = model[i].head<2>();
    uv[i] = normalize_pixel(k, corners2d[i]);
  }
  Mat3 h = plane_homography(plane, uv);
  if (std::abs(h(2, 2)) < 1e-15) {
    throw PlaneBehindCamera("marker plane passes through the camera centre");
  }
  h /= h(2, 2);
  const Vec2 v(h(0, 2), h(1, 2));
  Eigen::Matrix2d jac;
  for (int r = 0; r < 2; ++r) {
    for (int c = 0; c < 2; ++c) {
      jac(r, c) = h(r, c) - h(2, c) * v(r);
    }
  }

  const auto rotations = infinitesimal_rotations(v, jac);
  std::vector<std::pair<RigidPose, double>> minima;
  for (const Mat3& r : rotations) {
    RigidPose pose(Rotation(r), translation_for(r, model, uv));
    if (!all_in_front(model, pose)) continue;
    pose = polish_pose(k, model, corners2d, pose, options.polish_iterations);
    const auto err = safe_error(k, model, corners2d, pose);
    if (!err) continue;
    minima.emplace_back(pose, *err);
  }
  if (minima.empty()) {
    throw PlaneBehindCamera("no pose hypothesis places the marker in front of the camera");
  }
  std::stable_sort(minima.begin(), minima.end(),
                   [](const auto& a, const auto& b) { return a.second < b.second; });

  PpeSolution out;
  out.poses[0] = minima[0].first;
  out.errors[0] = minima[0].second;
  if (minima.size() < 2 ||
      angular_difference_deg(minima[0].first.rotation, minima[1].first.rotation) < options.duplicate_angle_deg) {
    out.poses[1] = out.poses[0];
    out.errors[1] = out.errors[0];
    out.duplicated = true;
  } else {
    out.poses[1] = minima[1].first;
    out.errors[1] = minima[1].second;
  }
  return out;
}

AmbiguousDetection ppe_solve(const CornerSet2D& corners2d, const MarkerSpec& spec, const CameraIntrinsics& k,
                             const PpeOptions& options) {
  if (!(spec.size > 0.0)) {
    throw DegenerateCorners("marker size must be positive");
  }
  const PpeSolution sol = ppe_solve_full(corners2d, spec.size, k, options);
  AmbiguousDetection det;
  det.marker_id = spec.id;
  det.corners = corners2d;
  det.poses = sol.poses;
  det.poses[1].translation = det.poses[0].translation;
  det.errors = sol.errors;
  return det;
}

int ground_truth_label(const AmbiguousDetection& detection, const Rotation& truth) {
  const double theta0 = angular_difference_deg(detection.rotation(0), truth);
  const double theta1 = angular_difference_deg(detection.rotation(1), truth);
  return theta1 < theta0 - 1e-9 ? 1 : 0;
}

SyntheticDetection synth_detection(const RigidPose& true_pose, const MarkerSpec& spec, const CameraIntrinsics& k,
                                   double noise_sigma, std::uint64_t rng_seed) {
  const CornerSet3D model = canonical_corners(spec);
  std::mt19937_64 rng(rng_seed);
  std::normal_distribution<double> noise(0.0, 1.0);
  SyntheticDetection out;
  for (int i = 0; i < 4; ++i) {
    const Vec2 clean = project(k, model[i], true_pose);
    const double dx = noise(rng);
    const double dy = noise(rng);
    out.corners[i] = clean + noise_sigma * Vec2(dx, dy);
  }
  out.detection = ppe_solve(out.corners, spec, k);
  out.true_label = ground_truth_label(out.detection, true_pose.rotation);
  return out;
}

}  // namespace ambigraph
