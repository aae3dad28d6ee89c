#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "ambigraph/errors.hpp"
#include "ambigraph/geometry.hpp"
#include "oracles.hpp"

using namespace ambigraph;

namespace {

Rotation random_rotation(std::mt19937_64& rng) { return Rotation(oracle::random_rotation(rng)); }

}  // namespace

TEST(Project, OpticalAxisPoint) {
  const CameraIntrinsics k{1.0, 1.0, 0.0, 0.0, 0.0};
  const Vec2 x = project(k, Vec3::Zero(), RigidPose(Rotation(), Vec3(0, 0, 1)));
  EXPECT_DOUBLE_EQ(x.x(), 0.0);
  EXPECT_DOUBLE_EQ(x.y(), 0.0);
}

TEST(Project, SimilarTriangles) {
  const CameraIntrinsics k{1.0, 1.0, 0.0, 0.0, 0.0};
  const Vec2 x = project(k, Vec3(0.1, 0, 0), RigidPose(Rotation(), Vec3(0, 0, 2)));
  EXPECT_NEAR(x.x(), 0.05, 1e-15);
  EXPECT_NEAR(x.y(), 0.0, 1e-15);
}

TEST(Project, MatchesHomogeneousPipeline) {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int n = 0; n < 1000; ++n) {
    const CameraIntrinsics k{400 + 200 * u(rng), 400 + 200 * u(rng), 320 + 50 * u(rng), 240 + 50 * u(rng),
                             0.5 * u(rng)};
    const Rotation r = random_rotation(rng);
    const Vec3 c(u(rng), u(rng), u(rng));
    Vec3 t(u(rng), u(rng), 0.0);
    t.z() = 3.0 + std::abs(u(rng)) - (r * c).z();  // keep the point in front
    const Vec2 got = project(k, c, RigidPose(r, t));
    const Vec2 want = oracle::project_homogeneous(k.matrix(), r.matrix(), t, c);
    EXPECT_LT((got - want).norm(), 1e-12 * std::max(1.0, want.norm()));
  }
}

TEST(Project, RejectsPointsBehindCamera) {
  const CameraIntrinsics k{1.0, 1.0, 0.0, 0.0, 0.0};
  EXPECT_THROW(project(k, Vec3::Zero(), RigidPose(Rotation(), Vec3(0, 0, -1))), NonPositiveDepth);
  EXPECT_THROW(project(k, Vec3::Zero(), RigidPose(Rotation(), Vec3(0, 0, 0))), NonPositiveDepth);
}

TEST(ReprojectionError, ZeroOnExactProjection) {
  const CameraIntrinsics k{500, 500, 320, 240, 0};
  const RigidPose p(Rotation::about_axis(Vec3(1, 2, 3), 0.4), Vec3(0.1, -0.2, 3.0));
  const CornerSet3D c3{Vec3(-0.1, 0.1, 0), Vec3(0.1, 0.1, 0), Vec3(0.1, -0.1, 0), Vec3(-0.1, -0.1, 0)};
  CornerSet2D c2;
  for (int i = 0; i < 4; ++i) c2[i] = project(k, c3[i], p);
  EXPECT_NEAR(reprojection_error(k, c3, c2, p), 0.0, 1e-20);
  c2[2] += Vec2(3.0, 4.0);
  EXPECT_NEAR(reprojection_error(k, c3, c2, p), 25.0, 1e-9);
}

TEST(ErrorRatio, Values) {
  EXPECT_NEAR(error_ratio(0.00011, 0.00013), 0.846, 5e-4);
  EXPECT_NEAR(error_ratio(0.00013, 0.00011), 0.846, 5e-4);
  EXPECT_DOUBLE_EQ(error_ratio(2.5, 2.5), 1.0);
  EXPECT_DOUBLE_EQ(error_ratio(0.0, 3.0), 0.0);
  EXPECT_DOUBLE_EQ(error_ratio(0.0, 0.0), 1.0);
}

TEST(ChordalDistance, ClosedForms) {
  const Rotation r = Rotation::about_axis(Vec3(0.3, -1, 2), 1.1);
  EXPECT_DOUBLE_EQ(chordal_distance(r, r), 0.0);
  EXPECT_NEAR(chordal_distance(Rotation(), Rotation::about_axis(Vec3::UnitZ(), kPi)), 2.0 * std::sqrt(2.0), 1e-15);
}

TEST(ChordalDistance, TraceIdentity) {
  std::mt19937_64 rng(3);
  for (int n = 0; n < 1000; ++n) {
    const Rotation a = random_rotation(rng);
    const Rotation b = random_rotation(rng);
    const double want = std::sqrt(std::max(0.0, 6.0 - 2.0 * (a.matrix() * b.matrix().transpose()).trace()));
    EXPECT_NEAR(chordal_distance(a, b), want, 1e-12);
  }
}

TEST(AngularDifference, ClosedForms) {
  const Rotation r = Rotation::about_axis(Vec3(1, 1, 0), 0.7);
  EXPECT_NEAR(angular_difference_deg(r, r), 0.0, 1e-6);
  std::mt19937_64 rng(5);
  for (int n = 0; n < 50; ++n) {
    const Vec3 axis = oracle::random_rotation(rng).col(0);
    EXPECT_NEAR(angular_difference_deg(Rotation(), Rotation::about_axis(axis, kPi / 2)), 90.0, 1e-12);
  }
}

TEST(AngularDifference, MatchesQuaternionAngle) {
  std::mt19937_64 rng(17);
  for (int n = 0; n < 1000; ++n) {
    const Rotation a = random_rotation(rng);
    const Rotation b = random_rotation(rng);
    EXPECT_NEAR(angular_difference_deg(a, b), oracle::quaternion_angle_deg(a.matrix(), b.matrix()), 1e-9);
  }
}

TEST(AngularDifference, ChordalIdentity) {
  // ||Ra - Rb||_F = 2 sqrt(2) sin(theta / 2)
  std::mt19937_64 rng(19);
  for (int n = 0; n < 1000; ++n) {
    const Rotation a = random_rotation(rng);
    const Rotation b = random_rotation(rng);
    const double theta = angular_difference_deg(a, b) * kDegToRad;
    EXPECT_NEAR(chordal_distance(a, b), 2.0 * std::sqrt(2.0) * std::sin(theta / 2.0), 1e-9);
  }
}

TEST(Rotation, ExpLogRoundTrip) {
  std::mt19937_64 rng(23);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int n = 0; n < 200; ++n) {
    Vec3 w(u(rng), u(rng), u(rng));
    w = w.normalized() * (3.0 * std::abs(u(rng)));
    const Rotation r = Rotation::exp(w);
    EXPECT_TRUE(r.is_valid());
    EXPECT_LT((r.matrix() - oracle::rodrigues(w)).norm(), 1e-13);
    EXPECT_LT((Rotation::exp(r.log()).matrix() - r.matrix()).norm(), 1e-12);
  }
}

TEST(RigidPose, ComposeAndInvert) {
  const RigidPose a(Rotation::about_axis(Vec3(0, 1, 1), 0.3), Vec3(1, 2, 3));
  const RigidPose b(Rotation::about_axis(Vec3(1, 0, 1), -1.2), Vec3(-1, 0.5, 2));
  const Vec3 x(0.3, -0.7, 1.9);
  EXPECT_LT(((a * b).apply(x) - a.apply(b.apply(x))).norm(), 1e-14);
  EXPECT_LT(((a * a.inverse()).matrix() - Mat4::Identity()).norm(), 1e-14);
  EXPECT_LT((RigidPose::from_matrix(a.matrix()).matrix() - a.matrix()).norm(), 1e-15);
}

TEST(NearestRotation, FixedPointsAndScaling) {
  const Rotation r = Rotation::about_axis(Vec3(2, -1, 0.5), 2.0);
  EXPECT_LT((nearest_rotation(r.matrix()).matrix() - r.matrix()).norm(), 1e-12);
  EXPECT_LT((nearest_rotation(2.0 * Mat3::Identity()).matrix() - Mat3::Identity()).norm(), 1e-12);
  EXPECT_THROW(nearest_rotation(Mat3::Zero()), DegenerateMatrix);
}

TEST(NearestRotation, BeatsRandomSearch) {
  std::mt19937_64 rng(29);
  std::normal_distribution<double> g(0.0, 1.0);
  for (int n = 0; n < 20; ++n) {
    Mat3 m;
    for (int i = 0; i < 9; ++i) m(i / 3, i % 3) = g(rng);
    const Rotation r = nearest_rotation(m);
    EXPECT_TRUE(r.is_valid(1e-12));
    EXPECT_LE((m - r.matrix()).norm(), oracle::random_search_best_distance(m, 10000, rng) + 1e-12);
  }
}
