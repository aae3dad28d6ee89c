#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "ambigraph/errors.hpp"
#include "ambigraph/harness.hpp"
#include "ambigraph/sfm.hpp"
#include "fixtures.hpp"

using namespace ambigraph;

namespace {

std::vector<ResolvedPose> true_resolved(const Scene& scene) {
  std::vector<ResolvedPose> out;
  for (const SceneDetection& d : scene.detections)
    out.push_back({d.detection.image_id, d.detection.marker_id, d.true_label, d.detection.pose(d.true_label)});
  return out;
}

// Ground truth re-expressed with marker `ref` as the world frame.
SceneGroundTruth regauged(const SceneGroundTruth& t, int ref) {
  const RigidPose g = t.markers.at(ref);
  SceneGroundTruth out;
  for (const auto& [id, p] : t.markers) out.markers[id] = g.inverse() * p;
  for (const auto& [id, q] : t.cameras) out.cameras[id] = q * g;
  return out;
}

double rot_deg(const RigidPose& a, const RigidPose& b) { return angular_difference_deg(a.rotation, b.rotation); }
// Finer than rot_deg near zero, where acos loses resolution.
double rot_chordal(const RigidPose& a, const RigidPose& b) { return chordal_distance(a.rotation, b.rotation); }
double trans_m(const RigidPose& a, const RigidPose& b) { return (a.translation - b.translation).norm(); }

bool non_increasing(const std::vector<double>& trace) {
  for (std::size_t k = 1; k < trace.size(); ++k)
    if (trace[k] > trace[k - 1]) return false;
  return true;
}

MarkerMap truth_map(const SceneGroundTruth& t) {
  MarkerMap m;
  m.reference_marker = t.markers.begin()->first;
  m.markers = t.markers;
  m.cameras = t.cameras;
  return m;
}

}  // namespace

TEST(PoseGraph, NoiselessRoundTrip) {
  const Scene scene = generate_scene(fixture::distant_markers(6, 20, 0.0, 2));
  SolverTrace trace;
  const auto markers = marker_pose_graph_init(true_resolved(scene), {}, {}, &trace);
  const SceneGroundTruth want = regauged(scene.truth, 0);
  ASSERT_EQ(markers.size(), 6u);
  EXPECT_EQ(markers.at(0).matrix(), Mat4::Identity());
  for (const auto& [id, p] : markers) {
    EXPECT_LT(rot_chordal(p, want.markers.at(id)), 1e-6);
    EXPECT_LT(trans_m(p, want.markers.at(id)), 1e-6);
  }
  EXPECT_TRUE(non_increasing(trace.objective));
}

TEST(PoseGraph, SingleMarkerIsIdentity) {
  const ResolvedPose r{0, 7, 0, RigidPose(Rotation::about_axis(Vec3::UnitY(), 0.3), Vec3(0, 0, 2))};
  const auto markers = marker_pose_graph_init(std::vector<ResolvedPose>{r}, {});
  ASSERT_EQ(markers.size(), 1u);
  EXPECT_EQ(markers.at(7).matrix(), Mat4::Identity());
}

TEST(PoseGraph, ReportsComponentsWhenDisconnected) {
  const RigidPose p(Rotation(), Vec3(0, 0, 2));
  const std::vector<ResolvedPose> r{{0, 1, 0, p}, {0, 2, 0, p}, {1, 3, 0, p}, {1, 4, 0, p}};
  try {
    marker_pose_graph_init(r, {});
    FAIL() << "expected DisconnectedGraph";
  } catch (const DisconnectedGraph& e) {
    EXPECT_EQ(e.components(), (std::vector<std::vector<int>>{{1, 2}, {3, 4}}));
  }
  EXPECT_THROW(marker_pose_graph_init(std::vector<ResolvedPose>{}, {}), InsufficientData);
}

TEST(CameraInit, SingletonAndDuplicates) {
  const RigidPose marker(Rotation::about_axis(Vec3(1, 2, 0), 0.5), Vec3(1, 0, 0));
  const RigidPose m2c(Rotation::about_axis(Vec3(0, 1, 1), 2.0), Vec3(0.2, 0.1, 3.0));
  const std::map<int, RigidPose> markers{{0, marker}};
  const RigidPose want = m2c * marker.inverse();
  const auto one = camera_init_single_pose_averaging(std::vector<ResolvedPose>{{5, 0, 0, m2c}}, markers);
  EXPECT_LT((one.at(5).matrix() - want.matrix()).norm(), 1e-12);
  const auto two =
      camera_init_single_pose_averaging(std::vector<ResolvedPose>{{5, 0, 0, m2c}, {5, 0, 0, m2c}}, markers);
  EXPECT_LT((two.at(5).matrix() - want.matrix()).norm(), 1e-12);
  EXPECT_THROW(camera_init_single_pose_averaging(std::vector<ResolvedPose>{{5, 1, 0, m2c}}, markers),
               UnobservedImage);
}

TEST(CameraInit, NoiselessMultiMarkerImages) {
  const Scene scene = generate_scene(fixture::distant_markers(6, 20, 0.0, 4));
  const SceneGroundTruth want = regauged(scene.truth, 0);
  const auto cameras = camera_init_single_pose_averaging(true_resolved(scene), want.markers);
  for (const auto& [id, q] : cameras) {
    EXPECT_LT(rot_chordal(q, want.cameras.at(id)), 1e-9);
    EXPECT_LT(trans_m(q, want.cameras.at(id)), 1e-9);
  }
}

TEST(BundleAdjust, FixedPointAtTruth) {
  const Scene scene = generate_scene(fixture::distant_markers(6, 20, 0.0, 6));
  const MarkerMap start = truth_map(regauged(scene.truth, 0));
  const auto obs = scene.observations();
  SolverTrace trace;
  const MarkerMap out = bundle_adjust(start, obs, scene.config.camera, scene.config.marker_size, {}, &trace);
  EXPECT_LT(total_reprojection_error(out, obs, scene.config.camera, scene.config.marker_size), 1e-16);
  for (const auto& [id, p] : out.markers) EXPECT_LT((p.matrix() - start.markers.at(id).matrix()).norm(), 1e-9);
  for (const auto& [id, q] : out.cameras) EXPECT_LT((q.matrix() - start.cameras.at(id).matrix()).norm(), 1e-9);
}

TEST(BundleAdjust, ConvergesFromPerturbedStart) {
  const Scene scene = generate_scene(fixture::distant_markers(6, 20, 0.0, 8));
  MarkerMap start = truth_map(regauged(scene.truth, 0));
  std::mt19937_64 rng(1);
  std::normal_distribution<double> g(0.0, 1.0);
  auto perturb = [&](RigidPose& p) {
    const Vec3 axis = Vec3(g(rng), g(rng), g(rng)).normalized();
    const Vec3 dir = Vec3(g(rng), g(rng), g(rng)).normalized();
    p.rotation = Rotation::about_axis(axis, 5.0 * kDegToRad) * p.rotation;
    p.translation += 0.05 * dir;
  };
  for (auto& [id, p] : start.markers)
    if (id != start.reference_marker) perturb(p);
  for (auto& [id, q] : start.cameras) perturb(q);
  const auto obs = scene.observations();
  SolverTrace trace;
  const MarkerMap out = bundle_adjust(start, obs, scene.config.camera, scene.config.marker_size, {}, &trace);
  EXPECT_LT(total_reprojection_error(out, obs, scene.config.camera, scene.config.marker_size), 1e-8);
  EXPECT_TRUE(non_increasing(trace.objective));
  EXPECT_EQ(out.markers.at(out.reference_marker).matrix(), start.markers.at(start.reference_marker).matrix());
}

TEST(BundleAdjust, ResidualMatchesNoiseLevel) {
  const Scene scene = generate_scene(fixture::distant_markers(8, 40, 1.0, 10));
  const Reconstruction rec = reconstruct(true_resolved(scene), scene.observations(), scene.config.camera,
                                         scene.config.marker_size);
  EXPECT_GT(rec.rms_px, 1.0 / 1.5);
  EXPECT_LT(rec.rms_px, 1.0 * 1.5);
  EXPECT_TRUE(non_increasing(rec.bundle_trace.objective));
  EXPECT_TRUE(non_increasing(rec.pose_graph_trace.objective));
}

TEST(Reconstruct, NoiselessPipelineIsExact) {
  const Scene scene = generate_scene(fixture::distant_markers(6, 20, 0.0, 12));
  const Disambiguation dis = disambiguate(scene.ambiguous());
  std::map<int, Rotation> rotations;
  for (std::size_t v = 0; v < dis.graph.vertices().size(); ++v)
    rotations[dis.graph.vertices()[v]] = dis.lifted.rotations[v].inverse();
  const Reconstruction rec =
      reconstruct(dis.poses, scene.observations(), scene.config.camera, scene.config.marker_size, rotations);
  const SceneGroundTruth want = regauged(scene.truth, rec.map.reference_marker);
  ASSERT_EQ(rec.map.markers.size(), 6u);
  ASSERT_EQ(rec.map.cameras.size(), 20u);
  for (const auto& [id, p] : rec.map.markers) {
    EXPECT_LT(rot_deg(p, want.markers.at(id)), 1e-4);
    EXPECT_LT(trans_m(p, want.markers.at(id)), 1e-6);
  }
  for (const auto& [id, q] : rec.map.cameras) {
    EXPECT_LT(rot_deg(q, want.cameras.at(id)), 1e-4);
    EXPECT_LT(trans_m(q.inverse(), want.cameras.at(id).inverse()), 1e-6);
  }
}

TEST(Reconstruct, KeepsLargestComponent) {
  const RigidPose p(Rotation::about_axis(Vec3::UnitX(), kPi), Vec3(0, 0, 2));
  const RigidPose p2(Rotation::about_axis(Vec3::UnitX(), kPi), Vec3(0.5, 0, 2));
  const std::vector<ResolvedPose> r{{0, 1, 0, p}, {0, 2, 0, p2}, {1, 1, 0, p}, {1, 2, 0, p2}, {2, 3, 0, p}};
  const Reconstruction rec = reconstruct(r, {}, CameraIntrinsics{500, 500, 320, 240, 0}, 0.2);
  EXPECT_EQ(rec.map.markers.size(), 2u);
  EXPECT_EQ(rec.map.cameras.size(), 2u);
  EXPECT_THROW(reconstruct({}, {}, CameraIntrinsics{500, 500, 320, 240, 0}, 0.2), InsufficientData);
}
