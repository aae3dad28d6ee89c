#pragma once

#include <map>
#include <span>
#include <vector>

#include "ambigraph/geometry.hpp"
#include "ambigraph/ppe.hpp"
#include "ambigraph/selection.hpp"

namespace ambigraph {

/// Markers map marker frame to world; cameras map world to camera frame.
struct MarkerMap {
  int reference_marker = 0;
  std::map<int, RigidPose> markers;
  std::map<int, RigidPose> cameras;
};

struct PoseGraphConfig {
  double huber_scale = 0.1;
  int max_iterations = 100;
  double tolerance = 1e-12;
};

struct SolverTrace {
  std::vector<double> objective;  // initial value first, then one entry per accepted or rejected step
  int iterations = 0;
  bool converged = false;
  bool max_iterations_reached = false;
};

/// Marker poses from resolved M2C poses. Rotations start from `initial_rotations`
/// (marker to world) where given and are chained along a spanning tree elsewhere;
/// translations are chained. Huber-robust SE(3) pose-graph refinement follows.
/// The smallest marker id becomes the identity reference.
/// Throws DisconnectedGraph when the resolved poses do not link all markers.
std::map<int, RigidPose> marker_pose_graph_init(std::span<const ResolvedPose> resolved,
                                                const std::map<int, Rotation>& initial_rotations,
                                                const PoseGraphConfig& config = {}, SolverTrace* trace = nullptr);

/// Per image: chordal mean of the rotations and arithmetic mean of the
/// translations of every camera pose implied by a mapped marker.
/// Throws UnobservedImage if an image sees no mapped marker.
std::map<int, RigidPose> camera_init_single_pose_averaging(std::span<const ResolvedPose> resolved,
                                                           const std::map<int, RigidPose>& markers);

struct BundleConfig {
  int max_iterations = 100;
  double initial_damping = 1e-3;
  double damping_up = 10.0;
  double damping_down = 0.1;
  double max_damping = 1e12;
  double tolerance = 1e-14;
};

struct BundleObservation {
  int image_id = 0;
  int marker_id = 0;
  CornerSet2D corners{};
};

/// Levenberg-Marquardt over all marker and camera poses on the corner
/// reprojection error; the reference marker stays fixed. Camera blocks are
/// eliminated with a Schur complement.
MarkerMap bundle_adjust(const MarkerMap& initial, std::span<const BundleObservation> observations,
                        const CameraIntrinsics& k, double marker_size, const BundleConfig& config = {},
                        SolverTrace* trace = nullptr);

/// Sum of squared corner residuals over observations whose marker and camera are mapped.
double total_reprojection_error(const MarkerMap& map, std::span<const BundleObservation> observations,
                                const CameraIntrinsics& k, double marker_size);

struct ReconstructionConfig {
  PoseGraphConfig pose_graph;
  BundleConfig bundle;
};

struct Reconstruction {
  MarkerMap map;
  MarkerMap initial;  // before bundle adjustment
  SolverTrace pose_graph_trace;
  SolverTrace bundle_trace;
  double rms_px = 0.0;  // per corner coordinate after bundle adjustment
};

/// Pose graph, camera averaging and bundle adjustment on the covisibility
/// component holding the most resolved detections.
/// Throws InsufficientData when `resolved` is empty.
Reconstruction reconstruct(std::span<const ResolvedPose> resolved, std::span<const BundleObservation> observations,
                           const CameraIntrinsics& k, double marker_size,
                           const std::map<int, Rotation>& initial_rotations = {},
                           const ReconstructionConfig& config = {});

}  // namespace ambigraph
