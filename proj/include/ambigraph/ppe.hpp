#pragma once

#include <array>
#include <cstdint>

#include "ambigraph/geometry.hpp"

namespace ambigraph {

struct MarkerSpec {
  int id = 0;
  double size = 1.0;  // side length in meters
};

/// Corners at (+-size/2, +-size/2, 0) in ArUco order:
/// top-left, top-right, bottom-right, bottom-left.
CornerSet3D canonical_corners(double size);
inline CornerSet3D canonical_corners(const MarkerSpec& spec) { return canonical_corners(spec.size); }

/// One marker seen in one image with its two pose hypotheses.
///
/// Both poses share a translation. errors[0] <= errors[1] always; the
/// errors are those of the two polished 6-DOF minima.
struct AmbiguousDetection {
  int image_id = 0;
  int marker_id = 0;
  CornerSet2D corners{};
  std::array<RigidPose, 2> poses;
  std::array<double, 2> errors{0.0, 0.0};

  const RigidPose& pose(int a) const { return poses[static_cast<std::size_t>(a)]; }
  const Rotation& rotation(int a) const { return pose(a).rotation; }
  double error(int a) const { return errors[static_cast<std::size_t>(a)]; }
  double ratio() const { return error_ratio(errors[0], errors[1]); }
};

/// The two locally optimal poses before translation sharing.
struct PpeSolution {
  std::array<RigidPose, 2> poses;
  std::array<double, 2> errors{0.0, 0.0};
  bool duplicated = false;  // only one distinct minimum was found
};

struct PpeOptions {
  int polish_iterations = 50;
  // Polished hypotheses closer than this (degrees) count as the same minimum;
  // near the point where the two minima merge the cost is too flat to separate them further.
  double duplicate_angle_deg = 1e-2;
};

/// Both 6-DOF local minima of the corner reprojection error, ordered by error.
/// Throws DegenerateCorners or PlaneBehindCamera.
PpeSolution ppe_solve_full(const CornerSet2D& corners2d, double marker_size, const CameraIntrinsics& k,
                           const PpeOptions& options = {});

/// ppe_solve_full() with the hypothesis-0 translation copied onto hypothesis 1.
AmbiguousDetection ppe_solve(const CornerSet2D& corners2d, const MarkerSpec& spec, const CameraIntrinsics& k,
                             const PpeOptions& options = {});

/// Refines a pose by damped Gauss-Newton on the corner reprojection error.
RigidPose polish_pose(const CameraIntrinsics& k, const CornerSet3D& corners3d, const CornerSet2D& corners2d,
                      const RigidPose& initial, int max_iterations);

struct SyntheticDetection {
  CornerSet2D corners{};
  AmbiguousDetection detection;
  int true_label = 0;
};

/// Index of the hypothesis with the smaller angular difference to `truth`;
/// ties within 1e-9 degrees resolve to 0.
int ground_truth_label(const AmbiguousDetection& detection, const Rotation& truth);

/// Projects the marker with `true_pose`, adds N(0, sigma^2) pixel noise and runs ppe_solve().
SyntheticDetection synth_detection(const RigidPose& true_pose, const MarkerSpec& spec, const CameraIntrinsics& k,
                                   double noise_sigma, std::uint64_t rng_seed);

}  // namespace ambigraph
