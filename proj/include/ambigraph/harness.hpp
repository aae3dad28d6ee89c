#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ambigraph/averaging.hpp"
#include "ambigraph/geometry.hpp"
#include "ambigraph/ppe.hpp"
#include "ambigraph/sfm.hpp"

namespace ambigraph {

struct SceneConfig {
  int markers = 6;
  int images = 20;
  double marker_size = 0.8;  // m
  CameraIntrinsics camera{500.0, 500.0, 320.0, 240.0, 0.0};
  int image_width = 640;
  int image_height = 480;

  // Box room [0, room_x] x [0, room_y] x [0, room_z], markers on the four walls.
  double room_x = 6.0;
  double room_y = 6.0;
  double room_z = 3.0;
  double marker_height_min = 0.8;
  double marker_height_max = 2.2;
  double marker_tilt_deg = 10.0;  // random wobble about the wall normal

  // Cameras on a horizontal circle around the room centre, looking inwards
  // (towards the far wall) with some yaw and pitch jitter.
  double orbit_radius = 1.5;
  double camera_height = 1.5;
  double camera_height_jitter = 0.2;
  double gaze_yaw_jitter_deg = 25.0;
  double gaze_pitch_jitter_deg = 5.0;

  double max_view_angle_deg = 75.0;
  double min_side_px = 10.0;
  int max_markers_per_image = 9;

  double noise_px = 0.0;
  std::uint64_t seed = 1;
};

struct SceneDetection {
  AmbiguousDetection detection;
  int true_label = 0;
  RigidPose true_m2c;
};

struct SceneGroundTruth {
  std::map<int, RigidPose> markers;  // marker to world
  std::map<int, RigidPose> cameras;  // world to camera
};

struct Scene {
  SceneConfig config;
  SceneGroundTruth truth;
  std::vector<SceneDetection> detections;  // sorted by (image, marker)

  std::vector<AmbiguousDetection> ambiguous() const;
  std::vector<BundleObservation> observations() const;
};

/// Deterministic under config.seed. Every marker is seen, every image sees at
/// least one marker and the covisibility graph is connected. A camera seeing
/// fewer than two markers is re-aimed (up to 50 draws); up to 10 placements
/// are tried before DisconnectedScene. Throws ValidationError for fewer than
/// 2 markers or no images.
Scene generate_scene(const SceneConfig& config);

enum class Method { kM1, kM2, kM3, kM4, kOurs };

std::string method_name(Method m);
/// Accepts m1..m4 and ours in any case; throws ValidationError otherwise.
Method parse_method(const std::string& name);

struct BaselineConfig {
  double m2_threshold = 0.1;
  double m3_threshold = 0.6;
  AveragingConfig averaging;
};

constexpr int kDiscarded = -1;

struct MethodSelection {
  Method method = Method::kM1;
  std::vector<AmbiguousDetection> detections;  // sorted by (image, marker)
  std::vector<int> decisions;                  // 0, 1 or kDiscarded
  std::vector<double> weight_ratios;           // lifted indicator weight ratio (Ours only)
  std::map<int, Rotation> marker_rotations;    // marker-to-world rotation estimates (M4, Ours)
  AveragingResult averaging;                   // M4 and Ours

  std::vector<ResolvedPose> resolved() const;
  std::size_t abstentions() const;
};

MethodSelection run_baseline(Method method, std::vector<AmbiguousDetection> detections,
                             const BaselineConfig& config = {});

/// Correct decisions / decided detections, in percent. With `allow_global_flip`
/// the better of the direct and fully flipped labelings is reported.
/// Throws NoDecisions when nothing was decided.
double precision(std::span<const int> decisions, std::span<const int> truth, bool allow_global_flip = false);

struct PoseErrors {
  double marker_deg = 0.0;
  double marker_cm = 0.0;
  double camera_deg = 0.0;
  double camera_cm = 0.0;
};

/// Rigid alignment of estimated to true marker positions, then mean angular
/// and positional errors (camera positions compared as optical centres).
/// Throws DegenerateAlignment with fewer than 3 non-collinear markers.
PoseErrors pose_errors(const MarkerMap& estimate, const SceneGroundTruth& truth);

struct MethodReport {
  Method method = Method::kM1;
  std::optional<double> precision;  // empty when nothing was decided
  std::size_t decided = 0;
  std::size_t abstained = 0;
  std::size_t markers_mapped = 0;
  std::size_t cameras_localised = 0;
  std::optional<PoseErrors> errors;  // empty when mapping failed
  std::string failure;
};

struct EvaluationReport {
  std::vector<MethodReport> methods;
  std::vector<double> error_ratios;   // per detection
  std::vector<double> weight_ratios;  // per detection, from the lifted solution
};

/// Truth labels of the scene detections in sorted order.
std::vector<int> truth_labels(const Scene& scene);

/// Selection plus mapping for every requested method.
EvaluationReport evaluate_scene(const Scene& scene, std::span<const Method> methods, const BaselineConfig& config = {},
                                bool run_sfm = true);

struct ExperimentConfig {
  SceneConfig scene;
  std::vector<double> noise_levels{1.0, 2.0, 3.0};
  int trials = 30;
  std::vector<Method> methods{Method::kM1, Method::kM2, Method::kM3, Method::kM4, Method::kOurs};
  BaselineConfig baseline;
  bool run_sfm = false;
  int jobs = 1;
};

struct TrialResult {
  double noise_px = 0.0;
  int trial = 0;
  std::uint64_t seed = 0;
  EvaluationReport report;
  std::string failure;  // scene generation failure, if any
};

/// Trial k at each noise level uses seed scene.seed + k. Results are ordered by
/// (noise level, trial) whatever the job count.
std::vector<TrialResult> run_experiment(const ExperimentConfig& config);

}  // namespace ambigraph
