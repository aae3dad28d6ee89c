#include "ambigraph/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <cmath>
#include <numeric>
#include <random>
#include <thread>

#include <Eigen/Geometry>
#include <Eigen/SVD>

#include "ambigraph/errors.hpp"
#include "ambigraph/multigraph.hpp"
#include "ambigraph/selection.hpp"

namespace ambigraph {
namespace {

constexpr int kCameraDraws = 50;

bool detection_less(const AmbiguousDetection& a, const AmbiguousDetection& b) {
  return a.image_id != b.image_id ? a.image_id < b.image_id : a.marker_id < b.marker_id;
}

void validate(const SceneConfig& c) {
  if (c.markers < 2) throw ValidationError("a scene needs at least 2 markers");
  if (c.images < 1) throw ValidationError("a scene needs at least 1 image");
  if (!(c.marker_size > 0.0)) throw ValidationError("marker size must be positive");
  if (!c.camera.is_valid()) throw ValidationError("camera focal lengths must be positive");
  if (c.image_width <= 0 || c.image_height <= 0) throw ValidationError("image size must be positive");
  if (!(c.noise_px >= 0.0)) throw ValidationError("noise must be non-negative");
  if (c.max_markers_per_image < 1) throw ValidationError("max markers per image must be at least 1");
  if (!(c.room_x > 0.0 && c.room_y > 0.0 && c.room_z > 0.0)) throw ValidationError("room must have positive size");
}

// Camera-to-world rotation looking along `forward` with world z up.
Mat3 look_rotation(const Vec3& forward) {
  const Vec3 z = forward.normalized();
  Vec3 x = z.cross(Vec3::UnitZ());
  if (x.norm() < 1e-9) x = Vec3::UnitX();
  x.normalize();
  const Vec3 y = z.cross(x);
  Mat3 c;
  c << x, y, z;
  return c;
}

std::map<int, RigidPose> place_markers(const SceneConfig& c, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double perimeter = 2.0 * (c.room_x + c.room_y);
  const double phase = unit(rng) * perimeter;
  const double margin = 0.3;
  std::map<int, RigidPose> out;
  for (int k = 0; k < c.markers; ++k) {
    double u = std::fmod(phase + (k + 0.2 + 0.6 * unit(rng)) * perimeter / c.markers, perimeter);
    Vec3 pos;
    Vec3 normal;
    auto along = [&](double s, double len) { return std::clamp(s, margin, len - margin); };
    if (u < c.room_x) {
      pos = {along(u, c.room_x), 0.0, 0.0};
      normal = Vec3::UnitY();
    } else if ((u -= c.room_x) < c.room_y) {
      pos = {c.room_x, along(u, c.room_y), 0.0};
      normal = -Vec3::UnitX();
    } else if ((u -= c.room_y) < c.room_x) {
      pos = {c.room_x - along(u, c.room_x), c.room_y, 0.0};
      normal = -Vec3::UnitY();
    } else {
      u -= c.room_x;
      pos = {0.0, c.room_y - along(u, c.room_y), 0.0};
      normal = Vec3::UnitX();
    }
    pos.z() = c.marker_height_min + (c.marker_height_max - c.marker_height_min) * unit(rng);
    // Marker x right, y up, z out of the wall.
    Mat3 w;
    w << Vec3::UnitZ().cross(normal), Vec3::UnitZ(), normal;
    const double axis_angle = 2.0 * kPi * unit(rng);
    const Vec3 axis = std::cos(axis_angle) * w.col(0) + std::sin(axis_angle) * w.col(1);
    const double tilt = (2.0 * unit(rng) - 1.0) * c.marker_tilt_deg * kDegToRad;
    out[k] = RigidPose(Rotation::about_axis(axis, tilt) * Rotation(w), pos);
  }
  return out;
}

// Camera t on the orbit, looking inwards with jitter.
RigidPose sample_camera(const SceneConfig& c, int t, double phase, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> sym(-1.0, 1.0);
  const Vec3 centre(0.5 * c.room_x, 0.5 * c.room_y, 0.0);
  const double theta = phase + 2.0 * kPi * (t + 0.5 * sym(rng)) / c.images;
  Vec3 pos = centre + c.orbit_radius * Vec3(std::cos(theta), std::sin(theta), 0.0);
  pos.z() = c.camera_height + c.camera_height_jitter * sym(rng);
  const double yaw = std::atan2(-std::sin(theta), -std::cos(theta)) + c.gaze_yaw_jitter_deg * kDegToRad * sym(rng);
  const double pitch = c.gaze_pitch_jitter_deg * kDegToRad * sym(rng);
  const Vec3 forward(std::cos(pitch) * std::cos(yaw), std::cos(pitch) * std::sin(yaw), std::sin(pitch));
  const Mat3 r = look_rotation(forward).transpose();
  return RigidPose(Rotation(r), -r * pos);
}

// Apparent mean side length in pixels if the marker is visible, else nullopt.
std::optional<double> visible_size(const SceneConfig& c, const RigidPose& m2c, const RigidPose& marker,
                                   const RigidPose& camera) {
  const CornerSet3D corners = canonical_corners(c.marker_size);
  std::array<Vec2, 4> px;
  for (std::size_t k = 0; k < 4; ++k) {
    const Vec3 xc = m2c.apply(corners[k]);
    if (xc.z() < 0.05) return std::nullopt;
    px[k] = project(c.camera, corners[k], m2c);
    if (px[k].x() < 0.0 || px[k].y() < 0.0 || px[k].x() > c.image_width || px[k].y() > c.image_height) {
      return std::nullopt;
    }
  }
  const Vec3 centre_cam = -(camera.rotation.inverse() * camera.translation);
  const Vec3 to_camera = (centre_cam - marker.translation).normalized();
  const Vec3 normal = marker.rotation * Vec3::UnitZ();
  if (std::acos(std::clamp(normal.dot(to_camera), -1.0, 1.0)) > c.max_view_angle_deg * kDegToRad) return std::nullopt;
  double side = 0.0;
  for (std::size_t k = 0; k < 4; ++k) side += (px[(k + 1) % 4] - px[k]).norm();
  side /= 4.0;
  if (side < c.min_side_px) return std::nullopt;
  return side;
}

}  // namespace

std::vector<AmbiguousDetection> Scene::ambiguous() const {
  std::vector<AmbiguousDetection> out;
  out.reserve(detections.size());
  for (const SceneDetection& d : detections) out.push_back(d.detection);
  return out;
}

std::vector<BundleObservation> Scene::observations() const {
  std::vector<BundleObservation> out;
  out.reserve(detections.size());
  for (const SceneDetection& d : detections) {
    out.push_back({d.detection.image_id, d.detection.marker_id, d.detection.corners});
  }
  return out;
}

Scene generate_scene(const SceneConfig& config) {
  validate(config);
  const MarkerSpec spec{0, config.marker_size};
  for (int attempt = 0; attempt < 10; ++attempt) {
    std::mt19937_64 rng(config.seed + static_cast<std::uint64_t>(attempt) * 0x9E3779B97F4A7C15ULL);
    Scene scene;
    scene.config = config;
    scene.truth.markers = place_markers(config, rng);
    const double phase = 2.0 * kPi * std::uniform_real_distribution<double>(0.0, 1.0)(rng);

    bool every_image_sees = true;
    for (int t = 0; t < config.images; ++t) {
      // Re-aim a camera that sees fewer than two markers, as someone mapping would.
      const std::size_t wanted = std::min<std::size_t>(2, scene.truth.markers.size());
      RigidPose q;
      std::vector<std::pair<double, int>> candidates;
      for (int draw = 0; draw < kCameraDraws; ++draw) {
        const RigidPose trial = sample_camera(config, t, phase, rng);
        std::vector<std::pair<double, int>> found;
        for (const auto& [i, p] : scene.truth.markers) {
          if (auto size = visible_size(config, trial * p, p, trial)) found.emplace_back(*size, i);
        }
        if (draw == 0 || found.size() > candidates.size()) {
          q = trial;
          candidates = std::move(found);
        }
        if (candidates.size() >= wanted) break;
      }
      scene.truth.cameras[t] = q;
      std::stable_sort(candidates.begin(), candidates.end(),
                       [](const auto& a, const auto& b) { return a.first > b.first; });
      if (candidates.size() > static_cast<std::size_t>(config.max_markers_per_image)) {
        candidates.resize(static_cast<std::size_t>(config.max_markers_per_image));
      }
      std::sort(candidates.begin(), candidates.end(), [](const auto& a, const auto& b) { return a.second < b.second; });
      std::size_t seen = 0;
      for (const auto& [size, i] : candidates) {
        const RigidPose m2c = q * scene.truth.markers[i];
        const std::uint64_t det_seed = rng();
        try {
          SyntheticDetection sd = synth_detection(m2c, {i, spec.size}, config.camera, config.noise_px, det_seed);
          sd.detection.image_id = t;
          sd.detection.marker_id = i;
          scene.detections.push_back({sd.detection, sd.true_label, m2c});
          ++seen;
        } catch (const Error&) {
          // The noisy corners admit no valid pose; the detector would miss it.
        }
      }
      if (seen == 0) every_image_sees = false;
    }
    if (!every_image_sees) continue;
    const auto dets = scene.ambiguous();
    const auto comps = covisibility_components(dets);
    if (comps.size() != 1 || comps[0].size() != static_cast<std::size_t>(config.markers)) continue;
    return scene;
  }
  throw DisconnectedScene("no connected scene with every marker and image observed after 10 attempts");
}

std::string method_name(Method m) {
  switch (m) {
    case Method::kM1:
      return "M1";
    case Method::kM2:
      return "M2";
    case Method::kM3:
      return "M3";
    case Method::kM4:
      return "M4";
    case Method::kOurs:
      return "Ours";
  }
  return "?";
}

Method parse_method(const std::string& name) {
  std::string s = name;
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char ch) { return std::tolower(ch); });
  if (s == "m1") return Method::kM1;
  if (s == "m2") return Method::kM2;
  if (s == "m3") return Method::kM3;
  if (s == "m4") return Method::kM4;
  if (s == "ours") return Method::kOurs;
  throw ValidationError("unknown method '" + name + "' (expected m1, m2, m3, m4 or ours)");
}

std::vector<ResolvedPose> MethodSelection::resolved() const {
  std::vector<ResolvedPose> out;
  for (std::size_t d = 0; d < detections.size(); ++d) {
    if (decisions[d] == kDiscarded) continue;
    out.push_back({detections[d].image_id, detections[d].marker_id, decisions[d], detections[d].pose(decisions[d])});
  }
  return out;
}

std::size_t MethodSelection::abstentions() const {
  return static_cast<std::size_t>(std::count(decisions.begin(), decisions.end(), kDiscarded));
}

MethodSelection run_baseline(Method method, std::vector<AmbiguousDetection> detections, const BaselineConfig& config) {
  std::sort(detections.begin(), detections.end(), detection_less);
  MethodSelection sel;
  sel.method = method;
  sel.decisions.assign(detections.size(), 0);
  switch (method) {
    case Method::kM1:
      break;
    case Method::kM2:
    case Method::kM3: {
      const double threshold = method == Method::kM2 ? config.m2_threshold : config.m3_threshold;
      for (std::size_t d = 0; d < detections.size(); ++d) {
        if (detections[d].ratio() >= threshold) sel.decisions[d] = kDiscarded;
      }
      break;
    }
    case Method::kM4: {
      const AmbiguityMultigraph g = AmbiguityMultigraph::build(detections);
      sel.averaging = irls_multigraph_averaging(g, config.averaging);
      std::vector<ImageSelection> images;
      for (const ImageBlock& block : g.images()) {
        images.push_back(solve_mwc(irls_edge_weights(g, sel.averaging.edge_weights, block.image_id)));
      }
      sel.decisions = labels_from_selections(g, images);
      for (std::size_t v = 0; v < g.vertices().size(); ++v) {
        sel.marker_rotations[g.vertices()[v]] = sel.averaging.rotations[v].inverse();
      }
      break;
    }
    case Method::kOurs: {
      Disambiguation dis = disambiguate(detections, config.averaging);
      sel.decisions = dis.labels;
      for (double s : dis.lifted.indicators.values) sel.weight_ratios.push_back(weight_ratio(s));
      for (std::size_t v = 0; v < dis.graph.vertices().size(); ++v) {
        sel.marker_rotations[dis.graph.vertices()[v]] = dis.lifted.rotations[v].inverse();
      }
      sel.averaging = std::move(dis.lifted);
      break;
    }
  }
  sel.detections = std::move(detections);
  return sel;
}

double precision(std::span<const int> decisions, std::span<const int> truth, bool allow_global_flip) {
  std::size_t decided = 0;
  std::size_t correct = 0;
  for (std::size_t d = 0; d < decisions.size(); ++d) {
    if (decisions[d] == kDiscarded) continue;
    ++decided;
    if (decisions[d] == truth[d]) ++correct;
  }
  if (decided == 0) throw NoDecisions("no detection was decided");
  if (allow_global_flip) correct = std::max(correct, decided - correct);
  return 100.0 * static_cast<double>(correct) / static_cast<double>(decided);
}

PoseErrors pose_errors(const MarkerMap& estimate, const SceneGroundTruth& truth) {
  std::vector<int> common;
  for (const auto& [id, p] : estimate.markers) {
    if (truth.markers.count(id)) common.push_back(id);
  }
  if (common.size() < 3) throw DegenerateAlignment("alignment needs at least 3 mapped markers");
  Eigen::Matrix3Xd src(3, common.size());
  Eigen::Matrix3Xd dst(3, common.size());
  for (std::size_t k = 0; k < common.size(); ++k) {
    src.col(static_cast<Eigen::Index>(k)) = estimate.markers.at(common[k]).translation;
    dst.col(static_cast<Eigen::Index>(k)) = truth.markers.at(common[k]).translation;
  }
  const Eigen::Matrix3Xd centred = dst.colwise() - dst.rowwise().mean();
  const Eigen::JacobiSVD<Eigen::MatrixXd> svd(centred);
  const auto sv = svd.singularValues();
  if (sv(0) <= 0.0 || sv(1) < 1e-9 * sv(0)) throw DegenerateAlignment("mapped markers are collinear");

  const RigidPose align = RigidPose::from_matrix(Eigen::umeyama(src, dst, false));
  PoseErrors e;
  for (int id : common) {
    const RigidPose p = align * estimate.markers.at(id);
    const RigidPose& g = truth.markers.at(id);
    e.marker_deg += angular_difference_deg(p.rotation, g.rotation);
    e.marker_cm += 100.0 * (p.translation - g.translation).norm();
  }
  e.marker_deg /= static_cast<double>(common.size());
  e.marker_cm /= static_cast<double>(common.size());

  const RigidPose align_inv = align.inverse();
  std::size_t cams = 0;
  for (const auto& [id, q] : estimate.cameras) {
    const auto it = truth.cameras.find(id);
    if (it == truth.cameras.end()) continue;
    const RigidPose aligned = q * align_inv;
    const Vec3 centre = -(aligned.rotation.inverse() * aligned.translation);
    const Vec3 true_centre = -(it->second.rotation.inverse() * it->second.translation);
    e.camera_deg += angular_difference_deg(aligned.rotation, it->second.rotation);
    e.camera_cm += 100.0 * (centre - true_centre).norm();
    ++cams;
  }
  if (cams > 0) {
    e.camera_deg /= static_cast<double>(cams);
    e.camera_cm /= static_cast<double>(cams);
  }
  return e;
}

std::vector<int> truth_labels(const Scene& scene) {
  std::vector<int> out;
  out.reserve(scene.detections.size());
  for (const SceneDetection& d : scene.detections) out.push_back(d.true_label);
  return out;
}

EvaluationReport evaluate_scene(const Scene& scene, std::span<const Method> methods, const BaselineConfig& config,
                                bool run_sfm) {
  EvaluationReport report;
  for (const SceneDetection& d : scene.detections) report.error_ratios.push_back(d.detection.ratio());
  const std::vector<int> truth = truth_labels(scene);
  const std::vector<BundleObservation> observations = scene.observations();
  for (Method m : methods) {
    MethodReport r;
    r.method = m;
    try {
      const MethodSelection sel = run_baseline(m, scene.ambiguous(), config);
      if (m == Method::kOurs) report.weight_ratios = sel.weight_ratios;
      r.abstained = sel.abstentions();
      r.decided = sel.decisions.size() - r.abstained;
      if (r.decided > 0) r.precision = precision(sel.decisions, truth);
      if (run_sfm) {
        const Reconstruction rec = reconstruct(sel.resolved(), observations, scene.config.camera,
                                               scene.config.marker_size, sel.marker_rotations);
        r.markers_mapped = rec.map.markers.size();
        r.cameras_localised = rec.map.cameras.size();
        r.errors = pose_errors(rec.map, scene.truth);
      }
    } catch (const Error& e) {
      r.failure = e.what();
    }
    report.methods.push_back(std::move(r));
  }
  return report;
}

std::vector<TrialResult> run_experiment(const ExperimentConfig& config) {
  std::vector<TrialResult> results;
  for (double noise : config.noise_levels) {
    for (int k = 0; k < config.trials; ++k) {
      TrialResult r;
      r.noise_px = noise;
      r.trial = k;
      r.seed = config.scene.seed + static_cast<std::uint64_t>(k);
      results.push_back(std::move(r));
    }
  }
  std::atomic<std::size_t> next{0};
  auto worker = [&]() {
    for (std::size_t idx = next++; idx < results.size(); idx = next++) {
      TrialResult& r = results[idx];
      SceneConfig sc = config.scene;
      sc.noise_px = r.noise_px;
      sc.seed = r.seed;
      try {
        const Scene scene = generate_scene(sc);
        r.report = evaluate_scene(scene, config.methods, config.baseline, config.run_sfm);
      } catch (const Error& e) {
        r.failure = e.what();
      }
    }
  };
  const int jobs = std::max(1, config.jobs);
  if (jobs == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int j = 0; j < jobs; ++j) pool.emplace_back(worker);
    for (std::thread& th : pool) th.join();
  }
  return results;
}

}  // namespace ambigraph
