#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "ambigraph/harness.hpp"
#include "ambigraph/ppe.hpp"

namespace fixture {

using namespace ambigraph;

struct Tiny {
  std::vector<AmbiguousDetection> detections;
  std::vector<int> truth;  // per detection, same order
  std::vector<RigidPose> markers;
  std::vector<RigidPose> cameras;
};

struct TinyConfig {
  int markers = 4;
  int images = 3;
  double marker_size = 0.5;
  double noise_px = 1.0;
  double distance = 2.0;
  double spread = 2.0;  // lateral camera offset range
};

// A small cluster of markers near the origin, roughly facing -z, seen by
// every camera. Cameras sit at z = -distance with random lateral offsets and
// look at the origin. Detections come out sorted by (image, marker).
inline Tiny tiny_cluster(const TinyConfig& c, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  const CameraIntrinsics k{500.0, 500.0, 320.0, 240.0, 0.0};
  Tiny out;
  for (int i = 0; i < c.markers; ++i) {
    Vec3 w(gauss(rng), gauss(rng), gauss(rng));
    w = w.normalized() * 0.5 * std::abs(u(rng));
    const Vec3 t(0.4 * u(rng), 0.4 * u(rng), 0.2 * u(rng));
    out.markers.emplace_back(Rotation::exp(w) * Rotation::about_axis(Vec3::UnitX(), kPi), t);
  }
  for (int cam = 0; cam < c.images; ++cam) {
    const Vec3 centre(c.spread * u(rng), c.spread * u(rng), -c.distance);
    const Vec3 fwd = (-centre).normalized();
    const Vec3 x = fwd.cross(Vec3::UnitY()).normalized();
    const Vec3 y = fwd.cross(x);
    Mat3 c2w;
    c2w << x, y, fwd;
    const RigidPose q(Rotation(c2w.transpose()), -c2w.transpose() * centre);
    out.cameras.push_back(q);
    for (int i = 0; i < c.markers; ++i) {
      SyntheticDetection sd = synth_detection(q * out.markers[static_cast<std::size_t>(i)], {i, c.marker_size}, k,
                                              c.noise_px, rng());
      sd.detection.image_id = cam;
      out.detections.push_back(sd.detection);
      out.truth.push_back(sd.true_label);
    }
  }
  return out;
}

// Scene regime with markers around 90 px wide at 4-5 m, where a sizeable
// share of detections is ambiguous at a few pixels of noise.
inline SceneConfig distant_markers(int markers, int images, double noise_px, std::uint64_t seed) {
  SceneConfig c;
  c.markers = markers;
  c.images = images;
  c.marker_size = 0.8;
  c.noise_px = noise_px;
  c.seed = seed;
  return c;
}

}  // namespace fixture
