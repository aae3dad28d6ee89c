#include "ambigraph/sfm.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <queue>
#include <set>
#include <string>

#include <Eigen/Dense>

#include "ambigraph/errors.hpp"

namespace ambigraph {
namespace {

using Vec6 = Eigen::Matrix<double, 6, 1>;
using Mat6 = Eigen::Matrix<double, 6, 6>;

// Relative pose marker i -> marker j seen in one image.
struct RelativeMeasurement {
  int i = 0;
  int j = 0;
  RigidPose z;
};

std::vector<RelativeMeasurement> relative_measurements(std::span<const ResolvedPose> resolved) {
  std::map<int, std::vector<const ResolvedPose*>> by_image;
  for (const ResolvedPose& r : resolved) by_image[r.image_id].push_back(&r);
  std::vector<RelativeMeasurement> out;
  for (auto& [image, list] : by_image) {
    std::sort(list.begin(), list.end(), [](auto* a, auto* b) { return a->marker_id < b->marker_id; });
    for (std::size_t a = 0; a < list.size(); ++a) {
      for (std::size_t b = a + 1; b < list.size(); ++b) {
        out.push_back({list[a]->marker_id, list[b]->marker_id, list[b]->pose.inverse() * list[a]->pose});
      }
    }
  }
  return out;
}

RigidPose retract_pose(const RigidPose& p, const Vec6& d) {
  return {Rotation::exp(d.head<3>()) * p.rotation, p.translation + d.tail<3>()};
}

struct PoseGraphTerm {
  Eigen::Matrix<double, 12, 1> r;
  Eigen::Matrix<double, 12, 12> j;  // [d/d(w_i, t_i), d/d(w_j, t_j)]
};

PoseGraphTerm pose_graph_term(const RigidPose& pi, const RigidPose& pj, const RigidPose& z) {
  const Mat3 wi = pi.rotation.matrix();
  const Mat3 wjt = pj.rotation.matrix().transpose();
  const Mat3 rp = wjt * wi;
  const Vec3 dt = pi.translation - pj.translation;
  const Vec3 tp = wjt * dt;
  PoseGraphTerm term;
  const Mat3 rr = rp - z.rotation.matrix();
  term.r.head<9>() = Eigen::Map<const Eigen::Matrix<double, 9, 1>>(rr.data());
  term.r.tail<3>() = tp - z.translation;
  term.j.setZero();
  for (int k = 0; k < 3; ++k) {
    const Mat3 e = hat(Vec3::Unit(k));
    const Mat3 dri = wjt * e * wi;
    term.j.block<9, 1>(0, k) = Eigen::Map<const Eigen::Matrix<double, 9, 1>>(dri.data());
    term.j.block<9, 1>(0, 6 + k) = -term.j.block<9, 1>(0, k);
    term.j.block<3, 1>(9, 6 + k) = -wjt * e * dt;
  }
  term.j.block<3, 3>(9, 3) = wjt;
  term.j.block<3, 3>(9, 9) = -wjt;
  return term;
}

double huber(double x, double c) { return x <= c ? 0.5 * x * x : c * (x - 0.5 * c); }
double huber_weight(double x, double c) { return x <= c ? 1.0 : c / x; }

double pose_graph_objective(const std::map<int, RigidPose>& poses, std::span<const RelativeMeasurement> ms,
                            double c) {
  double f = 0.0;
  for (const RelativeMeasurement& m : ms) {
    const RigidPose pred = poses.at(m.j).inverse() * poses.at(m.i);
    const double r2 = (pred.rotation.matrix() - m.z.rotation.matrix()).squaredNorm() +
                      (pred.translation - m.z.translation).squaredNorm();
    f += huber(std::sqrt(r2), c);
  }
  return f;
}

}  // namespace

std::map<int, RigidPose> marker_pose_graph_init(std::span<const ResolvedPose> resolved,
                                                const std::map<int, Rotation>& initial_rotations,
                                                const PoseGraphConfig& config, SolverTrace* trace) {
  std::set<int> ids;
  for (const ResolvedPose& r : resolved) ids.insert(r.marker_id);
  if (ids.empty()) throw InsufficientData("no resolved detections");
  const auto ms = relative_measurements(resolved);

  // Spanning-tree chaining from the smallest id.
  std::map<int, std::vector<std::size_t>> incident;
  for (std::size_t e = 0; e < ms.size(); ++e) {
    incident[ms[e].i].push_back(e);
    incident[ms[e].j].push_back(e);
  }
  const int ref = *ids.begin();
  const bool use_initial = std::all_of(ids.begin(), ids.end(), [&](int id) { return initial_rotations.count(id); });
  const Rotation ref_rot_t = use_initial ? initial_rotations.at(ref).inverse() : Rotation::identity();
  std::map<int, RigidPose> poses;
  poses[ref] = RigidPose::identity();
  std::queue<int> open;
  open.push(ref);
  while (!open.empty()) {
    const int u = open.front();
    open.pop();
    for (std::size_t e : incident[u]) {
      const RelativeMeasurement& m = ms[e];
      const int v = m.i == u ? m.j : m.i;
      if (poses.count(v)) continue;
      // p_i = p_j * z
      const RigidPose chained = m.i == u ? poses[u] * m.z.inverse() : poses[u] * m.z;
      RigidPose p = chained;
      if (use_initial) p.rotation = ref_rot_t * initial_rotations.at(v);
      poses[v] = p;
      open.push(v);
    }
  }
  if (poses.size() != ids.size()) {
    std::vector<std::vector<int>> comps;
    std::set<int> seen;
    for (int id : ids) {
      if (seen.count(id)) continue;
      std::vector<int> comp;
      std::queue<int> q;
      q.push(id);
      seen.insert(id);
      while (!q.empty()) {
        const int u = q.front();
        q.pop();
        comp.push_back(u);
        for (std::size_t e : incident[u]) {
          const int v = ms[e].i == u ? ms[e].j : ms[e].i;
          if (seen.insert(v).second) q.push(v);
        }
      }
      std::sort(comp.begin(), comp.end());
      comps.push_back(std::move(comp));
    }
    throw DisconnectedGraph("resolved detections do not connect all markers", std::move(comps));
  }

  // Index free markers.
  std::map<int, int> index;
  for (int id : ids) {
    if (id != ref) index[id] = static_cast<int>(index.size());
  }
  const Eigen::Index n = static_cast<Eigen::Index>(6 * index.size());
  const double c = config.huber_scale;

  SolverTrace local;
  double f = pose_graph_objective(poses, ms, c);
  local.objective.push_back(f);
  double lambda = 1e-3;
  for (int it = 0; it < config.max_iterations && n > 0; ++it) {
    ++local.iterations;
    Eigen::MatrixXd h = Eigen::MatrixXd::Zero(n, n);
    Eigen::VectorXd g = Eigen::VectorXd::Zero(n);
    for (const RelativeMeasurement& m : ms) {
      const PoseGraphTerm term = pose_graph_term(poses[m.i], poses[m.j], m.z);
      const double w = huber_weight(term.r.norm(), c);
      const std::array<int, 2> ends{m.i, m.j};
      for (int a = 0; a < 2; ++a) {
        if (ends[a] == ref) continue;
        const Eigen::Index ia = 6 * index[ends[a]];
        g.segment<6>(ia) += w * term.j.middleCols<6>(6 * a).transpose() * term.r;
        for (int b = 0; b < 2; ++b) {
          if (ends[b] == ref) continue;
          const Eigen::Index ib = 6 * index[ends[b]];
          h.block<6, 6>(ia, ib) += w * term.j.middleCols<6>(6 * a).transpose() * term.j.middleCols<6>(6 * b);
        }
      }
    }
    if (g.lpNorm<Eigen::Infinity>() < 1e-12) {
      local.converged = true;
      break;
    }
    bool accepted = false;
    while (lambda < 1e12) {
      Eigen::MatrixXd hd = h;
      hd.diagonal() += lambda * (h.diagonal().array() + 1e-12).matrix();
      const Eigen::VectorXd step = -hd.ldlt().solve(g);
      std::map<int, RigidPose> trial = poses;
      for (const auto& [id, k] : index) trial[id] = retract_pose(poses[id], step.segment<6>(6 * k));
      const double ft = pose_graph_objective(trial, ms, c);
      if (std::isfinite(ft) && ft < f) {
        const double decrease = f - ft;
        poses = std::move(trial);
        f = ft;
        lambda = std::max(lambda * 0.1, 1e-12);
        accepted = true;
        if (decrease <= config.tolerance * std::max(f, 1e-300)) local.converged = true;
        break;
      }
      lambda *= 10.0;
    }
    local.objective.push_back(f);
    if (!accepted) {
      local.converged = true;
      break;
    }
    if (local.converged) break;
  }
  if (!local.converged && local.iterations >= config.max_iterations) local.max_iterations_reached = true;
  if (trace) *trace = std::move(local);
  return poses;
}

std::map<int, RigidPose> camera_init_single_pose_averaging(std::span<const ResolvedPose> resolved,
                                                           const std::map<int, RigidPose>& markers) {
  struct Sum {
    Mat3 r = Mat3::Zero();
    Vec3 t = Vec3::Zero();
    int count = 0;
  };
  std::map<int, Sum> sums;
  for (const ResolvedPose& r : resolved) {
    Sum& s = sums[r.image_id];
    const auto it = markers.find(r.marker_id);
    if (it == markers.end()) continue;
    const RigidPose q = r.pose * it->second.inverse();
    s.r += q.rotation.matrix();
    s.t += q.translation;
    ++s.count;
  }
  std::map<int, RigidPose> cameras;
  for (const auto& [image, s] : sums) {
    if (s.count == 0) throw UnobservedImage("image " + std::to_string(image) + " observes no mapped marker");
    cameras[image] = RigidPose(nearest_rotation(s.r / s.count), s.t / s.count);
  }
  return cameras;
}

double total_reprojection_error(const MarkerMap& map, std::span<const BundleObservation> observations,
                                const CameraIntrinsics& k, double marker_size) {
  const CornerSet3D c3 = canonical_corners(marker_size);
  double total = 0.0;
  for (const BundleObservation& o : observations) {
    const auto m = map.markers.find(o.marker_id);
    const auto q = map.cameras.find(o.image_id);
    if (m == map.markers.end() || q == map.cameras.end()) continue;
    total += reprojection_error(k, c3, o.corners, q->second * m->second);
  }
  return total;
}

MarkerMap bundle_adjust(const MarkerMap& initial, std::span<const BundleObservation> observations,
                        const CameraIntrinsics& k, double marker_size, const BundleConfig& config,
                        SolverTrace* trace) {
  const CornerSet3D c3 = canonical_corners(marker_size);
  std::vector<const BundleObservation*> obs;
  for (const BundleObservation& o : observations) {
    if (initial.markers.count(o.marker_id) && initial.cameras.count(o.image_id)) obs.push_back(&o);
  }
  std::map<int, int> marker_index;
  for (const auto& [id, p] : initial.markers) {
    if (id != initial.reference_marker) marker_index[id] = static_cast<int>(marker_index.size());
  }
  std::map<int, int> camera_index;
  for (const auto& [id, q] : initial.cameras) camera_index[id] = static_cast<int>(camera_index.size());
  const Eigen::Index nm = static_cast<Eigen::Index>(6 * marker_index.size());
  const std::size_t nc = camera_index.size();

  auto cost = [&](const MarkerMap& m) {
    try {
      return total_reprojection_error(m, observations, k, marker_size);
    } catch (const NonPositiveDepth&) {
      return std::numeric_limits<double>::infinity();
    }
  };

  MarkerMap map = initial;
  SolverTrace local;
  double f = cost(map);
  local.objective.push_back(f);
  double lambda = config.initial_damping;

  // Per camera: its diagonal block, gradient and coupling to each free marker it sees.
  struct CameraBlock {
    Mat6 hcc = Mat6::Zero();
    Vec6 gc = Vec6::Zero();
    std::map<int, Mat6> hmc;  // marker index -> d(marker)^T d(camera)
  };

  for (int it = 0; it < config.max_iterations; ++it) {
    ++local.iterations;
    Eigen::MatrixXd hmm = Eigen::MatrixXd::Zero(nm, nm);
    Eigen::VectorXd gm = Eigen::VectorXd::Zero(nm);
    std::vector<CameraBlock> cams(nc);
    for (const BundleObservation* o : obs) {
      const RigidPose& p = map.markers.at(o->marker_id);
      const RigidPose& q = map.cameras.at(o->image_id);
      const auto mi = marker_index.find(o->marker_id);
      const bool free_marker = mi != marker_index.end();
      CameraBlock& cb = cams[static_cast<std::size_t>(camera_index.at(o->image_id))];
      Mat6 hmm_local = Mat6::Zero();
      Vec6 gm_local = Vec6::Zero();
      Mat6 hmc_local = Mat6::Zero();
      for (std::size_t c = 0; c < 4; ++c) {
        const Vec3 wc = p.rotation * c3[c];
        const Vec3 xw = wc + p.translation;
        const Vec3 qx = q.rotation * xw;
        const Vec3 xc = qx + q.translation;
        const double z = xc.z();
        const Vec2 res(k.fx * xc.x() / z + k.skew * xc.y() / z + k.cx - o->corners[c].x(),
                       k.fy * xc.y() / z + k.cy - o->corners[c].y());
        Eigen::Matrix<double, 2, 3> dp;
        dp << k.fx / z, k.skew / z, -(k.fx * xc.x() + k.skew * xc.y()) / (z * z), 0.0, k.fy / z,
            -k.fy * xc.y() / (z * z);
        Eigen::Matrix<double, 2, 6> jc;
        jc.leftCols<3>() = -dp * hat(qx);
        jc.rightCols<3>() = dp;
        cb.hcc += jc.transpose() * jc;
        cb.gc += jc.transpose() * res;
        if (free_marker) {
          Eigen::Matrix<double, 2, 6> jm;
          jm.leftCols<3>() = -dp * q.rotation.matrix() * hat(wc);
          jm.rightCols<3>() = dp * q.rotation.matrix();
          hmm_local += jm.transpose() * jm;
          gm_local += jm.transpose() * res;
          hmc_local += jm.transpose() * jc;
        }
      }
      if (free_marker) {
        const Eigen::Index a = 6 * mi->second;
        hmm.block<6, 6>(a, a) += hmm_local;
        gm.segment<6>(a) += gm_local;
        auto [slot, inserted] = cb.hmc.try_emplace(mi->second, Mat6::Zero());
        slot->second += hmc_local;
      }
    }
    double gmax = gm.size() ? gm.lpNorm<Eigen::Infinity>() : 0.0;
    for (const CameraBlock& cb : cams) gmax = std::max(gmax, cb.gc.lpNorm<Eigen::Infinity>());
    if (gmax < 1e-12) {
      local.converged = true;
      break;
    }

    bool accepted = false;
    while (lambda <= config.max_damping) {
      Eigen::MatrixXd s = hmm;
      s.diagonal() += lambda * hmm.diagonal();
      Eigen::VectorXd rhs = -gm;
      std::vector<Eigen::LDLT<Mat6>> inv(nc);
      for (std::size_t t = 0; t < nc; ++t) {
        Mat6 hcc = cams[t].hcc;
        hcc.diagonal() += lambda * cams[t].hcc.diagonal() + Vec6::Constant(1e-12);
        inv[t].compute(hcc);
        for (const auto& [a, hac] : cams[t].hmc) {
          const Mat6 hac_inv = inv[t].solve(hac.transpose()).transpose();  // H_ac H_cc^-1
          rhs.segment<6>(6 * a) += hac_inv * cams[t].gc;
          for (const auto& [b, hbc] : cams[t].hmc) s.block<6, 6>(6 * a, 6 * b) -= hac_inv * hbc.transpose();
        }
      }
      Eigen::VectorXd dm = Eigen::VectorXd::Zero(nm);
      if (nm > 0) dm = s.ldlt().solve(rhs);
      MarkerMap trial = map;
      for (const auto& [id, a] : marker_index) trial.markers[id] = retract_pose(map.markers[id], dm.segment<6>(6 * a));
      for (const auto& [id, t] : camera_index) {
        const CameraBlock& cb = cams[static_cast<std::size_t>(t)];
        Vec6 r = -cb.gc;
        for (const auto& [a, hac] : cb.hmc) r -= hac.transpose() * dm.segment<6>(6 * a);
        trial.cameras[id] = retract_pose(map.cameras[id], inv[static_cast<std::size_t>(t)].solve(r));
      }
      const double ft = dm.allFinite() ? cost(trial) : std::numeric_limits<double>::infinity();
      if (ft < f) {
        const double decrease = f - ft;
        map = std::move(trial);
        f = ft;
        lambda = std::max(lambda * config.damping_down, 1e-15);
        accepted = true;
        if (decrease <= config.tolerance * std::max(f, 1e-300)) local.converged = true;
        break;
      }
      lambda *= config.damping_up;
    }
    local.objective.push_back(f);
    if (!accepted || local.converged) {
      local.converged = true;
      break;
    }
  }
  if (!local.converged && local.iterations >= config.max_iterations) local.max_iterations_reached = true;
  if (trace) *trace = std::move(local);
  return map;
}

Reconstruction reconstruct(std::span<const ResolvedPose> resolved, std::span<const BundleObservation> observations,
                           const CameraIntrinsics& k, double marker_size,
                           const std::map<int, Rotation>& initial_rotations, const ReconstructionConfig& config) {
  if (resolved.empty()) throw InsufficientData("no detections retained for mapping");

  // Union-find over markers linked by images.
  std::map<int, int> parent;
  auto find = [&](int x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  };
  std::map<int, int> first_in_image;
  for (const ResolvedPose& r : resolved) {
    parent.try_emplace(r.marker_id, r.marker_id);
    auto [it, inserted] = first_in_image.try_emplace(r.image_id, r.marker_id);
    if (!inserted) {
      const int a = find(it->second);
      const int b = find(r.marker_id);
      if (a != b) parent[std::max(a, b)] = std::min(a, b);
    }
  }
  std::map<int, std::size_t> weight;
  for (const ResolvedPose& r : resolved) ++weight[find(r.marker_id)];
  int root = weight.begin()->first;
  for (const auto& [c, w] : weight) {
    if (w > weight[root]) root = c;
  }
  std::vector<ResolvedPose> kept;
  for (const ResolvedPose& r : resolved) {
    if (find(r.marker_id) == root) kept.push_back(r);
  }
  std::set<std::pair<int, int>> kept_keys;
  for (const ResolvedPose& r : kept) kept_keys.emplace(r.image_id, r.marker_id);
  std::vector<BundleObservation> kept_obs;
  for (const BundleObservation& o : observations) {
    if (kept_keys.count({o.image_id, o.marker_id})) kept_obs.push_back(o);
  }

  Reconstruction out;
  out.initial.markers = marker_pose_graph_init(kept, initial_rotations, config.pose_graph, &out.pose_graph_trace);
  out.initial.reference_marker = out.initial.markers.begin()->first;
  out.initial.cameras = camera_init_single_pose_averaging(kept, out.initial.markers);
  out.map = bundle_adjust(out.initial, kept_obs, k, marker_size, config.bundle, &out.bundle_trace);
  const double e = total_reprojection_error(out.map, kept_obs, k, marker_size);
  out.rms_px = kept_obs.empty() ? 0.0 : std::sqrt(e / (8.0 * static_cast<double>(kept_obs.size())));
  return out;
}

}  // namespace ambigraph
