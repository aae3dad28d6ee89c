#include "ambigraph/averaging.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <Eigen/Dense>

#include "ambigraph/errors.hpp"

namespace ambigraph {
namespace {

using Vec9 = Eigen::Matrix<double, 9, 1>;
using Mat96 = Eigen::Matrix<double, 9, 6>;

// r = measured - Rj Ri^T, with J = dr/d[w_i, w_j] under left perturbations.
struct Linearization {
  Vec9 r;
  Mat96 j;
};

Linearization linearize(const Mat3& measured, const Rotation& ri, const Rotation& rj) {
  const Mat3 m = rj.matrix() * ri.matrix().transpose();
  Linearization lin;
  const Mat3 r = measured - m;
  lin.r = Eigen::Map<const Vec9>(r.data());
  for (int k = 0; k < 3; ++k) {
    const Mat3 e = hat(Vec3::Unit(k));
    const Mat3 di = m * e;
    const Mat3 dj = -e * m;
    lin.j.col(k) = Eigen::Map<const Vec9>(di.data());
    lin.j.col(3 + k) = Eigen::Map<const Vec9>(dj.data());
  }
  return lin;
}

double residual_squared(const Mat3& measured, const Mat3& predicted) {
  return (measured - predicted).squaredNorm();
}

// Weighted Gauss-Newton system over vertices 1..n-1 (vertex 0 is the gauge).
class NormalEquations {
 public:
  explicit NormalEquations(std::size_t n)
      : n_(n), h_(Eigen::MatrixXd::Zero(3 * n, 3 * n)), g_(Eigen::VectorXd::Zero(3 * n)) {}

  void add(std::size_t vi, std::size_t vj, const Linearization& lin, double q) {
    const Eigen::Matrix<double, 6, 6> jtj = lin.j.transpose() * lin.j;
    const Eigen::Matrix<double, 6, 1> jtr = lin.j.transpose() * lin.r;
    const std::array<std::size_t, 2> v{vi, vj};
    for (int a = 0; a < 2; ++a) {
      g_.segment<3>(3 * v[a]) += q * jtr.segment<3>(3 * a);
      for (int b = 0; b < 2; ++b) {
        h_.block<3, 3>(3 * v[a], 3 * v[b]) += q * jtj.block<3, 3>(3 * a, 3 * b);
      }
    }
  }

  const Eigen::VectorXd& gradient() const { return g_; }

  // Step for vertices 1..n-1; vertex 0 gets zero.
  Eigen::VectorXd solve() const {
    Eigen::VectorXd step = Eigen::VectorXd::Zero(3 * n_);
    if (n_ < 2) return step;
    const Eigen::Index m = static_cast<Eigen::Index>(3 * (n_ - 1));
    Eigen::MatrixXd h = h_.bottomRightCorner(m, m);
    const double scale = std::max(h.diagonal().cwiseAbs().maxCoeff(), 1e-300);
    h.diagonal().array() += 1e-12 * scale;
    step.tail(m) = -h.ldlt().solve(g_.tail(m));
    if (!step.allFinite()) step.setZero();
    return step;
  }

 private:
  std::size_t n_;
  Eigen::MatrixXd h_;
  Eigen::VectorXd g_;
};

std::vector<Rotation> retract(std::span<const Rotation> rotations, const Eigen::VectorXd& step, double alpha) {
  std::vector<Rotation> out(rotations.begin(), rotations.end());
  for (std::size_t v = 1; v < out.size(); ++v) {
    out[v] = Rotation::exp(alpha * step.segment<3>(static_cast<Eigen::Index>(3 * v))) * out[v];
  }
  return out;
}

double free_gradient_norm(const Eigen::VectorXd& g) {
  if (g.size() <= 3) return 0.0;
  return g.tail(g.size() - 3).lpNorm<Eigen::Infinity>();
}

// Per-pair sigmoid weights (label order 00, 01, 10, 11).
std::array<double, 4> pair_weights(double si, double sj) {
  const double pi = sigmoid(si);
  const double qi = sigmoid(-si);
  const double pj = sigmoid(sj);
  const double qj = sigmoid(-sj);
  return {qi * qj, qi * pj, pi * qj, pi * pj};
}

// dF/dPhi(s) for every detection.
std::vector<double> indicator_partials(const AmbiguityMultigraph& g, std::span<const Rotation> rotations,
                                       std::span<const double> s, double eps) {
  std::vector<double> out(s.size(), 0.0);
  for (const PairEdges& pe : g.pairs()) {
    const Mat3 m = rotations[pe.vertex_j].matrix() * rotations[pe.vertex_i].matrix().transpose();
    std::array<double, 4> rho;
    for (int l = 0; l < 4; ++l) rho[l] = smoothed_norm(residual_squared(pe.rotations[l].matrix(), m), eps);
    const double pi = sigmoid(s[pe.det_i]);
    const double pj = sigmoid(s[pe.det_j]);
    // F_pair = (1-pi)(1-pj) r00 + (1-pi) pj r01 + pi (1-pj) r10 + pi pj r11
    out[pe.det_i] += pj * (rho[3] - rho[1]) + (1.0 - pj) * (rho[2] - rho[0]);
    out[pe.det_j] += pi * (rho[3] - rho[2]) + (1.0 - pi) * (rho[1] - rho[0]);
  }
  return out;
}

// Robust kernels as functions of the squared residual u; weight() is f'(u) / f'(0).
struct Kernel {
  RobustNorm norm;
  double c;

  double value(double u) const {
    const double c2 = c * c;
    switch (norm) {
      case RobustNorm::kGemanMcClure:
        return c2 * u / (u + c2);
      case RobustNorm::kHuber: {
        const double x = std::sqrt(u);
        return x <= c ? 0.5 * u : c * (x - 0.5 * c);
      }
      case RobustNorm::kL1:
        return c * (std::sqrt(u + c2) - c);
    }
    return u;
  }

  double weight(double u) const {
    const double c2 = c * c;
    switch (norm) {
      case RobustNorm::kGemanMcClure: {
        const double w = c2 / (u + c2);
        return w * w;
      }
      case RobustNorm::kHuber: {
        const double x = std::sqrt(u);
        return x <= c ? 1.0 : c / x;
      }
      case RobustNorm::kL1:
        return c / std::sqrt(u + c2);
    }
    return 1.0;
  }

  // f'(0): converts weight() back to the derivative.
  double slope_at_zero() const { return norm == RobustNorm::kGemanMcClure ? 1.0 : 0.5; }
  // Shrinking c lowers the objective everywhere only for these kernels.
  bool annealable() const { return norm != RobustNorm::kL1; }
};

double multigraph_objective(const AmbiguityMultigraph& g, std::span<const Rotation> rotations, const Kernel& kernel) {
  double f = 0.0;
  for (const PairEdges& pe : g.pairs()) {
    const Mat3 m = rotations[pe.vertex_j].matrix() * rotations[pe.vertex_i].matrix().transpose();
    for (int l = 0; l < 4; ++l) f += kernel.value(residual_squared(pe.rotations[l].matrix(), m));
  }
  return f;
}

// Chordal L2 relaxation: minimise sum ||Rij Xi - Xj||^2 over unconstrained 3x3
// blocks with X0 = I, then project each block onto SO(3).
std::vector<Rotation> chordal_linear_init(std::size_t n, std::span<const std::pair<std::size_t, std::size_t>> ends,
                                          std::span<const Mat3> measured) {
  std::vector<Rotation> out(n, Rotation::identity());
  if (n < 2) return out;
  const Eigen::Index m = static_cast<Eigen::Index>(3 * (n - 1));
  Eigen::MatrixXd h = Eigen::MatrixXd::Zero(m, m);
  Eigen::MatrixXd b = Eigen::MatrixXd::Zero(m, 3);
  auto block = [](std::size_t v) { return static_cast<Eigen::Index>(3 * (v - 1)); };
  for (std::size_t e = 0; e < ends.size(); ++e) {
    const auto [i, j] = ends[e];
    const Mat3& a = measured[e];
    // d/dXi = Xi - A^T Xj ; d/dXj = Xj - A Xi
    if (i > 0) h.block<3, 3>(block(i), block(i)) += Mat3::Identity();
    if (j > 0) h.block<3, 3>(block(j), block(j)) += Mat3::Identity();
    if (i > 0 && j > 0) {
      h.block<3, 3>(block(i), block(j)) -= a.transpose();
      h.block<3, 3>(block(j), block(i)) -= a;
    } else if (i == 0 && j > 0) {
      b.block<3, 3>(block(j), 0) += a;
    } else if (j == 0 && i > 0) {
      b.block<3, 3>(block(i), 0) += a.transpose();
    }
  }
  const Eigen::MatrixXd x = h.ldlt().solve(b);
  for (std::size_t v = 1; v < n; ++v) {
    try {
      out[v] = nearest_rotation(x.block<3, 3>(block(v), 0));
    } catch (const DegenerateMatrix&) {
      out[v] = Rotation::identity();
    }
  }
  return out;
}

}  // namespace

double sigmoid(double s) {
  if (s >= 0.0) {
    return 1.0 / (1.0 + std::exp(-s));
  }
  const double e = std::exp(s);
  return e / (1.0 + e);
}

IndicatorSet IndicatorSet::from_labels(std::span<const int> labels, double magnitude) {
  IndicatorSet s;
  s.values.reserve(labels.size());
  for (int l : labels) s.values.push_back(l == 1 ? magnitude : -magnitude);
  return s;
}

std::vector<int> IndicatorSet::rounded() const {
  std::vector<int> out;
  out.reserve(values.size());
  for (double v : values) out.push_back(v > 0.0 ? 1 : 0);
  return out;
}

double lifted_objective(const AmbiguityMultigraph& g, std::span<const Rotation> rotations, const IndicatorSet& s,
                        double eps) {
  double f = 0.0;
  for (const PairEdges& pe : g.pairs()) {
    const Mat3 m = rotations[pe.vertex_j].matrix() * rotations[pe.vertex_i].matrix().transpose();
    const auto w = pair_weights(s.values[pe.det_i], s.values[pe.det_j]);
    for (int l = 0; l < 4; ++l) {
      f += w[l] * smoothed_norm(residual_squared(pe.rotations[l].matrix(), m), eps);
    }
  }
  return f;
}

double clique_constrained_objective(const AmbiguityMultigraph& g, std::span<const Rotation> rotations,
                                    std::span<const int> labels, double eps) {
  double f = 0.0;
  for (const PairEdges& pe : g.pairs()) {
    const int label = EdgeKey::make_label(labels[pe.det_i], labels[pe.det_j]);
    const Mat3 m = rotations[pe.vertex_j].matrix() * rotations[pe.vertex_i].matrix().transpose();
    f += smoothed_norm(residual_squared(pe.rotations[label].matrix(), m), eps);
  }
  return f;
}

LiftedGradient lifted_gradient(const AmbiguityMultigraph& g, std::span<const Rotation> rotations,
                               const IndicatorSet& s, double eps) {
  LiftedGradient out;
  out.rotations.assign(rotations.size(), Vec3::Zero());
  for (const PairEdges& pe : g.pairs()) {
    const auto w = pair_weights(s.values[pe.det_i], s.values[pe.det_j]);
    for (int l = 0; l < 4; ++l) {
      const Linearization lin = linearize(pe.rotations[l].matrix(), rotations[pe.vertex_i], rotations[pe.vertex_j]);
      const double q = w[l] / std::sqrt(lin.r.squaredNorm() + eps * eps);
      const Eigen::Matrix<double, 6, 1> jtr = lin.j.transpose() * lin.r;
      out.rotations[pe.vertex_i] += q * jtr.head<3>();
      out.rotations[pe.vertex_j] += q * jtr.tail<3>();
    }
  }
  const auto partials = indicator_partials(g, rotations, s.values, eps);
  out.indicators.resize(partials.size());
  for (std::size_t d = 0; d < partials.size(); ++d) {
    const double sd = s.values[d];
    out.indicators[d] = sigmoid(sd) * sigmoid(-sd) * partials[d];
  }
  return out;
}

AveragingResult solve_lifted(const AmbiguityMultigraph& g, std::span<const Rotation> initial_rotations,
                             const IndicatorSet& initial_indicators, const AveragingConfig& config) {
  const std::size_t n = g.vertices().size();
  const double eps = config.smoothing_eps;
  const double limit = config.indicator_limit;

  std::vector<Rotation> rotations(initial_rotations.begin(), initial_rotations.end());
  IndicatorSet s = initial_indicators;
  for (double& v : s.values) v = std::clamp(v, -limit, limit);

  AveragingResult result;
  double f = lifted_objective(g, rotations, s, eps);
  result.trace.push_back(f);
  double indicator_alpha = config.initial_indicator_step;

  for (int iter = 0; iter < config.max_iterations; ++iter) {
    const LiftedGradient grad = lifted_gradient(g, rotations, s, eps);
    double gmax = 0.0;
    for (std::size_t v = 1; v < n; ++v) gmax = std::max(gmax, grad.rotations[v].lpNorm<Eigen::Infinity>());
    for (double gi : grad.indicators) gmax = std::max(gmax, std::abs(gi));
    if (gmax < config.gradient_tolerance) {
      result.converged = true;
      break;
    }
    ++result.iterations;
    bool progressed = false;

    // Rotation block: reweighted Gauss-Newton with backtracking.
    if (n > 1) {
      NormalEquations ne(n);
      for (const PairEdges& pe : g.pairs()) {
        const auto w = pair_weights(s.values[pe.det_i], s.values[pe.det_j]);
        for (int l = 0; l < 4; ++l) {
          const Linearization lin =
              linearize(pe.rotations[l].matrix(), rotations[pe.vertex_i], rotations[pe.vertex_j]);
          ne.add(pe.vertex_i, pe.vertex_j, lin, w[l] / std::sqrt(lin.r.squaredNorm() + eps * eps));
        }
      }
      const Eigen::VectorXd step = ne.solve();
      const double slope = ne.gradient().dot(step);
      if (slope < 0.0) {
        double alpha = 1.0;
        for (int bt = 0; bt < config.max_backtracks; ++bt, alpha *= 0.5) {
          auto trial = retract(rotations, step, alpha);
          const double ft = lifted_objective(g, trial, s, eps);
          if (ft <= f + config.armijo * alpha * slope) {
            if (ft < f) {
              rotations = std::move(trial);
              f = ft;
              progressed = true;
            }
            break;
          }
        }
      }
    }

    // Indicator block: gradient step in s with an adaptive length, capped at
    // max_indicator_step per coordinate.
    {
      const auto partials = indicator_partials(g, rotations, s.values, eps);
      std::vector<double> direction(partials.size(), 0.0);
      double dmax = 0.0;
      for (std::size_t d = 0; d < partials.size(); ++d) {
        const double sd = s.values[d];
        direction[d] = -sigmoid(sd) * sigmoid(-sd) * partials[d];
        dmax = std::max(dmax, std::abs(direction[d]));
      }
      if (dmax > 0.0) {
        constexpr double grow = 2.0;
        double alpha = std::min(grow * indicator_alpha, config.max_indicator_step / dmax);
        for (int bt = 0; bt < config.max_backtracks; ++bt, alpha *= 0.5) {
          IndicatorSet trial = s;
          double slope = 0.0;
          for (std::size_t d = 0; d < direction.size(); ++d) {
            trial.values[d] = std::clamp(s.values[d] + alpha * direction[d], -limit, limit);
            slope -= direction[d] * (trial.values[d] - s.values[d]);
          }
          if (slope >= 0.0) break;
          const double ft = lifted_objective(g, rotations, trial, eps);
          if (ft <= f + config.armijo * slope) {
            if (ft < f) {
              s = std::move(trial);
              f = ft;
              progressed = true;
              indicator_alpha = alpha;
            }
            break;
          }
        }
      }
    }

    result.trace.push_back(f);
    if (!progressed) break;  // stalled at numerical precision
  }
  if (!result.converged && result.iterations >= config.max_iterations) {
    result.max_iterations_reached = true;
  }
  result.rotations = std::move(rotations);
  result.indicators = std::move(s);
  result.objective = f;
  return result;
}

AveragingResult irls_multigraph_averaging(const AmbiguityMultigraph& g, std::span<const Rotation> initial_rotations,
                                          const AveragingConfig& config) {
  const std::size_t n = g.vertices().size();
  std::vector<Rotation> rotations(initial_rotations.begin(), initial_rotations.end());
  Kernel kernel{config.robust_norm, config.robust_scale};

  AveragingResult result;
  double f = multigraph_objective(g, rotations, kernel);
  result.trace.push_back(f);

  for (int sweep = 0; sweep < config.max_iterations; ++sweep) {
    if (kernel.annealable() && sweep > 0 && config.anneal_every > 0 && sweep % config.anneal_every == 0 &&
        kernel.c > config.scale_floor) {
      kernel.c = std::max(kernel.c * config.anneal_factor, config.scale_floor);
      f = multigraph_objective(g, rotations, kernel);
    }
    const bool final_scale = !kernel.annealable() || kernel.c <= config.scale_floor;
    ++result.iterations;

    NormalEquations ne(n);
    for (const PairEdges& pe : g.pairs()) {
      for (int l = 0; l < 4; ++l) {
        const Linearization lin = linearize(pe.rotations[l].matrix(), rotations[pe.vertex_i], rotations[pe.vertex_j]);
        const double q = 2.0 * kernel.slope_at_zero() * kernel.weight(lin.r.squaredNorm());
        ne.add(pe.vertex_i, pe.vertex_j, lin, q);
      }
    }
    const double gnorm = free_gradient_norm(ne.gradient());
    if (final_scale && gnorm < config.gradient_tolerance) {
      result.trace.push_back(f);
      result.converged = true;
      break;
    }
    const Eigen::VectorXd step = ne.solve();
    const double slope = ne.gradient().dot(step);
    bool improved = false;
    double decrease = 0.0;
    if (slope < 0.0) {
      double alpha = 1.0;
      for (int bt = 0; bt < config.max_backtracks; ++bt, alpha *= 0.5) {
        auto trial = retract(rotations, step, alpha);
        const double ft = multigraph_objective(g, trial, kernel);
        if (ft <= f + config.armijo * alpha * slope) {
          if (ft < f) {
            decrease = f - ft;
            rotations = std::move(trial);
            f = ft;
            improved = true;
          }
          break;
        }
      }
    }
    result.trace.push_back(f);
    if (final_scale && (!improved || decrease <= 1e-14 * std::max(f, 1e-300))) {
      result.converged = true;
      break;
    }
  }
  if (!result.converged) result.max_iterations_reached = true;

  result.edge_weights.assign(g.edge_count(), 0.0);
  const auto pairs = g.pairs();
  for (std::size_t p = 0; p < pairs.size(); ++p) {
    const Mat3 m = rotations[pairs[p].vertex_j].matrix() * rotations[pairs[p].vertex_i].matrix().transpose();
    for (int l = 0; l < 4; ++l) {
      result.edge_weights[4 * p + l] = kernel.weight(residual_squared(pairs[p].rotations[l].matrix(), m));
    }
  }
  result.rotations = std::move(rotations);
  result.objective = f;
  return result;
}

AveragingResult irls_multigraph_averaging(const AmbiguityMultigraph& g, const AveragingConfig& config) {
  const SpanningTreeInit init = spanning_tree_init(g);
  return irls_multigraph_averaging(g, init.rotations, config);
}

LabelFit fit_rotations_for_labels(const AmbiguityMultigraph& g, std::span<const int> labels,
                                  const AveragingConfig& config) {
  const std::size_t n = g.vertices().size();
  const double eps = config.smoothing_eps;
  const auto pairs = g.pairs();

  std::vector<std::pair<std::size_t, std::size_t>> ends;
  std::vector<Mat3> measured;
  ends.reserve(pairs.size());
  measured.reserve(pairs.size());
  for (const PairEdges& pe : pairs) {
    ends.emplace_back(pe.vertex_i, pe.vertex_j);
    measured.push_back(pe.rotations[EdgeKey::make_label(labels[pe.det_i], labels[pe.det_j])].matrix());
  }

  LabelFit fit;
  fit.rotations = chordal_linear_init(n, ends, measured);
  auto objective = [&](std::span<const Rotation> r) {
    double f = 0.0;
    for (std::size_t e = 0; e < ends.size(); ++e) {
      const Mat3 m = r[ends[e].second].matrix() * r[ends[e].first].matrix().transpose();
      f += smoothed_norm(residual_squared(measured[e], m), eps);
    }
    return f;
  };
  double f = objective(fit.rotations);
  for (int iter = 0; iter < config.max_iterations && n > 1; ++iter) {
    NormalEquations ne(n);
    for (std::size_t e = 0; e < ends.size(); ++e) {
      const Linearization lin = linearize(measured[e], fit.rotations[ends[e].first], fit.rotations[ends[e].second]);
      ne.add(ends[e].first, ends[e].second, lin, 1.0 / std::sqrt(lin.r.squaredNorm() + eps * eps));
    }
    if (free_gradient_norm(ne.gradient()) < config.gradient_tolerance) break;
    const Eigen::VectorXd step = ne.solve();
    const double slope = ne.gradient().dot(step);
    if (!(slope < 0.0)) break;
    bool improved = false;
    double alpha = 1.0;
    for (int bt = 0; bt < config.max_backtracks; ++bt, alpha *= 0.5) {
      auto trial = retract(fit.rotations, step, alpha);
      const double ft = objective(trial);
      if (ft <= f + config.armijo * alpha * slope) {
        if (ft < f) {
          improved = f - ft > config.relative_tolerance * std::max(f, 1e-300);
          fit.rotations = std::move(trial);
          f = ft;
        }
        break;
      }
    }
    if (!improved) break;
  }
  fit.objective = f;
  return fit;
}

ExhaustiveResult exhaustive_solve(const AmbiguityMultigraph& g, const AveragingConfig& config) {
  const std::size_t d = g.detections().size();
  if (d > kExhaustiveMaxDetections) {
    throw TooLarge("exhaustive enumeration limited to " + std::to_string(kExhaustiveMaxDetections) +
                   " detections, got " + std::to_string(d));
  }
  ExhaustiveResult best;
  best.objective = std::numeric_limits<double>::infinity();
  std::vector<int> labels(d, 0);
  const std::size_t count = std::size_t{1} << d;
  for (std::size_t mask = 0; mask < count; ++mask) {
    for (std::size_t k = 0; k < d; ++k) labels[k] = static_cast<int>((mask >> k) & 1U);
    LabelFit fit = fit_rotations_for_labels(g, labels, config);
    if (fit.objective < best.objective) {
      best.objective = fit.objective;
      best.labels = labels;
      best.rotations = std::move(fit.rotations);
    }
  }
  best.instantiations = count;
  return best;
}

}  // namespace ambigraph
