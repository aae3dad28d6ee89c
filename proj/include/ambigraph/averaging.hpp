#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "ambigraph/geometry.hpp"
#include "ambigraph/multigraph.hpp"

namespace ambigraph {

/// Logistic function 1 / (1 + e^-s), evaluated without overflow.
double sigmoid(double s);

/// Indicator variables s_i^t, one per detection of a multigraph (same order
/// as AmbiguityMultigraph::detections()). Real-valued in the lifted problem;
/// 0/1 labels elsewhere.
struct IndicatorSet {
  std::vector<double> values;

  double at(const AmbiguityMultigraph& g, int image_id, int marker_id) const {
    return values[g.detection_index(image_id, marker_id)];
  }
  std::size_t size() const { return values.size(); }

  /// Hard labels mapped to +-magnitude (label 1 -> +magnitude).
  static IndicatorSet from_labels(std::span<const int> labels, double magnitude);
  /// Label 1 where s > 0, else 0.
  std::vector<int> rounded() const;
};

enum class RobustNorm { kGemanMcClure, kHuber, kL1 };

struct AveragingConfig {
  // Robust norm used only by the multigraph IRLS baseline.
  RobustNorm robust_norm = RobustNorm::kGemanMcClure;
  double robust_scale = 0.1;  // chordal units
  double anneal_factor = 0.5;
  int anneal_every = 10;
  double scale_floor = 0.01;

  int max_iterations = 500;
  double gradient_tolerance = 1e-8;
  // Label fits stop once an iteration lowers the objective by less than this fraction.
  double relative_tolerance = 1e-12;

  // Lifted solver step control.
  double smoothing_eps = 1e-9;    // residual surrogate sqrt(x^2 + eps^2) - eps
  double max_indicator_step = 1.0;  // per-iteration trust region on each s
  double initial_indicator_step = 1.0;  // gradient step length; adapted by backtracking
  double indicator_limit = 50.0;  // |s| box
  double armijo = 1e-4;
  int max_backtracks = 40;
};

struct AveragingResult {
  std::vector<Rotation> rotations;  // per vertex, Rij ~= Rj * Ri^T convention
  IndicatorSet indicators;          // lifted solver only
  std::vector<double> edge_weights; // IRLS only: 4 * pair + label
  double objective = 0.0;
  std::vector<double> trace;  // objective after each iteration, starting with the initial value
  int iterations = 0;
  bool converged = false;
  bool max_iterations_reached = false;
};

/// Residual surrogate used by the clique-constrained and lifted objectives.
inline double smoothed_norm(double squared, double eps) {
  return std::sqrt(squared + eps * eps) - eps;
}

/// Lifted objective: every parallel edge weighted by the sigmoid products of its endpoints' indicators.
double lifted_objective(const AmbiguityMultigraph& g, std::span<const Rotation> rotations, const IndicatorSet& s,
                        double eps = 1e-9);

/// Hard-selection objective: per pair only the edge labelled (label_i, label_j) contributes.
double clique_constrained_objective(const AmbiguityMultigraph& g, std::span<const Rotation> rotations,
                                    std::span<const int> labels, double eps = 1e-9);

struct LiftedGradient {
  std::vector<Vec3> rotations;   // d/dw for R_v <- Exp(w) R_v
  std::vector<double> indicators;
};

LiftedGradient lifted_gradient(const AmbiguityMultigraph& g, std::span<const Rotation> rotations,
                               const IndicatorSet& s, double eps = 1e-9);

/// Joint descent on the lifted objective: rotation blocks take reweighted Gauss-Newton
/// steps, indicator blocks take trust-limited scaled-gradient steps, each with
/// backtracking so the objective never increases. Vertex 0 is held fixed.
AveragingResult solve_lifted(const AmbiguityMultigraph& g, std::span<const Rotation> initial_rotations,
                             const IndicatorSet& initial_indicators, const AveragingConfig& config = {});

/// Robust averaging over all four parallel edges by IRLS.
/// Returns the final per-edge weights in [0, 1].
AveragingResult irls_multigraph_averaging(const AmbiguityMultigraph& g, std::span<const Rotation> initial_rotations,
                                          const AveragingConfig& config = {});
AveragingResult irls_multigraph_averaging(const AmbiguityMultigraph& g, const AveragingConfig& config = {});

struct LabelFit {
  std::vector<Rotation> rotations;
  double objective = 0.0;
};

/// Best rotations for a fixed hard selection: chordal L2 linear
/// initialisation followed by reweighted Gauss-Newton on the unsquared norms.
LabelFit fit_rotations_for_labels(const AmbiguityMultigraph& g, std::span<const int> labels,
                                  const AveragingConfig& config = {});

struct ExhaustiveResult {
  std::vector<Rotation> rotations;
  std::vector<int> labels;
  double objective = 0.0;
  std::size_t instantiations = 0;
};

constexpr std::size_t kExhaustiveMaxDetections = 14;

/// Enumerates every hard selection. Throws TooLarge beyond kExhaustiveMaxDetections detections.
ExhaustiveResult exhaustive_solve(const AmbiguityMultigraph& g, const AveragingConfig& config = {});

}  // namespace ambigraph
