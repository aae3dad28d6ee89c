#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <vector>

#include "ambigraph/averaging.hpp"
#include "ambigraph/multigraph.hpp"

namespace ambigraph {

/// min(p, 1-p) / max(p, 1-p) with p = sigmoid(s); 1 at s = 0.
double weight_ratio(double s);

/// Weights of the four labelled edges between local vertices u < v.
struct PairWeights {
  std::size_t u = 0;
  std::size_t v = 0;
  std::array<double, 4> w{0.25, 0.25, 0.25, 0.25};  // indexed by label ab
};

/// Edge weights of one image's sub-multigraph.
struct EdgeWeightTable {
  int image_id = 0;
  std::vector<int> markers;          // A^t, ascending
  std::vector<double> marginals;     // weight of hypothesis 1 per marker; decides single-marker images
  std::vector<PairWeights> pairs;

  std::size_t size() const { return markers.size(); }
  /// Total weight of the clique induced by `bits`.
  double clique_weight(std::span<const int> bits) const;
};

/// Sigmoid-product table for image `image_id` from lifted indicators.
EdgeWeightTable edge_weights(const AmbiguityMultigraph& g, const IndicatorSet& s, int image_id);

/// Table built from IRLS edge weights (4 * pair + label), renormalised per pair.
/// Pairs whose weights are all zero fall back to 0.25 each.
EdgeWeightTable irls_edge_weights(const AmbiguityMultigraph& g, std::span<const double> weights, int image_id);

struct ImageSelection {
  int image_id = 0;
  std::vector<int> markers;
  std::vector<int> bits;         // chosen hypothesis per marker
  std::vector<EdgeKey> edges;    // induced consistent clique
  double weight = 0.0;
};

constexpr std::size_t kMaxCliqueVertices = 20;

/// Exact maximum-weight consistent clique by enumerating every bit assignment.
/// Ties keep the assignment with the smallest bitmask. Single-marker images
/// pick hypothesis 1 only when its weight exceeds 0.5. Throws TooLarge above
/// kMaxCliqueVertices markers.
ImageSelection solve_mwc(const EdgeWeightTable& table);

struct ResolvedPose {
  int image_id = 0;
  int marker_id = 0;
  int label = 0;
  RigidPose pose;  // marker to camera
};

struct Disambiguation {
  AmbiguityMultigraph graph;
  SpanningTreeInit init;
  AveragingResult lifted;
  std::vector<ImageSelection> images;
  std::vector<int> labels;  // per detection, graph order
  std::vector<ResolvedPose> poses;
};

/// Resolved poses in graph detection order for the given per-detection labels.
std::vector<ResolvedPose> resolve_poses(const AmbiguityMultigraph& g, std::span<const int> labels);

/// Labels per detection from per-image selections.
std::vector<int> labels_from_selections(const AmbiguityMultigraph& g, std::span<const ImageSelection> images);

/// Multigraph, lifted averaging from the spanning-tree start, per-image MWC.
/// Every detection gets a pose. Propagates DisconnectedGraph.
Disambiguation disambiguate(std::vector<AmbiguousDetection> detections, const AveragingConfig& config = {});

}  // namespace ambigraph
