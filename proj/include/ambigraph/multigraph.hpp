#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "ambigraph/geometry.hpp"
#include "ambigraph/ppe.hpp"

namespace ambigraph {

/// Edge <i,j>^(t,ab): a selects marker i's hypothesis, b selects marker j's.
struct EdgeKey {
  int image_id = 0;
  int i = 0;
  int j = 0;
  int label = 0;  // 2 * a + b

  int a() const { return label >> 1; }
  int b() const { return label & 1; }

  /// <i,j>^(t,ab) == <j,i>^(t,ba); the canonical form has i < j.
  EdgeKey canonical() const;
  std::string label_string() const;

  static int make_label(int a, int b) { return 2 * a + b; }
  bool operator==(const EdgeKey&) const = default;
};

/// Rj_b^T * Ri_a: rotation taking marker i's frame to marker j's frame.
Rotation m2m_relative(const Rotation& ri_a, const Rotation& rj_b);

/// The four parallel edges between markers i < j contributed by one image.
struct PairEdges {
  int image_id = 0;
  int i = 0;
  int j = 0;
  std::size_t det_i = 0;  // index into AmbiguityMultigraph::detections()
  std::size_t det_j = 0;
  std::size_t vertex_i = 0;  // index into AmbiguityMultigraph::vertices()
  std::size_t vertex_j = 0;
  std::array<Rotation, 4> rotations;  // indexed by label ab
};

/// Per-image view: detections [det_begin, det_end) and pairs [pair_begin, pair_end).
struct ImageBlock {
  int image_id = 0;
  std::size_t det_begin = 0;
  std::size_t det_end = 0;
  std::size_t pair_begin = 0;
  std::size_t pair_end = 0;

  std::size_t size() const { return det_end - det_begin; }
};

/// Relative-rotation multigraph over markers with four labelled edges per
/// covisible pair per image. Immutable once built.
///
/// Detections are stored sorted by (image_id, marker_id), so the graph is
/// independent of input order.
class AmbiguityMultigraph {
 public:
  /// Throws ValidationError on duplicate (image, marker) keys and
  /// DisconnectedGraph if the covisibility graph is not connected.
  static AmbiguityMultigraph build(std::vector<AmbiguousDetection> detections);

  const std::vector<int>& vertices() const { return vertices_; }
  std::span<const AmbiguousDetection> detections() const { return detections_; }
  std::span<const PairEdges> pairs() const { return pairs_; }
  std::span<const ImageBlock> images() const { return images_; }

  const ImageBlock& image(int image_id) const;
  /// Marker ids detected in the image (A^t), ascending.
  std::vector<int> covisible(int image_id) const;
  std::size_t vertex_index(int marker_id) const;
  std::size_t detection_index(int image_id, int marker_id) const;

  /// Total number of labelled edges, 4 per pair.
  std::size_t edge_count() const { return 4 * pairs_.size(); }

  /// Rotation of any edge key; reversed keys (i > j) return the transposed
  /// rotation of the canonical edge, i.e. m2m_relative(Rj_a, Ri_b).
  Rotation edge_rotation(const EdgeKey& key) const;
  bool has_edge(const EdgeKey& key) const;

  /// Pair index for canonical (image, i<j) or npos.
  std::size_t pair_index(int image_id, int i, int j) const;

  static constexpr std::size_t npos = static_cast<std::size_t>(-1);

 private:
  std::vector<int> vertices_;
  std::vector<AmbiguousDetection> detections_;
  std::vector<PairEdges> pairs_;
  std::vector<ImageBlock> images_;
};

/// Connected components of markers linked by covisibility, each sorted,
/// ordered by smallest member.
std::vector<std::vector<int>> covisibility_components(std::span<const AmbiguousDetection> detections);

/// Consistent-clique check: vertex set equals A^t, one edge per pair, and the edge labels
/// are induced by a single hypothesis bit per marker.
bool is_consistent_clique(const AmbiguityMultigraph& g, int image_id, std::span<const EdgeKey> edges);

struct SpanningTreeInit {
  std::vector<Rotation> rotations;  // per vertex; root (first vertex) = identity
  std::vector<double> indicators;   // per detection, +-sigma0
  std::vector<int> labels;          // per detection
  std::vector<EdgeKey> tree_edges;  // canonical keys of the chosen tree
};

/// Minimum spanning tree over the graph with parallel edges collapsed to
/// the label of least combined reprojection error; rotations chained from
/// the first vertex. Absolute rotations follow the averaging convention
/// Rij ~= Rj * Ri^T.
SpanningTreeInit spanning_tree_init(const AmbiguityMultigraph& g, double sigma0 = 1.0);

}  // namespace ambigraph
