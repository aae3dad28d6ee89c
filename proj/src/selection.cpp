#include "ambigraph/selection.hpp"

#include <algorithm>
#include <string>

#include "ambigraph/errors.hpp"

namespace ambigraph {

double weight_ratio(double s) {
  const double p = sigmoid(s);
  const double q = sigmoid(-s);
  const double hi = std::max(p, q);
  return std::min(p, q) / hi;
}

double EdgeWeightTable::clique_weight(std::span<const int> bits) const {
  double total = 0.0;
  for (const PairWeights& pw : pairs) total += pw.w[EdgeKey::make_label(bits[pw.u], bits[pw.v])];
  return total;
}

namespace {

EdgeWeightTable table_skeleton(const AmbiguityMultigraph& g, int image_id) {
  const ImageBlock& block = g.image(image_id);
  EdgeWeightTable table;
  table.image_id = image_id;
  const auto dets = g.detections();
  for (std::size_t d = block.det_begin; d < block.det_end; ++d) table.markers.push_back(dets[d].marker_id);
  table.marginals.assign(table.markers.size(), 0.5);
  const auto pairs = g.pairs();
  for (std::size_t p = block.pair_begin; p < block.pair_end; ++p) {
    PairWeights pw;
    pw.u = pairs[p].det_i - block.det_begin;
    pw.v = pairs[p].det_j - block.det_begin;
    table.pairs.push_back(pw);
  }
  return table;
}

}  // namespace

EdgeWeightTable edge_weights(const AmbiguityMultigraph& g, const IndicatorSet& s, int image_id) {
  EdgeWeightTable table = table_skeleton(g, image_id);
  const ImageBlock& block = g.image(image_id);
  for (std::size_t k = 0; k < table.markers.size(); ++k) table.marginals[k] = sigmoid(s.values[block.det_begin + k]);
  for (PairWeights& pw : table.pairs) {
    const double pi = table.marginals[pw.u];
    const double pj = table.marginals[pw.v];
    const double qi = sigmoid(-s.values[block.det_begin + pw.u]);
    const double qj = sigmoid(-s.values[block.det_begin + pw.v]);
    pw.w = {qi * qj, qi * pj, pi * qj, pi * pj};
  }
  return table;
}

EdgeWeightTable irls_edge_weights(const AmbiguityMultigraph& g, std::span<const double> weights, int image_id) {
  EdgeWeightTable table = table_skeleton(g, image_id);
  const ImageBlock& block = g.image(image_id);
  for (std::size_t k = 0; k < table.pairs.size(); ++k) {
    const std::size_t p = block.pair_begin + k;
    double sum = 0.0;
    for (int l = 0; l < 4; ++l) sum += weights[4 * p + l];
    for (int l = 0; l < 4; ++l) table.pairs[k].w[l] = sum > 0.0 ? weights[4 * p + l] / sum : 0.25;
  }
  return table;
}

ImageSelection solve_mwc(const EdgeWeightTable& table) {
  const std::size_t v = table.size();
  if (v > kMaxCliqueVertices) {
    throw TooLarge("image " + std::to_string(table.image_id) + " has " + std::to_string(v) +
                   " markers; clique search is limited to " + std::to_string(kMaxCliqueVertices));
  }
  ImageSelection sel;
  sel.image_id = table.image_id;
  sel.markers = table.markers;
  sel.bits.assign(v, 0);
  if (v == 1) {
    sel.bits[0] = table.marginals[0] > 0.5 ? 1 : 0;
    return sel;
  }
  std::vector<int> bits(v, 0);
  double best = -1.0;
  std::size_t best_mask = 0;
  const std::size_t count = std::size_t{1} << v;
  for (std::size_t mask = 0; mask < count; ++mask) {
    for (std::size_t k = 0; k < v; ++k) bits[k] = static_cast<int>((mask >> k) & 1U);
    const double w = table.clique_weight(bits);
    if (w > best) {
      best = w;
      best_mask = mask;
    }
  }
  for (std::size_t k = 0; k < v; ++k) sel.bits[k] = static_cast<int>((best_mask >> k) & 1U);
  sel.weight = best;
  for (const PairWeights& pw : table.pairs) {
    sel.edges.push_back({table.image_id, table.markers[pw.u], table.markers[pw.v],
                         EdgeKey::make_label(sel.bits[pw.u], sel.bits[pw.v])});
  }
  return sel;
}

std::vector<ResolvedPose> resolve_poses(const AmbiguityMultigraph& g, std::span<const int> labels) {
  std::vector<ResolvedPose> out;
  const auto dets = g.detections();
  out.reserve(dets.size());
  for (std::size_t d = 0; d < dets.size(); ++d) {
    out.push_back({dets[d].image_id, dets[d].marker_id, labels[d], dets[d].pose(labels[d])});
  }
  return out;
}

std::vector<int> labels_from_selections(const AmbiguityMultigraph& g, std::span<const ImageSelection> images) {
  std::vector<int> labels(g.detections().size(), 0);
  for (const ImageSelection& sel : images) {
    const ImageBlock& block = g.image(sel.image_id);
    for (std::size_t k = 0; k < sel.bits.size(); ++k) labels[block.det_begin + k] = sel.bits[k];
  }
  return labels;
}

Disambiguation disambiguate(std::vector<AmbiguousDetection> detections, const AveragingConfig& config) {
  Disambiguation out{AmbiguityMultigraph::build(std::move(detections)), {}, {}, {}, {}, {}};
  const AmbiguityMultigraph& g = out.graph;
  out.init = spanning_tree_init(g);
  out.lifted = solve_lifted(g, out.init.rotations, IndicatorSet{out.init.indicators}, config);
  for (const ImageBlock& block : g.images()) {
    out.images.push_back(solve_mwc(edge_weights(g, out.lifted.indicators, block.image_id)));
  }
  out.labels = labels_from_selections(g, out.images);
  out.poses = resolve_poses(g, out.labels);
  return out;
}

}  // namespace ambigraph
