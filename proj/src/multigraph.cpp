#include "ambigraph/multigraph.hpp"

#include <algorithm>
#include <limits>
#include <map>
#include <numeric>
#include <queue>
#include <sstream>
#include <tuple>

#include "ambigraph/errors.hpp"

namespace ambigraph {
namespace {

class DisjointSets {
 public:
  explicit DisjointSets(std::size_t n) : parent_(n) { std::iota(parent_.begin(), parent_.end(), 0); }

  std::size_t find(std::size_t x) {
    while (parent_[x] != x) {
      parent_[x] = parent_[parent_[x]];
      x = parent_[x];
    }
    return x;
  }

  bool unite(std::size_t a, std::size_t b) {
    a = find(a);
    b = find(b);
    if (a == b) return false;
    if (b < a) std::swap(a, b);
    parent_[b] = a;
    return true;
  }

 private:
  std::vector<std::size_t> parent_;
};

std::string describe_components(const std::vector<std::vector<int>>& comps) {
  std::ostringstream os;
  os << "multigraph is disconnected into " << comps.size() << " components:";
  for (const auto& c : comps) {
    os << " {";
    for (std::size_t k = 0; k < c.size(); ++k) os << (k ? "," : "") << c[k];
    os << "}";
  }
  return os.str();
}

}  // namespace

EdgeKey EdgeKey::canonical() const {
  if (i < j) return *this;
  return {image_id, j, i, make_label(b(), a())};
}

std::string EdgeKey::label_string() const {
  return std::string{static_cast<char>('0' + a()), static_cast<char>('0' + b())};
}

Rotation m2m_relative(const Rotation& ri_a, const Rotation& rj_b) {
  return Rotation(rj_b.matrix().transpose() * ri_a.matrix());
}

std::vector<std::vector<int>> covisibility_components(std::span<const AmbiguousDetection> detections) {
  std::vector<int> ids;
  for (const auto& d : detections) ids.push_back(d.marker_id);
  std::sort(ids.begin(), ids.end());
  ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
  auto index_of = [&](int id) {
    return static_cast<std::size_t>(std::lower_bound(ids.begin(), ids.end(), id) - ids.begin());
  };

  DisjointSets sets(ids.size());
  std::map<int, std::size_t> first_in_image;
  for (const auto& d : detections) {
    const auto [it, inserted] = first_in_image.emplace(d.image_id, index_of(d.marker_id));
    if (!inserted) sets.unite(it->second, index_of(d.marker_id));
  }
  std::map<std::size_t, std::vector<int>> by_root;
  for (std::size_t k = 0; k < ids.size(); ++k) by_root[sets.find(k)].push_back(ids[k]);
  std::vector<std::vector<int>> out;
  for (auto& [root, members] : by_root) out.push_back(std::move(members));
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.front() < b.front(); });
  return out;
}

AmbiguityMultigraph AmbiguityMultigraph::build(std::vector<AmbiguousDetection> detections) {
  if (detections.empty()) {
    throw ValidationError("cannot build a multigraph without detections");
  }
  std::sort(detections.begin(), detections.end(), [](const auto& a, const auto& b) {
    return std::tie(a.image_id, a.marker_id) < std::tie(b.image_id, b.marker_id);
  });
  for (std::size_t k = 1; k < detections.size(); ++k) {
    if (detections[k].image_id == detections[k - 1].image_id &&
        detections[k].marker_id == detections[k - 1].marker_id) {
      std::ostringstream os;
      os << "duplicate detection of marker " << detections[k].marker_id << " in image " << detections[k].image_id;
      throw ValidationError(os.str());
    }
  }

  const auto comps = covisibility_components(detections);
  if (comps.size() != 1) {
    throw DisconnectedGraph(describe_components(comps), comps);
  }

  AmbiguityMultigraph g;
  g.detections_ = std::move(detections);
  g.vertices_ = comps.front();

  std::size_t begin = 0;
  while (begin < g.detections_.size()) {
    std::size_t end = begin;
    const int t = g.detections_[begin].image_id;
    while (end < g.detections_.size() && g.detections_[end].image_id == t) ++end;

    ImageBlock block{t, begin, end, g.pairs_.size(), 0};
    for (std::size_t a = begin; a < end; ++a) {
      for (std::size_t b = a + 1; b < end; ++b) {
        const auto& di = g.detections_[a];
        const auto& dj = g.detections_[b];
        PairEdges pe;
        pe.image_id = t;
        pe.i = di.marker_id;
        pe.j = dj.marker_id;
        pe.det_i = a;
        pe.det_j = b;
        pe.vertex_i = g.vertex_index(pe.i);
        pe.vertex_j = g.vertex_index(pe.j);
        for (int ha = 0; ha < 2; ++ha) {
          for (int hb = 0; hb < 2; ++hb) {
            pe.rotations[EdgeKey::make_label(ha, hb)] = m2m_relative(di.rotation(ha), dj.rotation(hb));
          }
        }
        g.pairs_.push_back(pe);
      }
    }
    block.pair_end = g.pairs_.size();
    g.images_.push_back(block);
    begin = end;
  }
  return g;
}

const ImageBlock& AmbiguityMultigraph::image(int image_id) const {
  const auto it = std::lower_bound(images_.begin(), images_.end(), image_id,
                                   [](const ImageBlock& b, int t) { return b.image_id < t; });
  if (it == images_.end() || it->image_id != image_id) {
    throw ValidationError("unknown image id " + std::to_string(image_id));
  }
  return *it;
}

std::vector<int> AmbiguityMultigraph::covisible(int image_id) const {
  const ImageBlock& b = image(image_id);
  std::vector<int> out;
  for (std::size_t k = b.det_begin; k < b.det_end; ++k) out.push_back(detections_[k].marker_id);
  return out;
}

std::size_t AmbiguityMultigraph::vertex_index(int marker_id) const {
  const auto it = std::lower_bound(vertices_.begin(), vertices_.end(), marker_id);
  if (it == vertices_.end() || *it != marker_id) {
    throw ValidationError("unknown marker id " + std::to_string(marker_id));
  }
  return static_cast<std::size_t>(it - vertices_.begin());
}

std::size_t AmbiguityMultigraph::detection_index(int image_id, int marker_id) const {
  const ImageBlock& b = image(image_id);
  for (std::size_t k = b.det_begin; k < b.det_end; ++k) {
    if (detections_[k].marker_id == marker_id) return k;
  }
  throw ValidationError("marker " + std::to_string(marker_id) + " not detected in image " +
                        std::to_string(image_id));
}

std::size_t AmbiguityMultigraph::pair_index(int image_id, int i, int j) const {
  const auto it = std::lower_bound(images_.begin(), images_.end(), image_id,
                                   [](const ImageBlock& b, int t) { return b.image_id < t; });
  if (it == images_.end() || it->image_id != image_id) return npos;
  for (std::size_t p = it->pair_begin; p < it->pair_end; ++p) {
    if (pairs_[p].i == i && pairs_[p].j == j) return p;
  }
  return npos;
}

bool AmbiguityMultigraph::has_edge(const EdgeKey& key) const {
  if (key.label < 0 || key.label > 3 || key.i == key.j) return false;
  const EdgeKey c = key.canonical();
  return pair_index(c.image_id, c.i, c.j) != npos;
}

Rotation AmbiguityMultigraph::edge_rotation(const EdgeKey& key) const {
  if (!has_edge(key)) {
    throw ValidationError("edge not present in multigraph");
  }
  const EdgeKey c = key.canonical();
  const Rotation& r = pairs_[pair_index(c.image_id, c.i, c.j)].rotations[c.label];
  return key.i < key.j ? r : r.inverse();
}

bool is_consistent_clique(const AmbiguityMultigraph& g, int image_id, std::span<const EdgeKey> edges) {
  std::vector<int> markers;
  try {
    markers = g.covisible(image_id);
  } catch (const ValidationError&) {
    return false;
  }
  const std::size_t v = markers.size();
  auto local = [&](int id) -> std::size_t {
    const auto it = std::lower_bound(markers.begin(), markers.end(), id);
    return (it == markers.end() || *it != id) ? v : static_cast<std::size_t>(it - markers.begin());
  };

  std::vector<int> bits(v, -1);
  std::vector<char> seen(v * v, 0);
  std::size_t pairs_seen = 0;
  for (const EdgeKey& raw : edges) {
    if (raw.image_id != image_id || raw.label < 0 || raw.label > 3) return false;
    const EdgeKey e = raw.canonical();
    const std::size_t li = local(e.i);
    const std::size_t lj = local(e.j);
    if (li == v || lj == v || li == lj) return false;
    char& slot = seen[li * v + lj];
    if (slot) return false;  // more than one edge for this pair
    slot = 1;
    ++pairs_seen;
    for (const auto& [idx, bit] : {std::pair{li, e.a()}, std::pair{lj, e.b()}}) {
      if (bits[idx] == -1) {
        bits[idx] = bit;
      } else if (bits[idx] != bit) {
        return false;
      }
    }
  }
  if (pairs_seen != v * (v - 1) / 2) return false;
  // A single-marker image has no edges; the empty set is its only clique.
  return true;
}

SpanningTreeInit spanning_tree_init(const AmbiguityMultigraph& g, double sigma0) {
  const auto dets = g.detections();
  const auto pairs = g.pairs();

  struct Collapsed {
    double weight;
    std::size_t pair;
    int label;
  };
  std::vector<Collapsed> collapsed;
  collapsed.reserve(pairs.size());
  for (std::size_t p = 0; p < pairs.size(); ++p) {
    const auto& di = dets[pairs[p].det_i];
    const auto& dj = dets[pairs[p].det_j];
    Collapsed best{di.error(0) + dj.error(0), p, 0};
    for (int label = 1; label < 4; ++label) {
      const double w = di.error(label >> 1) + dj.error(label & 1);
      if (w < best.weight) best = {w, p, label};
    }
    collapsed.push_back(best);
  }

  // Per-detection label from its lightest incident collapsed edge; ties keep label 0.
  SpanningTreeInit out;
  out.labels.assign(dets.size(), 0);
  std::vector<double> best_weight(dets.size(), std::numeric_limits<double>::infinity());
  for (const auto& c : collapsed) {
    const auto& pe = pairs[c.pair];
    const std::array<std::pair<std::size_t, int>, 2> ends{{{pe.det_i, c.label >> 1}, {pe.det_j, c.label & 1}}};
    for (const auto& [d, bit] : ends) {
      if (c.weight < best_weight[d] || (c.weight == best_weight[d] && bit < out.labels[d])) {
        best_weight[d] = c.weight;
        out.labels[d] = bit;
      }
    }
  }
  out.indicators.resize(dets.size());
  for (std::size_t d = 0; d < dets.size(); ++d) {
    out.indicators[d] = out.labels[d] == 1 ? sigma0 : -sigma0;
  }

  std::vector<std::size_t> order(collapsed.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return collapsed[a].weight < collapsed[b].weight; });

  const std::size_t n = g.vertices().size();
  DisjointSets sets(n);
  std::vector<std::vector<std::pair<std::size_t, std::size_t>>> adjacency(n);  // (neighbour, collapsed idx)
  for (std::size_t idx : order) {
    const auto& pe = pairs[collapsed[idx].pair];
    if (sets.unite(pe.vertex_i, pe.vertex_j)) {
      adjacency[pe.vertex_i].emplace_back(pe.vertex_j, idx);
      adjacency[pe.vertex_j].emplace_back(pe.vertex_i, idx);
      out.tree_edges.push_back({pe.image_id, pe.i, pe.j, collapsed[idx].label});
    }
  }
  if (out.tree_edges.size() + 1 != n) {
    const auto comps = covisibility_components(dets);
    throw DisconnectedGraph(describe_components(comps), comps);
  }

  out.rotations.assign(n, Rotation::identity());
  std::vector<char> visited(n, 0);
  std::queue<std::size_t> frontier;
  frontier.push(0);
  visited[0] = 1;
  while (!frontier.empty()) {
    const std::size_t u = frontier.front();
    frontier.pop();
    for (const auto& [w, idx] : adjacency[u]) {
      if (visited[w]) continue;
      const auto& pe = pairs[collapsed[idx].pair];
      const Rotation& rij = pe.rotations[collapsed[idx].label];
      // Rj = Rij * Ri
      if (pe.vertex_i == u) {
        out.rotations[w] = rij * out.rotations[u];
      } else {
        out.rotations[w] = rij.inverse() * out.rotations[u];
      }
      visited[w] = 1;
      frontier.push(w);
    }
  }
  return out;
}

}  // namespace ambigraph
