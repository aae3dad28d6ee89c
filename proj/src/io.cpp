#include "ambigraph/io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"

#include "ambigraph/errors.hpp"

namespace ambigraph::io {
namespace {

using nlohmann::json;

const json& member(const json& j, const char* key) {
  if (!j.is_object() || !j.contains(key)) throw ValidationError(std::string("missing field '") + key + "'");
  return j.at(key);
}

double number(const json& j, const char* key) {
  const json& v = member(j, key);
  if (!v.is_number()) throw ValidationError(std::string("field '") + key + "' must be a number");
  const double x = v.get<double>();
  if (!std::isfinite(x)) throw ValidationError(std::string("field '") + key + "' must be finite");
  return x;
}

int id_field(const json& j, const char* key) {
  const json& v = member(j, key);
  if (!v.is_number_integer() || v.get<long long>() < 0 || v.get<long long>() > 1'000'000'000)
    throw ValidationError(std::string("field '") + key + "' must be a non-negative integer");
  return v.get<int>();
}

const json& array_field(const json& j, const char* key) {
  const json& v = member(j, key);
  if (!v.is_array()) throw ValidationError(std::string("field '") + key + "' must be an array");
  return v;
}

void check_schema(const json& doc) {
  if (!doc.is_object()) throw ValidationError("document must be a JSON object");
  const int version = id_field(doc, "schema_version");
  if (version != kSchemaVersion)
    throw ValidationError("unsupported schema_version " + std::to_string(version));
}

json pose_json(int id, const RigidPose& p) {
  const Mat3 r = p.rotation.matrix();
  json rot = json::array();
  for (int a = 0; a < 3; ++a)
    for (int b = 0; b < 3; ++b) rot.push_back(r(a, b));
  return {{"id", id},
          {"rotation", rot},
          {"translation", {p.translation.x(), p.translation.y(), p.translation.z()}}};
}

std::pair<int, RigidPose> parse_pose(const json& j) {
  const int id = id_field(j, "id");
  const json& rot = array_field(j, "rotation");
  const json& tr = array_field(j, "translation");
  if (rot.size() != 9 || tr.size() != 3) throw ValidationError("pose needs rotation[9] and translation[3]");
  Mat3 r;
  Vec3 t;
  for (int k = 0; k < 9; ++k) {
    if (!rot[k].is_number()) throw ValidationError("rotation entries must be numbers");
    r(k / 3, k % 3) = rot[k].get<double>();
  }
  for (int k = 0; k < 3; ++k) {
    if (!tr[k].is_number()) throw ValidationError("translation entries must be numbers");
    t(k) = tr[k].get<double>();
  }
  if (!r.allFinite() || !t.allFinite()) throw ValidationError("pose entries must be finite");
  const double drift = (r.transpose() * r - Mat3::Identity()).norm();
  if (drift > 1e-6 || r.determinant() < 0.0)
    throw ValidationError("pose " + std::to_string(id) + " has a non-orthonormal rotation");
  // Hand-written files may carry a few digits only; our own output is kept bit-exact.
  return {id, RigidPose(drift > 1e-12 ? nearest_rotation(r) : Rotation(r), t)};
}

json pose_list(const std::map<int, RigidPose>& poses) {
  json out = json::array();
  for (const auto& [id, p] : poses) out.push_back(pose_json(id, p));
  return out;
}

std::map<int, RigidPose> parse_pose_list(const json& arr, const char* what) {
  std::map<int, RigidPose> out;
  for (const json& j : arr) {
    auto [id, p] = parse_pose(j);
    if (!out.emplace(id, p).second) throw ValidationError(std::string("duplicate ") + what + " id " + std::to_string(id));
  }
  return out;
}

std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, sep)) out.push_back(cell);
  if (!line.empty() && line.back() == sep) out.emplace_back();
  return out;
}

int parse_int(const std::string& s) {
  std::size_t used = 0;
  int v = 0;
  try {
    v = std::stoi(s, &used);
  } catch (const std::exception&) {
    throw ValidationError("bad integer '" + s + "'");
  }
  if (used != s.size()) throw ValidationError("bad integer '" + s + "'");
  return v;
}

double parse_double(const std::string& s) {
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception&) {
    throw ValidationError("bad number '" + s + "'");
  }
  if (used != s.size()) throw ValidationError("bad number '" + s + "'");
  return v;
}

const char* kDecisionsHeader = "image_id,marker_id,decision,error_ratio,weight_ratio";
const char* kMetricsHeader =
    "method,precision,markers_mapped,cameras_localised,marker_err_deg,marker_err_cm,cam_err_deg,cam_err_cm";

}  // namespace

std::vector<BundleObservation> DetectionsFile::observations() const {
  std::vector<BundleObservation> out;
  for (const ImageDetections& img : images)
    for (const BundleObservation& o : img.detections) out.push_back(o);
  return out;
}

DetectionsFile from_scene(const Scene& scene) {
  DetectionsFile f;
  f.camera = scene.config.camera;
  f.marker_size = scene.config.marker_size;
  for (const BundleObservation& o : scene.observations()) {
    if (f.images.empty() || f.images.back().id != o.image_id) f.images.push_back({o.image_id, {}});
    f.images.back().detections.push_back(o);
  }
  f.ground_truth = scene.truth;
  return f;
}

Scene scene_from_file(const DetectionsFile& file) {
  if (!file.ground_truth) throw MissingGroundTruth("the detections file has no ground_truth block");
  const SceneGroundTruth& gt = *file.ground_truth;
  Scene scene;
  scene.config.camera = file.camera;
  scene.config.marker_size = file.marker_size;
  scene.truth = gt;
  for (const AmbiguousDetection& d : solve_detections(file)) {
    const auto cam = gt.cameras.find(d.image_id);
    const auto mk = gt.markers.find(d.marker_id);
    if (cam == gt.cameras.end() || mk == gt.markers.end())
      throw ValidationError("no true pose for image " + std::to_string(d.image_id) + " / marker " +
                            std::to_string(d.marker_id));
    SceneDetection sd;
    sd.detection = d;
    sd.true_m2c = cam->second * mk->second;
    sd.true_label = ground_truth_label(d, sd.true_m2c.rotation);
    scene.detections.push_back(sd);
  }
  return scene;
}

std::string to_json(const DetectionsFile& file) {
  json doc;
  doc["schema_version"] = kSchemaVersion;
  doc["camera"] = {{"fx", file.camera.fx}, {"fy", file.camera.fy}, {"cx", file.camera.cx}, {"cy", file.camera.cy}};
  doc["marker_size_m"] = file.marker_size;
  json images = json::array();
  for (const ImageDetections& img : file.images) {
    json dets = json::array();
    for (const BundleObservation& o : img.detections) {
      json corners = json::array();
      for (const Vec2& c : o.corners) corners.push_back({c.x(), c.y()});
      dets.push_back({{"marker_id", o.marker_id}, {"corners_px", corners}});
    }
    images.push_back({{"id", img.id}, {"detections", dets}});
  }
  doc["images"] = images;
  if (file.ground_truth) {
    doc["ground_truth"] = {{"markers", pose_list(file.ground_truth->markers)},
                           {"cameras", pose_list(file.ground_truth->cameras)}};
  }
  return doc.dump(2) + "\n";
}

DetectionsFile parse_detections(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ValidationError(std::string("invalid JSON: ") + e.what());
  }
  check_schema(doc);
  DetectionsFile f;
  const json& cam = member(doc, "camera");
  f.camera = {number(cam, "fx"), number(cam, "fy"), number(cam, "cx"), number(cam, "cy"), 0.0};
  if (!f.camera.is_valid()) throw ValidationError("camera focal lengths must be positive");
  f.marker_size = number(doc, "marker_size_m");
  if (!(f.marker_size > 0.0)) throw ValidationError("marker_size_m must be positive");

  std::set<int> image_ids;
  for (const json& img : array_field(doc, "images")) {
    ImageDetections out;
    out.id = id_field(img, "id");
    if (!image_ids.insert(out.id).second) throw ValidationError("duplicate image id " + std::to_string(out.id));
    std::set<int> marker_ids;
    for (const json& det : array_field(img, "detections")) {
      BundleObservation o;
      o.image_id = out.id;
      o.marker_id = id_field(det, "marker_id");
      if (!marker_ids.insert(o.marker_id).second)
        throw ValidationError("marker " + std::to_string(o.marker_id) + " detected twice in image " +
                              std::to_string(out.id));
      const json& corners = array_field(det, "corners_px");
      if (corners.size() != 4) throw ValidationError("corners_px must hold exactly 4 corners");
      for (std::size_t c = 0; c < 4; ++c) {
        const json& xy = corners[c];
        if (!xy.is_array() || xy.size() != 2 || !xy[0].is_number() || !xy[1].is_number())
          throw ValidationError("each corner must be [x, y]");
        o.corners[c] = Vec2(xy[0].get<double>(), xy[1].get<double>());
        if (!o.corners[c].allFinite()) throw ValidationError("corner coordinates must be finite");
      }
      out.detections.push_back(o);
    }
    std::sort(out.detections.begin(), out.detections.end(),
              [](const BundleObservation& a, const BundleObservation& b) { return a.marker_id < b.marker_id; });
    f.images.push_back(std::move(out));
  }
  std::sort(f.images.begin(), f.images.end(),
            [](const ImageDetections& a, const ImageDetections& b) { return a.id < b.id; });

  if (doc.contains("ground_truth") && !doc.at("ground_truth").is_null()) {
    const json& gt = doc.at("ground_truth");
    SceneGroundTruth truth;
    truth.markers = parse_pose_list(array_field(gt, "markers"), "marker");
    truth.cameras = parse_pose_list(array_field(gt, "cameras"), "camera");
    f.ground_truth = std::move(truth);
  }
  return f;
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ValidationError("cannot write " + path.string());
  out << text;
  if (!out) throw ValidationError("write failed for " + path.string());
}

DetectionsFile read_detections(const std::filesystem::path& path) { return parse_detections(read_text(path)); }

std::string map_to_json(const MarkerMap& map, const std::string& method) {
  json doc;
  doc["schema_version"] = kSchemaVersion;
  doc["method"] = method;
  doc["reference_marker"] = map.reference_marker;
  doc["markers"] = pose_list(map.markers);
  doc["cameras"] = pose_list(map.cameras);
  return doc.dump(2) + "\n";
}

MarkerMap parse_map(const std::string& text, std::string* method) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ValidationError(std::string("invalid JSON: ") + e.what());
  }
  check_schema(doc);
  MarkerMap map;
  map.reference_marker = id_field(doc, "reference_marker");
  map.markers = parse_pose_list(array_field(doc, "markers"), "marker");
  map.cameras = parse_pose_list(array_field(doc, "cameras"), "camera");
  if (method) {
    const json& m = member(doc, "method");
    if (!m.is_string()) throw ValidationError("field 'method' must be a string");
    *method = m.get<std::string>();
  }
  return map;
}

std::vector<AmbiguousDetection> solve_detections(const DetectionsFile& file, std::size_t* skipped) {
  std::vector<AmbiguousDetection> out;
  std::size_t bad = 0;
  for (const ImageDetections& img : file.images) {
    for (const BundleObservation& o : img.detections) {
      try {
        AmbiguousDetection d = ppe_solve(o.corners, {o.marker_id, file.marker_size}, file.camera);
        d.image_id = o.image_id;
        out.push_back(d);
      } catch (const DegenerateCorners&) {
        ++bad;
      } catch (const PlaneBehindCamera&) {
        ++bad;
      }
    }
  }
  if (skipped) *skipped = bad;
  return out;
}

std::vector<DecisionRow> decision_rows(const MethodSelection& selection) {
  std::vector<DecisionRow> rows;
  for (std::size_t k = 0; k < selection.detections.size(); ++k) {
    const AmbiguousDetection& d = selection.detections[k];
    DecisionRow r{d.image_id, d.marker_id, selection.decisions[k], d.ratio(), std::nullopt};
    if (k < selection.weight_ratios.size()) r.weight_ratio = selection.weight_ratios[k];
    rows.push_back(r);
  }
  return rows;
}

std::string format_number(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  if (v == 0.0) v = 0.0;  // no "-0"
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

std::string decisions_csv(std::span<const DecisionRow> rows) {
  std::string out = std::string(kDecisionsHeader) + "\n";
  for (const DecisionRow& r : rows) {
    out += std::to_string(r.image_id) + "," + std::to_string(r.marker_id) + ",";
    out += r.decision == kDiscarded ? std::string("discarded") : std::to_string(r.decision);
    out += "," + format_number(r.error_ratio) + ",";
    if (r.weight_ratio) out += format_number(*r.weight_ratio);
    out += "\n";
  }
  return out;
}

std::vector<DecisionRow> parse_decisions_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != kDecisionsHeader) throw ValidationError("unexpected decisions.csv header");
  std::vector<DecisionRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const std::vector<std::string> cells = split(line, ',');
    if (cells.size() != 5) throw ValidationError("decisions.csv rows need 5 columns");
    DecisionRow r;
    r.image_id = parse_int(cells[0]);
    r.marker_id = parse_int(cells[1]);
    if (cells[2] == "discarded") {
      r.decision = kDiscarded;
    } else {
      r.decision = parse_int(cells[2]);
      if (r.decision != 0 && r.decision != 1) throw ValidationError("decision must be 0, 1 or discarded");
    }
    r.error_ratio = parse_double(cells[3]);
    if (!cells[4].empty()) r.weight_ratio = parse_double(cells[4]);
    rows.push_back(r);
  }
  return rows;
}

std::string metrics_csv(std::span<const MethodReport> reports) {
  std::string out = std::string(kMetricsHeader) + "\n";
  auto opt = [](bool has, double v) { return has ? format_number(v) : std::string(); };
  for (const MethodReport& r : reports) {
    const bool e = r.errors.has_value();
    const PoseErrors pe = r.errors.value_or(PoseErrors{});
    out += method_name(r.method) + "," + opt(r.precision.has_value(), r.precision.value_or(0.0)) + "," +
           std::to_string(r.markers_mapped) + "," + std::to_string(r.cameras_localised) + "," +
           opt(e, pe.marker_deg) + "," + opt(e, pe.marker_cm) + "," + opt(e, pe.camera_deg) + "," +
           opt(e, pe.camera_cm) + "\n";
  }
  return out;
}

std::vector<HistogramBin> ratio_histogram(std::span<const double> values) {
  constexpr int kBins = 20;
  std::vector<HistogramBin> bins(kBins);
  for (int b = 0; b < kBins; ++b) {
    bins[b].lo = b * 0.05;
    bins[b].hi = (b + 1) * 0.05;
  }
  for (double v : values) {
    if (!(v >= 0.0 && v <= 1.0)) continue;
    const int b = std::min(kBins - 1, static_cast<int>(std::floor(v / 0.05)));
    ++bins[b].count;
  }
  return bins;
}

std::string histogram_csv(std::span<const HistogramBin> bins) {
  std::string out = "bin_lo,bin_hi,count\n";
  for (const HistogramBin& b : bins)
    out += format_number(b.lo) + "," + format_number(b.hi) + "," + std::to_string(b.count) + "\n";
  return out;
}

}  // namespace ambigraph::io
