#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ambigraph/geometry.hpp"
#include "ambigraph/harness.hpp"
#include "ambigraph/sfm.hpp"

namespace ambigraph::io {

constexpr int kSchemaVersion = 1;

struct ImageDetections {
  int id = 0;
  std::vector<BundleObservation> detections;
};

/// Marker corners per image, plus the true poses when the file came from the generator.
struct DetectionsFile {
  CameraIntrinsics camera;
  double marker_size = 0.0;
  std::vector<ImageDetections> images;
  std::optional<SceneGroundTruth> ground_truth;

  std::vector<BundleObservation> observations() const;
};

DetectionsFile from_scene(const Scene& scene);

/// Re-runs the PPE on every detection and labels it against the stored truth.
/// Throws MissingGroundTruth without a ground-truth block and ValidationError
/// when a detected marker or image has no true pose.
Scene scene_from_file(const DetectionsFile& file);

/// Both throw ValidationError on schema violations.
std::string to_json(const DetectionsFile& file);
DetectionsFile parse_detections(const std::string& text);

DetectionsFile read_detections(const std::filesystem::path& path);
void write_text(const std::filesystem::path& path, const std::string& text);
std::string read_text(const std::filesystem::path& path);

/// Poses as row-major rotation[9] and translation[3].
std::string map_to_json(const MarkerMap& map, const std::string& method);
MarkerMap parse_map(const std::string& text, std::string* method = nullptr);

/// Runs the PPE on every detection; undetectable corner sets (no pose in
/// front of the camera) are skipped and counted in `skipped`.
std::vector<AmbiguousDetection> solve_detections(const DetectionsFile& file, std::size_t* skipped = nullptr);

struct DecisionRow {
  int image_id = 0;
  int marker_id = 0;
  int decision = 0;  // 0, 1 or kDiscarded
  double error_ratio = 0.0;
  std::optional<double> weight_ratio;
};

std::vector<DecisionRow> decision_rows(const MethodSelection& selection);
std::string decisions_csv(std::span<const DecisionRow> rows);
std::vector<DecisionRow> parse_decisions_csv(const std::string& text);

/// Six significant digits, as used in every CSV output.
std::string format_number(double v);

std::string metrics_csv(std::span<const MethodReport> reports);

struct HistogramBin {
  double lo = 0.0;
  double hi = 0.0;
  std::size_t count = 0;
};

/// 20 equal bins over [0, 1]; 1.0 falls in the last bin.
std::vector<HistogramBin> ratio_histogram(std::span<const double> values);
std::string histogram_csv(std::span<const HistogramBin> bins);

}  // namespace ambigraph::io
