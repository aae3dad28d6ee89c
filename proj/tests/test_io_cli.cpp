#include <gtest/gtest.h>

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <set>
#include <sstream>

#include "ambigraph/cli.hpp"
#include "ambigraph/errors.hpp"
#include "ambigraph/io.hpp"
#include "fixtures.hpp"
#include "json.hpp"

using namespace ambigraph;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    static int counter = 0;
    path = fs::temp_directory_path() /
           ("ambigraph_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string operator/(const std::string& name) const { return (path / name).string(); }
};

struct RunResult {
  int code;
  std::string out;
  std::string err;
};

RunResult run(std::vector<std::string> args) {
  args.insert(args.begin(), "ambigraph");
  std::vector<const char*> argv;
  for (const std::string& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

std::vector<std::vector<std::string>> csv_rows(const std::string& text) {
  std::vector<std::vector<std::string>> rows;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    std::vector<std::string> cells;
    std::string cell;
    std::istringstream ls(line);
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    rows.push_back(cells);
  }
  return rows;
}

const std::string kMinimal = R"({
  "schema_version": 1,
  "camera": {"fx": 500, "fy": 500, "cx": 320, "cy": 240},
  "marker_size_m": 0.5,
  "images": [{"id": 0, "detections": [{"marker_id": 3, "corners_px": [[300,220],[340,220],[340,260],[300,260]]}]}]
})";

}  // namespace

TEST(DetectionsJson, RoundTripIsExact) {
  const Scene scene = generate_scene(fixture::distant_markers(6, 10, 1.0, 3));
  const io::DetectionsFile file = io::from_scene(scene);
  const std::string text = io::to_json(file);
  const io::DetectionsFile back = io::parse_detections(text);
  EXPECT_EQ(io::to_json(back), text);
  ASSERT_TRUE(back.ground_truth.has_value());
  EXPECT_EQ(back.ground_truth->markers.size(), 6u);
  EXPECT_EQ(back.observations().size(), scene.detections.size());
  const auto obs = back.observations();
  for (std::size_t k = 0; k < obs.size(); ++k)
    for (int c = 0; c < 4; ++c) EXPECT_EQ(obs[k].corners[c], scene.detections[k].detection.corners[c]);
  EXPECT_EQ(nlohmann::json::parse(text).at("schema_version"), io::kSchemaVersion);
}

TEST(DetectionsJson, SceneFromFileRecoversLabels) {
  const Scene scene = generate_scene(fixture::distant_markers(6, 10, 2.0, 4));
  const Scene back = io::scene_from_file(io::parse_detections(io::to_json(io::from_scene(scene))));
  EXPECT_EQ(truth_labels(back), truth_labels(scene));
  io::DetectionsFile bare = io::parse_detections(kMinimal);
  EXPECT_FALSE(bare.ground_truth.has_value());
  EXPECT_THROW(io::scene_from_file(bare), MissingGroundTruth);
}

TEST(DetectionsJson, SchemaViolations) {
  EXPECT_NO_THROW(io::parse_detections(kMinimal));
  auto mutate = [](auto f) {
    nlohmann::json j = nlohmann::json::parse(kMinimal);
    f(j);
    return j.dump();
  };
  EXPECT_THROW(io::parse_detections("{not json"), ValidationError);
  EXPECT_THROW(io::parse_detections(mutate([](auto& j) { j.erase("schema_version"); })), ValidationError);
  EXPECT_THROW(io::parse_detections(mutate([](auto& j) { j["schema_version"] = 99; })), ValidationError);
  EXPECT_THROW(io::parse_detections(mutate([](auto& j) { j.erase("camera"); })), ValidationError);
  EXPECT_THROW(
      io::parse_detections(mutate([](auto& j) { j["images"][0]["detections"][0]["corners_px"].erase(0); })),
      ValidationError);
  EXPECT_THROW(io::parse_detections(mutate([](auto& j) { j["images"][0]["detections"][0]["marker_id"] = -1; })),
               ValidationError);
  EXPECT_THROW(io::parse_detections(mutate([](auto& j) { j["images"][0]["id"] = 1.5; })), ValidationError);
  EXPECT_THROW(io::parse_detections(mutate([](auto& j) { j["images"].push_back(j["images"][0]); })),
               ValidationError);
  EXPECT_THROW(io::parse_detections(mutate([](auto& j) {
                 j["images"][0]["detections"].push_back(j["images"][0]["detections"][0]);
               })),
               ValidationError);
  EXPECT_THROW(io::parse_detections(mutate([](auto& j) { j["marker_size_m"] = 0; })), ValidationError);
}

TEST(MapJson, RoundTrip) {
  const Scene scene = generate_scene(fixture::distant_markers(6, 10, 0.0, 5));
  MarkerMap m;
  m.reference_marker = 2;
  m.markers = scene.truth.markers;
  m.cameras = scene.truth.cameras;
  std::string method;
  const MarkerMap back = io::parse_map(io::map_to_json(m, "ours"), &method);
  EXPECT_EQ(method, "ours");
  EXPECT_EQ(back.reference_marker, 2);
  ASSERT_EQ(back.markers.size(), m.markers.size());
  for (const auto& [id, p] : m.markers) EXPECT_LT((back.markers.at(id).matrix() - p.matrix()).norm(), 1e-12);
  for (const auto& [id, q] : m.cameras) EXPECT_LT((back.cameras.at(id).matrix() - q.matrix()).norm(), 1e-12);
}

TEST(Csv, NumberFormatting) {
  EXPECT_EQ(io::format_number(100.0), "100");
  EXPECT_EQ(io::format_number(93.4210987), "93.4211");
  EXPECT_EQ(io::format_number(1.0 / 3.0), "0.333333");
  EXPECT_EQ(io::format_number(-0.0), "0");
  EXPECT_EQ(io::format_number(1.5e-7), "1.5e-07");
  EXPECT_EQ(io::format_number(std::nan("")), "nan");
}

TEST(Csv, DecisionsRoundTrip) {
  const std::vector<io::DecisionRow> rows{{0, 1, 0, 0.25, 0.125}, {0, 2, kDiscarded, 0.846, std::nullopt},
                                          {3, 1, 1, 0.5, std::nullopt}};
  const std::string text = io::decisions_csv(rows);
  EXPECT_EQ(text.substr(0, text.find('\n')), "image_id,marker_id,decision,error_ratio,weight_ratio");
  EXPECT_NE(text.find("0,2,discarded,0.846,\n"), std::string::npos);
  const auto back = io::parse_decisions_csv(text);
  ASSERT_EQ(back.size(), 3u);
  EXPECT_EQ(back[1].decision, kDiscarded);
  EXPECT_EQ(back[0].weight_ratio, std::optional<double>(0.125));
  EXPECT_FALSE(back[2].weight_ratio.has_value());
  EXPECT_EQ(io::decisions_csv(back), text);
  EXPECT_THROW(io::parse_decisions_csv("wrong,header\n"), ValidationError);
}

TEST(Csv, MetricsHeaderIsFixed) {
  MethodReport a;
  a.method = Method::kOurs;
  a.precision = 100.0;
  a.markers_mapped = 6;
  a.cameras_localised = 20;
  a.errors = PoseErrors{0.5, 1.25, 0.75, 2.0};
  MethodReport b;
  b.method = Method::kM2;
  const std::vector<MethodReport> reports{a, b};
  const auto rows = csv_rows(io::metrics_csv(reports));
  ASSERT_EQ(rows.size(), 3u);
  EXPECT_EQ(rows[0], (std::vector<std::string>{"method", "precision", "markers_mapped", "cameras_localised",
                                               "marker_err_deg", "marker_err_cm", "cam_err_deg", "cam_err_cm"}));
  EXPECT_EQ(rows[1], (std::vector<std::string>{"Ours", "100", "6", "20", "0.5", "1.25", "0.75", "2"}));
  EXPECT_EQ(rows[2], (std::vector<std::string>{"M2", "", "0", "0", "", "", "", ""}));
}

TEST(Csv, HistogramBins) {
  const std::vector<double> values{0.0, 0.01, 0.049, 0.05, 0.5, 0.999, 1.0};
  const auto bins = io::ratio_histogram(values);
  ASSERT_EQ(bins.size(), 20u);
  for (std::size_t k = 0; k < bins.size(); ++k) {
    EXPECT_NEAR(bins[k].lo, 0.05 * static_cast<double>(k), 1e-12);
    EXPECT_NEAR(bins[k].hi, 0.05 * static_cast<double>(k + 1), 1e-12);
  }
  EXPECT_EQ(bins[0].count, 3u);
  EXPECT_EQ(bins[1].count, 1u);
  EXPECT_EQ(bins[10].count, 1u);
  EXPECT_EQ(bins[19].count, 2u);
  const auto rows = csv_rows(io::histogram_csv(bins));
  ASSERT_EQ(rows.size(), 21u);
  EXPECT_EQ(rows[0], (std::vector<std::string>{"bin_lo", "bin_hi", "count"}));
  EXPECT_EQ(rows[1], (std::vector<std::string>{"0", "0.05", "3"}));
  EXPECT_EQ(rows[20], (std::vector<std::string>{"0.95", "1", "2"}));
}

TEST(Cli, GenerateWritesAllMarkers) {
  TempDir dir;
  const RunResult r = run({"generate", "--markers", "14", "--images", "151", "--noise-px", "1", "--seed", "7", "-o",
                           dir / "scene.json"});
  ASSERT_EQ(r.code, 0) << r.err;
  const io::DetectionsFile f = io::read_detections(dir / "scene.json");
  std::set<int> ids;
  for (const auto& img : f.images)
    for (const auto& d : img.detections) ids.insert(d.marker_id);
  EXPECT_EQ(ids.size(), 14u);
  EXPECT_EQ(f.images.size(), 151u);
}

TEST(Cli, GenerateRejectsTrivialScene) {
  TempDir dir;
  const RunResult r = run({"generate", "--markers", "1", "--images", "1", "-o", dir / "scene.json"});
  EXPECT_NE(r.code, 0);
  EXPECT_FALSE(r.err.empty());
  EXPECT_EQ(run({"generate", "--markers", "4"}).code, cli::kValidation);
  EXPECT_EQ(run({"frobnicate"}).code, cli::kValidation);
  EXPECT_EQ(run({"generate", "--help"}).code, cli::kOk);
}

TEST(Cli, GenerateIsDeterministic) {
  TempDir dir;
  ASSERT_EQ(run({"generate", "--seed", "11", "--noise-px", "2", "-o", dir / "a.json"}).code, 0);
  ASSERT_EQ(run({"generate", "--seed", "11", "--noise-px", "2", "-o", dir / "nested/b.json"}).code, 0);
  ASSERT_EQ(run({"generate", "--seed", "12", "--noise-px", "2", "-o", dir / "c.json"}).code, 0);
  EXPECT_EQ(io::read_text(dir / "a.json"), io::read_text(dir / "nested/b.json"));
  EXPECT_NE(io::read_text(dir / "a.json"), io::read_text(dir / "c.json"));
}

TEST(Cli, SeedEnvironmentOverride) {
  TempDir dir;
  ASSERT_EQ(run({"generate", "--seed", "5", "-o", dir / "a.json"}).code, 0);
  ::setenv("AMBIGRAPH_SEED", "5", 1);
  const RunResult r = run({"generate", "--seed", "99", "-o", dir / "b.json"});
  ::setenv("AMBIGRAPH_SEED", "x5", 1);
  const RunResult bad = run({"generate", "-o", dir / "c.json"});
  ::unsetenv("AMBIGRAPH_SEED");
  ASSERT_EQ(r.code, 0);
  EXPECT_EQ(io::read_text(dir / "a.json"), io::read_text(dir / "b.json"));
  EXPECT_EQ(bad.code, cli::kValidation);
}

TEST(Cli, SolveWritesMapAndDecisions) {
  TempDir dir;
  ASSERT_EQ(run({"generate", "--noise-px", "1", "-o", dir / "scene.json"}).code, 0);
  const RunResult r = run({"solve", dir / "scene.json", "--method", "ours", "-o", dir / "out"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(fs::exists(dir / "out/map.json"));
  EXPECT_TRUE(fs::exists(dir / "out/decisions.csv"));
  EXPECT_TRUE(fs::exists(dir / "out/metrics.csv"));
  const MarkerMap map = io::parse_map(io::read_text(dir / "out/map.json"));
  EXPECT_EQ(map.markers.size(), 6u);
  const auto rows = io::parse_decisions_csv(io::read_text(dir / "out/decisions.csv"));
  for (const auto& row : rows) {
    EXPECT_NE(row.decision, kDiscarded);
    EXPECT_TRUE(row.weight_ratio.has_value());
  }
  EXPECT_EQ(run({"solve", dir / "missing.json"}).code, cli::kValidation);
  EXPECT_EQ(run({"solve", dir / "scene.json", "--method", "m9"}).code, cli::kValidation);
}

TEST(Cli, M3DiscardsAmbiguousDetection) {
  // A small marker far away and seen almost head-on: both PPE minima fit.
  TempDir dir;
  nlohmann::json j = nlohmann::json::parse(kMinimal);
  j["images"][0]["detections"][0]["corners_px"] = {{318, 238}, {322.2, 238.1}, {322.1, 242.2}, {317.9, 242}};
  io::write_text(dir / "one.json", j.dump());
  const io::DetectionsFile f = io::read_detections(dir / "one.json");
  const auto dets = io::solve_detections(f);
  ASSERT_EQ(dets.size(), 1u);
  const double ratio = dets[0].ratio();
  const RunResult r = run({"solve", dir / "one.json", "--method", "m3", "-o", dir / "out"});
  const auto rows = io::parse_decisions_csv(io::read_text(dir / "out/decisions.csv"));
  ASSERT_EQ(rows.size(), 1u);
  if (ratio >= 0.6) {
    EXPECT_EQ(rows[0].decision, kDiscarded) << "ratio " << ratio;
    EXPECT_EQ(r.code, cli::kInsufficientData);
  } else {
    ADD_FAILURE() << "fixture is not ambiguous, ratio " << ratio;
  }
}

TEST(Cli, SolveM3ThresholdDiscardsOnScene) {
  TempDir dir;
  ASSERT_EQ(run({"generate", "--noise-px", "3", "--markers", "10", "--images", "40", "-o", dir / "scene.json"}).code,
            0);
  const RunResult r =
      run({"solve", dir / "scene.json", "--method", "m3", "--ratio-threshold", "0.6", "-o", dir / "out"});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto rows = io::parse_decisions_csv(io::read_text(dir / "out/decisions.csv"));
  for (const auto& row : rows) EXPECT_EQ(row.decision == kDiscarded, row.error_ratio >= 0.6);
}

TEST(Cli, EvaluateNeedsGroundTruth) {
  TempDir dir;
  io::write_text(dir / "bare.json", kMinimal);
  const RunResult r = run({"evaluate", dir / "bare.json", "-o", dir / "eval"});
  EXPECT_EQ(r.code, cli::kInsufficientData);
}

TEST(Cli, EvaluateNoiselessIsPerfect) {
  TempDir dir;
  ASSERT_EQ(run({"generate", "--noise-px", "0", "-o", dir / "scene.json"}).code, 0);
  const RunResult r = run({"evaluate", dir / "scene.json", "-o", dir / "eval"});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto rows = csv_rows(io::read_text(dir / "eval/metrics.csv"));
  ASSERT_EQ(rows.size(), 6u);
  for (std::size_t k = 1; k < rows.size(); ++k) EXPECT_EQ(rows[k][1], "100") << rows[k][0];
  for (const char* name : {"eval/error_ratio_hist.csv", "eval/weight_ratio_hist.csv"}) {
    const auto hist = csv_rows(io::read_text(dir / name));
    ASSERT_EQ(hist.size(), 21u);
    EXPECT_EQ(hist[1][0], "0");
    EXPECT_EQ(hist[20][1], "1");
  }
}

TEST(Cli, ExperimentWritesSummary) {
  TempDir dir;
  const RunResult r = run({"experiment", "--markers", "6", "--images", "15", "--noise-levels", "1,3", "--trials", "2",
                           "--methods", "m1,ours", "--jobs", "2", "-o", dir / "exp"});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto rows = csv_rows(io::read_text(dir / "exp/summary.csv"));
  ASSERT_EQ(rows.size(), 5u);
  EXPECT_EQ(rows[0][0], "noise_px");
  EXPECT_EQ(csv_rows(io::read_text(dir / "exp/trials.csv")).size(), 9u);
}

TEST(Cli, RoundTripAtLargestScale) {
  TempDir dir;
  const auto start = std::chrono::steady_clock::now();
  ASSERT_EQ(run({"generate", "--markers", "14", "--images", "151", "--noise-px", "1", "--seed", "7", "-o",
                 dir / "scene.json"})
                .code,
            0);
  const RunResult s = run({"solve", dir / "scene.json", "-o", dir / "out"});
  ASSERT_EQ(s.code, 0) << s.err;
  const RunResult e = run({"evaluate", dir / "scene.json", "--results", dir / "out", "-o", dir / "eval"});
  ASSERT_EQ(e.code, 0) << e.err;
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  EXPECT_LT(seconds, 60.0);
  const auto rows = csv_rows(io::read_text(dir / "eval/metrics.csv"));
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_EQ(rows[1][0], "Ours");
  EXPECT_EQ(rows[1][2], "14");
  EXPECT_EQ(rows[1][3], "151");
}
