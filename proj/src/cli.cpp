#include "ambigraph/cli.hpp"

#include <cstdlib>
#include <filesystem>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "ambigraph/errors.hpp"
#include "ambigraph/harness.hpp"
#include "ambigraph/io.hpp"

namespace ambigraph::cli {
namespace {

namespace fs = std::filesystem;

struct GenerateArgs {
  SceneConfig scene;
  std::string output;
};

struct SolveArgs {
  std::string input;
  std::string method = "ours";
  std::optional<double> ratio_threshold;
  int max_iterations = 500;
  std::string output_dir = ".";
};

struct EvaluateArgs {
  std::string input;
  std::string results_dir;
  std::vector<std::string> methods{"m1", "m2", "m3", "m4", "ours"};
  bool no_sfm = false;
  std::string output_dir = ".";
};

struct ExperimentArgs {
  SceneConfig scene;
  std::vector<double> noise_levels{1.0, 2.0, 3.0};
  int trials = 30;
  int jobs = 1;
  bool sfm = false;
  std::vector<std::string> methods{"m1", "m2", "m3", "m4", "ours"};
  std::string output_dir = ".";
};

void add_scene_flags(CLI::App* cmd, SceneConfig& s) {
  cmd->add_option("--markers", s.markers, "number of markers");
  cmd->add_option("--images", s.images, "number of images");
  cmd->add_option("--marker-size", s.marker_size, "marker side length in metres");
  cmd->add_option("--seed", s.seed, "random seed (AMBIGRAPH_SEED overrides)");
  cmd->add_option("--max-per-image", s.max_markers_per_image, "most markers kept per image");
}

void apply_seed_override(SceneConfig& s) {
  const char* env = std::getenv("AMBIGRAPH_SEED");
  if (!env) return;
  try {
    std::size_t used = 0;
    const unsigned long long v = std::stoull(env, &used);
    if (used != std::string(env).size()) throw std::invalid_argument(env);
    s.seed = v;
  } catch (const std::exception&) {
    throw ValidationError(std::string("AMBIGRAPH_SEED is not an unsigned integer: ") + env);
  }
}

std::vector<Method> parse_methods(const std::vector<std::string>& names) {
  std::vector<Method> out;
  for (const std::string& n : names) out.push_back(parse_method(n));
  return out;
}

BaselineConfig baseline_for(Method m, std::optional<double> threshold, int max_iterations) {
  BaselineConfig c;
  c.averaging.max_iterations = max_iterations;
  if (threshold) {
    if (!(*threshold >= 0.0 && *threshold <= 1.0)) throw ValidationError("--ratio-threshold must lie in [0, 1]");
    if (m == Method::kM2) c.m2_threshold = *threshold;
    if (m == Method::kM3) c.m3_threshold = *threshold;
  }
  return c;
}

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw ValidationError("cannot create directory " + dir + ": " + ec.message());
}

int cmd_generate(GenerateArgs a, std::ostream& out) {
  apply_seed_override(a.scene);
  if (a.output.empty()) throw ValidationError("-o is required");
  const Scene scene = generate_scene(a.scene);
  if (fs::path(a.output).has_parent_path()) ensure_dir(fs::path(a.output).parent_path().string());
  io::write_text(a.output, io::to_json(io::from_scene(scene)));
  out << "wrote " << scene.detections.size() << " detections of " << scene.truth.markers.size() << " markers in "
      << scene.truth.cameras.size() << " images to " << a.output << "\n";
  return kOk;
}

// Scores one method's output against the truth stored in the detections file.
MethodReport score(Method m, const std::vector<io::DecisionRow>& rows, const MarkerMap* map, const Scene& truth) {
  std::map<std::pair<int, int>, int> labels;
  for (const SceneDetection& d : truth.detections) labels[{d.detection.image_id, d.detection.marker_id}] = d.true_label;
  MethodReport r;
  r.method = m;
  std::vector<int> decided;
  std::vector<int> expected;
  for (const io::DecisionRow& row : rows) {
    if (row.decision == kDiscarded) {
      ++r.abstained;
      continue;
    }
    const auto it = labels.find({row.image_id, row.marker_id});
    if (it == labels.end())
      throw ValidationError("decision for unknown detection (image " + std::to_string(row.image_id) + ", marker " +
                            std::to_string(row.marker_id) + ")");
    decided.push_back(row.decision);
    expected.push_back(it->second);
  }
  r.decided = decided.size();
  if (!decided.empty()) r.precision = precision(decided, expected);
  if (map) {
    r.markers_mapped = map->markers.size();
    r.cameras_localised = map->cameras.size();
    try {
      r.errors = pose_errors(*map, truth.truth);
    } catch (const DegenerateAlignment& e) {
      r.failure = e.what();
    }
  }
  return r;
}

int cmd_solve(const SolveArgs& a, std::ostream& out, std::ostream& err) {
  const Method method = parse_method(a.method);
  const BaselineConfig config = baseline_for(method, a.ratio_threshold, a.max_iterations);
  const io::DetectionsFile file = io::read_detections(a.input);
  ensure_dir(a.output_dir);

  std::size_t skipped = 0;
  std::vector<AmbiguousDetection> detections = io::solve_detections(file, &skipped);
  if (skipped > 0) err << "skipped " << skipped << " detections with no valid pose\n";
  if (detections.empty()) throw InsufficientData("no usable detections");

  const MethodSelection sel = run_baseline(method, std::move(detections), config);
  const std::vector<io::DecisionRow> rows = io::decision_rows(sel);
  io::write_text(fs::path(a.output_dir) / "decisions.csv", io::decisions_csv(rows));
  out << method_name(method) << ": " << rows.size() - sel.abstentions() << " decided, " << sel.abstentions()
      << " discarded\n";

  const std::vector<ResolvedPose> resolved = sel.resolved();
  if (resolved.empty()) throw InsufficientData("every detection was discarded, nothing left to map");
  const Reconstruction rec =
      reconstruct(resolved, file.observations(), file.camera, file.marker_size, sel.marker_rotations);
  io::write_text(fs::path(a.output_dir) / "map.json", io::map_to_json(rec.map, method_name(method)));
  out << "mapped " << rec.map.markers.size() << " markers and " << rec.map.cameras.size()
      << " cameras, rms reprojection " << io::format_number(rec.rms_px) << " px\n";

  if (file.ground_truth) {
    const Scene truth = io::scene_from_file(file);
    const MethodReport report = score(method, rows, &rec.map, truth);
    io::write_text(fs::path(a.output_dir) / "metrics.csv", io::metrics_csv(std::span(&report, 1)));
  }
  return kOk;
}

int cmd_evaluate(const EvaluateArgs& a, std::ostream& out) {
  const io::DetectionsFile file = io::read_detections(a.input);
  const Scene scene = io::scene_from_file(file);
  ensure_dir(a.output_dir);

  std::vector<MethodReport> reports;
  std::vector<double> error_ratios;
  std::vector<double> weight_ratios;
  if (!a.results_dir.empty()) {
    const fs::path dir(a.results_dir);
    const std::vector<io::DecisionRow> rows = io::parse_decisions_csv(io::read_text(dir / "decisions.csv"));
    std::optional<MarkerMap> map;
    std::string method = "m1";
    if (fs::exists(dir / "map.json")) map = io::parse_map(io::read_text(dir / "map.json"), &method);
    reports.push_back(score(parse_method(method), rows, map ? &*map : nullptr, scene));
    for (const io::DecisionRow& r : rows) {
      error_ratios.push_back(r.error_ratio);
      if (r.weight_ratio) weight_ratios.push_back(*r.weight_ratio);
    }
  } else {
    const EvaluationReport report = evaluate_scene(scene, parse_methods(a.methods), {}, !a.no_sfm);
    reports = report.methods;
    error_ratios = report.error_ratios;
    weight_ratios = report.weight_ratios;
  }

  const fs::path dir(a.output_dir);
  io::write_text(dir / "metrics.csv", io::metrics_csv(reports));
  io::write_text(dir / "error_ratio_hist.csv", io::histogram_csv(io::ratio_histogram(error_ratios)));
  io::write_text(dir / "weight_ratio_hist.csv", io::histogram_csv(io::ratio_histogram(weight_ratios)));
  out << io::metrics_csv(reports);
  for (const MethodReport& r : reports)
    if (!r.failure.empty()) out << method_name(r.method) << " failed: " << r.failure << "\n";
  return kOk;
}

int cmd_experiment(ExperimentArgs a, std::ostream& out) {
  apply_seed_override(a.scene);
  if (a.trials < 1) throw ValidationError("--trials must be at least 1");
  if (a.jobs < 1) throw ValidationError("--jobs must be at least 1");
  if (a.noise_levels.empty()) throw ValidationError("--noise-levels must not be empty");
  for (double s : a.noise_levels)
    if (!(s >= 0.0)) throw ValidationError("noise levels must be non-negative");
  ExperimentConfig config;
  config.scene = a.scene;
  config.noise_levels = a.noise_levels;
  config.trials = a.trials;
  config.methods = parse_methods(a.methods);
  config.run_sfm = a.sfm;
  config.jobs = a.jobs;
  ensure_dir(a.output_dir);

  const std::vector<TrialResult> results = run_experiment(config);

  std::string trials = "noise_px,trial,seed,method,precision,decided,abstained,failure\n";
  struct Sum {
    double precision = 0.0;
    int scored = 0;
    std::size_t decided = 0;
    std::size_t abstained = 0;
  };
  std::map<std::pair<double, int>, Sum> sums;
  int failed_scenes = 0;
  for (const TrialResult& t : results) {
    if (!t.failure.empty()) {
      ++failed_scenes;
      trials += io::format_number(t.noise_px) + "," + std::to_string(t.trial) + "," + std::to_string(t.seed) +
                ",,,,,\"" + t.failure + "\"\n";
      continue;
    }
    for (const MethodReport& r : t.report.methods) {
      trials += io::format_number(t.noise_px) + "," + std::to_string(t.trial) + "," + std::to_string(t.seed) + "," +
                method_name(r.method) + "," + (r.precision ? io::format_number(*r.precision) : std::string()) + "," +
                std::to_string(r.decided) + "," + std::to_string(r.abstained) + ",";
      if (!r.failure.empty()) trials += "\"" + r.failure + "\"";
      trials += "\n";
      Sum& s = sums[{t.noise_px, static_cast<int>(r.method)}];
      if (r.precision) {
        s.precision += *r.precision;
        ++s.scored;
      }
      s.decided += r.decided;
      s.abstained += r.abstained;
    }
  }
  std::string summary = "noise_px,method,mean_precision,trials_scored,abstention_pct\n";
  for (const auto& [key, s] : sums) {
    const std::size_t total = s.decided + s.abstained;
    summary += io::format_number(key.first) + "," + method_name(static_cast<Method>(key.second)) + "," +
               (s.scored ? io::format_number(s.precision / s.scored) : std::string()) + "," +
               std::to_string(s.scored) + "," +
               (total ? io::format_number(100.0 * static_cast<double>(s.abstained) / static_cast<double>(total))
                      : std::string()) +
               "\n";
  }
  const fs::path dir(a.output_dir);
  io::write_text(dir / "trials.csv", trials);
  io::write_text(dir / "summary.csv", summary);
  out << summary;
  if (failed_scenes > 0) out << failed_scenes << " scenes could not be generated\n";
  return kOk;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Planar-marker pose disambiguation and marker mapping"};
  app.require_subcommand(1);

  GenerateArgs gen;
  CLI::App* generate = app.add_subcommand("generate", "write a synthetic DetectionsFile with ground truth");
  add_scene_flags(generate, gen.scene);
  generate->add_option("--noise-px", gen.scene.noise_px, "corner noise standard deviation in pixels");
  generate->add_option("-o,--output", gen.output, "output JSON path")->required();

  SolveArgs sol;
  CLI::App* solve = app.add_subcommand("solve", "disambiguate and map a DetectionsFile");
  solve->add_option("input", sol.input, "DetectionsFile")->required();
  solve->add_option("--method", sol.method, "m1, m2, m3, m4 or ours");
  solve->add_option("--ratio-threshold", sol.ratio_threshold, "discard threshold for m2 (0.1) and m3 (0.6)");
  solve->add_option("--max-iterations", sol.max_iterations, "iteration cap of the rotation solvers");
  solve->add_option("-o,--output", sol.output_dir, "output directory");

  EvaluateArgs ev;
  CLI::App* evaluate = app.add_subcommand("evaluate", "score methods against the ground truth of a DetectionsFile");
  evaluate->add_option("input", ev.input, "DetectionsFile with ground_truth")->required();
  evaluate->add_option("--results", ev.results_dir, "score an existing solve output directory instead");
  evaluate->add_option("--methods", ev.methods, "methods to run")->delimiter(',');
  evaluate->add_flag("--no-sfm", ev.no_sfm, "skip mapping, report precision only");
  evaluate->add_option("-o,--output", ev.output_dir, "output directory");

  ExperimentArgs ex;
  CLI::App* experiment = app.add_subcommand("experiment", "Monte-Carlo precision study over noise levels");
  add_scene_flags(experiment, ex.scene);
  experiment->add_option("--noise-levels", ex.noise_levels, "comma separated pixel noise levels")->delimiter(',');
  experiment->add_option("--trials", ex.trials, "trials per noise level");
  experiment->add_option("--jobs", ex.jobs, "worker threads");
  experiment->add_option("--methods", ex.methods, "methods to run")->delimiter(',');
  experiment->add_flag("--sfm", ex.sfm, "also map every trial");
  experiment->add_option("-o,--output", ex.output_dir, "output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kValidation;
  }

  try {
    if (*generate) return cmd_generate(gen, out);
    if (*solve) return cmd_solve(sol, out, err);
    if (*evaluate) return cmd_evaluate(ev, out);
    return cmd_experiment(ex, out);
  } catch (const ValidationError& e) {
    err << "error: " << e.what() << "\n";
    return kValidation;
  } catch (const DisconnectedGraph& e) {
    err << "error: " << e.what() << "\n";
    for (std::size_t c = 0; c < e.components().size(); ++c) {
      err << "component " << c << ":";
      for (int id : e.components()[c]) err << " " << id;
      err << "\n";
    }
    return kSolverFailure;
  } catch (const InsufficientData& e) {
    err << "insufficient data: " << e.what() << "\n";
    return kInsufficientData;
  } catch (const MissingGroundTruth& e) {
    err << "error: " << e.what() << "\n";
    return kInsufficientData;
  } catch (const Error& e) {
    err << "solver failure: " << e.what() << "\n";
    return kSolverFailure;
  }
}

}  // namespace ambigraph::cli
