// Command-line surface for the reconstruction toolkit. One executable with
// subcommands covering the whole pipeline:
//   synth, reconstruct, sft, calibrate-template, calibrate, add-points,
//   add-views, densify, eval.
// Every run writes a report.json with the effective configuration, a content
// hash of the inputs, and timing. Exit codes: 0 success, 2 configuration
// error, 3 data error, 4 numerical failure.

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <nlohmann/json.hpp>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "nrsfm/calib_template.hpp"
#include "nrsfm/calib_templateless.hpp"
#include "nrsfm/incremental.hpp"
#include "nrsfm/io.hpp"
#include "nrsfm/mdh.hpp"
#include "nrsfm/synth.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace nrsfm;

namespace {

struct RunConfig {
  // Paths.
  std::string tracks, intrinsics, templateEdges, depths, newTracks, bundle,
      out = "out";
  std::string newPoints;  // comma-separated indices or @file with one per line
  // Graph.
  int k = 4;
  // Solver.
  double tol = 1e-7;
  int maxIter = 100000;
  // Focal sweep.
  double sweepStep = 0.05;
  double sweepEpsilon = 0.08;
  int sweepMaxOuter = 30;
  // Template-based calibration.
  int hypotheses = 200;
  int calibMaxOuter = 10;
  // Shared RNG seed (synthesis, hypothesis sampling, densify shuffling).
  std::uint64_t seed = 12345;
  // Mode flags.
  bool geodesic = false;
  bool geodesicSet = false;  // true when the flag was given explicitly
  bool calibrateNewViews = false;
  // Densify.
  int seedSize = 0;
  int batchSize = 0;
  // Synthesis.
  int rows = 10, cols = 15, views = 10;
  double spacing = 0.045;
  std::string family = "cylinder";
  double noise = 0.0;
  double dropRate = 0.0;
  double focal = 500.0;
  double width = 640.0, height = 480.0;
  // Evaluation.
  std::string align = "scale";  // none | scale
  int threads = 0;              // 0 keeps the default
};

json configJson(const RunConfig& c) {
  return json{{"tracks", c.tracks},
              {"intrinsics", c.intrinsics},
              {"template", c.templateEdges},
              {"depths", c.depths},
              {"new-tracks", c.newTracks},
              {"new-points", c.newPoints},
              {"bundle", c.bundle},
              {"out", c.out},
              {"k", c.k},
              {"tol", c.tol},
              {"max-iter", c.maxIter},
              {"sweep-step", c.sweepStep},
              {"sweep-epsilon", c.sweepEpsilon},
              {"sweep-max-outer", c.sweepMaxOuter},
              {"hypotheses", c.hypotheses},
              {"calib-max-outer", c.calibMaxOuter},
              {"seed", c.seed},
              {"geodesic", c.geodesic},
              {"calibrate-new-views", c.calibrateNewViews},
              {"seed-size", c.seedSize},
              {"batch-size", c.batchSize},
              {"rows", c.rows},
              {"cols", c.cols},
              {"views", c.views},
              {"spacing", c.spacing},
              {"family", c.family},
              {"noise", c.noise},
              {"drop-rate", c.dropRate},
              {"focal", c.focal},
              {"width", c.width},
              {"height", c.height},
              {"align", c.align},
              {"threads", c.threads}};
}

/// Strict config-file application: every key must name a known option.
void applyConfigFile(RunConfig& c, const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ConfigError("config: parse error in " + path + ": " + e.what());
  }
  if (!j.is_object()) throw ConfigError("config: " + path + " is not an object");
  for (const auto& [key, v] : j.items()) {
    try {
      if (key == "tracks") c.tracks = v.get<std::string>();
      else if (key == "intrinsics") c.intrinsics = v.get<std::string>();
      else if (key == "template") c.templateEdges = v.get<std::string>();
      else if (key == "depths") c.depths = v.get<std::string>();
      else if (key == "new-tracks") c.newTracks = v.get<std::string>();
      else if (key == "new-points") c.newPoints = v.get<std::string>();
      else if (key == "bundle") c.bundle = v.get<std::string>();
      else if (key == "out") c.out = v.get<std::string>();
      else if (key == "k") c.k = v.get<int>();
      else if (key == "tol") c.tol = v.get<double>();
      else if (key == "max-iter") c.maxIter = v.get<int>();
      else if (key == "sweep-step") c.sweepStep = v.get<double>();
      else if (key == "sweep-epsilon") c.sweepEpsilon = v.get<double>();
      else if (key == "sweep-max-outer") c.sweepMaxOuter = v.get<int>();
      else if (key == "hypotheses") c.hypotheses = v.get<int>();
      else if (key == "calib-max-outer") c.calibMaxOuter = v.get<int>();
      else if (key == "seed") c.seed = v.get<std::uint64_t>();
      else if (key == "geodesic") { c.geodesic = v.get<bool>(); c.geodesicSet = true; }
      else if (key == "calibrate-new-views") c.calibrateNewViews = v.get<bool>();
      else if (key == "seed-size") c.seedSize = v.get<int>();
      else if (key == "batch-size") c.batchSize = v.get<int>();
      else if (key == "rows") c.rows = v.get<int>();
      else if (key == "cols") c.cols = v.get<int>();
      else if (key == "views") c.views = v.get<int>();
      else if (key == "spacing") c.spacing = v.get<double>();
      else if (key == "family") c.family = v.get<std::string>();
      else if (key == "noise") c.noise = v.get<double>();
      else if (key == "drop-rate") c.dropRate = v.get<double>();
      else if (key == "focal") c.focal = v.get<double>();
      else if (key == "width") c.width = v.get<double>();
      else if (key == "height") c.height = v.get<double>();
      else if (key == "align") c.align = v.get<std::string>();
      else if (key == "threads") c.threads = v.get<int>();
      else throw ConfigError("config: unknown key '" + key + "' in " + path);
    } catch (const json::exception& e) {
      throw ConfigError("config: bad value for '" + key + "' in " + path +
                        ": " + e.what());
    }
  }
}

void checkRanges(const RunConfig& c) {
  auto bad = [](const std::string& m) { throw ConfigError("config: " + m); };
  if (c.k < 1) bad("k must be >= 1");
  if (!(c.tol > 0)) bad("tol must be > 0");
  if (c.maxIter < 1) bad("max-iter must be >= 1");
  if (!(c.sweepStep > 0 && c.sweepStep < 1)) bad("sweep-step must be in (0, 1)");
  if (!(c.sweepEpsilon > 0)) bad("sweep-epsilon must be > 0");
  if (c.sweepMaxOuter < 1) bad("sweep-max-outer must be >= 1");
  if (c.hypotheses < 1) bad("hypotheses must be >= 1");
  if (c.calibMaxOuter < 1) bad("calib-max-outer must be >= 1");
  if (c.seedSize < 0) bad("seed-size must be >= 0");
  if (c.batchSize < 0) bad("batch-size must be >= 0");
  if (c.rows < 2 || c.cols < 2) bad("rows/cols must be >= 2");
  if (c.views < 1) bad("views must be >= 1");
  if (!(c.spacing > 0)) bad("spacing must be > 0");
  if (c.family != "cylinder" && c.family != "hinge")
    bad("family must be 'cylinder' or 'hinge'");
  if (c.noise < 0) bad("noise must be >= 0");
  if (c.dropRate < 0 || c.dropRate >= 1) bad("drop-rate must be in [0, 1)");
  if (!(c.focal > 0)) bad("focal must be > 0");
  if (!(c.width > 0) || !(c.height > 0)) bad("width/height must be > 0");
  if (c.align != "none" && c.align != "scale")
    bad("align must be 'none' or 'scale'");
  if (c.threads < 0) bad("threads must be >= 0");
}

ReconstructOptions reconstructOptions(const RunConfig& c,
                                      std::vector<std::string>* warnings) {
  ReconstructOptions ro;
  ro.solver.tol = c.tol;
  ro.solver.maxIter = c.maxIter;
  ro.warnings = warnings;
  return ro;
}

std::string requirePath(const std::string& value, const char* flag) {
  if (value.empty())
    throw ConfigError(std::string("missing required option --") + flag);
  return value;
}

json solverJson(const SolverResult& s) {
  return json{{"status", statusName(s.status)},
              {"iterations", s.iterations},
              {"primalResidual", s.primalResidual},
              {"dualResidual", s.dualResidual},
              {"gap", s.gap},
              {"seconds", s.solveSeconds}};
}

json intrinsicsJson(const Intrinsics& K) {
  return json{{"fx", K.fx},     {"fy", K.fy},
              {"skew", K.skew}, {"cx", K.cx},
              {"cy", K.cy},     {"width", K.imageWidth},
              {"height", K.imageHeight}};
}

/// Per-view spread of the reconstructed depths; near-flat views are the
/// signature of a degenerate wide-angle reconstruction.
json depthSpreadJson(const DepthField& f) {
  json out = json::array();
  for (int l = 0; l < f.numViews(); ++l) {
    double lo = std::numeric_limits<double>::infinity(), hi = 0.0;
    for (int i = 0; i < f.numPoints(); ++i)
      if (f.defined(l, i)) {
        lo = std::min(lo, f.depth(l, i));
        hi = std::max(hi, f.depth(l, i));
      }
    out.push_back(json{{"view", l},
                       {"minDepth", std::isfinite(lo) ? lo : 0.0},
                       {"maxDepth", hi},
                       {"relativeSpread", hi > 0 ? (hi - lo) / hi : 0.0}});
  }
  return out;
}

struct RunContext {
  RunConfig cfg;
  std::string subcommand;
  std::vector<std::string> inputFiles;  // hashed into the report
  std::vector<std::string> warnings;
  json result;  // subcommand-specific payload
  std::chrono::steady_clock::time_point start =
      std::chrono::steady_clock::now();
};

void writeReport(const RunContext& ctx) {
  fs::create_directories(ctx.cfg.out);
  json report;
  report["subcommand"] = ctx.subcommand;
  report["config"] = configJson(ctx.cfg);
  report["inputs"] = ctx.inputFiles;
  report["inputsHash"] =
      ctx.inputFiles.empty() ? "" : contentHashHex(ctx.inputFiles);
  report["seconds"] =
      std::chrono::duration<double>(std::chrono::steady_clock::now() -
                                    ctx.start)
          .count();
  report["warnings"] = ctx.warnings;
  report["result"] = ctx.result;
  std::ofstream out(fs::path(ctx.cfg.out) / "report.json");
  if (!out)
    throw DataError("report: cannot write " +
                    (fs::path(ctx.cfg.out) / "report.json").string());
  out << report.dump(2) << '\n';
}

void writeErrorReport(const std::string& outDir, const std::string& subcommand,
                      const char* type, const std::string& message) {
  std::error_code ec;
  fs::create_directories(outDir, ec);
  if (ec) return;  // stderr already carries the error
  std::ofstream out(fs::path(outDir) / "report.json");
  if (!out) return;
  out << json{{"subcommand", subcommand},
              {"error", json{{"type", type}, {"message", message}}}}
             .dump(2)
      << '\n';
}

Intrinsics loadOrDefaultIntrinsics(RunContext& ctx) {
  if (!ctx.cfg.intrinsics.empty()) {
    ctx.inputFiles.push_back(ctx.cfg.intrinsics);
    return loadIntrinsicsJson(ctx.cfg.intrinsics);
  }
  ctx.warnings.push_back(
      "no intrinsics file; using the default guess (focal = half the mean "
      "image size, principal point = image center)");
  return Intrinsics::defaultGuess(ctx.cfg.width, ctx.cfg.height);
}

TrackSet loadTracks(RunContext& ctx) {
  std::string path = requirePath(ctx.cfg.tracks, "tracks");
  ctx.inputFiles.push_back(path);
  return TrackSet::loadCsv(path);
}

std::vector<int> parseNewPoints(const std::string& spec) {
  if (spec.empty()) throw ConfigError("missing required option --new-points");
  std::vector<int> out;
  auto parseStream = [&out](std::istream& in, const std::string& what) {
    std::string tok;
    while (std::getline(in, tok, ',')) {
      std::istringstream ts(tok);
      int v;
      if (!(ts >> v))
        throw DataError("new-points: cannot parse '" + tok + "' in " + what);
      out.push_back(v);
    }
  };
  if (spec[0] == '@') {
    std::ifstream in(spec.substr(1));
    if (!in) throw DataError("new-points: cannot open " + spec.substr(1));
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      std::istringstream ls(line);
      parseStream(ls, spec.substr(1));
    }
  } else {
    std::istringstream ss(spec);
    parseStream(ss, "--new-points");
  }
  return out;
}

// ---------------------------------------------------------------------------
// Subcommands.

void runSynth(RunContext& ctx) {
  const RunConfig& c = ctx.cfg;
  SceneParams p = SceneParams::defaults();
  p.gridRows = c.rows;
  p.gridCols = c.cols;
  p.spacing = c.spacing;
  p.numViews = c.views;
  p.radii.clear();
  p.noiseSigma = c.noise;
  p.visibilityDropRate = c.dropRate;
  p.seed = c.seed;
  p.K.fx = p.K.fy = c.focal;
  p.K.skew = 0.0;
  p.K.cx = c.width / 2.0;
  p.K.cy = c.height / 2.0;
  p.K.imageWidth = c.width;
  p.K.imageHeight = c.height;
  GeneratedScene g = c.family == "hinge" ? generateHingeFold(p)
                                         : generateCylinderBend(p);
  NeighborGraph graph = buildNeighborGraph(g.tracks, c.k);
  EdgeLengths tmpl = templateFor(g.scene, graph);
  json manifest = configJson(c);
  manifest["kind"] = "scene-bundle";
  saveSceneBundle(g.tracks, g.scene.K, g.scene.gtDepth, tmpl,
                  manifest.dump(2) + "\n", c.out);
  ctx.result = json{{"points", g.tracks.numPoints()},
                    {"views", g.tracks.numViews()},
                    {"edges", tmpl.size()},
                    {"bundle", c.out}};
}

void runReconstruct(RunContext& ctx) {
  TrackSet tracks = loadTracks(ctx);
  Intrinsics K = loadOrDefaultIntrinsics(ctx);
  NeighborGraph graph = buildNeighborGraph(tracks, ctx.cfg.k);
  NrsfmProblem prob{tracks, graph, K};
  NrsfmResult r = reconstructNRSfM(prob, reconstructOptions(ctx.cfg, &ctx.warnings));
  Reconstruction recon{tracks, r.depths, K};
  fs::create_directories(ctx.cfg.out);
  saveDepthsCsv(r.depths.depth, (fs::path(ctx.cfg.out) / "depths.csv").string());
  r.d.saveCsv((fs::path(ctx.cfg.out) / "edge_lengths.csv").string());
  std::vector<std::string> plys =
      saveReconstructionPlys(recon, ctx.cfg.out, "view_");
  json perView = json::array();
  for (int l = 0; l < tracks.numViews(); ++l)
    perView.push_back(json{{"view", l},
                           {"points", tracks.visibleCountInView(l)},
                           {"ply", plys[l]}});
  double depthSum = 0.0;
  for (int l = 0; l < r.depths.numViews(); ++l)
    for (int i = 0; i < r.depths.numPoints(); ++i)
      if (r.depths.defined(l, i)) depthSum += r.depths.depth(l, i);
  ctx.result = json{{"objective", depthSum},
                    {"solver", solverJson(r.solver)},
                    {"perView", perView},
                    {"depthSpread", depthSpreadJson(r.depths)}};
}

void runSft(RunContext& ctx) {
  TrackSet tracks = loadTracks(ctx);
  Intrinsics K = loadOrDefaultIntrinsics(ctx);
  std::string tpath = requirePath(ctx.cfg.templateEdges, "template");
  ctx.inputFiles.push_back(tpath);
  EdgeLengths tmpl = EdgeLengths::loadCsv(tpath);
  NeighborGraph graph = buildNeighborGraph(tracks, ctx.cfg.k);
  SfTProblem prob{tracks, graph, tmpl, K};
  SfTResult r = reconstructSfT(prob, reconstructOptions(ctx.cfg, &ctx.warnings));
  Reconstruction recon{tracks, r.depths, K};
  fs::create_directories(ctx.cfg.out);
  saveDepthsCsv(r.depths.depth, (fs::path(ctx.cfg.out) / "depths.csv").string());
  std::vector<std::string> plys =
      saveReconstructionPlys(recon, ctx.cfg.out, "view_");
  json perView = json::array();
  for (int l = 0; l < tracks.numViews(); ++l)
    perView.push_back(json{{"view", l},
                           {"points", tracks.visibleCountInView(l)},
                           {"solver", solverJson(r.perView[l])},
                           {"ply", plys[l]}});
  ctx.result = json{{"objective", r.objective},
                    {"perView", perView},
                    {"depthSpread", depthSpreadJson(r.depths)}};
}

void runCalibrateTemplate(RunContext& ctx) {
  TrackSet tracks = loadTracks(ctx);
  Intrinsics K0 = loadOrDefaultIntrinsics(ctx);
  std::string tpath = requirePath(ctx.cfg.templateEdges, "template");
  ctx.inputFiles.push_back(tpath);
  EdgeLengths tmpl = EdgeLengths::loadCsv(tpath);
  NeighborGraph graph = buildNeighborGraph(tracks, ctx.cfg.k);
  TemplateCalibOptions opts;
  opts.hypothesisSets = ctx.cfg.hypotheses;
  opts.seed = ctx.cfg.seed;
  opts.maxOuterIterations = ctx.cfg.calibMaxOuter;
  opts.reconstruct = reconstructOptions(ctx.cfg, &ctx.warnings);
  opts.warnings = &ctx.warnings;
  TemplateCalibResult r = calibrateWithTemplate(tracks, graph, tmpl, K0, opts);
  fs::create_directories(ctx.cfg.out);
  saveIntrinsicsJson(r.K, (fs::path(ctx.cfg.out) / "intrinsics.json").string());
  json hyps = json::array();
  for (const HypothesisRecord& h : r.hypotheses)
    hyps.push_back(json{{"intrinsics", intrinsicsJson(h.K)},
                        {"equationResidual", h.equationResidual},
                        {"score", h.score},
                        {"positiveDefinite", h.positiveDefinite}});
  ctx.result = json{{"intrinsics", intrinsicsJson(r.K)},
                    {"hypotheses", hyps},
                    {"refineTrace", r.refineTrace},
                    {"focalHistory", r.focalHistory},
                    {"outerIterations", r.outerIterations}};
}

void runCalibrate(RunContext& ctx) {
  TrackSet tracks = loadTracks(ctx);
  Intrinsics K0 = loadOrDefaultIntrinsics(ctx);
  NeighborGraph graph = buildNeighborGraph(tracks, ctx.cfg.k);
  SweepOptions opts;
  opts.stepFraction = ctx.cfg.sweepStep;
  opts.consistencyTol = ctx.cfg.sweepEpsilon;
  opts.maxIterations = ctx.cfg.sweepMaxOuter;
  if (ctx.cfg.geodesicSet)
    opts.mode = ctx.cfg.geodesic ? DistanceMode::Geodesic
                                 : DistanceMode::Euclidean;
  opts.reconstruct = reconstructOptions(ctx.cfg, &ctx.warnings);
  opts.warnings = &ctx.warnings;
  SweepResult r = calibrateWithoutTemplate(tracks, graph, K0, opts);
  fs::create_directories(ctx.cfg.out);
  saveIntrinsicsJson(r.K, (fs::path(ctx.cfg.out) / "intrinsics.json").string());
  json trace = json::array();
  for (const SweepRecord& s : r.history)
    trace.push_back(json{{"focal", s.focal},
                         {"phi", s.phi},
                         {"delta", s.delta},
                         {"flag", s.flag},
                         {"solverIterations", s.solverIterations},
                         {"solveSeconds", s.solveSeconds}});
  {
    std::ofstream out(fs::path(ctx.cfg.out) / "sweep_trace.json");
    out << trace.dump(2) << '\n';
  }
  // Final diagnostic reconstruction under the recovered intrinsics.
  NrsfmProblem prob{tracks, graph, r.K};
  NrsfmResult rec = reconstructNRSfM(prob, opts.reconstruct);
  ctx.result = json{{"intrinsics", intrinsicsJson(r.K)},
                    {"iterations", static_cast<int>(r.history.size())},
                    {"hitCap", r.hitCap},
                    {"trace", trace},
                    {"depthSpread", depthSpreadJson(rec.depths)}};
}

void runAddPoints(RunContext& ctx) {
  TrackSet tracks = loadTracks(ctx);
  Intrinsics K = loadOrDefaultIntrinsics(ctx);
  std::string dpath = requirePath(ctx.cfg.depths, "depths");
  ctx.inputFiles.push_back(dpath);
  Eigen::MatrixXd lambda =
      loadDepthsCsv(dpath, tracks.numViews(), tracks.numPoints());
  AugmentProblem prob;
  prob.tracks = tracks;
  prob.graph = buildNeighborGraph(tracks, ctx.cfg.k);
  prob.baseDepths = DepthField::fromDepths(lambda, tracks, K);
  prob.newPoints = parseNewPoints(ctx.cfg.newPoints);
  prob.Khat = K;
  ReconstructOptions ro = reconstructOptions(ctx.cfg, &ctx.warnings);
  AugmentResult r = addPoints(prob, ro);
  Reconstruction recon{tracks, r.depths, K};
  fs::create_directories(ctx.cfg.out);
  saveDepthsCsv(r.depths.depth, (fs::path(ctx.cfg.out) / "depths.csv").string());
  saveReconstructionPlys(recon, ctx.cfg.out, "view_");
  ctx.result = json{{"alpha", r.alpha},
                    {"newPoints", static_cast<int>(prob.newPoints.size())},
                    {"solver", solverJson(r.solver)}};
}

void runAddViews(RunContext& ctx) {
  TrackSet tracks = loadTracks(ctx);
  Intrinsics K = loadOrDefaultIntrinsics(ctx);
  std::string dpath = requirePath(ctx.cfg.depths, "depths");
  ctx.inputFiles.push_back(dpath);
  Eigen::MatrixXd lambda =
      loadDepthsCsv(dpath, tracks.numViews(), tracks.numPoints());
  std::string npath = requirePath(ctx.cfg.newTracks, "new-tracks");
  ctx.inputFiles.push_back(npath);
  TrackSet newViews = TrackSet::loadCsv(npath);
  if (newViews.numPoints() != tracks.numPoints())
    throw DataError("add-views: new tracks cover " +
                    std::to_string(newViews.numPoints()) +
                    " points but the base has " +
                    std::to_string(tracks.numPoints()));
  NeighborGraph graph = buildNeighborGraph(tracks, ctx.cfg.k);
  Reconstruction base{tracks, DepthField::fromDepths(lambda, tracks, K), K};
  AddViewsOptions opts;
  opts.calibrate = ctx.cfg.calibrateNewViews;
  opts.calibration.hypothesisSets = ctx.cfg.hypotheses;
  opts.calibration.seed = ctx.cfg.seed;
  opts.calibration.maxOuterIterations = ctx.cfg.calibMaxOuter;
  opts.calibration.reconstruct = reconstructOptions(ctx.cfg, &ctx.warnings);
  opts.reconstruct = reconstructOptions(ctx.cfg, &ctx.warnings);
  opts.warnings = &ctx.warnings;
  AddViewsResult r = addViews(base, graph, newViews, K, opts);
  Reconstruction recon{newViews, r.depths, r.K};
  fs::create_directories(ctx.cfg.out);
  saveDepthsCsv(r.depths.depth, (fs::path(ctx.cfg.out) / "depths.csv").string());
  saveIntrinsicsJson(r.K, (fs::path(ctx.cfg.out) / "intrinsics.json").string());
  saveReconstructionPlys(recon, ctx.cfg.out, "view_");
  ctx.result = json{{"newViews", newViews.numViews()},
                    {"intrinsics", intrinsicsJson(r.K)},
                    {"depthSpread", depthSpreadJson(r.depths)}};
}

void runDensify(RunContext& ctx) {
  TrackSet tracks = loadTracks(ctx);
  Intrinsics K = loadOrDefaultIntrinsics(ctx);
  DensifyOptions opts;
  opts.seedSize = ctx.cfg.seedSize;
  opts.batchSize = ctx.cfg.batchSize;
  opts.neighbors = ctx.cfg.k;
  opts.seed = ctx.cfg.seed;
  opts.reconstruct = reconstructOptions(ctx.cfg, &ctx.warnings);
  opts.warnings = &ctx.warnings;
  fs::create_directories(ctx.cfg.out);
  opts.checkpoint = [&ctx](const Reconstruction& recon, int stage) {
    std::ostringstream name;
    name << "checkpoint_";
    name.width(3);
    name.fill('0');
    name << stage;
    fs::path dir = fs::path(ctx.cfg.out) / name.str();
    std::vector<std::string> plys =
        saveReconstructionPlys(recon, dir.string(), "view_");
    long placed = 0;
    for (int i = 0; i < recon.depths.numPoints(); ++i)
      for (int l = 0; l < recon.depths.numViews(); ++l)
        if (recon.depths.defined(l, i)) {
          ++placed;
          break;
        }
    std::ofstream out(dir / "checkpoint.json");
    out << json{{"stage", stage}, {"placedPoints", placed}, {"plys", plys}}
               .dump(2)
        << '\n';
  };
  DensifyResult r = densify(tracks, K, opts);
  saveDepthsCsv(r.recon.depths.depth,
                (fs::path(ctx.cfg.out) / "depths.csv").string());
  saveReconstructionPlys(r.recon, ctx.cfg.out, "view_");
  ctx.result = json{{"alphas", r.alphas},
                    {"stageSeconds", r.stageSeconds},
                    {"depthSpread", depthSpreadJson(r.recon.depths)}};
}

void runEval(RunContext& ctx) {
  std::string bundleDir = requirePath(ctx.cfg.bundle, "bundle");
  for (const char* f : {"tracks.csv", "intrinsics.json", "gt_depths.csv"})
    ctx.inputFiles.push_back((fs::path(bundleDir) / f).string());
  SceneBundle b = loadSceneBundle(bundleDir);
  if (b.gtDepth.size() == 0)
    throw DataError("eval: bundle " + bundleDir + " has no gt_depths.csv");
  std::string dpath = requirePath(ctx.cfg.depths, "depths");
  ctx.inputFiles.push_back(dpath);
  Eigen::MatrixXd lambda =
      loadDepthsCsv(dpath, b.tracks.numViews(), b.tracks.numPoints());
  Reconstruction recon{b.tracks, DepthField::fromDepths(lambda, b.tracks, b.K),
                       b.K};
  // Ground-truth camera-frame points from the bundle's depths and pixels.
  SyntheticScene scene;
  scene.K = b.K;
  scene.gtDepth = b.gtDepth;
  // Flat UV coordinates are not part of the bundle; only the point count is
  // consumed downstream.
  scene.templateUV = Eigen::Matrix2Xd::Zero(2, b.tracks.numPoints());
  for (int l = 0; l < b.tracks.numViews(); ++l) {
    Eigen::Matrix3Xd pts(3, b.tracks.numPoints());
    for (int i = 0; i < b.tracks.numPoints(); ++i)
      pts.col(i) = std::isfinite(b.gtDepth(l, i)) && b.tracks.visible(l, i)
                       ? Eigen::Vector3d(b.gtDepth(l, i) *
                                         b.K.ray(b.tracks.homogeneous(l, i)))
                       : Eigen::Vector3d::Zero();
    scene.gtPoints.push_back(pts);
  }
  EvalMetrics m = evaluate(recon, scene,
                           ctx.cfg.align == "none" ? Alignment::None
                                                   : Alignment::GlobalScale);
  ctx.result = json{{"rmse", m.rmse},
                    {"meanError", m.meanError},
                    {"scale", m.scale},
                    {"count", m.count},
                    {"meanSceneDepth", m.meanSceneDepth},
                    {"relativeMeanError",
                     m.meanSceneDepth > 0 ? m.meanError / m.meanSceneDepth : 0.0}};
}

}  // namespace

int main(int argc, char** argv) {
  RunConfig cfg;
  // The config file seeds the defaults; explicit flags override it.
  for (int i = 1; i + 1 < argc; ++i)
    if (std::string(argv[i]) == "--config") {
      try {
        applyConfigFile(cfg, argv[i + 1]);
      } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
      }
    }

  CLI::App app{
      "Isometric non-rigid reconstruction toolkit: batch and incremental "
      "maximum-depth reconstruction, template-based and template-less "
      "self-calibration, synthetic benchmarks, and evaluation."};
  app.require_subcommand(1);
  std::string configPath;
  app.add_option("--config", configPath,
                 "JSON config file; unknown keys are rejected, explicit "
                 "flags override it");

  auto addCommon = [&cfg](CLI::App* sub) {
    sub->add_option("--out", cfg.out, "Output directory for artifacts");
    sub->add_option("--threads", cfg.threads,
                    "Cap worker threads (0 keeps the default)");
    sub->add_option("--config", "JSON config file (parsed before flags)")
        ->type_name("FILE");
  };
  auto addSolver = [&cfg](CLI::App* sub) {
    sub->add_option("--k", cfg.k, "Neighbors per point in the constraint graph");
    sub->add_option("--tol", cfg.tol, "Solver convergence tolerance");
    sub->add_option("--max-iter", cfg.maxIter, "Solver iteration cap");
  };
  auto addIntrinsics = [&cfg](CLI::App* sub) {
    sub->add_option("--intrinsics", cfg.intrinsics,
                    "Intrinsics JSON; omitted = default guess from "
                    "--width/--height");
    sub->add_option("--width", cfg.width, "Image width for the default guess");
    sub->add_option("--height", cfg.height,
                    "Image height for the default guess");
  };

  CLI::App* synth = app.add_subcommand("synth", "Generate a synthetic scene bundle");
  synth->add_option("--rows", cfg.rows, "Grid rows");
  synth->add_option("--cols", cfg.cols, "Grid columns");
  synth->add_option("--views", cfg.views, "Number of views");
  synth->add_option("--spacing", cfg.spacing, "Grid spacing (scene units)");
  synth->add_option("--family", cfg.family, "Deformation family: cylinder | hinge");
  synth->add_option("--noise", cfg.noise, "Pixel noise sigma");
  synth->add_option("--drop-rate", cfg.dropRate, "Visibility drop probability");
  synth->add_option("--focal", cfg.focal, "Ground-truth focal length (pixels)");
  synth->add_option("--seed", cfg.seed, "RNG seed");
  synth->add_option("--width", cfg.width, "Image width");
  synth->add_option("--height", cfg.height, "Image height");
  synth->add_option("--k", cfg.k, "Neighbors for the template edge set");
  addCommon(synth);

  CLI::App* rec = app.add_subcommand(
      "reconstruct", "Batch multi-view reconstruction without a template");
  rec->add_option("--tracks", cfg.tracks, "Tracks CSV")->required();
  addIntrinsics(rec);
  addSolver(rec);
  addCommon(rec);

  CLI::App* sft = app.add_subcommand(
      "sft", "Per-view reconstruction against a known template");
  sft->add_option("--tracks", cfg.tracks, "Tracks CSV")->required();
  sft->add_option("--template", cfg.templateEdges, "Template edge CSV")
      ->required();
  addIntrinsics(sft);
  addSolver(sft);
  addCommon(sft);

  CLI::App* ct = app.add_subcommand(
      "calibrate-template", "Intrinsics from tracks and a known template");
  ct->add_option("--tracks", cfg.tracks, "Tracks CSV")->required();
  ct->add_option("--template", cfg.templateEdges, "Template edge CSV")
      ->required();
  ct->add_option("--hypotheses", cfg.hypotheses, "Hypothesis sets to sample");
  ct->add_option("--seed", cfg.seed, "RNG seed for hypothesis sampling");
  ct->add_option("--calib-max-outer", cfg.calibMaxOuter,
                 "Outer reconstruct-calibrate iterations");
  addIntrinsics(ct);
  addSolver(ct);
  addCommon(ct);

  CLI::App* cal = app.add_subcommand(
      "calibrate", "Template-less focal sweep from tracks alone");
  cal->add_option("--tracks", cfg.tracks, "Tracks CSV")->required();
  cal->add_option("--sweep-step", cfg.sweepStep,
                  "Downward sweep step (fraction of the focal)");
  cal->add_option("--sweep-epsilon", cfg.sweepEpsilon,
                  "Relative focal movement that counts as consistent");
  cal->add_option("--sweep-max-outer", cfg.sweepMaxOuter,
                  "Outer iteration cap");
  cal->add_flag("--geodesic,!--euclidean",
                [&cfg](std::int64_t n) {
                  cfg.geodesic = n > 0;
                  cfg.geodesicSet = true;
                },
                "Force geodesic (or euclidean) consistency distances");
  addIntrinsics(cal);
  addSolver(cal);
  addCommon(cal);

  CLI::App* ap = app.add_subcommand(
      "add-points", "Extend an existing reconstruction by new points");
  ap->add_option("--tracks", cfg.tracks, "Tracks CSV over all points")
      ->required();
  ap->add_option("--depths", cfg.depths,
                 "Base depths CSV (defined on the existing points)")
      ->required();
  ap->add_option("--new-points", cfg.newPoints,
                 "Comma-separated indices, or @file with one per line")
      ->required();
  addIntrinsics(ap);
  addSolver(ap);
  addCommon(ap);

  CLI::App* av = app.add_subcommand(
      "add-views", "Reconstruct new views against a self-template");
  av->add_option("--tracks", cfg.tracks, "Base tracks CSV")->required();
  av->add_option("--depths", cfg.depths, "Base depths CSV")->required();
  av->add_option("--new-tracks", cfg.newTracks, "New views' tracks CSV")
      ->required();
  av->add_flag("--calibrate-new-views", cfg.calibrateNewViews,
               "Calibrate the new views against the self-template first");
  av->add_option("--hypotheses", cfg.hypotheses,
                 "Hypothesis sets when calibrating");
  av->add_option("--seed", cfg.seed, "RNG seed when calibrating");
  addIntrinsics(av);
  addSolver(av);
  addCommon(av);

  CLI::App* den = app.add_subcommand(
      "densify", "Seed-then-batches reconstruction of a large point set");
  den->add_option("--tracks", cfg.tracks, "Tracks CSV")->required();
  den->add_option("--seed-size", cfg.seedSize,
                  "Seed subset size (0 = max(150, N/4))");
  den->add_option("--batch-size", cfg.batchSize,
                  "Points per added batch (0 = seed size)");
  den->add_option("--seed", cfg.seed, "RNG seed for the seed subset");
  addIntrinsics(den);
  addSolver(den);
  addCommon(den);

  CLI::App* ev = app.add_subcommand(
      "eval", "Compare estimated depths against a scene bundle's ground truth");
  ev->add_option("--bundle", cfg.bundle, "Scene bundle directory")->required();
  ev->add_option("--depths", cfg.depths, "Estimated depths CSV")->required();
  ev->add_option("--align", cfg.align, "Alignment before scoring: none | scale");
  addCommon(ev);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 2;
  }

  RunContext ctx;
  CLI::App* sub = app.get_subcommands().front();
  ctx.subcommand = sub->get_name();
  try {
    checkRanges(cfg);
    ctx.cfg = cfg;
    if (cfg.threads > 0) Eigen::setNbThreads(cfg.threads);
    if (sub == synth) runSynth(ctx);
    else if (sub == rec) runReconstruct(ctx);
    else if (sub == sft) runSft(ctx);
    else if (sub == ct) runCalibrateTemplate(ctx);
    else if (sub == cal) runCalibrate(ctx);
    else if (sub == ap) runAddPoints(ctx);
    else if (sub == av) runAddViews(ctx);
    else if (sub == den) runDensify(ctx);
    else if (sub == ev) runEval(ctx);
    writeReport(ctx);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    writeErrorReport(cfg.out, ctx.subcommand, "config", e.what());
    return 2;
  } catch (const DataError& e) {
    std::cerr << "error: " << e.what() << '\n';
    writeErrorReport(cfg.out, ctx.subcommand, "data", e.what());
    return 3;
  } catch (const NumericalError& e) {
    std::cerr << "error: " << e.what() << '\n';
    writeErrorReport(cfg.out, ctx.subcommand, "numerical", e.what());
    return 4;
  }
  for (const std::string& w : ctx.warnings)
    std::cerr << "warning: " << w << '\n';
  return 0;
}
