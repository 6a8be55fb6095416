#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "nrsfm/calib_templateless.hpp"
#include "nrsfm/synth.hpp"

using namespace nrsfm;

namespace {

GeneratedScene cylinderScene(int rows, int cols, int views) {
  SceneParams p = SceneParams::defaults();
  p.gridRows = rows;
  p.gridCols = cols;
  p.radii.clear();
  for (int l = 0; l < views; ++l)
    p.radii.push_back(0.4 + 1.6 * l / std::max(1, views - 1));
  return generateCylinderBend(p);
}

DepthField gtField(const GeneratedScene& g) {
  return DepthField::fromDepths(g.scene.gtDepth, g.tracks, g.scene.K);
}

}  // namespace

TEST_CASE("single view and identical views are perfectly consistent") {
  GeneratedScene g = cylinderScene(6, 8, 2);
  NeighborGraph graph = buildNeighborGraph(g.tracks, 4, 0);

  TrackSet one = g.tracks.selectViews({0});
  DepthField f1 = gtField(g);
  DepthField oneField;
  oneField.depth = f1.depth.row(0);
  oneField.range = f1.range.row(0);
  oneField.producedUnder = f1.producedUnder;
  CHECK(isometryConsistency(g.scene.K, one, graph, oneField) == 0.0);

  // Two copies of the same view agree exactly.
  TrackSet twin = g.tracks.selectViews({0, 0});
  DepthField twinField;
  twinField.depth = Eigen::MatrixXd(2, f1.depth.cols());
  twinField.depth << f1.depth.row(0), f1.depth.row(0);
  twinField.range = Eigen::MatrixXd(2, f1.range.cols());
  twinField.range << f1.range.row(0), f1.range.row(0);
  twinField.producedUnder = f1.producedUnder;
  CHECK(isometryConsistency(g.scene.K, twin, graph, twinField) <= 1e-24);
}

TEST_CASE("the true focal is far more consistent than half of it") {
  GeneratedScene g = cylinderScene(8, 10, 4);
  NeighborGraph graph = buildNeighborGraph(g.tracks, 4, 0);
  DepthField field = gtField(g);
  double atTruth = isometryConsistency(g.scene.K, g.tracks, graph, field);
  Intrinsics half = g.scene.K;
  half.fx *= 0.5;
  half.fy *= 0.5;
  double atHalf = isometryConsistency(half, g.tracks, graph, field);
  CHECK(atTruth >= 0.0);
  CHECK(atHalf >= 10.0 * atTruth);
}

TEST_CASE("consistency via ranges equals consistency from upgraded points") {
  GeneratedScene g = cylinderScene(6, 8, 3);
  NeighborGraph graph = buildNeighborGraph(g.tracks, 4, 0);
  DepthField field = gtField(g);
  Intrinsics K = g.scene.K;
  K.fx = K.fy = 420.0;

  double viaRanges = isometryConsistency(K, g.tracks, graph, field);

  // Second path: transport the depths to K, place explicit 3D points, and
  // redo the sums from chords.
  UpgradeContext ctx{field, g.scene.K, K, g.tracks};
  DepthField up = upgradeDepths(ctx);
  int V = up.numViews();
  std::vector<EdgeLengths> per(V);
  std::vector<double> budget(V);
  for (int l = 0; l < V; ++l) {
    for (auto [i, j] : graph.edges()) {
      if (!up.defined(l, i) || !up.defined(l, j)) continue;
      Eigen::Vector3d xi = up.depth(l, i) * K.ray(g.tracks.homogeneous(l, i));
      Eigen::Vector3d xj = up.depth(l, j) * K.ray(g.tracks.homogeneous(l, j));
      per[l].set(i, j, (xi - xj).norm());
    }
    budget[l] = per[l].directedSum();
  }
  double viaPoints = 0.0;
  for (int k = 0; k < V; ++k)
    for (int l = k + 1; l < V; ++l)
      for (const auto& [e, dk] : per[k].items()) {
        if (!per[l].has(e.first, e.second)) continue;
        double diff = dk / budget[k] - per[l].at(e.first, e.second) / budget[l];
        viaPoints += 4.0 * diff * diff;
      }
  CHECK(viaRanges == doctest::Approx(viaPoints).epsilon(1e-10));

  // Chords form a metric, so every direct edge is its own shortest path and
  // the geodesic mode reproduces the euclidean value.
  double geo = isometryConsistency(K, g.tracks, graph, field,
                                   DistanceMode::Geodesic);
  CHECK(geo == doctest::Approx(viaRanges).epsilon(1e-12));
}

TEST_CASE("views with no common edge are rejected") {
  TrackSet tracks(2, 4);
  tracks.set(0, 0, 100.0, 100.0);
  tracks.set(0, 1, 140.0, 110.0);
  tracks.set(1, 2, 300.0, 200.0);
  tracks.set(1, 3, 340.0, 210.0);
  NeighborGraph graph;
  graph.adjacency = {{1}, {0}, {3}, {2}};
  graph.k = 1;
  Eigen::MatrixXd lambda = Eigen::MatrixXd::Constant(2, 4, 2.0);
  Intrinsics K{500.0, 500.0, 0.0, 320.0, 240.0};
  DepthField field = DepthField::fromDepths(lambda, tracks, K);
  CHECK_THROWS_AS(isometryConsistency(K, tracks, graph, field), DataError);
}

TEST_CASE("focal refinement is stationary at the truth and flat data stays put") {
  GeneratedScene g = cylinderScene(8, 10, 4);
  NeighborGraph graph = buildNeighborGraph(g.tracks, 4, 0);
  DepthField field = gtField(g);

  FocalRefineResult still = refineFocal(g.scene.K, g.tracks, graph, field);
  CHECK(still.moved);
  CHECK(still.delta <= 0.02);

  // A single shared edge is scale-normalized away: the objective is flat and
  // the guess is returned unmoved.
  TrackSet pair(2, 2);
  pair.set(0, 0, 200.0, 200.0);
  pair.set(0, 1, 260.0, 220.0);
  pair.set(1, 0, 210.0, 190.0);
  pair.set(1, 1, 255.0, 235.0);
  NeighborGraph tiny;
  tiny.adjacency = {{1}, {0}};
  tiny.k = 1;
  Eigen::MatrixXd lambda(2, 2);
  lambda << 2.0, 2.2, 1.9, 2.4;
  Intrinsics K{400.0, 400.0, 0.0, 320.0, 240.0};
  DepthField flat = DepthField::fromDepths(lambda, pair, K);
  FocalRefineResult r = refineFocal(K, pair, tiny, flat);
  CHECK_FALSE(r.moved);
  CHECK(r.K.focal() == K.focal());
  CHECK(r.delta == 0.0);
}

TEST_CASE("refinement of an overestimated reconstruction moves the focal down") {
  GeneratedScene g = cylinderScene(8, 10, 5);
  NeighborGraph graph = buildNeighborGraph(g.tracks, 4, 0);
  NrsfmProblem prob{g.tracks, graph, g.scene.K};
  prob.Khat.fx = prob.Khat.fy = 2.0 * g.scene.K.fx;
  NrsfmResult r = reconstructNRSfM(prob);
  FocalRefineResult fr = refineFocal(prob.Khat, g.tracks, graph, r.depths);
  CHECK(fr.moved);
  CHECK(fr.K.focal() < prob.Khat.focal());
}

TEST_CASE("the sweep recovers the focal from the half-image-size rule") {
  GeneratedScene g = cylinderScene(8, 10, 5);
  NeighborGraph graph = buildNeighborGraph(g.tracks, 4, 0);
  Intrinsics guess = Intrinsics::defaultGuess(640.0, 480.0);

  SweepOptions opts;
  SweepResult r = calibrateWithoutTemplate(g.tracks, graph, guess, opts);
  CHECK(focalErrorPercent(r.K, g.scene.K) < 10.0);
  CHECK_FALSE(r.hitCap);
  CHECK(r.history.size() <= 15);
  CHECK(r.history.back().delta <= opts.consistencyTol);

  // Identical inputs replay the identical history.
  SweepResult again = calibrateWithoutTemplate(g.tracks, graph, guess, opts);
  REQUIRE(again.history.size() == r.history.size());
  for (size_t t = 0; t < r.history.size(); ++t) {
    CHECK(again.history[t].focal == r.history[t].focal);
    CHECK(again.history[t].phi == r.history[t].phi);
    CHECK(again.history[t].flag == r.history[t].flag);
  }
}

TEST_CASE("a sweep started at the truth exits within the step granularity") {
  GeneratedScene g = cylinderScene(8, 10, 5);
  NeighborGraph graph = buildNeighborGraph(g.tracks, 4, 0);
  SweepOptions opts;
  SweepResult r = calibrateWithoutTemplate(g.tracks, graph, g.scene.K, opts);
  double fgt = g.scene.K.fx;
  CHECK(std::abs(r.K.focal() - fgt) <=
        opts.stepFraction * fgt + opts.consistencyTol * fgt + 1e-9);

  // While no upgrade has been favored, the downward sweep is strictly
  // decreasing in focal.
  for (size_t t = 1; t < r.history.size(); ++t) {
    if (r.history[t].flag != 0 || r.history[t - 1].flag != 0) continue;
    if (r.history[t - 1].delta <= opts.consistencyTol)
      CHECK(r.history[t].focal < r.history[t - 1].focal);
  }
}
