#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "nrsfm/mdh.hpp"
#include "nrsfm/synth.hpp"
#include "oracles.hpp"

using namespace nrsfm;

namespace {

SfTProblem cylinderSfT(int rows, int cols, double radius, int k = 4) {
  SceneParams p = SceneParams::defaults();
  p.gridRows = rows;
  p.gridCols = cols;
  p.radii = {radius};
  GeneratedScene g = generateCylinderBend(p);
  SfTProblem prob;
  prob.tracks = g.tracks;
  prob.graph = buildNeighborGraph(g.tracks, k, 0);
  prob.templateLengths = templateFor(g.scene, prob.graph);
  prob.K = g.scene.K;
  return prob;
}

}  // namespace

TEST_CASE("pruned layout counts variables and cones") {
  TrackSet t(2, 3);
  for (int i = 0; i < 3; ++i) {
    t.set(0, i, 10.0 * i, 0.0);
    t.set(1, i, 10.0 * i, 1.0);
  }
  t.clear(1, 2);
  NeighborGraph g;
  g.adjacency = {{1}, {0, 2}, {1}};
  PrunedLayout layout = pruneMissing(t, g);
  CHECK(layout.numDepthVars == 5);
  CHECK(layout.depthVar(1, 2) == -1);
  CHECK(layout.viewEdges[0].size() == 2);
  CHECK(layout.viewEdges[1].size() == 1);  // edge (1,2) not co-visible in view 1
  CHECK(layout.numConeConstraints == 3);
}

TEST_CASE("two-point template instance matches the closed form") {
  Intrinsics K{100.0, 100.0, 0.0, 0.0, 0.0, 200.0, 200.0};
  TrackSet t(1, 2);
  t.set(0, 0, 10.0, 20.0);
  t.set(0, 1, -15.0, 5.0);
  NeighborGraph g;
  g.adjacency = {{1}, {0}};
  SfTProblem prob{t, g, {}, K};
  prob.templateLengths.set(0, 1, 0.3);
  SfTResult r = reconstructSfT(prob);
  REQUIRE(r.perView[0].status == SolveStatus::Optimal);

  Eigen::Vector3d v1 = K.ray(t.homogeneous(0, 0));
  Eigen::Vector3d v2 = K.ray(t.homogeneous(0, 1));
  double expected = oracle::ellipsoidMax(v1, v2, 0.3);
  double got = r.depths.depth(0, 0) + r.depths.depth(0, 1);
  CHECK(std::abs(got - expected) < 1e-6 * expected);
}

TEST_CASE("template reconstruction recovers a bent grid") {
  SfTProblem prob = cylinderSfT(5, 7, 0.5);
  SceneParams p = SceneParams::defaults();
  p.gridRows = 5;
  p.gridCols = 7;
  p.radii = {0.5};
  GeneratedScene g = generateCylinderBend(p);

  SfTResult r = reconstructSfT(prob);
  REQUIRE(r.perView[0].status == SolveStatus::Optimal);
  double maxRel = 0.0;
  for (int i = 0; i < g.scene.numPoints(); ++i) {
    double rel = std::abs(r.depths.depth(0, i) - g.scene.gtDepth(0, i)) /
                 g.scene.gtDepth(0, i);
    maxRel = std::max(maxRel, rel);
  }
  CHECK(maxRel < 0.01);

  // The solution respects every encoded cone.
  double viol = maxConeViolation(prob.tracks, prob.graph, prob.templateLengths,
                                 prob.K, r.depths);
  CHECK(viol <= 1e-5);
}

TEST_CASE("views decouple: per-view results are independent") {
  SceneParams p = SceneParams::defaults();
  p.gridRows = 4;
  p.gridCols = 5;
  p.radii = {0.6, 1.0};
  GeneratedScene g = generateCylinderBend(p);
  SfTProblem both;
  both.tracks = g.tracks;
  both.graph = buildNeighborGraph(g.tracks, 4, 0);
  both.templateLengths = templateFor(g.scene, both.graph);
  both.K = g.scene.K;
  SfTResult rBoth = reconstructSfT(both);

  SfTProblem first = both;
  first.tracks = g.tracks.selectViews({0});
  SfTResult rFirst = reconstructSfT(first);
  for (int i = 0; i < g.scene.numPoints(); ++i)
    CHECK(rBoth.depths.depth(0, i) ==
          doctest::Approx(rFirst.depths.depth(0, i)).epsilon(1e-9));
}

TEST_CASE("disconnected graph is rejected with the component named") {
  TrackSet t(1, 4);
  for (int i = 0; i < 4; ++i) t.set(0, i, 10.0 * i, 0.0);
  NeighborGraph g;
  g.adjacency = {{1}, {0}, {3}, {2}};
  SfTProblem prob{t, g, {}, Intrinsics{100.0, 100.0}};
  prob.templateLengths.set(0, 1, 0.1);
  prob.templateLengths.set(2, 3, 0.1);
  CHECK_THROWS_AS(reconstructSfT(prob), DataError);
}

TEST_CASE("template-less: budget holds and shape matches up to scale") {
  SceneParams p = SceneParams::defaults();
  p.gridRows = 4;
  p.gridCols = 6;
  p.radii = {0.5, 0.9, 1.4};
  GeneratedScene g = generateCylinderBend(p);
  NrsfmProblem prob;
  prob.tracks = g.tracks;
  prob.graph = buildNeighborGraph(g.tracks, 4, 0);
  prob.Khat = g.scene.K;

  NrsfmResult r = reconstructNRSfM(prob);
  REQUIRE(r.solver.status == SolveStatus::Optimal);
  CHECK(r.d.directedSum() == doctest::Approx(1.0).epsilon(1e-5));

  // Align by one global scale; relative shape should be recovered.
  Reconstruction recon{g.tracks, r.depths, g.scene.K};
  EvalMetrics m = evaluate(recon, g.scene, Alignment::GlobalScale);
  CHECK(m.meanError / m.meanSceneDepth < 0.02);

  double viol = maxConeViolation(prob.tracks, prob.graph, r.d, prob.Khat,
                                 r.depths);
  CHECK(viol <= 1e-5);
}

TEST_CASE("template-less: never-co-visible edges are dropped with a warning") {
  TrackSet t(2, 4);
  for (int i = 0; i < 4; ++i) {
    t.set(0, i, 10.0 * i, 0.0);
    t.set(1, i, 10.0 * i, 1.0);
  }
  t.clear(0, 3);
  t.clear(1, 0);
  NeighborGraph g;
  // Edge (0,3) is never co-visible: 3 missing in view 0, 0 missing in view 1.
  g.adjacency = {{1, 3}, {0, 2}, {1, 3}, {0, 2}};
  NrsfmProblem prob{t, g, Intrinsics{100.0, 100.0, 0.0, 15.0, 0.0}};
  std::vector<std::string> warnings;
  ReconstructOptions opts;
  opts.warnings = &warnings;
  NrsfmResult r = reconstructNRSfM(prob, opts);
  REQUIRE(r.solver.status == SolveStatus::Optimal);
  CHECK_FALSE(r.d.has(0, 3));
  CHECK(warnings.size() == 1);
}

TEST_CASE("problem validation") {
  TrackSet t(1, 2);
  t.set(0, 0, 0.0, 0.0);
  t.set(0, 1, 1.0, 0.0);
  NeighborGraph g;
  g.adjacency = {{1}, {0}};
  NrsfmProblem single{t, g, Intrinsics{100.0, 100.0}};
  CHECK_THROWS_AS(single.validate(), DataError);  // needs at least two views

  SfTProblem noLen{t, g, {}, Intrinsics{100.0, 100.0}};
  CHECK_THROWS_AS(noLen.validate(), DataError);  // graph edge without a length
}

TEST_CASE("warm start reaches the same objective") {
  SceneParams p = SceneParams::defaults();
  p.gridRows = 3;
  p.gridCols = 5;
  p.radii = {0.5, 1.0};
  GeneratedScene g = generateCylinderBend(p);
  NrsfmProblem prob;
  prob.tracks = g.tracks;
  prob.graph = buildNeighborGraph(g.tracks, 3, 0);
  prob.Khat = g.scene.K;
  NrsfmResult cold = reconstructNRSfM(prob);
  REQUIRE(cold.solver.status == SolveStatus::Optimal);

  ReconstructOptions opts;
  opts.solver.warmX = cold.rawX;
  NrsfmResult warm = reconstructNRSfM(prob, opts);
  REQUIRE(warm.solver.status == SolveStatus::Optimal);
  CHECK(warm.depths.depth(0, 0) ==
        doctest::Approx(cold.depths.depth(0, 0)).epsilon(1e-4));
  // Iteration counts of warm starts are not monotone for a first-order
  // method; what matters is agreement of the optima.
  double coldSum = 0.0, warmSum = 0.0;
  for (int l = 0; l < g.tracks.numViews(); ++l)
    for (int i = 0; i < g.tracks.numPoints(); ++i)
      if (cold.depths.defined(l, i)) {
        coldSum += cold.depths.depth(l, i);
        warmSum += warm.depths.depth(l, i);
      }
  CHECK(warmSum == doctest::Approx(coldSum).epsilon(1e-6));
}
