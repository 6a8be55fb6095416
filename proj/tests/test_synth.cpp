#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "nrsfm/synth.hpp"

using namespace nrsfm;

TEST_CASE("cylinder bend is exactly isometric along the wrap") {
  SceneParams p = SceneParams::defaults();
  p.gridRows = 4;
  p.gridCols = 6;
  p.radii = {0.5};
  GeneratedScene g = generateCylinderBend(p);
  const SyntheticScene& s = g.scene;

  // Adjacent points along the wrapped direction: chord length of an arc of
  // length `spacing` on a radius-0.5 cylinder, identical for every pair.
  double r = 0.5;
  double chord = 2.0 * r * std::sin(p.spacing / (2.0 * r));
  for (int row = 0; row < p.gridRows; ++row)
    for (int col = 0; col + 1 < p.gridCols; ++col) {
      int i = row * p.gridCols + col, j = i + 1;
      double got = (s.gtPoints[0].col(i) - s.gtPoints[0].col(j)).norm();
      CHECK(got == doctest::Approx(chord).epsilon(1e-12));
      CHECK(s.templateDistance(i, j) == doctest::Approx(p.spacing));
    }
  // The straight direction is unbent: distances stay exactly `spacing`.
  for (int row = 0; row + 1 < p.gridRows; ++row) {
    int i = row * p.gridCols, j = i + p.gridCols;
    double got = (s.gtPoints[0].col(i) - s.gtPoints[0].col(j)).norm();
    CHECK(got == doctest::Approx(p.spacing).epsilon(1e-12));
  }
}

TEST_CASE("non-positive radius yields the flat grid") {
  SceneParams p = SceneParams::defaults();
  p.gridRows = 3;
  p.gridCols = 3;
  p.radii = {0.0};
  GeneratedScene g = generateCylinderBend(p);
  for (int i = 0; i < 9; ++i)
    for (int j = i + 1; j < 9; ++j) {
      double flat = g.scene.templateDistance(i, j);
      double got = (g.scene.gtPoints[0].col(i) - g.scene.gtPoints[0].col(j)).norm();
      CHECK(got == doctest::Approx(flat).epsilon(1e-12));
    }
}

TEST_CASE("radius below the developable limit is rejected") {
  SceneParams p = SceneParams::defaults();
  p.radii = {1e-3};  // wrap angle would exceed a full turn
  CHECK_THROWS_AS(generateCylinderBend(p), ConfigError);
}

TEST_CASE("projections land in the image and match the depths") {
  SceneParams p = SceneParams::defaults();
  GeneratedScene g = generateCylinderBend(p);
  const SyntheticScene& s = g.scene;
  for (int l = 0; l < s.numViews(); ++l)
    for (int i = 0; i < s.numPoints(); ++i) {
      REQUIRE(g.tracks.visible(l, i));
      Eigen::Vector2d px = g.tracks.pixel(l, i);
      CHECK(px.x() >= 0.0);
      CHECK(px.x() <= s.K.imageWidth);
      CHECK(px.y() >= 0.0);
      CHECK(px.y() <= s.K.imageHeight);
      // Reproject the ground-truth point: it must hit the stored pixel.
      Eigen::Vector3d X = s.gtPoints[l].col(i);
      Eigen::Vector3d u = s.K.matrix() * X;
      CHECK(u.z() == doctest::Approx(s.gtDepth(l, i)));
      CHECK((u.head<2>() / u.z() - px).norm() < 1e-9);
    }
}

TEST_CASE("same seed reproduces, different seed varies (with noise)") {
  SceneParams p = SceneParams::defaults();
  p.noiseSigma = 0.5;
  GeneratedScene a = generateCylinderBend(p);
  GeneratedScene b = generateCylinderBend(p);
  p.seed = 2;
  GeneratedScene c = generateCylinderBend(p);
  CHECK(a.tracks.pixel(0, 0) == b.tracks.pixel(0, 0));
  CHECK(a.tracks.pixel(0, 0) != c.tracks.pixel(0, 0));
}

TEST_CASE("hinge fold is isometric across the crease") {
  SceneParams p = SceneParams::defaults();
  p.gridRows = 3;
  p.gridCols = 5;
  p.foldAngles = {0.6};
  GeneratedScene g = generateHingeFold(p);
  const SyntheticScene& s = g.scene;
  // Neighbors within a row keep their template spacing exactly.
  for (int row = 0; row < p.gridRows; ++row)
    for (int col = 0; col + 1 < p.gridCols; ++col) {
      int i = row * p.gridCols + col, j = i + 1;
      double got = (s.gtPoints[0].col(i) - s.gtPoints[0].col(j)).norm();
      CHECK(got == doctest::Approx(p.spacing).epsilon(1e-12));
    }
}

TEST_CASE("evaluate: exact reconstruction scores zero, scale is recovered") {
  SceneParams p = SceneParams::defaults();
  p.gridRows = 4;
  p.gridCols = 4;
  GeneratedScene g = generateCylinderBend(p);
  Reconstruction recon;
  recon.tracks = g.tracks;
  recon.K = g.scene.K;
  recon.depths = DepthField::fromDepths(g.scene.gtDepth, g.tracks, g.scene.K);
  EvalMetrics exact = evaluate(recon, g.scene, Alignment::None);
  CHECK(exact.rmse < 1e-12);
  CHECK(exact.count == g.scene.numViews() * g.scene.numPoints());

  recon.depths = DepthField::fromDepths(0.25 * g.scene.gtDepth, g.tracks, g.scene.K);
  EvalMetrics scaled = evaluate(recon, g.scene, Alignment::GlobalScale);
  CHECK(scaled.scale == doctest::Approx(4.0).epsilon(1e-9));
  CHECK(scaled.rmse < 1e-10);
}

TEST_CASE("intrinsics error metrics") {
  Intrinsics gt{500.0, 500.0, 0.0, 320.0, 240.0, 640.0, 480.0};
  Intrinsics est{550.0, 550.0, 0.0, 320.0, 240.0, 640.0, 480.0};
  CHECK(focalErrorPercent(est, gt) == doctest::Approx(10.0));
  CHECK(principalPointError(est, gt) == doctest::Approx(0.0));
  est.cx = 320.0 + 80.0;  // diagonal is 800
  CHECK(principalPointError(est, gt) == doctest::Approx(0.1));
}

TEST_CASE("visibility drops keep the track invariants") {
  SceneParams p = SceneParams::defaults();
  p.visibilityDropRate = 0.3;
  GeneratedScene g = generateCylinderBend(p);
  CHECK_NOTHROW(g.tracks.validate());
  int missing = 0;
  for (int l = 0; l < g.tracks.numViews(); ++l)
    missing += g.scene.numPoints() - g.tracks.visibleCountInView(l);
  CHECK(missing > 0);
}
