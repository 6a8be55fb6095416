#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <random>

#include "nrsfm/geometry.hpp"
#include "nrsfm/graph.hpp"
#include "nrsfm/intrinsics.hpp"
#include "nrsfm/tracks.hpp"
#include "oracles.hpp"

using namespace nrsfm;

TEST_CASE("intrinsics inverse round trip") {
  Intrinsics K{500.0, 510.0, 0.3, 320.0, 240.0, 640.0, 480.0};
  Eigen::Matrix3d I = K.matrix() * K.inverse();
  CHECK((I - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff() < 1e-12);
  CHECK_THROWS_AS((Intrinsics{-1.0, 1.0}.validate()), DataError);
}

TEST_CASE("IAC basics") {
  Intrinsics K{800.0, 800.0, 0.0, 320.0, 240.0};
  IAC iac = IAC::fromIntrinsics(K);
  CHECK(iac.omega(2, 2) == doctest::Approx(1.0));
  CHECK(iac.isPositiveDefinite());
  CHECK((iac.omega - iac.omega.transpose()).cwiseAbs().maxCoeff() < 1e-15);

  Eigen::Matrix3d bad = iac.omega;
  bad(0, 0) = -1.0;
  CHECK_FALSE(IAC::fromMatrix(bad).isPositiveDefinite());
}

TEST_CASE("track set invariants at load") {
  TrackSet t(2, 3);
  t.set(0, 0, 1, 1);
  t.set(0, 1, 2, 2);
  t.set(1, 0, 1, 1);
  // point 2 never visible
  CHECK_THROWS_AS(t.validate(), DataError);
  t.set(0, 2, 3, 3);
  // view 1 has a single visible point
  CHECK_THROWS_AS(t.validate(), DataError);
  t.set(1, 2, 3, 3);
  CHECK_NOTHROW(t.validate());
}

TEST_CASE("tracks csv round trip") {
  TrackSet t(2, 2);
  t.set(0, 0, 1.5, 2.25);
  t.set(0, 1, 3.0, 4.0);
  t.set(1, 0, 5.0, 6.0);
  t.set(1, 1, 7.0, 8.0);
  t.saveCsv("tracks_roundtrip.csv");
  TrackSet u = TrackSet::loadCsv("tracks_roundtrip.csv");
  CHECK(u.numViews() == 2);
  CHECK(u.pixel(0, 0) == Eigen::Vector2d(1.5, 2.25));
}

TEST_CASE("two points, k=1: each is the other's neighbor") {
  TrackSet t(1, 2);
  t.set(0, 0, 0, 0);
  t.set(0, 1, 5, 0);
  NeighborGraph g = buildNeighborGraph(t, 1, 0);
  CHECK(g.adjacency[0] == std::vector<int>{1});
  CHECK(g.adjacency[1] == std::vector<int>{0});
  CHECK(g.isSymmetric());
}

TEST_CASE("3x3 unit grid, k=4") {
  TrackSet t(1, 9);
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) t.set(0, r * 3 + c, c, r);
  NeighborGraph g = buildNeighborGraph(t, 4, 0);

  // Interior point 4: its four axis-aligned neighbors (diagonals farther).
  std::vector<Eigen::Vector2d> pix;
  for (int i = 0; i < 9; ++i) pix.push_back(t.pixel(0, i));
  std::vector<int> expected = oracle::bruteKnn(pix, 4, 4);
  std::sort(expected.begin(), expected.end());
  // Closure may add more edges; the brute-force neighbors must be present.
  for (int j : expected) CHECK(g.hasEdge(4, j));

  // Corner 0: distances 1, 1, sqrt2, then a tie at 2 broken by lowest index.
  std::vector<int> corner = oracle::bruteKnn(pix, 0, 4);
  std::sort(corner.begin(), corner.end());
  CHECK(corner == std::vector<int>{1, 2, 3, 4});  // 2 beats 6 on the tie at 2
  for (int j : corner) CHECK(g.hasEdge(0, j));
  CHECK(g.isSymmetric());
}

TEST_CASE("graph closure keeps degree >= k and symmetry on random inputs") {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.0, 100.0);
  for (int trial = 0; trial < 5; ++trial) {
    int n = 20;
    TrackSet t(1, n);
    for (int i = 0; i < n; ++i) t.set(0, i, u(rng), u(rng));
    int k = 3;
    NeighborGraph g = buildNeighborGraph(t, k, 0);
    CHECK(g.isSymmetric());
    for (int i = 0; i < n; ++i) {
      CHECK(static_cast<int>(g.adjacency[i].size()) >= k);
      CHECK_FALSE(g.hasEdge(i, i));
    }
  }
}

TEST_CASE("upgradedDistance examples and properties") {
  Intrinsics K{500.0, 500.0, 0.0, 0.0, 0.0};
  Eigen::Vector3d u1(0, 0, 1), u2(500, 0, 1);

  CHECK(upgradedDistance(K, 1.0, 1.0, u1, u1) == doctest::Approx(0.0));
  CHECK(upgradedDistance(K, 2.0, 1.0, u1, u1) == doctest::Approx(1.0));
  // Rays (0,0,1) and (1,0,1): ranges 1 and sqrt2 place them at unit offset.
  CHECK(upgradedDistance(K, 1.0, std::sqrt(2.0), u1, u2) ==
        doctest::Approx(1.0).epsilon(1e-12));

  // Invariance to positive rescaling of the homogeneous inputs.
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0.1, 10.0);
  for (int trial = 0; trial < 50; ++trial) {
    Eigen::Vector3d a(u(rng), u(rng), 1.0), b(u(rng), u(rng), 1.0);
    double ai = u(rng), aj = u(rng);
    double d1 = upgradedDistance(K, ai, aj, a, b);
    double d2 = upgradedDistance(K, ai, aj, Eigen::Vector3d(u(rng) * a),
                                 Eigen::Vector3d(u(rng) * b));
    CHECK(d1 == doctest::Approx(d2).epsilon(1e-10));
    CHECK(upgradedDistance(K, ai, ai, a, a) == doctest::Approx(0.0));
  }
}

TEST_CASE("geodesics: chain and direct edge") {
  NeighborGraph g;
  g.adjacency = {{1}, {0, 2}, {1}};
  EdgeLengths d;
  d.set(0, 1, 1.0);
  d.set(1, 2, 2.0);
  Eigen::MatrixXd dist = geodesics(g, d, {0, 1, 2});
  CHECK(dist(0, 2) == doctest::Approx(3.0));
  CHECK(dist(0, 0) == 0.0);
  CHECK(dist(0, 1) == doctest::Approx(1.0));  // direct edge wins
  CHECK(dist(2, 0) == doctest::Approx(dist(0, 2)));
}

TEST_CASE("geodesics: unreachable is distinguished from zero") {
  NeighborGraph g;
  g.adjacency = {{1}, {0}, {}};
  EdgeLengths d;
  d.set(0, 1, 1.0);
  Eigen::MatrixXd dist = geodesics(g, d, {0});
  CHECK(dist(0, 2) == kUnreachable);
}

TEST_CASE("geodesics match Floyd-Warshall on a random 20-node graph") {
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> w(0.1, 5.0);
  const int n = 20;
  Eigen::MatrixXd wm =
      Eigen::MatrixXd::Constant(n, n, std::numeric_limits<double>::infinity());
  NeighborGraph g;
  g.adjacency.assign(n, {});
  EdgeLengths d;
  // Ring plus random chords keeps it connected.
  auto addEdge = [&](int i, int j, double len) {
    if (i == j || d.has(i, j)) return;
    g.adjacency[i].push_back(j);
    g.adjacency[j].push_back(i);
    d.set(i, j, len);
    wm(i, j) = wm(j, i) = len;
  };
  for (int i = 0; i < n; ++i) addEdge(i, (i + 1) % n, w(rng));
  for (int e = 0; e < 25; ++e)
    addEdge(static_cast<int>(rng() % n), static_cast<int>(rng() % n), w(rng));
  for (auto& a : g.adjacency) std::sort(a.begin(), a.end());

  Eigen::MatrixXd fw = oracle::floydWarshall(wm);
  std::vector<int> all(n);
  for (int i = 0; i < n; ++i) all[i] = i;
  Eigen::MatrixXd dj = geodesics(g, d, all);
  CHECK((dj - fw).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("edge lengths csv round trip and negativity check") {
  EdgeLengths d;
  d.set(0, 1, 0.5);
  d.set(1, 2, 0.25);
  d.saveCsv("edges_roundtrip.csv");
  EdgeLengths e = EdgeLengths::loadCsv("edges_roundtrip.csv");
  CHECK(e.at(0, 1) == doctest::Approx(0.5));
  CHECK(e.directedSum() == doctest::Approx(1.5));
  CHECK_THROWS_AS(d.set(0, 2, -1.0), DataError);
  CHECK_THROWS_AS(e.at(5, 6), DataError);
}
