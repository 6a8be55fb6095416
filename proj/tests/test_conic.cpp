#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <random>

#include "nrsfm/conic.hpp"
#include "nrsfm/errors.hpp"
#include "oracles.hpp"

using namespace nrsfm;

TEST_CASE("validate rejects malformed programs") {
  ConicProgram p;
  p.c = Eigen::VectorXd::Zero(1);
  p.b = Eigen::VectorXd::Zero(2);
  p.A.resize(2, 1);
  std::vector<Eigen::Triplet<double>> trip{{0, 0, 1.0}};
  p.A.setFromTriplets(trip.begin(), trip.end());
  p.cones.push_back({ConeSpec::SecondOrder, 2});
  CHECK_THROWS_AS(p.validate(), DataError);  // all-zero row 1

  trip.emplace_back(1, 0, 1.0);
  p.A.setFromTriplets(trip.begin(), trip.end());
  CHECK_NOTHROW(p.validate());

  p.cones[0].dim = 3;  // does not tile the rows
  CHECK_THROWS_AS(p.validate(), DataError);
  p.cones[0].dim = 0;
  CHECK_THROWS_AS(p.validate(), DataError);
}

TEST_CASE("nonnegativity: minimize x s.t. x >= 0") {
  ConicProgram p;
  p.c = Eigen::VectorXd::Ones(1);
  p.b = Eigen::VectorXd::Zero(1);
  std::vector<Eigen::Triplet<double>> trip{{0, 0, -1.0}};
  p.A.resize(1, 1);
  p.A.setFromTriplets(trip.begin(), trip.end());
  p.cones.push_back({ConeSpec::SecondOrder, 1});
  SolverResult r = solve(p);
  REQUIRE(r.status == SolveStatus::Optimal);
  CHECK(std::abs(r.x[0]) < 1e-6);
}

TEST_CASE("two-variable MDH instance matches the closed form") {
  Eigen::Vector3d v1(0.1, 0.2, 1.0), v2(-0.15, 0.05, 1.0);
  double d = 0.3;
  ConicProgram p = oracle::ellipsoidProgram(v1, v2, d);
  SolverResult r = solve(p);
  REQUIRE(r.status == SolveStatus::Optimal);
  double expected = oracle::ellipsoidMax(v1, v2, d);
  CHECK(std::abs((r.x[0] + r.x[1]) - expected) < 1e-6 * expected);
}

TEST_CASE("hand-built infeasible instance is certified") {
  // ||l1 v1 - l2 v2|| <= d with l1 pinned so far out that no l2 helps:
  // the distance from l1 v1 to the v2 ray exceeds d.
  Eigen::Vector3d v1(1.0, 0.3, 1.0), v2(0.0, 0.1, 1.0);
  double d = 0.1;
  ConicProgram p = oracle::ellipsoidProgram(v1, v2, d);
  // Append equality l1 = 2: the distance from 2*v1 to the v2 ray far
  // exceeds d, so no l2 can satisfy the cone.
  ConicProgram q = p;
  std::vector<Eigen::Triplet<double>> trip;
  for (int k = 0; k < q.A.outerSize(); ++k)
    for (Eigen::SparseMatrix<double>::InnerIterator it(q.A, k); it; ++it)
      trip.emplace_back(it.row(), it.col(), it.value());
  trip.emplace_back(q.A.rows(), 0, 1.0);
  q.A.resize(q.A.rows() + 1, 3);
  q.A.setFromTriplets(trip.begin(), trip.end());
  q.b.conservativeResize(q.b.size() + 1);
  q.b[q.b.size() - 1] = 2.0;
  q.cones.push_back({ConeSpec::Zero, 1});
  SolverResult r = solve(q);
  CHECK(r.status == SolveStatus::PrimalInfeasible);
}

TEST_CASE("cone relaxation monotonicity") {
  Eigen::Vector3d v1(0.2, -0.1, 1.0), v2(-0.1, 0.25, 1.0);
  double prev = 0.0;
  for (double d : {0.1, 0.2, 0.5, 1.0}) {
    SolverResult r = solve(oracle::ellipsoidProgram(v1, v2, d));
    REQUIRE(r.status == SolveStatus::Optimal);
    double obj = r.x[0] + r.x[1];
    CHECK(obj >= prev - 1e-8);
    prev = obj;
  }
}

TEST_CASE("scaling equivariance") {
  Eigen::Vector3d v1(0.2, -0.1, 1.0), v2(-0.1, 0.25, 1.0);
  SolverResult r1 = solve(oracle::ellipsoidProgram(v1, v2, 0.3));
  SolverResult r2 = solve(oracle::ellipsoidProgram(v1, v2, 3.0 * 0.3));
  REQUIRE(r1.status == SolveStatus::Optimal);
  REQUIRE(r2.status == SolveStatus::Optimal);
  CHECK(std::abs(r2.x[0] - 3.0 * r1.x[0]) < 10 * 1e-7 * std::abs(r2.x[0]));
  CHECK(std::abs(r2.x[1] - 3.0 * r1.x[1]) < 10 * 1e-7 * std::abs(r2.x[1]));
}

TEST_CASE("optimal solutions respect the cones") {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    ConicProgram p = oracle::randomBoundedSocp(rng, 6, 2, 3);
    SolverResult r = solve(p);
    REQUIRE(r.status == SolveStatus::Optimal);
    Eigen::VectorXd s = p.b - p.A * r.x;
    int row = 0;
    for (const ConeSpec& cone : p.cones) {
      if (cone.kind == ConeSpec::Zero) {
        CHECK(s.segment(row, cone.dim).cwiseAbs().maxCoeff() <= 1e-5);
      } else {
        double head = s[row];
        double tail = cone.dim > 1 ? s.segment(row + 1, cone.dim - 1).norm() : 0.0;
        CHECK(head - tail >= -1e-5);
      }
      row += cone.dim;
    }
  }
}

TEST_CASE("backend registry") {
  Eigen::Vector3d v1(0.1, 0.2, 1.0), v2(-0.15, 0.05, 1.0);
  ConicProgram p = oracle::ellipsoidProgram(v1, v2, 0.3);
  SolverResult a = solve(p);
  SolverResult b = solveBackend(p, "reference");
  REQUIRE(a.status == SolveStatus::Optimal);
  CHECK(a.objective(p) == doctest::Approx(b.objective(p)).epsilon(1e-12));

  CHECK_THROWS_AS(solveBackend(p, "nosuch"), ConfigError);

  // A second backend: the same engine under different internal parameters.
  registerBackend("reference-tuned", [](const ConicProgram& q, const SolveOptions& o) {
    SolveOptions o2 = o;
    o2.rho = 0.3;
    o2.relaxation = 1.0;
    return solve(q, o2);
  });
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    ConicProgram q = oracle::randomBoundedSocp(rng, 5, 2, 3);
    SolverResult r1 = solveBackend(q, "reference");
    SolverResult r2 = solveBackend(q, "reference-tuned");
    REQUIRE(r1.status == SolveStatus::Optimal);
    REQUIRE(r2.status == SolveStatus::Optimal);
    double o1 = r1.objective(q), o2 = r2.objective(q);
    CHECK(std::abs(o1 - o2) <= 1e-5 * std::max(1.0, std::abs(o1)));
  }
}

TEST_CASE("maxIter is reported, not silently optimal") {
  Eigen::Vector3d v1(0.1, 0.2, 1.0), v2(-0.15, 0.05, 1.0);
  ConicProgram p = oracle::ellipsoidProgram(v1, v2, 0.3);
  SolveOptions o;
  o.maxIter = 3;
  SolverResult r = solve(p, o);
  CHECK(r.status == SolveStatus::MaxIterations);
  CHECK(r.x.allFinite());
}

TEST_CASE("json debug dump") {
  Eigen::Vector3d v1(0.1, 0.2, 1.0), v2(-0.15, 0.05, 1.0);
  ConicProgram p = oracle::ellipsoidProgram(v1, v2, 0.3);
  p.dumpJson("conic_dump_test.json");
  std::ifstream in("conic_dump_test.json");
  CHECK(in.good());
}
