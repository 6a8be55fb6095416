// Independent oracles used by the tests. These deliberately avoid the
// library's own code paths for the quantities they check.
#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <random>
#include <vector>

#include "nrsfm/conic.hpp"

namespace oracle {

// All-pairs shortest paths by Floyd-Warshall on a dense weight matrix
// (infinity where no edge).
inline Eigen::MatrixXd floydWarshall(Eigen::MatrixXd w) {
  const int n = static_cast<int>(w.rows());
  for (int i = 0; i < n; ++i) w(i, i) = 0.0;
  for (int k = 0; k < n; ++k)
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j)
        w(i, j) = std::min(w(i, j), w(i, k) + w(k, j));
  return w;
}

// Brute-force k nearest neighbors by pixel distance, ties by lowest index.
inline std::vector<int> bruteKnn(const std::vector<Eigen::Vector2d>& pts,
                                 int self, int k) {
  std::vector<std::pair<double, int>> d;
  for (int i = 0; i < static_cast<int>(pts.size()); ++i)
    if (i != self) d.emplace_back((pts[i] - pts[self]).squaredNorm(), i);
  std::sort(d.begin(), d.end());
  std::vector<int> out;
  for (int t = 0; t < k && t < static_cast<int>(d.size()); ++t)
    out.push_back(d[t].second);
  return out;
}

// Closed-form optimum of  max l1 + l2  s.t. ||l1 v1 - l2 v2|| <= d  for
// non-parallel v1, v2: the maximum of c'l over the ellipsoid l'Ql <= d^2
// with Q the Gram matrix of (v1, -v2), which is d * sqrt(c' Q^-1 c).
inline double ellipsoidMax(const Eigen::Vector3d& v1, const Eigen::Vector3d& v2,
                           double d) {
  Eigen::Matrix<double, 3, 2> B;
  B.col(0) = v1;
  B.col(1) = -v2;
  Eigen::Matrix2d Q = B.transpose() * B;
  Eigen::Vector2d c(1.0, 1.0);
  return d * std::sqrt(c.dot(Q.inverse() * c));
}

// Builds the corresponding two-variable cone program.
inline nrsfm::ConicProgram ellipsoidProgram(const Eigen::Vector3d& v1,
                                            const Eigen::Vector3d& v2,
                                            double d) {
  nrsfm::ConicProgram p;
  p.c = Eigen::VectorXd::Zero(3);
  p.c[0] = p.c[1] = -1.0;  // maximize l1 + l2
  std::vector<Eigen::Triplet<double>> trip;
  trip.emplace_back(0, 2, 1.0);  // t = 1
  trip.emplace_back(1, 2, -d);   // head: s0 = d t
  for (int k = 0; k < 3; ++k) {
    trip.emplace_back(2 + k, 0, -v1[k]);
    trip.emplace_back(2 + k, 1, v2[k]);
  }
  p.A.resize(5, 3);
  p.A.setFromTriplets(trip.begin(), trip.end());
  p.b = Eigen::VectorXd::Zero(5);
  p.b[0] = 1.0;
  p.cones.push_back({nrsfm::ConeSpec::Zero, 1});
  p.cones.push_back({nrsfm::ConeSpec::SecondOrder, 4});
  return p;
}

// Random feasible *and bounded* cone program: b is built from a feasible
// primal point, c from a dual-feasible certificate.
inline nrsfm::ConicProgram randomBoundedSocp(std::mt19937_64& rng, int n,
                                             int numSoc, int socDim) {
  std::normal_distribution<double> g(0.0, 1.0);
  const int m = 1 + numSoc * socDim;  // one equality row plus the cones
  Eigen::MatrixXd A(m, n);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) A(i, j) = g(rng);
  Eigen::VectorXd x0(n);
  for (int j = 0; j < n; ++j) x0[j] = g(rng);
  Eigen::VectorXd s0 = Eigen::VectorXd::Zero(m);
  Eigen::VectorXd y0 = Eigen::VectorXd::Zero(m);
  y0[0] = g(rng);
  int r = 1;
  for (int k = 0; k < numSoc; ++k) {
    Eigen::VectorXd z(socDim);
    for (int i = 0; i < socDim; ++i) z[i] = g(rng);
    z[0] = z.tail(socDim - 1).norm() + std::abs(z[0]);  // inside the cone
    s0.segment(r, socDim) = z;
    Eigen::VectorXd w(socDim);
    for (int i = 0; i < socDim; ++i) w[i] = g(rng);
    w[0] = w.tail(socDim - 1).norm() + std::abs(w[0]);
    y0.segment(r, socDim) = w;
    r += socDim;
  }
  nrsfm::ConicProgram p;
  p.A = A.sparseView();
  p.b = A * x0 + s0;
  p.c = -A.transpose() * y0;  // makes the dual feasible, hence bounded
  p.cones.push_back({nrsfm::ConeSpec::Zero, 1});
  for (int k = 0; k < numSoc; ++k)
    p.cones.push_back({nrsfm::ConeSpec::SecondOrder, socDim});
  return p;
}

}  // namespace oracle
