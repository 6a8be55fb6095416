#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "nrsfm/geometry.hpp"
#include "nrsfm/mdh.hpp"

namespace nrsfm {

/// gamma = (2 a_i a_j / (a_i^2 + a_j^2 - d^2))^2, the squared secant of the
/// angle between two sightlines holding points at ranges a_i, a_j exactly a
/// chord d apart (law of cosines). Always >= 1 when defined. Throws
/// DataError when a_i^2 + a_j^2 == d^2 (right-angle sightlines).
double gammaFromPair(double ai, double aj, double d);

/// A point pair with a known rigid distance, carrying everything the IAC
/// equation needs. Construction rejects non-positive ranges and the
/// zero-denominator gamma case.
struct RigidPair {
  int i = -1, j = -1;
  Eigen::Vector3d ui = Eigen::Vector3d::Zero();  // homogeneous pixels
  Eigen::Vector3d uj = Eigen::Vector3d::Zero();
  double ai = 0.0, aj = 0.0;  // ranges
  double d = 0.0;             // rigid distance
  double gamma = 0.0;

  static RigidPair make(int i, int j, const Eigen::Vector3d& ui,
                        const Eigen::Vector3d& uj, double ai, double aj,
                        double d);
};

struct IACCandidate {
  IAC omega;
  /// Max equation residual over the pairs, measured on unit-normalized
  /// pixel directions (the equation is homogeneous in each pixel).
  double residual = 0.0;
  bool positiveDefinite = false;
  /// The equation Jacobian is singular at the solution (degenerate pairs).
  bool rankDeficient = false;
};

/// All found solutions of
///   (u_i' W u_i)(u_j' W u_j) = gamma_ij (u_i' W u_j)^2
/// over the five pairs, for symmetric W with w33 = 1, from damped
/// least-squares iterations at `starts` random positive definite guesses.
/// Deduplicated; possibly empty when nothing converges.
std::vector<IACCandidate> solveIACMinimal(const std::vector<RigidPair>& pairs,
                                          std::uint64_t seed = 7,
                                          int starts = 20);

/// K from Omega = K^-T K^-1 by Cholesky, normalized to k33 = 1. Throws
/// DataError when Omega is not positive definite.
Intrinsics intrinsicsFromIAC(const IAC& omega, double imageWidth = 0.0,
                             double imageHeight = 0.0);

/// Template fit of the upgraded distances under K, summed over directed
/// neighbor pairs in every view where both endpoints carry a range:
///   Phi_T(K) = sum_l sum_i sum_{j in N(i)} (d_ij - dhat_ij^l(K))^2.
/// Ranges are intrinsics-invariant, so scoring a hypothesis needs no
/// explicit upgrade of the depth field.
double templateResidual(const Intrinsics& K, const TrackSet& tracks,
                        const NeighborGraph& graph, const DepthField& field,
                        const EdgeLengths& templateLengths);

struct RefineResult {
  Intrinsics K;
  std::vector<double> objectiveTrace;  // accepted iterates, non-increasing
  bool converged = false;
};

/// Damped least-squares descent on (fx, fy, skew, cx, cy) minimizing the
/// template fit plus a structural prior (principal point near the image
/// center, unit aspect ratio). The prior lives in image-normalized
/// coordinates (origin at the center, unit half-diagonal) and the fit
/// compares unit-budget distances (template and each view's measurements
/// rescaled to a unit directed sum), so the terms are commensurate.
/// A failed descent returns the best iterate with a warning.
RefineResult refineIntrinsics(const Intrinsics& K0, const TrackSet& tracks,
                              const NeighborGraph& graph,
                              const DepthField& field,
                              const EdgeLengths& templateLengths,
                              std::vector<std::string>* warnings = nullptr);

struct HypothesisRecord {
  Intrinsics K;
  double equationResidual = 0.0;
  double score = 0.0;  // template fit of the upgraded reconstruction
  bool positiveDefinite = false;
};

struct TemplateCalibOptions {
  int hypothesisSets = 200;
  std::uint64_t seed = 12345;
  int maxOuterIterations = 10;
  double focalTol = 0.01;  // relative focal change that ends the outer loop
  ReconstructOptions reconstruct;
  std::vector<std::string>* warnings = nullptr;
};

struct TemplateCalibResult {
  Intrinsics K;
  std::vector<HypothesisRecord> hypotheses;  // scored, last outer iteration
  std::vector<double> refineTrace;           // last refinement pass
  std::vector<double> focalHistory;          // per outer iteration
  int outerIterations = 0;
};

/// Template-based calibration: reconstruct under the current guess, generate
/// intrinsics hypotheses from minimal sets of closest point pairs, validate
/// each by the template fit of its upgraded reconstruction, refine the best,
/// and repeat from the refined intrinsics until the focal settles. When
/// every hypothesis is rejected the guess itself is refined, with a warning.
TemplateCalibResult calibrateWithTemplate(const TrackSet& tracks,
                                          const NeighborGraph& graph,
                                          const EdgeLengths& templateLengths,
                                          const Intrinsics& Khat,
                                          const TemplateCalibOptions& opts = {});

}  // namespace nrsfm
