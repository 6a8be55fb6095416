#pragma once

#include <optional>
#include <string>
#include <vector>

#include "nrsfm/mdh.hpp"
#include "nrsfm/upgrade.hpp"

namespace nrsfm {

/// Cross-view isometric-consistency misfit of a reconstruction's upgraded
/// distances under hypothesis K:
///   Phi(K) = sum_k sum_{l != k} sum_i sum_{j in N(i)} (dhat_ij^k - dhat_ij^l)^2
/// over edges measured in both views, with each view's distances rescaled to
/// a unit directed sum before differencing. Geodesic mode substitutes
/// shortest-path lengths over the view's measured edges for the direct
/// distances. A single view yields 0; two or more views with no shared edge
/// is a DataError.
double isometryConsistency(const Intrinsics& K, const TrackSet& tracks,
                           const NeighborGraph& graph, const DepthField& field,
                           DistanceMode mode = DistanceMode::Euclidean);

struct FocalRefineResult {
  Intrinsics K;        // input intrinsics with fx = fy moved to the minimizer
  double phi = 0.0;    // consistency at the refined focal
  double delta = 0.0;  // |f* - fhat| / fhat
  bool moved = false;  // false when the objective is flat over the bracket
};

/// Bounded minimization of the consistency misfit over the focal alone,
/// log-parameterized on [fhat/4, 4*fhat]: coarse grid then golden-section
/// around the best cell. No re-reconstruction happens inside the search;
/// distances come from the upgrade of the given field. A non-finite misfit
/// anywhere in the bracket raises NumericalError naming the focal.
FocalRefineResult refineFocal(const Intrinsics& Khat, const TrackSet& tracks,
                              const NeighborGraph& graph,
                              const DepthField& field,
                              DistanceMode mode = DistanceMode::Euclidean);

/// One sweep iteration: the guess it started from, the refinement outcome,
/// and the solve that produced the reconstruction.
struct SweepRecord {
  double focal = 0.0;      // guess reconstructed under
  double phi = 0.0;        // misfit at the refined focal
  double delta = 0.0;      // relative focal movement of the refinement
  int flag = 0;            // sweep-direction bit when the iteration ran
  int solverIterations = 0;
  double solveSeconds = 0.0;
};

struct SweepOptions {
  /// Step size of the sweep phase, as a fraction of the current focal.
  double stepFraction = 0.05;
  /// Relative focal movement below which a reconstruction counts as
  /// isometrically consistent (no upgrade favored).
  double consistencyTol = 0.08;
  int maxIterations = 30;
  /// Distance mode; unset picks geodesic when the mean graph degree is
  /// below 6 and euclidean otherwise.
  std::optional<DistanceMode> mode;
  ReconstructOptions reconstruct;
  std::vector<std::string>* warnings = nullptr;
};

struct SweepResult {
  Intrinsics K;
  std::vector<SweepRecord> history;  // one entry per iteration, in order
  bool hitCap = false;  // stopped by the iteration cap (best-so-far returned)
};

/// Focal-length sweep without a template. Only the focal is estimated:
/// fx = fy throughout, principal point and skew stay at the guess. Each
/// iteration reconstructs under the current guess (warm-started) and refines
/// the focal against the consistency misfit; a small movement from an
/// unmoved sweep returns the refined focal, a small movement otherwise steps
/// the sweep downward, a large upward movement is adopted, and a large
/// downward movement — the signature of the degenerate wide-angle regime,
/// where reconstructions turn mutually consistent again — steps the guess
/// upward instead of being followed.
SweepResult calibrateWithoutTemplate(const TrackSet& tracks,
                                     const NeighborGraph& graph,
                                     const Intrinsics& Khat0,
                                     const SweepOptions& opts = {});

}  // namespace nrsfm
