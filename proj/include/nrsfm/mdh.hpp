#pragma once

#include <optional>
#include <string>
#include <vector>

#include "nrsfm/conic.hpp"
#include "nrsfm/geometry.hpp"
#include "nrsfm/graph.hpp"

namespace nrsfm {

/// Template-based reconstruction input: known per-edge geodesics d_ij.
struct SfTProblem {
  TrackSet tracks;
  NeighborGraph graph;
  EdgeLengths templateLengths;
  Intrinsics K;

  void validate() const;
};

/// Template-less reconstruction input: V >= 2 views, fixed intrinsics guess.
struct NrsfmProblem {
  TrackSet tracks;
  NeighborGraph graph;
  Intrinsics Khat;

  void validate() const;
};

struct ReconstructOptions {
  SolveOptions solver;
  std::string backend = "reference";
  /// Collects non-fatal notes (dropped edges etc.) when set.
  std::vector<std::string>* warnings = nullptr;
};

/// Variable/constraint bookkeeping after discarding missing observations:
/// depth variables exist only for visible (view, point) pairs, and a cone
/// constraint exists only where both edge endpoints are visible in the view.
struct PrunedLayout {
  Eigen::MatrixXi depthVar;  // V x N, -1 where pruned
  std::vector<std::vector<std::pair<int, int>>> viewEdges;
  int numDepthVars = 0;
  long long numConeConstraints = 0;
};

PrunedLayout pruneMissing(const TrackSet& tracks, const NeighborGraph& graph);

struct SfTResult {
  DepthField depths;
  std::vector<SolverResult> perView;
  double objective = 0.0;
};

/// Maximum-depth reconstruction with a known template: per view, maximize
/// the depth sum subject to ||K^-1(l_i u_i - l_j u_j)|| <= d_ij on graph
/// edges. Views decouple and are solved independently.
SfTResult reconstructSfT(const SfTProblem& problem,
                         const ReconstructOptions& opts = {});

struct NrsfmResult {
  DepthField depths;
  EdgeLengths d;
  SolverResult solver;
  Eigen::VectorXd rawX;  // for warm-starting re-reconstructions
};

/// Template-less maximum-depth reconstruction: one coupled program over all
/// views, joint in depths and edge lengths, with the unit distance budget
/// (sum over directed neighbor pairs of d_ij equals 1).
NrsfmResult reconstructNRSfM(const NrsfmProblem& problem,
                             const ReconstructOptions& opts = {});

/// Max over all encoded cones of ||K^-1(l_i u_i - l_j u_j)|| - d_ij.
/// Negative means every constraint holds strictly.
double maxConeViolation(const TrackSet& tracks, const NeighborGraph& graph,
                        const EdgeLengths& lengths, const Intrinsics& K,
                        const DepthField& depths);

}  // namespace nrsfm
