#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "nrsfm/calib_template.hpp"
#include "nrsfm/mdh.hpp"

namespace nrsfm {

/// Growing an existing reconstruction by a disjoint set of new points.
/// One index space covers everything: the base depth field is defined
/// exactly on the already-reconstructed points P, and `newPoints` lists the
/// points Q to add (no depth yet, disjoint from P).
struct AugmentProblem {
  TrackSet tracks;             // all points, all views
  NeighborGraph graph;         // over the same index space
  DepthField baseDepths;       // defined on P, undefined on Q
  std::vector<int> newPoints;  // Q
  Intrinsics Khat;

  void validate() const;
};

struct AugmentResult {
  /// Joint field: the base depths rescaled by alpha, the new points filled.
  DepthField depths;
  double alpha = 1.0;
  /// Solved distance bounds on edges with at least one new endpoint.
  EdgeLengths e;
  SolverResult solver;
};

/// Consistent extension of a reconstruction: jointly maximize the rescaled
/// base depth sum alpha*Lambda and the new depth sum, subject to cones
///   ||Khat^-1 (zeta_i u_i - alpha lambda_j u_j)|| <= e_ij  (old neighbor j)
///   ||Khat^-1 (zeta_i u_i - zeta_j  u_j)||        <= e_ij  (new neighbor j)
/// in every co-visible view, the budget sum_i sum_{j in Nq(i)} e_ij = 1-alpha
/// over directed pairs with a new second endpoint (new-new edges twice,
/// new-old edges once, from the old side), and 0 <= alpha <= 1. An empty Q
/// returns alpha = 1 with the base unchanged.
AugmentResult addPoints(const AugmentProblem& problem,
                        const ReconstructOptions& opts = {});

/// Per-edge template harvested from a reconstruction: the median over views
/// of the 3D edge length. Edges never co-visible with both depths defined
/// are excluded with a warning. `extraPairs` requests additional point pairs
/// whose lengths are filled by shortest paths over the measured edges;
/// unreachable pairs are skipped with a warning.
EdgeLengths selfTemplate(const Reconstruction& recon, const NeighborGraph& graph,
                         const std::vector<std::pair<int, int>>& extraPairs = {},
                         std::vector<std::string>* warnings = nullptr);

struct AddViewsOptions {
  /// Estimate intrinsics from the new views against the self-template
  /// before reconstructing (for cameras with unknown calibration).
  bool calibrate = false;
  TemplateCalibOptions calibration;
  ReconstructOptions reconstruct;
  std::vector<std::string>* warnings = nullptr;
};

struct AddViewsResult {
  DepthField depths;  // one row per new view, in the base reconstruction scale
  Intrinsics K;       // as given, or as calibrated
};

/// Reconstruct unseen views of the same points against the self-template of
/// an existing reconstruction; a template-based problem per new view. The
/// edges the template could not cover are dropped from the constraint graph.
AddViewsResult addViews(const Reconstruction& recon, const NeighborGraph& graph,
                        const TrackSet& newViews, const Intrinsics& K,
                        const AddViewsOptions& opts = {});

struct DensifyOptions {
  int seedSize = 0;   // 0 picks max(150, N/4)
  int batchSize = 0;  // 0 matches the seed size
  int neighbors = 4;
  std::uint64_t seed = 20240915;
  ReconstructOptions reconstruct;
  /// Called after the seed stage and after every added batch (stage 0, 1, ...)
  /// with the current partial reconstruction; hook for checkpointing.
  std::function<void(const Reconstruction&, int stage)> checkpoint;
  std::vector<std::string>* warnings = nullptr;
};

struct DensifyResult {
  Reconstruction recon;
  std::vector<double> alphas;        // one per added batch
  std::vector<double> stageSeconds;  // seed stage first
};

/// Semi-dense reconstruction by stages: a random seed subset is solved as a
/// batch, then the remaining points are added in spatially stratified
/// batches (round-robin over reference-view grid cells) so every batch
/// neighbors the already-placed set. seedSize >= N degenerates to the batch
/// solve.
DensifyResult densify(const TrackSet& tracks, const Intrinsics& Khat,
                      const DensifyOptions& opts = {});

}  // namespace nrsfm
