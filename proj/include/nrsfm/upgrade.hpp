#pragma once

#include "nrsfm/geometry.hpp"

namespace nrsfm {

/// Source reconstruction under guess intrinsics plus the target intrinsics.
struct UpgradeContext {
  DepthField source;
  Intrinsics sourceK;  // must match source.producedUnder
  Intrinsics targetK;
  TrackSet tracks;
};

/// Closed-form depth transport between intrinsics:
///   lambda = lambda_hat * ||Khat^-1 u|| / ||K^-1 u||.
/// Ranges are preserved exactly; the returned field carries targetK as its
/// producing intrinsics.
DepthField upgradeDepths(const UpgradeContext& ctx);

enum class DistanceMode { Euclidean, Geodesic };

/// Per-view scale factors s_l such that after scaling view l's depths by
/// s_l, its sum of upgraded distances over directed neighbor pairs equals 1.
/// Geodesic mode sums graph geodesics of the per-view distances instead.
Eigen::VectorXd normalizeViewScales(const Reconstruction& recon,
                                    const NeighborGraph& graph,
                                    DistanceMode mode = DistanceMode::Euclidean);

/// Applies the factors in place.
void applyViewScales(DepthField& field, const Eigen::VectorXd& scales);

}  // namespace nrsfm
