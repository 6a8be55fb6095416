#pragma once

#include <Eigen/Dense>

#include "nrsfm/errors.hpp"
#include "nrsfm/graph.hpp"
#include "nrsfm/intrinsics.hpp"
#include "nrsfm/tracks.hpp"

namespace nrsfm {

/// Per-view, per-point depths lambda_i^l with the derived ranges
/// a_i^l = lambda_i^l * ||K^-1 u_i^l||. Entries are NaN where undefined.
/// The intrinsics that produced the depths travel with the field so a stale
/// upgrade is detectable.
struct DepthField {
  Eigen::MatrixXd depth;  // V x N
  Eigen::MatrixXd range;  // V x N
  Intrinsics producedUnder;

  int numViews() const { return static_cast<int>(depth.rows()); }
  int numPoints() const { return static_cast<int>(depth.cols()); }
  bool defined(int view, int point) const {
    return std::isfinite(depth(view, point));
  }

  static DepthField fromDepths(const Eigen::MatrixXd& lambda,
                               const TrackSet& tracks, const Intrinsics& K);
};

/// A depth field together with its intrinsics; 3D points are derived as
/// X_i^l = lambda_i^l K^-1 u_i^l.
struct Reconstruction {
  TrackSet tracks;
  DepthField depths;
  Intrinsics K;

  Eigen::Vector3d point(int view, int pointIdx) const {
    return depths.depth(view, pointIdx) * K.ray(tracks.homogeneous(view, pointIdx));
  }
};

/// Euclidean distance between two points placed at ranges a_i, a_j along the
/// unit sightlines of u_i, u_j:
///   || a_i K^-1 u_i / ||K^-1 u_i||  -  a_j K^-1 u_j / ||K^-1 u_j|| ||.
template <typename Scalar>
Scalar upgradedDistance(const Eigen::Matrix<Scalar, 3, 3>& Kinv, Scalar ai,
                        Scalar aj, const Eigen::Matrix<Scalar, 3, 1>& ui,
                        const Eigen::Matrix<Scalar, 3, 1>& uj) {
  Eigen::Matrix<Scalar, 3, 1> ri = Kinv * ui;
  Eigen::Matrix<Scalar, 3, 1> rj = Kinv * uj;
  Scalar ni = ri.norm(), nj = rj.norm();
  return (ai * ri / ni - aj * rj / nj).norm();
}

double upgradedDistance(const Intrinsics& K, double ai, double aj,
                        const Eigen::Vector3d& ui, const Eigen::Vector3d& uj);

/// Upgraded distances on every graph edge co-visible in `view`, from the
/// ranges of `field` under intrinsics `K`. Edges with an undefined endpoint
/// are skipped.
EdgeLengths upgradedEdgeLengths(const Intrinsics& K, const TrackSet& tracks,
                                const NeighborGraph& graph,
                                const DepthField& field, int view);

}  // namespace nrsfm
