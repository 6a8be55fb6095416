#include "nrsfm/geometry.hpp"

#include <cmath>

namespace nrsfm {

DepthField DepthField::fromDepths(const Eigen::MatrixXd& lambda,
                                  const TrackSet& tracks,
                                  const Intrinsics& K) {
  DepthField f;
  f.depth = lambda;
  f.range = Eigen::MatrixXd::Constant(lambda.rows(), lambda.cols(),
                                      std::numeric_limits<double>::quiet_NaN());
  f.producedUnder = K;
  Eigen::Matrix3d Kinv = K.inverse();
  for (int l = 0; l < static_cast<int>(lambda.rows()); ++l)
    for (int i = 0; i < static_cast<int>(lambda.cols()); ++i)
      if (std::isfinite(lambda(l, i)) && tracks.visible(l, i))
        f.range(l, i) = lambda(l, i) * (Kinv * tracks.homogeneous(l, i)).norm();
      else
        f.depth(l, i) = std::numeric_limits<double>::quiet_NaN();
  return f;
}

double upgradedDistance(const Intrinsics& K, double ai, double aj,
                        const Eigen::Vector3d& ui, const Eigen::Vector3d& uj) {
  if (ai < 0.0 || aj < 0.0)
    throw DataError("upgradedDistance: ranges must be non-negative");
  Eigen::Matrix3d Kinv = K.inverse();
  if (!Kinv.allFinite())
    throw DataError("upgradedDistance: singular intrinsics");
  return upgradedDistance<double>(Kinv, ai, aj, ui, uj);
}

EdgeLengths upgradedEdgeLengths(const Intrinsics& K, const TrackSet& tracks,
                                const NeighborGraph& graph,
                                const DepthField& field, int view) {
  EdgeLengths out;
  Eigen::Matrix3d Kinv = K.inverse();
  for (const auto& [i, j] : graph.edges()) {
    if (!tracks.visible(view, i) || !tracks.visible(view, j)) continue;
    if (!field.defined(view, i) || !field.defined(view, j)) continue;
    out.set(i, j,
            upgradedDistance<double>(Kinv, field.range(view, i),
                                     field.range(view, j),
                                     tracks.homogeneous(view, i),
                                     tracks.homogeneous(view, j)));
  }
  return out;
}

}  // namespace nrsfm
