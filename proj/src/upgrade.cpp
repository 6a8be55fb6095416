#include "nrsfm/upgrade.hpp"

#include <cmath>

namespace nrsfm {

DepthField upgradeDepths(const UpgradeContext& ctx) {
  if (!(ctx.source.producedUnder == ctx.sourceK))
    throw DataError(
        "upgrade: depth field was not produced under the stated source "
        "intrinsics (stale upgrade)");
  ctx.targetK.validate();
  Eigen::Matrix3d KhatInv = ctx.sourceK.inverse();
  Eigen::Matrix3d KInv = ctx.targetK.inverse();
  if (!KInv.allFinite()) throw DataError("upgrade: singular target intrinsics");

  DepthField out;
  const int V = ctx.source.numViews();
  const int N = ctx.source.numPoints();
  out.depth = Eigen::MatrixXd::Constant(V, N,
                                        std::numeric_limits<double>::quiet_NaN());
  out.range = out.depth;
  out.producedUnder = ctx.targetK;
  for (int l = 0; l < V; ++l)
    for (int i = 0; i < N; ++i) {
      if (!ctx.source.defined(l, i)) continue;
      Eigen::Vector3d u = ctx.tracks.homogeneous(l, i);
      double nHat = (KhatInv * u).norm();
      double n = (KInv * u).norm();
      out.depth(l, i) = ctx.source.depth(l, i) * nHat / n;
      out.range(l, i) = out.depth(l, i) * n;  // equals the source range
    }
  return out;
}

namespace {

// Sum of per-view distances over directed neighbor pairs; geodesic mode runs
// Dijkstra on the view's own edge lengths first.
double viewDistanceSum(const Reconstruction& recon, const NeighborGraph& graph,
                       int view, DistanceMode mode) {
  EdgeLengths lengths = upgradedEdgeLengths(recon.K, recon.tracks, graph,
                                            recon.depths, view);
  if (lengths.size() == 0)
    throw DataError("normalizeViewScales: view " + std::to_string(view) +
                    " has no usable edge");
  if (mode == DistanceMode::Euclidean) return lengths.directedSum();

  // Geodesic sums on the subgraph where the view has lengths.
  NeighborGraph sub;
  sub.adjacency.assign(graph.numPoints(), {});
  sub.k = graph.k;
  sub.refView = view;
  for (const auto& [e, d] : lengths.items()) {
    sub.adjacency[e.first].push_back(e.second);
    sub.adjacency[e.second].push_back(e.first);
  }
  for (auto& a : sub.adjacency) std::sort(a.begin(), a.end());
  double sum = 0.0;
  for (int i = 0; i < graph.numPoints(); ++i) {
    if (sub.adjacency[i].empty()) continue;
    Eigen::MatrixXd g = geodesics(sub, lengths, {i});
    for (int j : graph.adjacency[i])
      if (std::isfinite(g(0, j))) sum += g(0, j);
  }
  return sum;
}

}  // namespace

Eigen::VectorXd normalizeViewScales(const Reconstruction& recon,
                                    const NeighborGraph& graph,
                                    DistanceMode mode) {
  const int V = recon.depths.numViews();
  Eigen::VectorXd s(V);
  for (int l = 0; l < V; ++l) s[l] = 1.0 / viewDistanceSum(recon, graph, l, mode);
  return s;
}

void applyViewScales(DepthField& field, const Eigen::VectorXd& scales) {
  for (int l = 0; l < field.numViews(); ++l) {
    field.depth.row(l) *= scales[l];
    field.range.row(l) *= scales[l];
  }
}

}  // namespace nrsfm
