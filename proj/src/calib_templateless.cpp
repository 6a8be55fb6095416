#include "nrsfm/calib_templateless.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

namespace nrsfm {

namespace {

// Per-view distances over the edges measured in the view: upgraded chords,
// or their shortest-path lengths on the view's own subgraph in geodesic
// mode. Both modes share the same edge support.
EdgeLengths viewModeLengths(const Intrinsics& K, const TrackSet& tracks,
                            const NeighborGraph& graph, const DepthField& field,
                            int view, DistanceMode mode) {
  EdgeLengths chords = upgradedEdgeLengths(K, tracks, graph, field, view);
  if (mode == DistanceMode::Euclidean || chords.size() == 0) return chords;

  NeighborGraph sub;
  sub.adjacency.assign(graph.numPoints(), {});
  sub.k = graph.k;
  sub.refView = view;
  for (const auto& [e, d] : chords.items()) {
    sub.adjacency[e.first].push_back(e.second);
    sub.adjacency[e.second].push_back(e.first);
  }
  for (auto& a : sub.adjacency) std::sort(a.begin(), a.end());

  EdgeLengths out;
  for (int i = 0; i < graph.numPoints(); ++i) {
    if (sub.adjacency[i].empty()) continue;
    Eigen::MatrixXd g = geodesics(sub, chords, {i});
    for (int j : sub.adjacency[i])
      if (j > i && std::isfinite(g(0, j))) out.set(i, j, g(0, j));
  }
  return out;
}

}  // namespace

double isometryConsistency(const Intrinsics& K, const TrackSet& tracks,
                           const NeighborGraph& graph, const DepthField& field,
                           DistanceMode mode) {
  const int V = field.numViews();
  if (V <= 1) return 0.0;

  std::vector<EdgeLengths> per(V);
  std::vector<double> budget(V, 1.0);
  for (int l = 0; l < V; ++l) {
    per[l] = viewModeLengths(K, tracks, graph, field, l, mode);
    double s = per[l].directedSum();
    if (s > 0.0) budget[l] = s;
  }

  // Ordered view pairs and directed edges contribute a factor of four per
  // unordered pair of views sharing an undirected edge.
  bool shared = false;
  double sum = 0.0;
  for (int k = 0; k < V; ++k)
    for (int l = k + 1; l < V; ++l)
      for (const auto& [e, dk] : per[k].items()) {
        if (!per[l].has(e.first, e.second)) continue;
        shared = true;
        double diff = dk / budget[k] - per[l].at(e.first, e.second) / budget[l];
        sum += 4.0 * diff * diff;
      }
  if (!shared)
    throw DataError("isometryConsistency: no edge is measured in two views");
  return sum;
}

FocalRefineResult refineFocal(const Intrinsics& Khat, const TrackSet& tracks,
                              const NeighborGraph& graph,
                              const DepthField& field, DistanceMode mode) {
  const double fhat = Khat.focal();
  auto eval = [&](double t) {
    double f = fhat * std::exp(t);
    Intrinsics K = Khat;
    K.fx = K.fy = f;
    double v = isometryConsistency(K, tracks, graph, field, mode);
    if (!std::isfinite(v))
      throw NumericalError("refineFocal: non-finite consistency at focal " +
                           std::to_string(f));
    return v;
  };

  // Coarse log grid over [fhat/4, 4*fhat], then golden-section between the
  // neighbors of the best cell.
  const double span = std::log(4.0);
  const int cells = 33;
  int best = 0;
  double bestV = std::numeric_limits<double>::infinity();
  double lo = std::numeric_limits<double>::infinity(), hi = 0.0;
  std::vector<double> ts(cells);
  for (int c = 0; c < cells; ++c) {
    ts[c] = -span + 2.0 * span * c / (cells - 1);
    double v = eval(ts[c]);
    lo = std::min(lo, v);
    hi = std::max(hi, v);
    if (v < bestV) {
      bestV = v;
      best = c;
    }
  }
  FocalRefineResult r;
  r.K = Khat;
  if (hi - lo <= 1e-14 * std::max(1.0, hi)) {
    r.phi = bestV;
    return r;  // flat objective: keep the guess, moved stays false
  }

  double a = ts[std::max(0, best - 1)];
  double b = ts[std::min(cells - 1, best + 1)];
  const double gr = (std::sqrt(5.0) - 1.0) / 2.0;
  double x1 = b - gr * (b - a), x2 = a + gr * (b - a);
  double v1 = eval(x1), v2 = eval(x2);
  for (int it = 0; it < 24; ++it) {
    if (v1 < v2) {
      b = x2;
      x2 = x1;
      v2 = v1;
      x1 = b - gr * (b - a);
      v1 = eval(x1);
    } else {
      a = x1;
      x1 = x2;
      v1 = v2;
      x2 = a + gr * (b - a);
      v2 = eval(x2);
    }
  }
  double t = v1 < v2 ? x1 : x2;
  r.K.fx = r.K.fy = fhat * std::exp(t);
  r.phi = std::min(v1, v2);
  r.delta = std::abs(r.K.fx - fhat) / fhat;
  r.moved = true;
  return r;
}

SweepResult calibrateWithoutTemplate(const TrackSet& tracks,
                                     const NeighborGraph& graph,
                                     const Intrinsics& Khat0,
                                     const SweepOptions& opts) {
  if (tracks.numViews() < 2)
    throw DataError("calibrateWithoutTemplate: needs at least two views");
  if (!(opts.stepFraction > 0.0 && opts.stepFraction < 1.0))
    throw ConfigError("calibrateWithoutTemplate: stepFraction must be in (0, 1)");
  if (opts.consistencyTol <= 0.0)
    throw ConfigError("calibrateWithoutTemplate: consistencyTol must be > 0");

  DistanceMode mode;
  if (opts.mode) {
    mode = *opts.mode;
  } else {
    double meanDegree =
        2.0 * static_cast<double>(graph.edges().size()) /
        std::max(1, graph.numPoints());
    mode = meanDegree < 6.0 ? DistanceMode::Geodesic : DistanceMode::Euclidean;
  }

  // Only the focal is swept; the rest of the guess is pinned.
  Intrinsics Khat = Khat0;
  Khat.fx = Khat.fy = Khat0.focal();
  Khat.skew = 0.0;
  if (Khat.imageWidth > 0.0 && Khat.imageHeight > 0.0) {
    Khat.cx = Khat.imageWidth / 2.0;
    Khat.cy = Khat.imageHeight / 2.0;
  }

  SweepResult out;
  int flag = 0;
  Eigen::VectorXd warm;
  double bestSelf = std::numeric_limits<double>::infinity();
  Intrinsics bestK = Khat;
  using clock = std::chrono::steady_clock;

  for (int it = 0; it < opts.maxIterations; ++it) {
    NrsfmProblem prob{tracks, graph, Khat};
    ReconstructOptions ro = opts.reconstruct;
    if (warm.size() > 0) ro.solver.warmX = warm;
    auto t0 = clock::now();
    NrsfmResult r = reconstructNRSfM(prob, ro);
    double seconds = std::chrono::duration<double>(clock::now() - t0).count();
    warm = r.rawX;

    FocalRefineResult fr = refineFocal(Khat, tracks, graph, r.depths, mode);
    out.history.push_back({Khat.focal(), fr.phi, fr.delta, flag,
                           r.solver.iterations, seconds});

    double self = isometryConsistency(Khat, tracks, graph, r.depths, mode);
    if (self < bestSelf) {
      bestSelf = self;
      bestK = Khat;
    }

    if (!fr.moved) {
      if (opts.warnings)
        opts.warnings->push_back(
            "calibrateWithoutTemplate: consistency is flat in the focal; "
            "returning the guess");
      out.K = fr.K;
      return out;
    }
    if (fr.delta <= opts.consistencyTol) {
      if (flag == 1) {
        out.K = fr.K;
        return out;
      }
      // Consistent and never favored an upgrade: sweep downward looking for
      // the smallest consistent focal.
      Khat.fx = Khat.fy = Khat.focal() * (1.0 - opts.stepFraction);
    } else if (fr.K.focal() > Khat.focal()) {
      // The reconstruction favors an upward upgrade: follow it.
      flag = 1;
      Khat.fx = Khat.fy = fr.K.focal();
    } else {
      // A large downward pull marks the degenerate wide-angle regime, where
      // collapsed reconstructions look mutually consistent again. The
      // consistent regime lies above, so step up instead of following.
      Khat.fx = Khat.fy = Khat.focal() * (1.0 + opts.stepFraction);
    }
  }

  if (opts.warnings)
    opts.warnings->push_back(
        "calibrateWithoutTemplate: iteration cap reached; returning the most "
        "self-consistent guess seen");
  out.K = bestK;
  out.hitCap = true;
  return out;
}

}  // namespace nrsfm
