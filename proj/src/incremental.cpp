#include "nrsfm/incremental.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <random>

namespace nrsfm {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

void checkOptimal(const SolverResult& r, const std::string& context) {
  if (r.status == SolveStatus::Optimal) return;
  throw NumericalError(context + ": solver returned " + statusName(r.status) +
                       " (primal " + std::to_string(r.primalResidual) +
                       ", dual " + std::to_string(r.dualResidual) + ", gap " +
                       std::to_string(r.gap) + ", " +
                       std::to_string(r.iterations) + " iterations)");
}

long long edgeKey(int i, int j) {
  return static_cast<long long>(std::min(i, j)) * (1LL << 32) + std::max(i, j);
}

}  // namespace

void AugmentProblem::validate() const {
  tracks.validate();
  Khat.validate();
  if (graph.numPoints() != tracks.numPoints())
    throw DataError("addPoints: graph and tracks disagree on the number of points");
  if (baseDepths.numViews() != tracks.numViews() ||
      baseDepths.numPoints() != tracks.numPoints())
    throw DataError("addPoints: base depth field shape does not match the tracks");

  std::vector<char> isNew(tracks.numPoints(), 0);
  for (int q : newPoints) {
    if (q < 0 || q >= tracks.numPoints())
      throw DataError("addPoints: new point index " + std::to_string(q) +
                      " out of range");
    if (isNew[q])
      throw DataError("addPoints: duplicate new point " + std::to_string(q));
    isNew[q] = 1;
    for (int l = 0; l < tracks.numViews(); ++l)
      if (baseDepths.defined(l, q))
        throw DataError("addPoints: new point " + std::to_string(q) +
                        " already carries a depth in view " + std::to_string(l));
  }

  // Every visible observation of a new point needs a constraining edge in
  // that view, or its depth is unbounded.
  for (int q : newPoints)
    for (int l = 0; l < tracks.numViews(); ++l) {
      if (!tracks.visible(l, q)) continue;
      bool anchored = false;
      for (int j : graph.adjacency[q]) {
        if (!tracks.visible(l, j)) continue;
        if (isNew[j] || baseDepths.defined(l, j)) {
          anchored = true;
          break;
        }
      }
      if (!anchored)
        throw DataError("addPoints: new point " + std::to_string(q) +
                        " has no constraining neighbor in view " +
                        std::to_string(l));
    }
}

AugmentResult addPoints(const AugmentProblem& problem,
                        const ReconstructOptions& opts) {
  problem.validate();
  const TrackSet& tracks = problem.tracks;
  const int V = tracks.numViews();
  const int N = tracks.numPoints();

  AugmentResult out;
  if (problem.newPoints.empty()) {
    out.depths = problem.baseDepths;
    out.alpha = 1.0;
    return out;
  }

  std::vector<char> isNew(N, 0);
  for (int q : problem.newPoints) isNew[q] = 1;

  // Edges with a new endpoint, kept when usable in at least one view (an
  // old endpoint must carry a base depth there).
  struct AugEdge {
    int i, j;      // i new; j new or old
    bool newNew;
  };
  std::vector<AugEdge> kept;
  std::map<long long, int> eVar;
  auto usableInView = [&](int l, int a, int b) {
    if (!tracks.visible(l, a) || !tracks.visible(l, b)) return false;
    if (!isNew[a] && !problem.baseDepths.defined(l, a)) return false;
    if (!isNew[b] && !problem.baseDepths.defined(l, b)) return false;
    return true;
  };
  for (const auto& [a, b] : problem.graph.edges()) {
    if (!isNew[a] && !isNew[b]) continue;
    bool usable = false;
    for (int l = 0; l < V && !usable; ++l) usable = usableInView(l, a, b);
    if (!usable) {
      if (opts.warnings)
        opts.warnings->push_back("addPoints: dropping unusable edge (" +
                                 std::to_string(a) + "," + std::to_string(b) +
                                 ")");
      continue;
    }
    AugEdge e;
    e.newNew = isNew[a] && isNew[b];
    e.i = isNew[a] ? a : b;
    e.j = isNew[a] ? b : a;
    kept.push_back(e);
  }
  if (kept.empty()) throw DataError("addPoints: no usable edge touches a new point");

  // Variables: new depths zeta by (view, point), then edge bounds, then alpha.
  Eigen::MatrixXi zetaVar = Eigen::MatrixXi::Constant(V, N, -1);
  int nv = 0;
  for (int l = 0; l < V; ++l)
    for (int q : problem.newPoints)
      if (tracks.visible(l, q)) zetaVar(l, q) = nv++;
  for (const auto& e : kept) eVar[edgeKey(e.i, e.j)] = nv++;
  const int alphaVar = nv++;

  double Lambda = 0.0;
  for (int l = 0; l < V; ++l)
    for (int i = 0; i < N; ++i)
      if (problem.baseDepths.defined(l, i)) Lambda += problem.baseDepths.depth(l, i);

  ConicProgram prog;
  prog.c = Eigen::VectorXd::Zero(nv);
  for (int l = 0; l < V; ++l)
    for (int q : problem.newPoints)
      if (zetaVar(l, q) >= 0) prog.c[zetaVar(l, q)] = -1.0;
  prog.c[alphaVar] = -Lambda;

  std::vector<Eigen::Triplet<double>> trip;
  std::vector<double> b;

  // Budget over directed pairs with a new second endpoint: a new-new edge is
  // counted from both sides, a new-old edge once (from its old side).
  //   sum w_e e + alpha = 1.
  for (const auto& e : kept)
    trip.emplace_back(0, eVar[edgeKey(e.i, e.j)], e.newNew ? 2.0 : 1.0);
  trip.emplace_back(0, alphaVar, 1.0);
  b.push_back(1.0);
  prog.cones.push_back({ConeSpec::Zero, 1});
  int row = 1;

  // 0 <= alpha <= 1 as one-dimensional cones.
  trip.emplace_back(row, alphaVar, -1.0);
  b.push_back(0.0);
  prog.cones.push_back({ConeSpec::SecondOrder, 1});
  ++row;
  trip.emplace_back(row, alphaVar, 1.0);
  b.push_back(1.0);
  prog.cones.push_back({ConeSpec::SecondOrder, 1});
  ++row;

  Eigen::Matrix3d Kinv = problem.Khat.inverse();
  for (int l = 0; l < V; ++l) {
    for (const auto& e : kept) {
      if (!usableInView(l, e.i, e.j)) continue;
      Eigen::Vector3d ri = Kinv * tracks.homogeneous(l, e.i);
      Eigen::Vector3d rj = Kinv * tracks.homogeneous(l, e.j);
      trip.emplace_back(row, eVar[edgeKey(e.i, e.j)], -1.0);
      b.push_back(0.0);
      ++row;
      int dim = 1;
      for (int k = 0; k < 3; ++k) {
        double cj = e.newNew ? rj[k] : problem.baseDepths.depth(l, e.j) * rj[k];
        if (ri[k] == 0.0 && cj == 0.0) continue;
        trip.emplace_back(row, zetaVar(l, e.i), -ri[k]);
        if (e.newNew)
          trip.emplace_back(row, zetaVar(l, e.j), cj);
        else
          trip.emplace_back(row, alphaVar, cj);
        b.push_back(0.0);
        ++row;
        ++dim;
      }
      prog.cones.push_back({ConeSpec::SecondOrder, dim});
    }
  }
  prog.A.resize(row, nv);
  prog.A.setFromTriplets(trip.begin(), trip.end());
  prog.b = Eigen::Map<Eigen::VectorXd>(b.data(), row);

  SolverResult sr = solveBackend(prog, opts.backend, opts.solver);
  checkOptimal(sr, "addPoints");

  out.alpha = std::clamp(sr.x[alphaVar], 0.0, 1.0);
  Eigen::MatrixXd lambda = Eigen::MatrixXd::Constant(V, N, kNaN);
  for (int l = 0; l < V; ++l)
    for (int i = 0; i < N; ++i) {
      if (problem.baseDepths.defined(l, i))
        lambda(l, i) = out.alpha * problem.baseDepths.depth(l, i);
      else if (zetaVar(l, i) >= 0)
        lambda(l, i) = sr.x[zetaVar(l, i)];
    }
  out.depths = DepthField::fromDepths(lambda, tracks, problem.Khat);
  for (const auto& e : kept)
    out.e.set(e.i, e.j, std::max(0.0, sr.x[eVar[edgeKey(e.i, e.j)]]));
  out.solver = std::move(sr);
  return out;
}

EdgeLengths selfTemplate(const Reconstruction& recon, const NeighborGraph& graph,
                         const std::vector<std::pair<int, int>>& extraPairs,
                         std::vector<std::string>* warnings) {
  if (graph.numPoints() != recon.tracks.numPoints())
    throw DataError("selfTemplate: graph and reconstruction disagree on points");

  EdgeLengths out;
  for (const auto& [i, j] : graph.edges()) {
    std::vector<double> samples;
    for (int l = 0; l < recon.depths.numViews(); ++l) {
      if (!recon.depths.defined(l, i) || !recon.depths.defined(l, j)) continue;
      samples.push_back((recon.point(l, i) - recon.point(l, j)).norm());
    }
    if (samples.empty()) {
      if (warnings)
        warnings->push_back("selfTemplate: edge (" + std::to_string(i) + "," +
                            std::to_string(j) + ") never measured; excluded");
      continue;
    }
    size_t mid = samples.size() / 2;
    std::nth_element(samples.begin(), samples.begin() + mid, samples.end());
    double med = samples[mid];
    if (samples.size() % 2 == 0) {
      double lowerHalfMax =
          *std::max_element(samples.begin(), samples.begin() + mid);
      med = 0.5 * (med + lowerHalfMax);
    }
    out.set(i, j, med);
  }

  if (!extraPairs.empty()) {
    // Shortest paths over the measured edges fill in the requested pairs.
    NeighborGraph sub;
    sub.adjacency.assign(graph.numPoints(), {});
    sub.k = graph.k;
    sub.refView = graph.refView;
    for (const auto& [e, d] : out.items()) {
      sub.adjacency[e.first].push_back(e.second);
      sub.adjacency[e.second].push_back(e.first);
    }
    for (auto& a : sub.adjacency) std::sort(a.begin(), a.end());
    for (const auto& [i, j] : extraPairs) {
      if (out.has(i, j)) continue;
      Eigen::MatrixXd g = geodesics(sub, out, {i});
      if (std::isfinite(g(0, j))) {
        out.set(i, j, g(0, j));
      } else if (warnings) {
        warnings->push_back("selfTemplate: no path between " +
                            std::to_string(i) + " and " + std::to_string(j));
      }
    }
  }
  return out;
}

AddViewsResult addViews(const Reconstruction& recon, const NeighborGraph& graph,
                        const TrackSet& newViews, const Intrinsics& K,
                        const AddViewsOptions& opts) {
  if (newViews.numPoints() != recon.tracks.numPoints())
    throw DataError("addViews: new views and reconstruction disagree on points");

  EdgeLengths templ = selfTemplate(recon, graph, {}, opts.warnings);

  // Constrain only the edges the template covers.
  NeighborGraph covered;
  covered.adjacency.assign(graph.numPoints(), {});
  covered.k = graph.k;
  covered.refView = graph.refView;
  for (const auto& [e, d] : templ.items()) {
    covered.adjacency[e.first].push_back(e.second);
    covered.adjacency[e.second].push_back(e.first);
  }
  for (auto& a : covered.adjacency) std::sort(a.begin(), a.end());

  AddViewsResult out;
  out.K = K;
  if (opts.calibrate) {
    TemplateCalibResult c = calibrateWithTemplate(newViews, covered, templ, K,
                                                  opts.calibration);
    out.K = c.K;
  }

  SfTProblem prob{newViews, covered, templ, out.K};
  SfTResult r = reconstructSfT(prob, opts.reconstruct);
  out.depths = std::move(r.depths);
  return out;
}

namespace {

TrackSet subsetTracks(const TrackSet& tracks, const std::vector<int>& points) {
  TrackSet out(tracks.numViews(), static_cast<int>(points.size()));
  for (int c = 0; c < static_cast<int>(points.size()); ++c)
    for (int l = 0; l < tracks.numViews(); ++l)
      if (tracks.visible(l, points[c])) {
        Eigen::Vector2d p = tracks.pixel(l, points[c]);
        out.set(l, c, p.x(), p.y());
      }
  return out;
}

// Spatially stratified order: reference-view grid cells visited round-robin
// so consecutive chunks spread across the image.
std::vector<int> stratifiedOrder(const TrackSet& tracks,
                                 const std::vector<int>& points) {
  if (points.empty()) return {};
  int ref = tracks.bestView();
  double lox = std::numeric_limits<double>::infinity(), hix = -lox;
  double loy = lox, hiy = -lox;
  for (int p : points) {
    if (!tracks.visible(ref, p)) continue;
    Eigen::Vector2d u = tracks.pixel(ref, p);
    lox = std::min(lox, u.x());
    hix = std::max(hix, u.x());
    loy = std::min(loy, u.y());
    hiy = std::max(hiy, u.y());
  }
  const int G = 6;
  auto cellOf = [&](int p) {
    if (!tracks.visible(ref, p) || hix <= lox || hiy <= loy) return 0;
    Eigen::Vector2d u = tracks.pixel(ref, p);
    int cx = std::min(G - 1, static_cast<int>(G * (u.x() - lox) / (hix - lox)));
    int cy = std::min(G - 1, static_cast<int>(G * (u.y() - loy) / (hiy - loy)));
    return cy * G + cx;
  };
  std::vector<std::vector<int>> cells(G * G);
  for (int p : points) cells[cellOf(p)].push_back(p);

  std::vector<int> order;
  order.reserve(points.size());
  for (size_t pass = 0; order.size() < points.size(); ++pass)
    for (auto& c : cells)
      if (pass < c.size()) order.push_back(c[pass]);
  return order;
}

}  // namespace

DensifyResult densify(const TrackSet& tracks, const Intrinsics& Khat,
                      const DensifyOptions& opts) {
  tracks.validate();
  const int V = tracks.numViews();
  const int N = tracks.numPoints();
  int seedSize = opts.seedSize > 0 ? opts.seedSize : std::max(150, N / 4);
  seedSize = std::min(seedSize, N);
  int batchSize = opts.batchSize > 0 ? opts.batchSize : seedSize;
  using clock = std::chrono::steady_clock;

  DensifyResult out;
  out.recon.tracks = tracks;
  out.recon.K = Khat;

  if (seedSize >= N) {
    NrsfmProblem prob{tracks, buildNeighborGraph(tracks, opts.neighbors), Khat};
    auto t0 = clock::now();
    NrsfmResult r = reconstructNRSfM(prob, opts.reconstruct);
    out.stageSeconds.push_back(
        std::chrono::duration<double>(clock::now() - t0).count());
    out.recon.depths = std::move(r.depths);
    if (opts.checkpoint) opts.checkpoint(out.recon, 0);
    return out;
  }

  std::vector<int> perm(N);
  std::iota(perm.begin(), perm.end(), 0);
  std::mt19937_64 rng(opts.seed);
  std::shuffle(perm.begin(), perm.end(), rng);
  std::vector<int> placed(perm.begin(), perm.begin() + seedSize);
  std::vector<int> rest(perm.begin() + seedSize, perm.end());
  std::sort(placed.begin(), placed.end());
  rest = stratifiedOrder(tracks, rest);

  Eigen::MatrixXd lambda = Eigen::MatrixXd::Constant(V, N, kNaN);

  {
    TrackSet seedTracks = subsetTracks(tracks, placed);
    NrsfmProblem prob{seedTracks, buildNeighborGraph(seedTracks, opts.neighbors),
                      Khat};
    auto t0 = clock::now();
    NrsfmResult r = reconstructNRSfM(prob, opts.reconstruct);
    out.stageSeconds.push_back(
        std::chrono::duration<double>(clock::now() - t0).count());
    for (int c = 0; c < static_cast<int>(placed.size()); ++c)
      for (int l = 0; l < V; ++l)
        if (r.depths.defined(l, c)) lambda(l, placed[c]) = r.depths.depth(l, c);
  }
  int stage = 0;
  auto snapshot = [&]() {
    out.recon.depths = DepthField::fromDepths(lambda, tracks, Khat);
    if (opts.checkpoint) opts.checkpoint(out.recon, stage);
  };
  snapshot();

  for (size_t off = 0; off < rest.size(); off += batchSize) {
    size_t end = std::min(rest.size(), off + batchSize);
    std::vector<int> batch(rest.begin() + off, rest.begin() + end);

    std::vector<int> active = placed;
    active.insert(active.end(), batch.begin(), batch.end());
    std::sort(active.begin(), active.end());
    std::vector<int> local(N, -1);
    for (int c = 0; c < static_cast<int>(active.size()); ++c)
      local[active[c]] = c;

    AugmentProblem aug;
    aug.tracks = subsetTracks(tracks, active);
    aug.graph = buildNeighborGraph(aug.tracks, opts.neighbors);
    Eigen::MatrixXd baseLambda =
        Eigen::MatrixXd::Constant(V, static_cast<int>(active.size()), kNaN);
    for (int g : placed)
      for (int l = 0; l < V; ++l)
        if (std::isfinite(lambda(l, g))) baseLambda(l, local[g]) = lambda(l, g);
    aug.baseDepths = DepthField::fromDepths(baseLambda, aug.tracks, Khat);
    for (int g : batch) aug.newPoints.push_back(local[g]);
    aug.Khat = Khat;

    ReconstructOptions ro = opts.reconstruct;
    ro.warnings = opts.warnings;
    auto t0 = clock::now();
    AugmentResult r = addPoints(aug, ro);
    out.stageSeconds.push_back(
        std::chrono::duration<double>(clock::now() - t0).count());
    out.alphas.push_back(r.alpha);

    for (int g : active)
      for (int l = 0; l < V; ++l)
        lambda(l, g) =
            r.depths.defined(l, local[g]) ? r.depths.depth(l, local[g]) : kNaN;

    placed.insert(placed.end(), batch.begin(), batch.end());
    std::sort(placed.begin(), placed.end());
    ++stage;
    snapshot();
  }
  return out;
}

}  // namespace nrsfm
