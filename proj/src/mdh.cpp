#include "nrsfm/mdh.hpp"

#include <cmath>
#include <limits>
#include <map>
#include <sstream>

namespace nrsfm {

void SfTProblem::validate() const {
  tracks.validate();
  K.validate();
  if (graph.numPoints() != tracks.numPoints())
    throw DataError("sft: graph and tracks disagree on the number of points");
  for (const auto& [i, j] : graph.edges())
    if (!templateLengths.has(i, j))
      throw DataError("sft: template missing edge (" + std::to_string(i) +
                      "," + std::to_string(j) + ")");
}

void NrsfmProblem::validate() const {
  tracks.validate();
  Khat.validate();
  if (tracks.numViews() < 2)
    throw DataError("nrsfm: need at least two views");
  if (graph.numPoints() != tracks.numPoints())
    throw DataError("nrsfm: graph and tracks disagree on the number of points");
}

PrunedLayout pruneMissing(const TrackSet& tracks, const NeighborGraph& graph) {
  PrunedLayout out;
  const int V = tracks.numViews();
  const int N = tracks.numPoints();
  out.depthVar = Eigen::MatrixXi::Constant(V, N, -1);
  int var = 0;
  for (int l = 0; l < V; ++l)
    for (int i = 0; i < N; ++i)
      if (tracks.visible(l, i)) out.depthVar(l, i) = var++;
  out.numDepthVars = var;
  out.viewEdges.resize(V);
  auto edges = graph.edges();
  for (int l = 0; l < V; ++l)
    for (const auto& e : edges)
      if (tracks.visible(l, e.first) && tracks.visible(l, e.second)) {
        out.viewEdges[l].push_back(e);
        ++out.numConeConstraints;
      }
  return out;
}

namespace {

std::string componentDescription(const std::vector<int>& comp,
                                 const std::vector<int>& active, int id) {
  std::ostringstream os;
  int shown = 0;
  for (int i : active)
    if (comp[i] == id && shown < 6) {
      os << (shown ? "," : "") << i;
      ++shown;
    }
  return os.str();
}

// Rays K^-1 u for every visible observation of one view.
std::vector<Eigen::Vector3d> viewRays(const TrackSet& tracks,
                                      const Intrinsics& K, int view) {
  Eigen::Matrix3d Kinv = K.inverse();
  std::vector<Eigen::Vector3d> rays(tracks.numPoints());
  for (int i = 0; i < tracks.numPoints(); ++i)
    if (tracks.visible(view, i)) rays[i] = Kinv * tracks.homogeneous(view, i);
  return rays;
}

void checkOptimal(const SolverResult& r, const std::string& context) {
  if (r.status == SolveStatus::Optimal) return;
  throw NumericalError(context + ": solver returned " +
                       statusName(r.status) + " (primal " +
                       std::to_string(r.primalResidual) + ", dual " +
                       std::to_string(r.dualResidual) + ", gap " +
                       std::to_string(r.gap) + ", " +
                       std::to_string(r.iterations) + " iterations)");
}

}  // namespace

SfTResult reconstructSfT(const SfTProblem& problem,
                         const ReconstructOptions& opts) {
  problem.validate();
  const TrackSet& tracks = problem.tracks;
  const int V = tracks.numViews();
  const int N = tracks.numPoints();
  PrunedLayout layout = pruneMissing(tracks, problem.graph);

  SfTResult result;
  result.depths.depth = Eigen::MatrixXd::Constant(
      V, N, std::numeric_limits<double>::quiet_NaN());

  Eigen::MatrixXd lambda = Eigen::MatrixXd::Constant(
      V, N, std::numeric_limits<double>::quiet_NaN());

  for (int l = 0; l < V; ++l) {
    std::vector<int> active = tracks.visiblePoints(l);
    // Every active point needs a constraining edge and the view's constraint
    // graph must be connected, otherwise the depth sum is unbounded.
    int nc = 0;
    std::vector<int> comp = connectedComponents(problem.graph, active, &nc);
    if (nc != 1) {
      // An isolated point is component of size 1 without edges.
      throw DataError("sft: view " + std::to_string(l) + " has " +
                      std::to_string(nc) +
                      " disconnected constraint components (e.g. points {" +
                      componentDescription(comp, active, nc - 1) +
                      "}); the problem is unbounded");
    }
    if (layout.viewEdges[l].empty())
      throw DataError("sft: view " + std::to_string(l) +
                      " has no usable edge constraint");

    std::vector<Eigen::Vector3d> rays = viewRays(tracks, problem.K, l);

    // Variables: one depth per visible point, plus one homogenizer pinned
    // to 1 so fixed right-hand distances still give structurally nonzero
    // head rows.
    std::vector<int> var(N, -1);
    int nv = 0;
    for (int i : active) var[i] = nv++;
    int tVar = nv++;

    ConicProgram prog;
    prog.c = Eigen::VectorXd::Zero(nv);
    for (int i : active) prog.c[var[i]] = -1.0;

    std::vector<Eigen::Triplet<double>> trip;
    std::vector<double> b;
    // t = 1.
    trip.emplace_back(0, tVar, 1.0);
    b.push_back(1.0);
    prog.cones.push_back({ConeSpec::Zero, 1});
    int row = 1;
    for (const auto& [i, j] : layout.viewEdges[l]) {
      double d = problem.templateLengths.at(i, j);
      trip.emplace_back(row, tVar, -d);
      b.push_back(0.0);
      ++row;
      int dim = 1;
      for (int k = 0; k < 3; ++k) {
        // A coordinate where both rays vanish contributes nothing; dropping
        // it keeps the norm and avoids a structurally zero row.
        if (rays[i][k] == 0.0 && rays[j][k] == 0.0) continue;
        trip.emplace_back(row, var[i], -rays[i][k]);
        trip.emplace_back(row, var[j], rays[j][k]);
        b.push_back(0.0);
        ++row;
        ++dim;
      }
      prog.cones.push_back({ConeSpec::SecondOrder, dim});
    }
    prog.A.resize(row, nv);
    prog.A.setFromTriplets(trip.begin(), trip.end());
    prog.b = Eigen::Map<Eigen::VectorXd>(b.data(), row);

    SolverResult sr = solveBackend(prog, opts.backend, opts.solver);
    checkOptimal(sr, "sft view " + std::to_string(l));
    for (int i : active) lambda(l, i) = sr.x[var[i]];
    result.objective += -sr.objective(prog);
    result.perView.push_back(std::move(sr));
  }

  result.depths = DepthField::fromDepths(lambda, tracks, problem.K);
  return result;
}

NrsfmResult reconstructNRSfM(const NrsfmProblem& problem,
                             const ReconstructOptions& opts) {
  problem.validate();
  const TrackSet& tracks = problem.tracks;
  const int V = tracks.numViews();
  const int N = tracks.numPoints();
  PrunedLayout layout = pruneMissing(tracks, problem.graph);

  // Keep only edges whose endpoints are co-visible somewhere; a never
  // co-visible edge would be a free length pushed to zero by the budget.
  std::vector<std::pair<int, int>> kept;
  for (const auto& e : problem.graph.edges()) {
    bool coVisible = false;
    for (int l = 0; l < V && !coVisible; ++l)
      coVisible = tracks.visible(l, e.first) && tracks.visible(l, e.second);
    if (coVisible)
      kept.push_back(e);
    else if (opts.warnings)
      opts.warnings->push_back("nrsfm: dropping never co-visible edge (" +
                               std::to_string(e.first) + "," +
                               std::to_string(e.second) + ")");
  }
  if (kept.empty()) throw DataError("nrsfm: no co-visible edges");

  std::map<long long, int> edgeVar;
  // Depth variables ordered by (view, point), then edge lengths (i, j) lex.
  const int numDepth = layout.numDepthVars;
  int nv = numDepth;
  for (const auto& [i, j] : kept)
    edgeVar[static_cast<long long>(i) * (1LL << 32) + j] = nv++;

  ConicProgram prog;
  prog.c = Eigen::VectorXd::Zero(nv);
  for (int l = 0; l < V; ++l)
    for (int i = 0; i < N; ++i)
      if (layout.depthVar(l, i) >= 0) prog.c[layout.depthVar(l, i)] = -1.0;

  std::vector<Eigen::Triplet<double>> trip;
  std::vector<double> b;
  // Unit budget over directed pairs: each undirected edge counts twice.
  for (const auto& [i, j] : kept)
    trip.emplace_back(0, edgeVar[static_cast<long long>(i) * (1LL << 32) + j],
                      2.0);
  b.push_back(1.0);
  prog.cones.push_back({ConeSpec::Zero, 1});
  int row = 1;

  Eigen::Matrix3d Kinv = problem.Khat.inverse();
  for (int l = 0; l < V; ++l) {
    for (const auto& [i, j] : layout.viewEdges[l]) {
      auto it = edgeVar.find(static_cast<long long>(i) * (1LL << 32) + j);
      if (it == edgeVar.end()) continue;
      Eigen::Vector3d ri = Kinv * tracks.homogeneous(l, i);
      Eigen::Vector3d rj = Kinv * tracks.homogeneous(l, j);
      trip.emplace_back(row, it->second, -1.0);
      b.push_back(0.0);
      ++row;
      int dim = 1;
      for (int k = 0; k < 3; ++k) {
        if (ri[k] == 0.0 && rj[k] == 0.0) continue;
        trip.emplace_back(row, layout.depthVar(l, i), -ri[k]);
        trip.emplace_back(row, layout.depthVar(l, j), rj[k]);
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
  checkOptimal(sr, "nrsfm");

  NrsfmResult result;
  Eigen::MatrixXd lambda = Eigen::MatrixXd::Constant(
      V, N, std::numeric_limits<double>::quiet_NaN());
  for (int l = 0; l < V; ++l)
    for (int i = 0; i < N; ++i)
      if (layout.depthVar(l, i) >= 0) lambda(l, i) = sr.x[layout.depthVar(l, i)];
  result.depths = DepthField::fromDepths(lambda, tracks, problem.Khat);
  for (const auto& [i, j] : kept)
    result.d.set(i, j,
                 std::max(0.0, sr.x[edgeVar[static_cast<long long>(i) *
                                            (1LL << 32) + j]]));
  result.rawX = sr.x;
  result.solver = std::move(sr);
  return result;
}

double maxConeViolation(const TrackSet& tracks, const NeighborGraph& graph,
                        const EdgeLengths& lengths, const Intrinsics& K,
                        const DepthField& depths) {
  Eigen::Matrix3d Kinv = K.inverse();
  double worst = -std::numeric_limits<double>::infinity();
  for (int l = 0; l < tracks.numViews(); ++l)
    for (const auto& [i, j] : graph.edges()) {
      if (!tracks.visible(l, i) || !tracks.visible(l, j)) continue;
      if (!depths.defined(l, i) || !depths.defined(l, j)) continue;
      if (!lengths.has(i, j)) continue;
      Eigen::Vector3d pi = depths.depth(l, i) * (Kinv * tracks.homogeneous(l, i));
      Eigen::Vector3d pj = depths.depth(l, j) * (Kinv * tracks.homogeneous(l, j));
      worst = std::max(worst, (pi - pj).norm() - lengths.at(i, j));
    }
  return worst;
}

}  // namespace nrsfm
