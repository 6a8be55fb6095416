#include "nrsfm/graph.hpp"

#include <algorithm>
#include <fstream>
#include <queue>
#include <set>
#include <sstream>

#include "nrsfm/errors.hpp"

namespace nrsfm {

std::vector<std::pair<int, int>> NeighborGraph::edges() const {
  std::vector<std::pair<int, int>> out;
  for (int i = 0; i < numPoints(); ++i)
    for (int j : adjacency[i])
      if (i < j) out.emplace_back(i, j);
  std::sort(out.begin(), out.end());
  return out;
}

bool NeighborGraph::hasEdge(int i, int j) const {
  const auto& a = adjacency[i];
  return std::binary_search(a.begin(), a.end(), j);
}

bool NeighborGraph::isSymmetric() const {
  for (int i = 0; i < numPoints(); ++i)
    for (int j : adjacency[i])
      if (!hasEdge(j, i)) return false;
  return true;
}

long long EdgeLengths::key(int i, int j) {
  if (i > j) std::swap(i, j);
  return static_cast<long long>(i) * (1LL << 32) + j;
}

void EdgeLengths::set(int i, int j, double length) {
  if (length < 0.0)
    throw DataError("edge lengths: negative length on edge (" +
                    std::to_string(i) + "," + std::to_string(j) + ")");
  lengths_[key(i, j)] = length;
}

bool EdgeLengths::has(int i, int j) const {
  return lengths_.count(key(i, j)) > 0;
}

double EdgeLengths::at(int i, int j) const {
  auto it = lengths_.find(key(i, j));
  if (it == lengths_.end())
    throw DataError("edge lengths: no entry for edge (" + std::to_string(i) +
                    "," + std::to_string(j) + ")");
  return it->second;
}

double EdgeLengths::undirectedSum() const {
  double s = 0.0;
  for (const auto& [k, v] : lengths_) s += v;
  return s;
}

double EdgeLengths::directedSum() const { return 2.0 * undirectedSum(); }

std::vector<std::pair<std::pair<int, int>, double>> EdgeLengths::items() const {
  std::vector<std::pair<std::pair<int, int>, double>> out;
  out.reserve(lengths_.size());
  for (const auto& [k, v] : lengths_)
    out.push_back({{static_cast<int>(k >> 32), static_cast<int>(k & 0xffffffff)},
                   v});
  std::sort(out.begin(), out.end());
  return out;
}

EdgeLengths EdgeLengths::scaled(double s) const {
  EdgeLengths out;
  for (const auto& [k, v] : lengths_) out.lengths_[k] = v * s;
  return out;
}

EdgeLengths EdgeLengths::loadCsv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("edge lengths: cannot open " + path);
  EdgeLengths out;
  std::string line;
  int lineNo = 0;
  while (std::getline(in, line)) {
    ++lineNo;
    if (line.empty()) continue;
    // Optional header.
    if (lineNo == 1 && line.find_first_not_of("ijd, \r") == std::string::npos)
      continue;
    std::istringstream ls(line);
    int i, j;
    double d;
    char comma;
    if (!(ls >> i >> comma >> j >> comma >> d))
      throw DataError("edge lengths: parse error at " + path + ":" +
                      std::to_string(lineNo));
    if (i == j || i < 0 || j < 0 || d < 0.0)
      throw DataError("edge lengths: bad row at " + path + ":" +
                      std::to_string(lineNo));
    out.set(i, j, d);
  }
  if (out.size() == 0) throw DataError("edge lengths: no rows in " + path);
  return out;
}

void EdgeLengths::saveCsv(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw DataError("edge lengths: cannot write " + path);
  out << "i,j,d\n";
  out.precision(17);
  for (const auto& [e, d] : items())
    out << e.first << ',' << e.second << ',' << d << '\n';
}

namespace {

// k nearest among `candidates` to `pixel` in `view`, ties by lowest index.
std::vector<int> kNearest(const TrackSet& tracks, int view, int self,
                          const std::vector<int>& candidates, int k) {
  Eigen::Vector2d p = tracks.pixel(view, self);
  std::vector<std::pair<double, int>> dist;
  dist.reserve(candidates.size());
  for (int c : candidates) {
    if (c == self) continue;
    dist.emplace_back((tracks.pixel(view, c) - p).squaredNorm(), c);
  }
  std::sort(dist.begin(), dist.end());
  std::vector<int> out;
  for (int t = 0; t < static_cast<int>(dist.size()) && t < k; ++t)
    out.push_back(dist[t].second);
  return out;
}

}  // namespace

NeighborGraph buildNeighborGraph(const TrackSet& tracks, int k, int refView) {
  if (k < 1) throw DataError("graph: k must be at least 1");
  if (refView < 0 || refView >= tracks.numViews())
    throw DataError("graph: reference view out of range");
  const int n = tracks.numPoints();
  std::vector<int> refVisible = tracks.visiblePoints(refView);
  if (static_cast<int>(refVisible.size()) < k + 1)
    throw DataError("graph: reference view " + std::to_string(refView) +
                    " has fewer than k+1 visible points");

  NeighborGraph g;
  g.adjacency.assign(n, {});
  g.k = k;
  g.refView = refView;

  std::vector<std::set<int>> adj(n);
  auto addEdge = [&](int a, int b) {
    adj[a].insert(b);
    adj[b].insert(a);
  };

  for (int i : refVisible)
    for (int j : kNearest(tracks, refView, i, refVisible, k)) addEdge(i, j);

  // Points missing from the reference view: attach them in the view of
  // maximal co-visibility among the views where they appear.
  for (int i = 0; i < n; ++i) {
    if (tracks.visible(refView, i)) continue;
    int bestView = -1, bestCount = -1;
    for (int l = 0; l < tracks.numViews(); ++l) {
      if (!tracks.visible(l, i)) continue;
      int c = tracks.visibleCountInView(l);
      if (c > bestCount) {
        bestCount = c;
        bestView = l;
      }
    }
    if (bestView < 0 || bestCount < 2)
      throw DataError("graph: point " + std::to_string(i) +
                      " has no view with a co-visible neighbor");
    std::vector<int> cands = tracks.visiblePoints(bestView);
    for (int j : kNearest(tracks, bestView, i, cands, k)) addEdge(i, j);
  }

  for (int i = 0; i < n; ++i)
    g.adjacency[i].assign(adj[i].begin(), adj[i].end());
  return g;
}

NeighborGraph buildNeighborGraph(const TrackSet& tracks, int k) {
  return buildNeighborGraph(tracks, k, tracks.bestView());
}

Eigen::MatrixXd geodesics(const NeighborGraph& graph, const EdgeLengths& lengths,
                          const std::vector<int>& sources) {
  const int n = graph.numPoints();
  Eigen::MatrixXd out(sources.size(), n);
  for (size_t r = 0; r < sources.size(); ++r) {
    Eigen::VectorXd dist = Eigen::VectorXd::Constant(n, kUnreachable);
    using Item = std::pair<double, int>;
    std::priority_queue<Item, std::vector<Item>, std::greater<Item>> pq;
    dist[sources[r]] = 0.0;
    pq.emplace(0.0, sources[r]);
    while (!pq.empty()) {
      auto [d, i] = pq.top();
      pq.pop();
      if (d > dist[i]) continue;
      for (int j : graph.adjacency[i]) {
        double w = lengths.at(i, j);
        if (d + w < dist[j]) {
          dist[j] = d + w;
          pq.emplace(dist[j], j);
        }
      }
    }
    out.row(r) = dist.transpose();
  }
  return out;
}

std::vector<double> neighborPixelDistances(const TrackSet& tracks,
                                           const NeighborGraph& graph,
                                           int view) {
  std::vector<double> out;
  for (int i = 0; i < graph.numPoints(); ++i) {
    if (!tracks.visible(view, i)) continue;
    for (int j : graph.adjacency[i]) {
      if (i < j && tracks.visible(view, j))
        out.push_back((tracks.pixel(view, i) - tracks.pixel(view, j)).norm());
    }
  }
  return out;
}

std::vector<int> connectedComponents(const NeighborGraph& graph,
                                     const std::vector<int>& active,
                                     int* numComponents) {
  std::vector<int> comp(graph.numPoints(), -1);
  std::vector<char> isActive(graph.numPoints(), 0);
  for (int i : active) isActive[i] = 1;
  int nc = 0;
  for (int s : active) {
    if (comp[s] >= 0) continue;
    std::queue<int> q;
    q.push(s);
    comp[s] = nc;
    while (!q.empty()) {
      int i = q.front();
      q.pop();
      for (int j : graph.adjacency[i])
        if (isActive[j] && comp[j] < 0) {
          comp[j] = nc;
          q.push(j);
        }
    }
    ++nc;
  }
  if (numComponents) *numComponents = nc;
  return comp;
}

}  // namespace nrsfm
