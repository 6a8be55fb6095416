#pragma once

#include <Eigen/Dense>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "nrsfm/tracks.hpp"

namespace nrsfm {

/// Fixed-size nearest-neighbor adjacency over points, symmetrized by union
/// closure. Neighbor lists are sorted ascending; no self-loops, no
/// duplicates. Every edge is co-visible in at least one view.
struct NeighborGraph {
  std::vector<std::vector<int>> adjacency;
  int k = 0;
  int refView = 0;

  int numPoints() const { return static_cast<int>(adjacency.size()); }

  /// Undirected edge list, each edge once with i < j, lexicographic order.
  std::vector<std::pair<int, int>> edges() const;

  bool hasEdge(int i, int j) const;
  bool isSymmetric() const;
};

/// Non-negative per-edge scalars on exactly the edge set of a companion
/// NeighborGraph (each undirected edge stored once under (min, max)).
class EdgeLengths {
 public:
  EdgeLengths() = default;

  void set(int i, int j, double length);
  bool has(int i, int j) const;
  double at(int i, int j) const;  // throws DataError if absent
  size_t size() const { return lengths_.size(); }

  /// Sum over directed pairs (i, j in N(i)), i.e. twice the undirected sum.
  double directedSum() const;
  double undirectedSum() const;

  std::vector<std::pair<std::pair<int, int>, double>> items() const;

  EdgeLengths scaled(double s) const;

  /// CSV `i,j,d`, undirected, each edge once.
  static EdgeLengths loadCsv(const std::string& path);
  void saveCsv(const std::string& path) const;

 private:
  static long long key(int i, int j);
  std::unordered_map<long long, double> lengths_;
};

/// k nearest visible neighbors by pixel distance in the reference view,
/// symmetrized by union closure. Ties broken by lowest point index. Points
/// invisible in the reference view are attached via the view of maximal
/// co-visibility among the views where they appear.
NeighborGraph buildNeighborGraph(const TrackSet& tracks, int k, int refView);
NeighborGraph buildNeighborGraph(const TrackSet& tracks, int k);

constexpr double kUnreachable = std::numeric_limits<double>::infinity();

/// Dijkstra shortest-path distances from each source to every point.
/// Row r of the result holds distances from sources[r]; unreachable pairs
/// are kUnreachable.
Eigen::MatrixXd geodesics(const NeighborGraph& graph, const EdgeLengths& lengths,
                          const std::vector<int>& sources);

/// Pixel distance between every point and its graph neighbors in one view;
/// a diagnostic for how well the close-neighbor assumption holds.
std::vector<double> neighborPixelDistances(const TrackSet& tracks,
                                           const NeighborGraph& graph,
                                           int view);

/// Connected components of the subgraph induced by `active` points.
/// Returns a component id per point (-1 for inactive points).
std::vector<int> connectedComponents(const NeighborGraph& graph,
                                     const std::vector<int>& active,
                                     int* numComponents);

}  // namespace nrsfm
