#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

namespace nrsfm {

/// Pixel observations u_i^l across views, with a visibility mask.
/// Invariants (enforced by validate / the CSV loader):
///  - every point is visible in at least one view
///  - every view has at least two visible points
///  - all visible pixel coordinates are finite
class TrackSet {
 public:
  TrackSet() = default;
  TrackSet(int numViews, int numPoints);

  int numViews() const { return static_cast<int>(x_.rows()); }
  int numPoints() const { return static_cast<int>(x_.cols()); }

  bool visible(int view, int point) const { return vis_(view, point); }
  void set(int view, int point, double px, double py);
  void clear(int view, int point);

  Eigen::Vector2d pixel(int view, int point) const {
    return {x_(view, point), y_(view, point)};
  }
  /// Homogeneous lift (x, y, 1).
  Eigen::Vector3d homogeneous(int view, int point) const {
    return {x_(view, point), y_(view, point), 1.0};
  }

  int visibleCountInView(int view) const;
  int visibleCountOfPoint(int point) const;
  /// View with the most visible points (lowest index on ties).
  int bestView() const;

  std::vector<int> visiblePoints(int view) const;

  /// Throws DataError on any violated invariant.
  void validate() const;

  /// CSV with header `view,point,x,y,visible`; 0-based indices; rows for
  /// invisible points may be omitted. Validates on load.
  static TrackSet loadCsv(const std::string& path);
  void saveCsv(const std::string& path) const;

  /// Restriction to a subset of views (in the given order).
  TrackSet selectViews(const std::vector<int>& views) const;

 private:
  Eigen::MatrixXd x_, y_;
  Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic> vis_;
};

}  // namespace nrsfm
