#include "nrsfm/tracks.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "nrsfm/errors.hpp"

namespace nrsfm {

TrackSet::TrackSet(int numViews, int numPoints)
    : x_(Eigen::MatrixXd::Zero(numViews, numPoints)),
      y_(Eigen::MatrixXd::Zero(numViews, numPoints)),
      vis_(Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>::Constant(
          numViews, numPoints, false)) {}

void TrackSet::set(int view, int point, double px, double py) {
  x_(view, point) = px;
  y_(view, point) = py;
  vis_(view, point) = true;
}

void TrackSet::clear(int view, int point) { vis_(view, point) = false; }

int TrackSet::visibleCountInView(int view) const {
  int n = 0;
  for (int i = 0; i < numPoints(); ++i) n += vis_(view, i);
  return n;
}

int TrackSet::visibleCountOfPoint(int point) const {
  int n = 0;
  for (int l = 0; l < numViews(); ++l) n += vis_(l, point);
  return n;
}

int TrackSet::bestView() const {
  int best = 0, bestCount = -1;
  for (int l = 0; l < numViews(); ++l) {
    int c = visibleCountInView(l);
    if (c > bestCount) {
      best = l;
      bestCount = c;
    }
  }
  return best;
}

std::vector<int> TrackSet::visiblePoints(int view) const {
  std::vector<int> out;
  for (int i = 0; i < numPoints(); ++i)
    if (vis_(view, i)) out.push_back(i);
  return out;
}

void TrackSet::validate() const {
  if (numViews() < 1 || numPoints() < 1)
    throw DataError("tracks: empty track set");
  for (int i = 0; i < numPoints(); ++i)
    if (visibleCountOfPoint(i) == 0)
      throw DataError("tracks: point " + std::to_string(i) +
                      " is visible in no view");
  for (int l = 0; l < numViews(); ++l)
    if (visibleCountInView(l) < 2)
      throw DataError("tracks: view " + std::to_string(l) +
                      " has fewer than two visible points");
  for (int l = 0; l < numViews(); ++l)
    for (int i = 0; i < numPoints(); ++i)
      if (vis_(l, i) &&
          (!std::isfinite(x_(l, i)) || !std::isfinite(y_(l, i))))
        throw DataError("tracks: non-finite pixel at view " +
                        std::to_string(l) + ", point " + std::to_string(i));
}

TrackSet TrackSet::loadCsv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("tracks: cannot open " + path);
  std::string line;
  if (!std::getline(in, line))
    throw DataError("tracks: empty file " + path);
  // Tolerate whitespace/CR in the header.
  std::string header;
  for (char c : line)
    if (!std::isspace(static_cast<unsigned char>(c))) header += c;
  if (header != "view,point,x,y,visible")
    throw DataError("tracks: bad header in " + path + ": expected "
                    "'view,point,x,y,visible', got '" + line + "'");

  struct Row {
    int view, point, visible;
    double x, y;
  };
  std::vector<Row> rows;
  int maxView = -1, maxPoint = -1;
  int lineNo = 1;
  while (std::getline(in, line)) {
    ++lineNo;
    if (line.empty()) continue;
    std::istringstream ls(line);
    Row r;
    char comma;
    if (!(ls >> r.view >> comma >> r.point >> comma >> r.x >> comma >> r.y >>
          comma >> r.visible))
      throw DataError("tracks: parse error at " + path + ":" +
                      std::to_string(lineNo));
    if (r.view < 0 || r.point < 0 || (r.visible != 0 && r.visible != 1))
      throw DataError("tracks: bad field at " + path + ":" +
                      std::to_string(lineNo));
    maxView = std::max(maxView, r.view);
    maxPoint = std::max(maxPoint, r.point);
    rows.push_back(r);
  }
  if (rows.empty()) throw DataError("tracks: no data rows in " + path);
  TrackSet t(maxView + 1, maxPoint + 1);
  for (const Row& r : rows)
    if (r.visible) t.set(r.view, r.point, r.x, r.y);
  t.validate();
  return t;
}

void TrackSet::saveCsv(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw DataError("tracks: cannot write " + path);
  out << "view,point,x,y,visible\n";
  out.precision(17);
  for (int l = 0; l < numViews(); ++l)
    for (int i = 0; i < numPoints(); ++i)
      if (vis_(l, i))
        out << l << ',' << i << ',' << x_(l, i) << ',' << y_(l, i) << ",1\n";
}

TrackSet TrackSet::selectViews(const std::vector<int>& views) const {
  TrackSet out(static_cast<int>(views.size()), numPoints());
  for (size_t k = 0; k < views.size(); ++k) {
    int l = views[k];
    for (int i = 0; i < numPoints(); ++i)
      if (vis_(l, i)) out.set(static_cast<int>(k), i, x_(l, i), y_(l, i));
  }
  return out;
}

}  // namespace nrsfm
