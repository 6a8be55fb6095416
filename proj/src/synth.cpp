#include "nrsfm/synth.hpp"

#include <cmath>
#include <random>
#include <sstream>

namespace nrsfm {

SceneParams SceneParams::defaults() {
  SceneParams p;
  p.K.fx = p.K.fy = 500.0;
  p.K.cx = 320.0;
  p.K.cy = 240.0;
  p.K.imageWidth = 640.0;
  p.K.imageHeight = 480.0;
  // Radii swept over the views; every view bends differently.
  p.radii.clear();
  for (int l = 0; l < p.numViews; ++l)
    p.radii.push_back(0.4 + 1.6 * l / std::max(1, p.numViews - 1));
  return p;
}

namespace {

std::vector<ViewPose> defaultPoses(const SceneParams& p, int numViews) {
  std::vector<ViewPose> poses(numViews);
  for (int l = 0; l < numViews; ++l) {
    double ay = 0.25 * std::sin(2.0 * M_PI * l / numViews + 0.7);
    double ax = 0.15 * std::cos(2.0 * M_PI * l / numViews);
    Eigen::Matrix3d Ry = Eigen::AngleAxisd(ay, Eigen::Vector3d::UnitY())
                             .toRotationMatrix();
    Eigen::Matrix3d Rx = Eigen::AngleAxisd(ax, Eigen::Vector3d::UnitX())
                             .toRotationMatrix();
    poses[l].R = Rx * Ry;
    poses[l].t = Eigen::Vector3d(0.0, 0.0, p.depth);
  }
  return poses;
}

GeneratedScene finishScene(const SceneParams& p,
                           std::vector<Eigen::Matrix3Xd> surfacePoints,
                           const Eigen::Matrix2Xd& templateUV) {
  const int V = static_cast<int>(surfacePoints.size());
  const int N = static_cast<int>(templateUV.cols());
  std::vector<ViewPose> poses =
      p.poses.empty() ? defaultPoses(p, V) : p.poses;
  if (static_cast<int>(poses.size()) != V)
    throw ConfigError("synth: pose count does not match view count");

  GeneratedScene out;
  out.scene.gridRows = p.gridRows;
  out.scene.gridCols = p.gridCols;
  out.scene.spacing = p.spacing;
  out.scene.templateUV = templateUV;
  out.scene.K = p.K;
  out.scene.noiseSigma = p.noiseSigma;
  out.scene.gtDepth.resize(V, N);
  out.scene.gtPoints.resize(V);

  std::mt19937_64 rng(p.seed);
  std::normal_distribution<double> noise(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  out.tracks = TrackSet(V, N);
  Eigen::Matrix3d K = p.K.matrix();
  for (int l = 0; l < V; ++l) {
    Eigen::Matrix3Xd cam = (poses[l].R * surfacePoints[l]).colwise() + poses[l].t;
    out.scene.gtPoints[l] = cam;
    for (int i = 0; i < N; ++i) {
      double z = cam(2, i);
      if (!(z > 0.0))
        throw ConfigError("synth: view " + std::to_string(l) +
                          " places point " + std::to_string(i) +
                          " behind the camera");
      out.scene.gtDepth(l, i) = z;
      Eigen::Vector3d proj = K * cam.col(i) / z;
      double px = proj[0], py = proj[1];
      if (px < 0.0 || px > p.K.imageWidth || py < 0.0 || py > p.K.imageHeight) {
        std::ostringstream os;
        os << "synth: view " << l << " projects point " << i
           << " outside the image (" << px << "," << py << ")";
        throw ConfigError(os.str());
      }
      if (p.noiseSigma > 0.0) {
        px += p.noiseSigma * noise(rng);
        py += p.noiseSigma * noise(rng);
      }
      out.tracks.set(l, i, px, py);
    }
  }

  if (p.visibilityDropRate > 0.0) {
    for (int l = 0; l < V; ++l)
      for (int i = 0; i < N; ++i)
        if (unit(rng) < p.visibilityDropRate) out.tracks.clear(l, i);
    // Restore the invariants the drops may have broken.
    for (int i = 0; i < N; ++i)
      if (out.tracks.visibleCountOfPoint(i) == 0) {
        int l = static_cast<int>(rng() % V);
        Eigen::Vector3d proj =
            K * out.scene.gtPoints[l].col(i) / out.scene.gtDepth(l, i);
        out.tracks.set(l, i, proj[0], proj[1]);
      }
    for (int l = 0; l < V; ++l)
      for (int i = 0; out.tracks.visibleCountInView(l) < 2 && i < N; ++i) {
        Eigen::Vector3d proj =
            K * out.scene.gtPoints[l].col(i) / out.scene.gtDepth(l, i);
        out.tracks.set(l, i, proj[0], proj[1]);
      }
  }
  out.tracks.validate();
  return out;
}

Eigen::Matrix2Xd gridTemplate(const SceneParams& p) {
  Eigen::Matrix2Xd uv(2, p.gridRows * p.gridCols);
  double w = (p.gridCols - 1) * p.spacing;
  double h = (p.gridRows - 1) * p.spacing;
  int idx = 0;
  for (int r = 0; r < p.gridRows; ++r)
    for (int c = 0; c < p.gridCols; ++c, ++idx)
      uv.col(idx) = Eigen::Vector2d(c * p.spacing - 0.5 * w,
                                    r * p.spacing - 0.5 * h);
  return uv;
}

}  // namespace

GeneratedScene generateCylinderBend(const SceneParams& params) {
  params.K.validate();
  int V = params.radii.empty() ? params.numViews
                               : static_cast<int>(params.radii.size());
  if (V < 1) throw ConfigError("synth: need at least one view");
  Eigen::Matrix2Xd uv = gridTemplate(params);
  double width = (params.gridCols - 1) * params.spacing;

  std::vector<Eigen::Matrix3Xd> pts(V);
  for (int l = 0; l < V; ++l) {
    double r = params.radii.empty() ? 0.0 : params.radii[l];
    bool flat = !(r > 0.0) || !std::isfinite(r);
    if (!flat && r <= width / M_PI)
      throw ConfigError("synth: view " + std::to_string(l) + " radius " +
                        std::to_string(r) + " self-intersects (needs > " +
                        std::to_string(width / M_PI) + ")");
    pts[l].resize(3, uv.cols());
    for (int i = 0; i < uv.cols(); ++i) {
      double s = uv(0, i), y = uv(1, i);
      if (flat)
        pts[l].col(i) = Eigen::Vector3d(s, y, 0.0);
      else
        pts[l].col(i) =
            Eigen::Vector3d(r * std::sin(s / r), y, r * (1.0 - std::cos(s / r)));
    }
  }
  return finishScene(params, std::move(pts), uv);
}

GeneratedScene generateHingeFold(const SceneParams& params) {
  params.K.validate();
  int V = params.foldAngles.empty() ? params.numViews
                                    : static_cast<int>(params.foldAngles.size());
  if (V < 1) throw ConfigError("synth: need at least one view");
  Eigen::Matrix2Xd uv = gridTemplate(params);

  std::vector<Eigen::Matrix3Xd> pts(V);
  for (int l = 0; l < V; ++l) {
    double phi = params.foldAngles.empty() ? 0.0 : params.foldAngles[l];
    pts[l].resize(3, uv.cols());
    for (int i = 0; i < uv.cols(); ++i) {
      double s = uv(0, i), y = uv(1, i);
      if (s <= 0.0)
        pts[l].col(i) = Eigen::Vector3d(s, y, 0.0);
      else
        pts[l].col(i) = Eigen::Vector3d(s * std::cos(phi), y, s * std::sin(phi));
    }
  }
  return finishScene(params, std::move(pts), uv);
}

EdgeLengths templateFor(const SyntheticScene& scene, const NeighborGraph& graph) {
  EdgeLengths out;
  for (const auto& [i, j] : graph.edges())
    out.set(i, j, scene.templateDistance(i, j));
  return out;
}

EvalMetrics evaluate(const Reconstruction& recon, const SyntheticScene& scene,
                     Alignment align) {
  EvalMetrics m;
  m.meanSceneDepth = scene.meanDepth();
  double dot = 0.0, nrm = 0.0;
  std::vector<std::pair<Eigen::Vector3d, Eigen::Vector3d>> pairs;
  for (int l = 0; l < recon.depths.numViews(); ++l)
    for (int i = 0; i < recon.depths.numPoints(); ++i) {
      if (!recon.depths.defined(l, i) || !recon.tracks.visible(l, i)) continue;
      if (l >= scene.numViews() || i >= scene.numPoints())
        throw DataError("evaluate: reconstruction and scene are not index-aligned");
      Eigen::Vector3d x = recon.point(l, i);
      Eigen::Vector3d g = scene.gtPoints[l].col(i);
      dot += x.dot(g);
      nrm += x.squaredNorm();
      pairs.emplace_back(x, g);
    }
  if (pairs.empty()) throw DataError("evaluate: empty overlap");
  m.count = static_cast<int>(pairs.size());
  m.scale = align == Alignment::GlobalScale && nrm > 0.0 ? dot / nrm : 1.0;
  double sq = 0.0, lin = 0.0;
  for (const auto& [x, g] : pairs) {
    double e = (m.scale * x - g).norm();
    sq += e * e;
    lin += e;
  }
  m.rmse = std::sqrt(sq / m.count);
  m.meanError = lin / m.count;
  return m;
}

double focalErrorPercent(const Intrinsics& est, const Intrinsics& gt) {
  return std::abs(est.focal() - gt.focal()) / gt.focal() * 100.0;
}

double principalPointError(const Intrinsics& est, const Intrinsics& gt) {
  double diag = std::hypot(gt.imageWidth > 0 ? gt.imageWidth : est.imageWidth,
                           gt.imageHeight > 0 ? gt.imageHeight : est.imageHeight);
  if (!(diag > 0.0)) throw DataError("principalPointError: no image size");
  return std::hypot(est.cx - gt.cx, est.cy - gt.cy) / diag;
}

}  // namespace nrsfm
