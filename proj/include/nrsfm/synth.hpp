#pragma once

#include <cstdint>
#include <vector>

#include "nrsfm/geometry.hpp"
#include "nrsfm/graph.hpp"

namespace nrsfm {

struct ViewPose {
  Eigen::Matrix3d R = Eigen::Matrix3d::Identity();
  Eigen::Vector3d t = Eigen::Vector3d::Zero();
};

/// Ground-truth synthetic scene: an isometrically deformed grid observed by
/// a perspective camera. Deformations are developable, so grid geodesics
/// equal flat-template distances to machine precision.
struct SyntheticScene {
  int gridRows = 0, gridCols = 0;
  double spacing = 0.0;
  Eigen::Matrix2Xd templateUV;            // flat coordinates, one column per point
  std::vector<Eigen::Matrix3Xd> gtPoints; // camera-frame points per view
  Eigen::MatrixXd gtDepth;                // V x N
  Intrinsics K;
  double noiseSigma = 0.0;

  int numViews() const { return static_cast<int>(gtPoints.size()); }
  int numPoints() const { return static_cast<int>(templateUV.cols()); }

  /// Template geodesic = distance in the unrolled flat plane.
  double templateDistance(int i, int j) const {
    return (templateUV.col(i) - templateUV.col(j)).norm();
  }
  double meanDepth() const { return gtDepth.mean(); }
};

struct SceneParams {
  int gridRows = 10;
  int gridCols = 15;
  double spacing = 0.045;
  std::vector<double> radii;       // per view; <= 0 means flat
  std::vector<double> foldAngles;  // hinge family only, radians per view
  std::vector<ViewPose> poses;     // empty = defaults
  int numViews = 10;               // used when radii/poses are empty
  double depth = 0.9;              // default pose standoff
  Intrinsics K;
  double noiseSigma = 0.0;
  double visibilityDropRate = 0.0;
  std::uint64_t seed = 1;

  static SceneParams defaults();
};

struct GeneratedScene {
  SyntheticScene scene;
  TrackSet tracks;
};

/// Flat grid isometrically wrapped onto a per-view cylinder, posed,
/// projected, with optional pixel noise and visibility drops.
GeneratedScene generateCylinderBend(const SceneParams& params);

/// Piecewise-rigid fold of two half-grids about the middle column axis;
/// breaks the cylindrical symmetry in calibration tests.
GeneratedScene generateHingeFold(const SceneParams& params);

/// Template lengths on the edge set of a graph over the scene's points.
EdgeLengths templateFor(const SyntheticScene& scene, const NeighborGraph& graph);

enum class Alignment { None, GlobalScale };

struct EvalMetrics {
  double rmse = 0.0;       // over all evaluated observations
  double meanError = 0.0;  // mean 3D point error
  double scale = 1.0;      // applied global scale (1 when align = None)
  int count = 0;
  double meanSceneDepth = 0.0;
};

/// 3D error of a reconstruction against ground truth, optionally after a
/// single least-squares global scale.
EvalMetrics evaluate(const Reconstruction& recon, const SyntheticScene& scene,
                     Alignment align);

double focalErrorPercent(const Intrinsics& est, const Intrinsics& gt);
/// Principal point offset as a fraction of the image diagonal.
double principalPointError(const Intrinsics& est, const Intrinsics& gt);

}  // namespace nrsfm
