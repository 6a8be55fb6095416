#pragma once

#include <string>
#include <vector>

#include "nrsfm/geometry.hpp"

namespace nrsfm {

/// Intrinsics as a JSON object
///   {"fx":..,"fy":..,"skew":..,"cx":..,"cy":..,"width":..,"height":..}.
/// Loading validates (focals strictly positive); unknown keys are rejected.
Intrinsics loadIntrinsicsJson(const std::string& path);
void saveIntrinsicsJson(const Intrinsics& K, const std::string& path);

/// Depth table as CSV with header `view,point,lambda`, 0-based indices.
/// Undefined entries are omitted on save and NaN on load. The loaded matrix
/// is sized to the maximum indices seen unless larger dims are requested.
Eigen::MatrixXd loadDepthsCsv(const std::string& path, int numViews = 0,
                              int numPoints = 0);
void saveDepthsCsv(const Eigen::MatrixXd& lambda, const std::string& path);

/// ASCII PLY point cloud (element vertex N; double properties x, y, z).
void savePly(const std::string& path,
             const std::vector<Eigen::Vector3d>& points);
std::vector<Eigen::Vector3d> loadPly(const std::string& path);

/// One PLY per view under `dir`, named `<prefix>000.ply`, `<prefix>001.ply`,
/// ...; points invisible or without a depth in a view are omitted. Returns
/// the written paths in view order.
std::vector<std::string> saveReconstructionPlys(const Reconstruction& recon,
                                                const std::string& dir,
                                                const std::string& prefix);

/// Everything a downstream consumer needs about a synthetic scene, on disk
/// under one directory with fixed file names:
///   tracks.csv, intrinsics.json, gt_depths.csv, template.csv, manifest.json.
struct SceneBundle {
  TrackSet tracks;
  Intrinsics K;
  Eigen::MatrixXd gtDepth;      // empty when gt_depths.csv is absent
  EdgeLengths templateLengths;  // empty when template.csv is absent
  std::string manifestJson;     // raw text of manifest.json ("" when absent)
};

void saveSceneBundle(const TrackSet& tracks, const Intrinsics& K,
                     const Eigen::MatrixXd& gtDepth,
                     const EdgeLengths& templateLengths,
                     const std::string& manifestJson, const std::string& dir);
SceneBundle loadSceneBundle(const std::string& dir);

/// FNV-1a 64-bit hash over the byte contents of the given files, chained in
/// order; file names are mixed in so renames change the hash. Hex string.
std::string contentHashHex(const std::vector<std::string>& paths);

}  // namespace nrsfm
