#pragma once

#include <Eigen/Dense>
#include <string>

namespace nrsfm {

/// Pinhole intrinsics. Stored entry-wise; the 3x3 matrix form is
/// upper-triangular with unit (3,3) entry.
struct Intrinsics {
  double fx = 1.0;
  double fy = 1.0;
  double skew = 0.0;
  double cx = 0.0;
  double cy = 0.0;
  double imageWidth = 0.0;
  double imageHeight = 0.0;

  Eigen::Matrix3d matrix() const;
  Eigen::Matrix3d inverse() const;

  /// Sightline K^-1 u for a homogeneous pixel.
  Eigen::Vector3d ray(const Eigen::Vector3d& u) const;
  /// Unit-norm sightline.
  Eigen::Vector3d unitRay(const Eigen::Vector3d& u) const;
  /// ||K^-1 u||.
  double rayNorm(const Eigen::Vector3d& u) const;

  /// Mean of the two focal lengths; the scalar used by sweep deltas.
  double focal() const { return 0.5 * (fx + fy); }

  /// Throws DataError if fx/fy are not strictly positive.
  void validate() const;

  /// Half of the mean image size for the focal, principal point at the
  /// image center. The standard initial guess when nothing is known.
  static Intrinsics defaultGuess(double width, double height);

  /// From an upper-triangular matrix, normalized to unit (3,3).
  static Intrinsics fromMatrix(const Eigen::Matrix3d& K, double width = 0.0,
                               double height = 0.0);

  bool operator==(const Intrinsics& o) const = default;
};

/// Image of the absolute conic, Omega = K^-T K^-1, scale fixed by
/// omega(3,3) = 1. Validity (positive definiteness) is queried, not assumed.
struct IAC {
  Eigen::Matrix3d omega = Eigen::Matrix3d::Identity();

  /// Symmetrizes and rescales to omega(3,3) = 1. Throws DataError when the
  /// input is asymmetric beyond 1e-12 or has a vanishing (3,3) entry.
  static IAC fromMatrix(const Eigen::Matrix3d& m);

  static IAC fromIntrinsics(const Intrinsics& K);

  /// All three leading principal minors strictly positive.
  bool isPositiveDefinite() const;
};

std::string describe(const Intrinsics& K);

}  // namespace nrsfm
