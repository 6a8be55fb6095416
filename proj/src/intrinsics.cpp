#include "nrsfm/intrinsics.hpp"

#include <cmath>
#include <sstream>

#include "nrsfm/errors.hpp"

namespace nrsfm {

Eigen::Matrix3d Intrinsics::matrix() const {
  Eigen::Matrix3d K;
  K << fx, skew, cx, 0.0, fy, cy, 0.0, 0.0, 1.0;
  return K;
}

Eigen::Matrix3d Intrinsics::inverse() const {
  // Closed-form inverse of the upper-triangular K.
  Eigen::Matrix3d Kinv;
  Kinv << 1.0 / fx, -skew / (fx * fy), (skew * cy - fy * cx) / (fx * fy),  //
      0.0, 1.0 / fy, -cy / fy,                                            //
      0.0, 0.0, 1.0;
  return Kinv;
}

Eigen::Vector3d Intrinsics::ray(const Eigen::Vector3d& u) const {
  return inverse() * u;
}

Eigen::Vector3d Intrinsics::unitRay(const Eigen::Vector3d& u) const {
  Eigen::Vector3d r = ray(u);
  return r / r.norm();
}

double Intrinsics::rayNorm(const Eigen::Vector3d& u) const {
  return ray(u).norm();
}

void Intrinsics::validate() const {
  if (!(fx > 0.0) || !(fy > 0.0))
    throw DataError("intrinsics: focal lengths must be strictly positive (fx=" +
                    std::to_string(fx) + ", fy=" + std::to_string(fy) + ")");
  if (!std::isfinite(fx) || !std::isfinite(fy) || !std::isfinite(skew) ||
      !std::isfinite(cx) || !std::isfinite(cy))
    throw DataError("intrinsics: non-finite entry");
}

Intrinsics Intrinsics::defaultGuess(double width, double height) {
  Intrinsics K;
  K.fx = K.fy = 0.5 * (0.5 * (width + height));
  K.cx = 0.5 * width;
  K.cy = 0.5 * height;
  K.imageWidth = width;
  K.imageHeight = height;
  return K;
}

Intrinsics Intrinsics::fromMatrix(const Eigen::Matrix3d& K, double width,
                                  double height) {
  if (std::abs(K(2, 2)) < 1e-300)
    throw DataError("intrinsics: matrix has zero (3,3) entry");
  Eigen::Matrix3d M = K / K(2, 2);
  Intrinsics out;
  out.fx = M(0, 0);
  out.fy = M(1, 1);
  out.skew = M(0, 1);
  out.cx = M(0, 2);
  out.cy = M(1, 2);
  out.imageWidth = width;
  out.imageHeight = height;
  out.validate();
  return out;
}

IAC IAC::fromMatrix(const Eigen::Matrix3d& m) {
  double scale = m.cwiseAbs().maxCoeff();
  if ((m - m.transpose()).cwiseAbs().maxCoeff() > 1e-12 * std::max(1.0, scale))
    throw DataError("IAC: matrix is not symmetric");
  if (std::abs(m(2, 2)) < 1e-14 * std::max(1.0, scale))
    throw DataError("IAC: cannot normalize, (3,3) entry vanishes");
  IAC out;
  out.omega = 0.5 * (m + m.transpose()) / m(2, 2);
  return out;
}

IAC IAC::fromIntrinsics(const Intrinsics& K) {
  Eigen::Matrix3d Kinv = K.inverse();
  return fromMatrix(Kinv.transpose() * Kinv);
}

bool IAC::isPositiveDefinite() const {
  double m1 = omega(0, 0);
  double m2 = omega(0, 0) * omega(1, 1) - omega(0, 1) * omega(1, 0);
  double m3 = omega.determinant();
  return m1 > 0.0 && m2 > 0.0 && m3 > 0.0;
}

std::string describe(const Intrinsics& K) {
  std::ostringstream os;
  os << "fx=" << K.fx << " fy=" << K.fy << " skew=" << K.skew << " cx=" << K.cx
     << " cy=" << K.cy;
  return os.str();
}

}  // namespace nrsfm
