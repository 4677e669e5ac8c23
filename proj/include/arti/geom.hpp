#pragma once

#include <Eigen/Dense>

namespace arti {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using VecX = Eigen::VectorXd;
using MatX = Eigen::MatrixXd;
// rows = bones, 3 columns: gradient of each weight wrt position
using MatX3 = Eigen::Matrix<double, Eigen::Dynamic, 3>;

// Rotation from an axis-angle vector (angle = |v|).
inline Mat3 axis_angle_to_matrix(const Vec3& v) {
  const double angle = v.norm();
  if (angle < 1e-14) return Mat3::Identity();
  return Eigen::AngleAxisd(angle, v / angle).toRotationMatrix();
}

// Distance from p to segment [a,b]; optionally returns the closest point.
inline double point_segment_distance(const Vec3& p, const Vec3& a, const Vec3& b,
                                     Vec3* closest = nullptr) {
  const Vec3 ab = b - a;
  const double len2 = ab.squaredNorm();
  double t = 0.0;
  if (len2 > 0.0) t = std::clamp((p - a).dot(ab) / len2, 0.0, 1.0);
  const Vec3 c = a + t * ab;
  if (closest) *closest = c;
  return (p - c).norm();
}

}  // namespace arti
