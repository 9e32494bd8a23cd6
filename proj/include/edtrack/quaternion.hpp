#pragma once

#include <array>

#include "edtrack/types.hpp"

namespace edtrack {

// Quaternions are stored scalar-first (w, x, y, z) and need not be unit length:
// rotations are always taken from q / |q|, so the solver may move q off the
// unit sphere while the norm penalty pulls it back.

/// Identity quaternion (1, 0, 0, 0).
inline Vec4 identity_quaternion() { return {1.0, 0.0, 0.0, 0.0}; }

/// Quaternion for a rotation of `angle` radians about `axis` (normalized here).
inline Vec4 axis_angle_quaternion(const Vec3& axis, double angle) {
  const Vec3 a = axis.normalized();
  const double s = std::sin(0.5 * angle);
  return {std::cos(0.5 * angle), a.x() * s, a.y() * s, a.z() * s};
}

/// Homogeneous-quadratic rotation form M(q) with R(q) = M(q) / |q|^2.
template <typename Scalar>
Mat3T<Scalar> quaternion_quadratic_form(const Vec4T<Scalar>& q) {
  const Scalar w = q(0), x = q(1), y = q(2), z = q(3);
  const Scalar two(2);
  Mat3T<Scalar> m;
  m(0, 0) = w * w + x * x - y * y - z * z;
  m(0, 1) = two * (x * y - w * z);
  m(0, 2) = two * (x * z + w * y);
  m(1, 0) = two * (x * y + w * z);
  m(1, 1) = w * w - x * x + y * y - z * z;
  m(1, 2) = two * (y * z - w * x);
  m(2, 0) = two * (x * z - w * y);
  m(2, 1) = two * (y * z + w * x);
  m(2, 2) = w * w - x * x - y * y + z * z;
  return m;
}

/// Rotation matrix of the normalized quaternion. Throws on a zero quaternion.
template <typename Scalar>
Mat3T<Scalar> rotation_from_quaternion(const Vec4T<Scalar>& q) {
  const Scalar s = q.squaredNorm();
  if (!(s > Scalar(0))) throw InvalidParameterError("quaternion has zero norm");
  Mat3T<Scalar> m = quaternion_quadratic_form(q);
  return m / s;
}

/// Partial derivatives dR/dq_k, k = w, x, y, z, of R(q) = M(q) / |q|^2.
inline std::array<Mat3, 4> rotation_jacobian(const Vec4& q) {
  const double s = q.squaredNorm();
  if (!(s > 0)) throw InvalidParameterError("quaternion has zero norm");
  const double w = q(0), x = q(1), y = q(2), z = q(3);
  std::array<Mat3, 4> dm;
  dm[0] << w, -z, y,
           z, w, -x,
           -y, x, w;
  dm[1] << x, y, z,
           y, -x, -w,
           z, w, -x;
  dm[2] << -y, x, w,
           x, y, z,
           -w, z, -y;
  dm[3] << -z, -w, x,
           w, -z, y,
           x, y, z;
  const Mat3 m = quaternion_quadratic_form<double>(q);
  std::array<Mat3, 4> out;
  for (int k = 0; k < 4; ++k) out[k] = 2.0 * dm[k] / s - m * (2.0 * q(k) / (s * s));
  return out;
}

/// Rigid transform x -> R x + t built from a (possibly non-unit) quaternion.
struct RigidTransform {
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();

  Vec3 apply_point(const Vec3& p) const { return rotation * p + translation; }
  Vec3 apply_direction(const Vec3& d) const { return rotation * d; }

  /// Homogeneous application: w = 1 for points, w = 0 for directions.
  Eigen::Vector4d apply(const Eigen::Vector4d& h) const {
    Eigen::Vector4d out;
    out.head<3>() = rotation * h.head<3>() + h(3) * translation;
    out(3) = h(3);
    return out;
  }

  Eigen::Matrix4d matrix() const {
    Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
    m.topLeftCorner<3, 3>() = rotation;
    m.topRightCorner<3, 1>() = translation;
    return m;
  }
};

inline RigidTransform quat_transform(const Vec4& q, const Vec3& b) {
  return {rotation_from_quaternion<double>(q), b};
}

}  // namespace edtrack
