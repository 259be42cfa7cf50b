#pragma once

#include "splatdyn/common.hpp"

#include <cmath>

namespace splatdyn {

// Deformation gradient F = U diag(lambda) V^T with U, V stored as unit
// quaternions. Quaternion coefficients follow Eigen: (w, x, y, z).
struct PolarSvdGradient {
  Quat quat_u = Quat::Identity();
  Quat quat_v = Quat::Identity();
  Vec3 lambda = Vec3::Ones();

  static PolarSvdGradient identity() { return {}; }

  EIGEN_MAKE_ALIGNED_OPERATOR_NEW
};

inline Mat3 quat_to_rotation(const Quat& q) {
  const double n = q.norm();
  if (!(n > 0.0) || !std::isfinite(n)) {
    throw Error(ErrorCode::invalid_argument, "cannot convert a zero quaternion to a rotation");
  }
  const double w = q.w() / n, x = q.x() / n, y = q.y() / n, z = q.z() / n;
  Mat3 r;
  r << 1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y),
       2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x),
       2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y);
  return r;
}

// Double cover: q and -q are the same rotation; serialized form has w >= 0.
inline Quat canonicalize(const Quat& q) {
  Quat out = q.normalized();
  if (out.w() < 0.0) out.coeffs() = -out.coeffs();
  return out;
}

// Divides by the geometric mean so the product of the result is one.
inline Vec3 normalize_lambda(double p, double q, double r) {
  if (!(p > 0.0 && q > 0.0 && r > 0.0) || !std::isfinite(p) || !std::isfinite(q) ||
      !std::isfinite(r)) {
    throw Error(ErrorCode::invalid_argument, "singular values must be positive and finite");
  }
  // Geometric mean through logs keeps extreme triples representable.
  const double g = std::exp((std::log(p) + std::log(q) + std::log(r)) / 3.0);
  return {p / g, q / g, r / g};
}

inline Vec3 normalize_lambda(const Vec3& lambda) {
  return normalize_lambda(lambda.x(), lambda.y(), lambda.z());
}

inline void validate(const PolarSvdGradient& g) {
  if (std::abs(g.quat_u.norm() - 1.0) > 1e-9 || std::abs(g.quat_v.norm() - 1.0) > 1e-9) {
    throw Error(ErrorCode::invalid_argument, "gradient quaternions must be unit length");
  }
  if (!(g.lambda.minCoeff() > 0.0) || !g.lambda.allFinite()) {
    throw Error(ErrorCode::invalid_argument, "gradient singular values must be positive");
  }
}

inline Mat3 compose(const PolarSvdGradient& g) {
  const Mat3 u = quat_to_rotation(g.quat_u);
  const Mat3 v = quat_to_rotation(g.quat_v);
  return u * g.lambda.asDiagonal() * v.transpose();
}

inline Mat3 deformation_rotation(const PolarSvdGradient& g) {
  return quat_to_rotation(g.quat_u) * quat_to_rotation(g.quat_v).transpose();
}

inline Mat3 transform_covariance(const Mat3& f, const Mat3& covariance) {
  const double det = f.determinant();
  if (!std::isfinite(det) || std::abs(det) < 1e-300) {
    throw Error(ErrorCode::invalid_argument, "deformation gradient is singular");
  }
  Mat3 out = f * covariance * f.transpose();
  return 0.5 * (out + out.transpose());
}

}  // namespace splatdyn
