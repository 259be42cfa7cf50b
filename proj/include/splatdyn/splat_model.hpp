#pragma once

#include "splatdyn/common.hpp"
#include "splatdyn/log.hpp"

#include <cmath>
#include <numbers>

namespace splatdyn {

inline constexpr int kMaxShDegree = 3;

constexpr std::size_t sh_coeff_count(int degree) {
  return 3u * static_cast<std::size_t>((degree + 1) * (degree + 1));
}

// SH coefficients are stored coefficient-major with interleaved channels:
// sh_coeffs[3 * basis_index + channel], basis_index = l * (l + 1) + m.
struct GaussianKernel {
  Vec3 position = Vec3::Zero();
  Mat3 covariance = Mat3::Identity();
  int sh_degree = 0;
  VecX sh_coeffs = VecX::Zero(3);
  double opacity = 1.0;

  EIGEN_MAKE_ALIGNED_OPERATOR_NEW
};

struct MaterialAttributes {
  double density = 1.0;
  VecX attribute_vector = VecX::Zero(4);
};

struct SceneTemplate {
  std::vector<GaussianKernel> kernels;
  std::vector<MaterialAttributes> attributes;
  std::size_t root_kernel_id = 0;

  std::size_t size() const { return kernels.size(); }
  const Vec3& root_position() const { return kernels.at(root_kernel_id).position; }
};

inline void validate_kernel(const GaussianKernel& kernel, std::size_t index = 0) {
  if (!kernel.position.allFinite()) {
    throw Error(ErrorCode::invalid_kernel, "kernel " + std::to_string(index) + " has non-finite position");
  }
  if (!is_spd(kernel.covariance)) {
    throw Error(ErrorCode::invalid_kernel, "kernel " + std::to_string(index) + " covariance is not SPD");
  }
  if (!(kernel.opacity >= 0.0 && kernel.opacity <= 1.0)) {
    throw Error(ErrorCode::invalid_kernel, "kernel " + std::to_string(index) + " opacity outside [0,1]");
  }
  if (kernel.sh_degree < 0 || kernel.sh_degree > kMaxShDegree ||
      static_cast<std::size_t>(kernel.sh_coeffs.size()) != sh_coeff_count(kernel.sh_degree)) {
    throw Error(ErrorCode::invalid_kernel, "kernel " + std::to_string(index) + " has inconsistent SH layout");
  }
}

inline void validate_scene(const SceneTemplate& scene) {
  if (scene.kernels.size() != scene.attributes.size()) {
    throw Error(ErrorCode::shape_mismatch, "kernel and attribute counts differ");
  }
  if (!scene.kernels.empty() && scene.root_kernel_id >= scene.kernels.size()) {
    throw Error(ErrorCode::invalid_argument, "root kernel id out of range");
  }
  std::size_t dim = scene.attributes.empty() ? 0 : scene.attributes.front().attribute_vector.size();
  for (std::size_t i = 0; i < scene.kernels.size(); ++i) {
    validate_kernel(scene.kernels[i], i);
    if (!(scene.attributes[i].density > 0.0)) {
      throw Error(ErrorCode::invalid_argument, "attribute " + std::to_string(i) + " density must be positive");
    }
    if (static_cast<std::size_t>(scene.attributes[i].attribute_vector.size()) != dim) {
      throw Error(ErrorCode::shape_mismatch, "attribute " + std::to_string(i) + " vector dimension differs");
    }
  }
}

// Equivalent volume of a Gaussian kernel: the integral of the unnormalized
// density exp(-0.5 (x-mu)^T Sigma^-1 (x-mu)), i.e. sqrt(det(2 pi Sigma)).
inline double covariance_volume(const Mat3& covariance) {
  if (!is_spd(covariance)) {
    throw Error(ErrorCode::invalid_kernel, "covariance is not SPD");
  }
  const double two_pi = 2.0 * std::numbers::pi;
  return std::sqrt((two_pi * covariance).determinant());
}

inline double kernel_volume(const GaussianKernel& kernel) {
  return covariance_volume(kernel.covariance);
}

inline double kernel_mass(const GaussianKernel& kernel, const MaterialAttributes& attrs) {
  if (!(attrs.density > 0.0)) {
    throw Error(ErrorCode::invalid_argument, "density must be positive");
  }
  return attrs.density * kernel_volume(kernel);
}

namespace sh {

inline constexpr double kC0 = 0.28209479177387814;
inline constexpr double kC1 = 0.4886025119029199;
inline constexpr double kC2[5] = {1.0925484305920792, 1.0925484305920792, 0.31539156525252005,
                                  1.0925484305920792, 0.5462742152960396};
inline constexpr double kC3[7] = {0.5900435899266435, 2.890611442640554, 0.4570457994644658,
                                  0.3731763325901154, 0.4570457994644658, 1.445305721320277,
                                  0.5900435899266435};

// Real SH basis without the Condon-Shortley phase, ordered by l then m = -l..l.
inline void basis(int degree, const Vec3& d, std::span<double> out) {
  const double x = d.x(), y = d.y(), z = d.z();
  out[0] = kC0;
  if (degree < 1) return;
  out[1] = kC1 * y;
  out[2] = kC1 * z;
  out[3] = kC1 * x;
  if (degree < 2) return;
  const double xx = x * x, yy = y * y, zz = z * z;
  out[4] = kC2[0] * x * y;
  out[5] = kC2[1] * y * z;
  out[6] = kC2[2] * (2.0 * zz - xx - yy);
  out[7] = kC2[3] * x * z;
  out[8] = kC2[4] * (xx - yy);
  if (degree < 3) return;
  out[9] = kC3[0] * y * (3.0 * xx - yy);
  out[10] = kC3[1] * x * y * z;
  out[11] = kC3[2] * y * (4.0 * zz - xx - yy);
  out[12] = kC3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy);
  out[13] = kC3[4] * x * (4.0 * zz - xx - yy);
  out[14] = kC3[5] * z * (xx - yy);
  out[15] = kC3[6] * x * (xx - 3.0 * yy);
}

}  // namespace sh

inline Vec3 evaluate_sh(int degree, const VecX& sh_coeffs, const Vec3& direction) {
  if (degree < 0 || degree > kMaxShDegree) {
    throw Error(ErrorCode::invalid_argument, "SH degree must be in [0,3]");
  }
  if (static_cast<std::size_t>(sh_coeffs.size()) != sh_coeff_count(degree)) {
    throw Error(ErrorCode::shape_mismatch, "SH coefficient count does not match degree");
  }
  Vec3 d = direction;
  const double deviation = std::abs(d.norm() - 1.0);
  if (!(deviation <= 1e-9)) {
    if (!(deviation < 1e-3)) {
      throw Error(ErrorCode::invalid_argument, "view direction is not unit length");
    }
    log::warn("evaluate_sh: renormalizing view direction (|d| - 1 = ", deviation, ")");
    d.normalize();
  }
  double values[16];
  const int count = (degree + 1) * (degree + 1);
  sh::basis(degree, d, std::span<double>(values, count));
  Vec3 rgb = Vec3::Zero();
  for (int i = 0; i < count; ++i) {
    for (int c = 0; c < 3; ++c) rgb[c] += values[i] * sh_coeffs[3 * i + c];
  }
  return rgb;
}

inline Vec3 evaluate_sh(const GaussianKernel& kernel, const Vec3& direction) {
  return evaluate_sh(kernel.sh_degree, kernel.sh_coeffs, direction);
}

// Render/export convention of common splat files: +0.5 offset, clamp to [0,1].
inline Vec3 sh_to_display_rgb(const Vec3& rgb) {
  return (rgb.array() + 0.5).min(1.0).max(0.0).matrix();
}

}  // namespace splatdyn
