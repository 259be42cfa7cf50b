#pragma once

#include <Eigen/Core>
#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <Eigen/Geometry>

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace splatdyn {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Quat = Eigen::Quaterniond;
using VecX = Eigen::VectorXd;

using Positions = std::vector<Vec3, Eigen::aligned_allocator<Vec3>>;
using Matrices = std::vector<Mat3, Eigen::aligned_allocator<Mat3>>;

// Every failure surfaced by the library carries one of these codes so that
// callers (the CLI in particular) can map them onto exit codes and messages.
enum class ErrorCode {
  invalid_kernel,
  invalid_argument,
  config,
  shape_mismatch,
  non_finite,
  version_mismatch,
  malformed_record,
  non_spd,
  io,
  provider,
};

inline const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::invalid_kernel: return "invalid-kernel";
    case ErrorCode::invalid_argument: return "invalid-argument";
    case ErrorCode::config: return "config";
    case ErrorCode::shape_mismatch: return "shape-mismatch";
    case ErrorCode::non_finite: return "non-finite";
    case ErrorCode::version_mismatch: return "version-mismatch";
    case ErrorCode::malformed_record: return "malformed-record";
    case ErrorCode::non_spd: return "non-spd";
    case ErrorCode::io: return "io";
    case ErrorCode::provider: return "provider";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

inline bool all_finite(const Vec3& v) { return v.allFinite(); }

// Cholesky succeeds iff the (symmetrized) matrix is positive definite.
inline bool is_spd(const Mat3& m) {
  if (!m.allFinite()) return false;
  if ((m - m.transpose()).cwiseAbs().maxCoeff() > 1e-9 * (1.0 + m.cwiseAbs().maxCoeff())) {
    return false;
  }
  Eigen::LLT<Mat3> llt(0.5 * (m + m.transpose()));
  return llt.info() == Eigen::Success;
}

}  // namespace splatdyn
