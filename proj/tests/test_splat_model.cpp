#include "splatdyn/splat_model.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

using namespace splatdyn;

namespace {

GaussianKernel kernel_with(const Mat3& cov) {
  GaussianKernel k;
  k.covariance = cov;
  return k;
}

// Midpoint-rule integral of exp(-0.5 x^T S^-1 x) over a +-6 sigma box in the
// eigenbasis, plus the first moment for the barycenter check.
struct Moments {
  double mass;
  Vec3 first;
};

Moments grid_moments(const Mat3& cov, const Vec3& mu, double rho, int n) {
  Eigen::SelfAdjointEigenSolver<Mat3> es(cov);
  const Vec3 sd = es.eigenvalues().cwiseSqrt();
  const Mat3 basis = es.eigenvectors();
  const Mat3 inv = cov.inverse();
  Vec3 h;
  for (int a = 0; a < 3; ++a) h[a] = 12.0 * sd[a] / n;
  const double cell = h.prod();
  Moments m{0.0, Vec3::Zero()};
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      for (int k = 0; k < n; ++k) {
        const Vec3 local(-6.0 * sd[0] + (i + 0.5) * h[0], -6.0 * sd[1] + (j + 0.5) * h[1],
                         -6.0 * sd[2] + (k + 0.5) * h[2]);
        const Vec3 x = mu + basis * local;
        const Vec3 d = x - mu;
        const double w = rho * std::exp(-0.5 * d.dot(inv * d)) * cell;
        m.mass += w;
        m.first += w * x;
      }
  return m;
}

}  // namespace

TEST(KernelVolume, UnitDeterminant) {
  const Mat3 cov = Mat3::Identity() / (2.0 * std::numbers::pi);
  EXPECT_NEAR(kernel_volume(kernel_with(cov)), 1.0, 1e-14);
}

TEST(KernelVolume, IdentityCovariance) {
  EXPECT_NEAR(kernel_volume(kernel_with(Mat3::Identity())), std::pow(2.0 * std::numbers::pi, 1.5), 1e-12);
  EXPECT_NEAR(kernel_volume(kernel_with(Mat3::Identity())), 15.7496, 1e-4);
}

TEST(KernelVolume, MatchesGridIntegration) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 3; ++trial) {
    const Mat3 cov = fixtures::random_spd(rng, 0.5);
    const Moments m = grid_moments(cov, Vec3::Zero(), 1.0, 60);
    EXPECT_NEAR(kernel_volume(kernel_with(cov)) / m.mass, 1.0, 1e-3);
  }
}

TEST(KernelVolume, ScalesAsThreeHalves) {
  std::mt19937_64 rng(3);
  const Mat3 cov = fixtures::random_spd(rng);
  for (double s : {0.1, 2.0, 7.5}) {
    EXPECT_NEAR(kernel_volume(kernel_with(s * cov)), std::pow(s, 1.5) * kernel_volume(kernel_with(cov)),
                1e-10 * kernel_volume(kernel_with(s * cov)));
  }
}

TEST(KernelVolume, RejectsNonSpd) {
  Mat3 bad = Mat3::Identity();
  bad(2, 2) = -1.0;
  EXPECT_THROW(kernel_volume(kernel_with(bad)), Error);
  try {
    kernel_volume(kernel_with(bad));
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::invalid_kernel);
  }
}

TEST(KernelMass, DensityTimesVolume) {
  MaterialAttributes a;
  a.density = 2.0;
  EXPECT_NEAR(kernel_mass(kernel_with(Mat3::Identity() / (2.0 * std::numbers::pi)), a), 2.0, 1e-14);
  a.density = 1.0;
  EXPECT_NEAR(kernel_mass(kernel_with(Mat3::Identity()), a), 15.7496, 1e-4);

  std::mt19937_64 rng(5);
  for (int i = 0; i < 10; ++i) {
    GaussianKernel k = kernel_with(fixtures::random_spd(rng));
    a.density = 0.1 + i;
    EXPECT_NEAR(kernel_mass(k, a) / a.density, kernel_volume(k), 1e-12 * kernel_volume(k));
  }
  a.density = 0.0;
  EXPECT_THROW(kernel_mass(kernel_with(Mat3::Identity()), a), Error);
}

TEST(KernelIsCms, BarycenterAtMean) {
  std::mt19937_64 rng(21);
  const Mat3 cov = fixtures::random_spd(rng, 0.2);
  const Vec3 mu(0.3, -1.2, 2.0);
  const Moments m = grid_moments(cov, mu, 1.7, 50);
  const Vec3 bary = m.first / m.mass;
  EXPECT_LT((bary - mu).norm() / mu.norm(), 1e-3);
}

TEST(EvaluateSh, DegreeZeroConstant) {
  VecX c(3);
  c << 1.0, -2.0, 0.5;
  const Vec3 a = evaluate_sh(0, c, Vec3(0, 0, 1));
  const Vec3 b = evaluate_sh(0, c, Vec3(0.6, 0.8, 0));
  EXPECT_NEAR(a[0], 0.28209479, 1e-8);
  EXPECT_NEAR(a[1], -2.0 * 0.28209479, 1e-8);
  EXPECT_EQ(a, b);
}

TEST(EvaluateSh, DegreeOneRotationEquivariance) {
  // The real degree-1 basis is C1 * (y, z, x). Rotating the direction equals
  // rotating the (x, y, z)-ordered coefficient vector by R^T.
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 20; ++trial) {
    const Mat3 r = fixtures::random_unit_quat(rng).toRotationMatrix();
    const Vec3 d = Vec3::Random().normalized();
    VecX coeffs = VecX::Random(sh_coeff_count(1));
    VecX rotated = coeffs;
    for (int ch = 0; ch < 3; ++ch) {
      const Vec3 xyz(coeffs[3 * 3 + ch], coeffs[3 * 1 + ch], coeffs[3 * 2 + ch]);
      const Vec3 xyz_r = r.transpose() * xyz;
      rotated[3 * 3 + ch] = xyz_r.x();
      rotated[3 * 1 + ch] = xyz_r.y();
      rotated[3 * 2 + ch] = xyz_r.z();
    }
    const Vec3 lhs = evaluate_sh(1, coeffs, r * d);
    const Vec3 rhs = evaluate_sh(1, rotated, d);
    EXPECT_LT((lhs - rhs).norm(), 1e-12);
  }
}

TEST(EvaluateSh, Linearity) {
  std::mt19937_64 rng(2);
  const Vec3 d = Vec3(1, 2, -0.5).normalized();
  for (int degree = 0; degree <= 3; ++degree) {
    VecX a = VecX::Random(sh_coeff_count(degree));
    VecX b = VecX::Random(sh_coeff_count(degree));
    const Vec3 lhs = evaluate_sh(degree, 2.0 * a - 3.0 * b, d);
    const Vec3 rhs = 2.0 * evaluate_sh(degree, a, d) - 3.0 * evaluate_sh(degree, b, d);
    EXPECT_LT((lhs - rhs).norm(), 1e-12);
  }
}

TEST(EvaluateSh, BasisIsOrthonormal) {
  // Monte-Carlo-free check: Lebedev-like product quadrature over the sphere.
  const int nt = 64, np = 128;
  double gram[16][16] = {};
  for (int i = 0; i < nt; ++i) {
    const double theta = (i + 0.5) * std::numbers::pi / nt;
    for (int j = 0; j < np; ++j) {
      const double phi = (j + 0.5) * 2.0 * std::numbers::pi / np;
      const Vec3 d(std::sin(theta) * std::cos(phi), std::sin(theta) * std::sin(phi), std::cos(theta));
      double y[16];
      sh::basis(3, d, y);
      const double w = std::sin(theta) * (std::numbers::pi / nt) * (2.0 * std::numbers::pi / np);
      for (int a = 0; a < 16; ++a)
        for (int b = 0; b < 16; ++b) gram[a][b] += w * y[a] * y[b];
    }
  }
  for (int a = 0; a < 16; ++a)
    for (int b = 0; b < 16; ++b) EXPECT_NEAR(gram[a][b], a == b ? 1.0 : 0.0, 2e-3) << a << "," << b;
}

TEST(EvaluateSh, DirectionValidation) {
  VecX c = VecX::Ones(3);
  EXPECT_NO_THROW(evaluate_sh(0, c, Vec3(0, 0, 1.0005)));
  EXPECT_THROW(evaluate_sh(0, c, Vec3(0, 0, 1.1)), Error);
  EXPECT_THROW(evaluate_sh(1, c, Vec3(0, 0, 1)), Error);
}

TEST(ShDisplay, OffsetAndClamp) {
  const Vec3 out = sh_to_display_rgb(Vec3(-1.0, 0.0, 0.7));
  EXPECT_EQ(out, Vec3(0.0, 0.5, 1.0));
}
