#pragma once

#include "splatdyn/providers/provider.hpp"

#include <cmath>

namespace splatdyn {

struct OscillatorParams {
  Vec3 axis = Vec3::UnitZ();
  double amplitude = 0.3;        // radians
  double angular_frequency = 2.0 * 3.14159265358979323846;
  double damping = 0.0;          // 1/s
  double level_falloff = 0.0;    // level l swings by amplitude * falloff^(L - l)
};

// Synthetic ground truth: every node rotates about `axis` by
// amplitude * exp(-damping t) * sin(omega t), scaled per level. Pure
// rotations, so every emitted gradient has unit determinant.
class OscillatorProvider final : public GradientProvider {
 public:
  explicit OscillatorProvider(OscillatorParams params) : p_(params) {
    if (!(p_.amplitude >= 0.0)) throw Error(ErrorCode::invalid_argument, "oscillator amplitude must be >= 0");
    if (!(p_.angular_frequency > 0.0)) {
      throw Error(ErrorCode::invalid_argument, "oscillator frequency must be positive");
    }
    if (!(p_.axis.norm() > 0.0)) throw Error(ErrorCode::invalid_argument, "oscillator axis must be nonzero");
    p_.axis.normalize();
  }

  double angle_at(double t) const {
    return p_.amplitude * std::exp(-p_.damping * t) * std::sin(p_.angular_frequency * t);
  }

  FieldSet fields_at(const Hierarchy& h, double t) const {
    FieldSet fields = identity_fields(h);
    const double base = angle_at(t);
    const int top = h.top_level();
    for (int l = 1; l <= top; ++l) {
      const double angle = base * std::pow(p_.level_falloff, top - l);
      PolarSvdGradient g;
      g.quat_u = canonicalize(Quat(Eigen::AngleAxisd(angle, p_.axis)));
      for (auto& grad : fields[static_cast<std::size_t>(l - 1)].gradients) grad = g;
    }
    return fields;
  }

  FieldSet predict(const ProviderInput& input) override {
    return fields_at(*input.hierarchy, static_cast<double>(input.step + 1) * input.dt);
  }

  std::string name() const override { return "oscillator"; }
  const OscillatorParams& params() const { return p_; }

 private:
  OscillatorParams p_;
};

}  // namespace splatdyn
