#pragma once

#include "splatdyn/common.hpp"
#include "splatdyn/hierarchy.hpp"
#include "splatdyn/propagation.hpp"

#include <memory>
#include <string>

namespace splatdyn {

// Positions of every node at every level (index 0 = kernels) for one time slice.
using LevelPositions = std::vector<Positions>;

// Everything a deformation-gradient provider may look at to advance from t
// to t + 1: the last three slices, the frame spacing and the fixed scene.
struct ProviderInput {
  const Hierarchy* hierarchy = nullptr;
  const SceneTemplate* scene = nullptr;
  const LevelPositions* current = nullptr;    // t
  const LevelPositions* previous = nullptr;   // t - 1
  const LevelPositions* previous2 = nullptr;  // t - 2
  double dt = 1.0 / 50.0;
  std::size_t step = 0;  // index of the current slice

  double time() const { return static_cast<double>(step) * dt; }
};

class GradientProvider {
 public:
  virtual ~GradientProvider() = default;
  virtual FieldSet predict(const ProviderInput& input) = 0;
  virtual std::string name() const = 0;
};

// Material-space positions for every level of the hierarchy.
inline LevelPositions template_level_positions(const Hierarchy& h) {
  LevelPositions out(h.levels.size());
  for (std::size_t l = 0; l < h.levels.size(); ++l) {
    out[l].resize(h.levels[l].size());
    for (std::size_t n = 0; n < h.levels[l].size(); ++n) out[l][n] = h.levels[l][n].position;
  }
  return out;
}

// Recomputes every CMS barycenter from the kernel positions, bottom-up.
inline void recompute_barycenters(const Hierarchy& h, LevelPositions& positions) {
  for (std::size_t l = 1; l < h.levels.size(); ++l) {
    positions[l].assign(h.levels[l].size(), Vec3::Zero());
    for (std::size_t n = 0; n < h.levels[l].size(); ++n) {
      const CmsNode& node = h.levels[l][n];
      Vec3 acc = Vec3::Zero();
      for (std::size_t c : node.children) acc += h.levels[l - 1][c].mass * positions[l - 1][c];
      positions[l][n] = acc / node.mass;
    }
  }
}

class IdentityProvider final : public GradientProvider {
 public:
  FieldSet predict(const ProviderInput& input) override { return identity_fields(*input.hierarchy); }
  std::string name() const override { return "identity"; }
};

// Applies a fixed field set regardless of the input; handy for tests and
// for replaying hand-built deformations.
class FixedProvider final : public GradientProvider {
 public:
  explicit FixedProvider(FieldSet fields) : fields_(std::move(fields)) {}
  FieldSet predict(const ProviderInput&) override { return fields_; }
  std::string name() const override { return "fixed"; }

 private:
  FieldSet fields_;
};

}  // namespace splatdyn
