#pragma once

#include "splatdyn/common.hpp"
#include "splatdyn/hierarchy.hpp"
#include "splatdyn/propagation.hpp"
#include "splatdyn/providers/provider.hpp"

#include <optional>

namespace splatdyn {

struct ConstraintReport {
  double momentum_loss = 0.0;
  double static_residual = 0.0;
  std::vector<double> mass_drift;    // per level, relative
  std::vector<double> volume_drift;  // per level, relative
};

inline void check_level_shapes(const Hierarchy& h, const LevelPositions& positions, int max_level) {
  if (static_cast<int>(positions.size()) < max_level + 1) {
    throw Error(ErrorCode::shape_mismatch, "positions missing for some hierarchy levels");
  }
  for (int l = 0; l <= max_level; ++l) {
    if (positions[static_cast<std::size_t>(l)].size() != h.level(l).size()) {
      throw Error(ErrorCode::shape_mismatch, "level " + std::to_string(l) + " position count mismatch");
    }
  }
}

// Sum over parents at levels 1..L-1 of || m_c x_c - sum_{i in children} m_i x_i ||^2.
inline double momentum_loss(const Hierarchy& h, const LevelPositions& positions) {
  const int top = h.top_level();
  if (top < 2) return 0.0;
  check_level_shapes(h, positions, top - 1);
  double loss = 0.0;
  for (int l = 1; l <= top - 1; ++l) {
    const auto& nodes = h.level(l);
    const auto& below = h.level(l - 1);
    for (std::size_t c = 0; c < nodes.size(); ++c) {
      Vec3 r = nodes[c].mass * positions[static_cast<std::size_t>(l)][c];
      for (std::size_t i : nodes[c].children) r -= below[i].mass * positions[static_cast<std::size_t>(l - 1)][i];
      loss += r.squaredNorm();
    }
  }
  return loss;
}

// d(momentum_loss)/d(positions), same layout as the input.
inline LevelPositions momentum_loss_gradient(const Hierarchy& h, const LevelPositions& positions) {
  LevelPositions grad(positions.size());
  for (std::size_t l = 0; l < positions.size(); ++l) grad[l].assign(positions[l].size(), Vec3::Zero());
  const int top = h.top_level();
  if (top < 2) return grad;
  check_level_shapes(h, positions, top - 1);
  for (int l = 1; l <= top - 1; ++l) {
    const auto ul = static_cast<std::size_t>(l);
    const auto& nodes = h.level(l);
    const auto& below = h.level(l - 1);
    for (std::size_t c = 0; c < nodes.size(); ++c) {
      Vec3 r = nodes[c].mass * positions[ul][c];
      for (std::size_t i : nodes[c].children) r -= below[i].mass * positions[ul - 1][i];
      grad[ul][c] += 2.0 * nodes[c].mass * r;
      for (std::size_t i : nodes[c].children) grad[ul - 1][i] -= 2.0 * below[i].mass * r;
    }
  }
  return grad;
}

inline double squared_distance_sum(const Positions& a, const Positions& b) {
  if (a.size() != b.size()) throw Error(ErrorCode::shape_mismatch, "position lists differ in length");
  double s = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) s += (a[k] - b[k]).squaredNorm();
  return s;
}

// Static input psi(G0, G0): every slice is the template, zero velocity.
inline ProviderInput static_input(const Hierarchy& h, const SceneTemplate& scene, const LevelPositions& rest,
                                  double dt) {
  ProviderInput in;
  in.hierarchy = &h;
  in.scene = &scene;
  in.current = &rest;
  in.previous = &rest;
  in.previous2 = &rest;
  in.dt = dt;
  in.step = 0;
  return in;
}

inline double static_residual(const SceneTemplate& scene, const Hierarchy& h, GradientProvider& provider,
                              double dt = 1.0 / 50.0) {
  const LevelPositions rest = template_level_positions(h);
  const FieldSet fields = provider.predict(static_input(h, scene, rest, dt));
  const PropagationResult r = propagate_recursive(h, fields, scene);
  return squared_distance_sum(r.positions, rest[0]);
}

// Relative drift of total mass and volume per level. A node's deformed
// volume is the sum of its kernels' deformed volumes; density is fixed, so
// mass follows volume kernel by kernel.
inline ConstraintReport conservation_check(const Hierarchy& h, const PropagationResult& result,
                                           const std::optional<double>& static_res = std::nullopt) {
  const std::size_t nk = h.kernel_count();
  if (result.covariances.size() != nk) {
    throw Error(ErrorCode::shape_mismatch, "result does not match hierarchy kernel count");
  }
  std::vector<double> vol(nk), mass(nk);
  for (std::size_t k = 0; k < nk; ++k) {
    vol[k] = covariance_volume(result.covariances[k]);
    mass[k] = h.levels[0][k].density * vol[k];
  }
  ConstraintReport rep;
  for (int l = 0; l <= h.top_level(); ++l) {
    double ref_m = 0.0, ref_v = 0.0;
    for (const CmsNode& n : h.level(l)) {
      ref_m += n.mass;
      ref_v += n.volume;
    }
    // Deformed totals accumulated through the ancestor map so that every
    // level aggregates its own nodes.
    std::vector<double> node_v(h.level(l).size(), 0.0), node_m(h.level(l).size(), 0.0);
    for (std::size_t k = 0; k < nk; ++k) {
      const std::size_t a = h.ancestors[static_cast<std::size_t>(l)][k];
      node_v[a] += vol[k];
      node_m[a] += mass[k];
    }
    double dm = 0.0, dv = 0.0;
    for (std::size_t n = 0; n < node_v.size(); ++n) {
      dm += node_m[n];
      dv += node_v[n];
    }
    rep.mass_drift.push_back(std::abs(dm - ref_m) / ref_m);
    rep.volume_drift.push_back(std::abs(dv - ref_v) / ref_v);
  }
  if (!result.level_positions.empty()) rep.momentum_loss = momentum_loss(h, result.level_positions);
  if (static_res) rep.static_residual = *static_res;
  return rep;
}

}  // namespace splatdyn
