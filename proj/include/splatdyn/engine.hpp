#pragma once

#include "splatdyn/common.hpp"
#include "splatdyn/hierarchy.hpp"
#include "splatdyn/propagation.hpp"
#include "splatdyn/providers/provider.hpp"

#include <algorithm>
#include <map>
#include <optional>
#include <set>

namespace splatdyn {

struct StateSlice {
  LevelPositions level_positions;  // [0] = kernel centers
  Matrices covariances;
  Matrices rotations;

  const Positions& kernel_positions() const { return level_positions.front(); }
};

// Two consecutive slices (t, t-1) plus the CMS positions at t-2 that the
// acceleration feature needs. Self-contained: stepping reads nothing else.
struct SimState {
  StateSlice current;
  StateSlice previous;
  LevelPositions previous2;
  std::size_t t = 0;
  double dt = 1.0 / 50.0;
};

struct ForceEvent {
  std::vector<std::size_t> kernel_ids;
  Vec3 force = Vec3::Zero();
  std::size_t step = 0;  // applied to the slice at this time index
};

struct Trajectory {
  double dt = 1.0 / 50.0;
  std::uint64_t scene_hash = 0;
  std::size_t first_step = 0;
  std::vector<Positions> frames;
  std::vector<Matrices> covariances;  // optional, empty when not recorded
};

inline StateSlice template_slice(const Hierarchy& h, const SceneTemplate& scene) {
  StateSlice s;
  s.level_positions = template_level_positions(h);
  s.covariances.resize(scene.size());
  for (std::size_t k = 0; k < scene.size(); ++k) s.covariances[k] = scene.kernels[k].covariance;
  s.rotations.assign(scene.size(), Mat3::Identity());
  return s;
}

// Both slices start at the template (zero velocity) unless explicit kernel
// positions for t = -1 are supplied. The t-2 slice continues the t-1 -> t
// motion backwards, so the initial acceleration is zero.
inline SimState bootstrap(const SceneTemplate& scene, const Hierarchy& h, double dt,
                          const std::optional<Positions>& previous_override = std::nullopt) {
  if (!(dt > 0.0) || !std::isfinite(dt)) throw Error(ErrorCode::invalid_argument, "dt must be positive");
  if (scene.size() != h.kernel_count()) {
    throw Error(ErrorCode::shape_mismatch, "scene and hierarchy kernel counts differ");
  }
  SimState s;
  s.dt = dt;
  s.current = template_slice(h, scene);
  s.previous = s.current;
  if (previous_override) {
    if (previous_override->size() != scene.size()) {
      throw Error(ErrorCode::shape_mismatch, "x_{-1} override has " + std::to_string(previous_override->size()) +
                                                 " positions, scene has " + std::to_string(scene.size()));
    }
    s.previous.level_positions[0] = *previous_override;
    recompute_barycenters(h, s.previous.level_positions);
  }
  s.previous2 = s.previous.level_positions;
  for (std::size_t l = 0; l < s.previous2.size(); ++l) {
    for (std::size_t n = 0; n < s.previous2[l].size(); ++n) {
      s.previous2[l][n] = 2.0 * s.previous.level_positions[l][n] - s.current.level_positions[l][n];
    }
  }
  return s;
}

inline ProviderInput make_provider_input(const SimState& state, const Hierarchy& h, const SceneTemplate& scene) {
  ProviderInput in;
  in.hierarchy = &h;
  in.scene = &scene;
  in.current = &state.current.level_positions;
  in.previous = &state.previous.level_positions;
  in.previous2 = &state.previous2;
  in.dt = state.dt;
  in.step = state.t;
  return in;
}

inline StateSlice slice_from(PropagationResult&& r) {
  StateSlice s;
  s.level_positions = std::move(r.level_positions);
  s.covariances = std::move(r.covariances);
  s.rotations = std::move(r.rotations);
  return s;
}

// Fixed-root boundary condition: the designated static kernel stays at x_r.
inline void pin_root(PropagationResult& r, const SceneTemplate& scene) {
  const Vec3 root = scene.root_position();
  r.positions[scene.root_kernel_id] = root;
  if (!r.level_positions.empty()) r.level_positions[0][scene.root_kernel_id] = root;
}

// Advances t -> t + 1. Deformed states are always rebuilt from the material
// template, never from the previous deformed state.
inline SimState step(const SimState& state, const Hierarchy& h, GradientProvider& provider,
                     const SceneTemplate& scene) {
  try {
    const FieldSet fields = provider.predict(make_provider_input(state, h, scene));
    SimState next;
    next.dt = state.dt;
    next.t = state.t + 1;
    next.previous2 = state.previous.level_positions;
    next.previous = state.current;
    PropagationResult result = propagate_recursive(h, fields, scene);
    pin_root(result, scene);
    next.current = slice_from(std::move(result));
    return next;
  } catch (const Error& e) {
    throw Error(e.code(), "step " + std::to_string(state.t) + ": " + e.what());
  }
}

// Converts a force into a displacement of the selected kernels,
// dx = 0.5 (f / m_k) dt^2, and refreshes the barycenters that contain them.
inline SimState apply_force(const SimState& state, const ForceEvent& event, const Hierarchy& h) {
  if (!event.force.allFinite()) throw Error(ErrorCode::non_finite, "force must be finite");
  if (event.kernel_ids.empty()) throw Error(ErrorCode::invalid_argument, "empty selection");
  const std::size_t n = h.kernel_count();
  for (std::size_t id : event.kernel_ids) {
    if (id >= n) throw Error(ErrorCode::invalid_argument, "unknown kernel id " + std::to_string(id));
  }
  SimState out = state;
  if (event.force.isZero(0.0)) return out;

  auto& levels = out.current.level_positions;
  std::set<std::size_t> touched;
  for (std::size_t id : event.kernel_ids) {
    if (!touched.insert(id).second) continue;
    const double m = h.levels[0][id].mass;
    levels[0][id] += 0.5 * (event.force / m) * state.dt * state.dt;
  }
  for (std::size_t l = 1; l < h.levels.size(); ++l) {
    std::set<std::size_t> parents;
    for (std::size_t c : touched) parents.insert(h.levels[l - 1][c].parent);
    for (std::size_t p : parents) {
      const CmsNode& node = h.levels[l][p];
      Vec3 acc = Vec3::Zero();
      for (std::size_t c : node.children) acc += h.levels[l - 1][c].mass * levels[l - 1][c];
      levels[l][p] = acc / node.mass;
    }
    touched = std::move(parents);
  }
  return out;
}

struct RolloutOptions {
  bool record_covariances = false;
  std::uint64_t scene_hash = 0;
};

// Auto-regressive loop: `steps` calls to step(), forces applied to the slice
// whose time index matches their `step`. Returns steps + 1 frames.
inline Trajectory rollout(SimState state, const Hierarchy& h, GradientProvider& provider,
                          const SceneTemplate& scene, std::size_t steps,
                          std::span<const ForceEvent> forces = {}, const RolloutOptions& opts = {}) {
  if (steps < 1) throw Error(ErrorCode::invalid_argument, "rollout needs at least one step");
  std::multimap<std::size_t, const ForceEvent*> schedule;
  for (const ForceEvent& f : forces) {
    if (f.step < state.t) {
      throw Error(ErrorCode::invalid_argument, "force scheduled at step " + std::to_string(f.step) +
                                                   " precedes rollout start " + std::to_string(state.t));
    }
    schedule.emplace(f.step, &f);
  }
  Trajectory traj;
  traj.dt = state.dt;
  traj.scene_hash = opts.scene_hash;
  traj.first_step = state.t;
  traj.frames.reserve(steps + 1);
  auto record = [&](const SimState& s) {
    traj.frames.push_back(s.current.kernel_positions());
    if (opts.record_covariances) traj.covariances.push_back(s.current.covariances);
  };
  record(state);
  for (std::size_t i = 0; i < steps; ++i) {
    auto [lo, hi] = schedule.equal_range(state.t);
    for (auto it = lo; it != hi; ++it) state = apply_force(state, *it->second, h);
    state = step(state, h, provider, scene);
    record(state);
  }
  return traj;
}

}  // namespace splatdyn
