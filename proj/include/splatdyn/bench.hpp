#pragma once

#include "splatdyn/engine.hpp"
#include "splatdyn/learned/learned.hpp"

#include <chrono>

// Hierarchical vs flat (one prediction per kernel) stepping cost.
namespace splatdyn {

// One level with every kernel in its own cluster: the per-kernel baseline.
// The radius is a quarter of the finest hierarchy radius, so kernels on the
// usual grids stay singletons while the network still sees near neighbours.
inline Hierarchy flat_hierarchy(const SceneTemplate& scene, double finest_radius) {
  const std::vector<double> radii{0.25 * finest_radius};
  return build_hierarchy(scene, radii);
}

struct PathTiming {
  std::size_t predictions = 0;  // gradients predicted per step
  double seconds_per_step = 0.0;
};

// Times `steps` steps of an untrained learned provider on `h`. Only the
// predictor's cost matters here, so the weights are left at initialisation.
inline PathTiming time_learned_steps(const SceneTemplate& scene, const Hierarchy& h, ModelConfig model,
                                     double dt, std::size_t steps) {
  model.levels = h.top_level();
  model.attribute_dim = static_cast<int>(h.level(0).front().attribute_vector.size());
  model.embedding_rows = 0;
  if (model.embedding_dim > 0) {
    for (int l = 1; l <= h.top_level(); ++l) model.embedding_rows += h.level(l).size();
  }
  LearnedProvider provider{GraphModel(model)};
  SimState s = bootstrap(scene, h, dt);
  s = step(s, h, provider, scene);  // warm-up: rest anchor and edge caches
  const auto t0 = std::chrono::steady_clock::now();
  for (std::size_t i = 0; i < steps; ++i) s = step(s, h, provider, scene);
  PathTiming t;
  t.seconds_per_step =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() / static_cast<double>(steps);
  t.predictions = prediction_count(h).predictions;
  return t;
}

}  // namespace splatdyn
