#pragma once

#include "splatdyn/common.hpp"
#include "splatdyn/splat_model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <unordered_map>

namespace splatdyn {

struct CmsNode {
  int level = 0;
  Vec3 position = Vec3::Zero();  // material-space barycenter
  double mass = 0.0;
  double volume = 0.0;
  double density = 0.0;
  VecX attribute_vector;
  std::vector<std::size_t> children;  // indices into level - 1
  std::size_t parent = kNoParent;     // index into level + 1

  static constexpr std::size_t kNoParent = static_cast<std::size_t>(-1);

  EIGEN_MAKE_ALIGNED_OPERATOR_NEW
};

struct Hierarchy {
  std::vector<std::vector<CmsNode>> levels;  // levels[0] aliases the kernels
  std::vector<double> radii;                 // radii[l - 1] built level l
  std::size_t root_kernel_id = 0;
  // ancestors[l][k]: index of kernel k's ancestor at level l (ancestors[0][k] == k).
  std::vector<std::vector<std::size_t>> ancestors;

  int top_level() const { return static_cast<int>(levels.size()) - 1; }
  std::size_t kernel_count() const { return levels.empty() ? 0 : levels.front().size(); }
  const std::vector<CmsNode>& level(int l) const { return levels.at(static_cast<std::size_t>(l)); }
};

struct HierarchyStats {
  std::size_t n_kernels = 0;
  std::size_t predictions = 0;
  double ratio = 0.0;
  std::vector<std::size_t> level_counts;
};

struct CmsChild {
  Vec3 position;
  double mass;
  double volume;
  VecX attribute_vector;
};

namespace detail {

struct CellKey {
  std::int64_t x, y, z;
  bool operator==(const CellKey&) const = default;
};

struct CellKeyHash {
  std::size_t operator()(const CellKey& k) const noexcept {
    std::uint64_t h = static_cast<std::uint64_t>(k.x) * 73856093ULL;
    h ^= static_cast<std::uint64_t>(k.y) * 19349663ULL;
    h ^= static_cast<std::uint64_t>(k.z) * 83492791ULL;
    return static_cast<std::size_t>(h);
  }
};

// Uniform grid over the points with cell size equal to the query radius.
class PointGrid {
 public:
  PointGrid(std::span<const Vec3> points, double cell) : points_(points), cell_(cell) {
    for (std::size_t i = 0; i < points.size(); ++i) cells_[key(points[i])].push_back(i);
  }

  CellKey key(const Vec3& p) const {
    return {static_cast<std::int64_t>(std::floor(p.x() / cell_)),
            static_cast<std::int64_t>(std::floor(p.y() / cell_)),
            static_cast<std::int64_t>(std::floor(p.z() / cell_))};
  }

  // Calls fn(index) for every point within radius (<= cell) of center.
  template <typename Fn>
  void for_each_within(const Vec3& center, double radius, Fn&& fn) const {
    const CellKey c = key(center);
    const double r2 = radius * radius;
    for (std::int64_t dx = -1; dx <= 1; ++dx)
      for (std::int64_t dy = -1; dy <= 1; ++dy)
        for (std::int64_t dz = -1; dz <= 1; ++dz) {
          auto it = cells_.find({c.x + dx, c.y + dy, c.z + dz});
          if (it == cells_.end()) continue;
          for (std::size_t j : it->second) {
            if ((points_[j] - center).squaredNorm() <= r2) fn(j);
          }
        }
  }

 private:
  std::span<const Vec3> points_;
  double cell_;
  std::unordered_map<CellKey, std::vector<std::size_t>, CellKeyHash> cells_;
};

}  // namespace detail

// Greedy radius-ball clustering: scanning in index order, the first
// unassigned point seeds a new cluster that absorbs every unassigned point
// within `radius` of the seed. Cluster ids follow seed order.
inline std::vector<std::size_t> cluster_level(std::span<const Vec3> positions, double radius) {
  if (positions.empty()) return {};
  if (!(radius > 0.0) || !std::isfinite(radius)) {
    throw Error(ErrorCode::invalid_argument, "clustering radius must be positive and finite");
  }
  for (std::size_t i = 0; i < positions.size(); ++i) {
    if (!positions[i].allFinite()) {
      throw Error(ErrorCode::non_finite, "point " + std::to_string(i) + " has non-finite coordinates");
    }
  }
  constexpr std::size_t kUnassigned = static_cast<std::size_t>(-1);
  std::vector<std::size_t> assignment(positions.size(), kUnassigned);
  const detail::PointGrid grid(positions, radius);
  std::size_t next_id = 0;
  std::vector<std::size_t> members;
  for (std::size_t i = 0; i < positions.size(); ++i) {
    if (assignment[i] != kUnassigned) continue;
    const std::size_t id = next_id++;
    assignment[i] = id;
    grid.for_each_within(positions[i], radius, [&](std::size_t j) {
      if (assignment[j] == kUnassigned) assignment[j] = id;
    });
  }
  return assignment;
}

inline CmsNode build_cms(std::span<const CmsChild> children) {
  if (children.empty()) {
    throw Error(ErrorCode::invalid_argument, "a CMS needs at least one child");
  }
  CmsNode node;
  Vec3 weighted = Vec3::Zero();
  node.attribute_vector = VecX::Zero(children.front().attribute_vector.size());
  for (std::size_t i = 0; i < children.size(); ++i) {
    const CmsChild& c = children[i];
    if (!(c.mass > 0.0) || !(c.volume > 0.0)) {
      throw Error(ErrorCode::invalid_argument,
                  "child " + std::to_string(i) + " has non-positive mass or volume");
    }
    if (c.attribute_vector.size() != node.attribute_vector.size()) {
      throw Error(ErrorCode::shape_mismatch, "child attribute dimensions differ");
    }
    node.mass += c.mass;
    node.volume += c.volume;
    weighted += c.mass * c.position;
    node.attribute_vector += c.attribute_vector;
  }
  node.position = weighted / node.mass;
  node.density = node.mass / node.volume;
  node.attribute_vector /= static_cast<double>(children.size());
  return node;
}

inline Hierarchy build_hierarchy(const SceneTemplate& scene, std::span<const double> radii) {
  if (scene.kernels.empty()) {
    throw Error(ErrorCode::invalid_argument, "cannot build a hierarchy over an empty scene");
  }
  for (std::size_t i = 0; i < radii.size(); ++i) {
    if (!(radii[i] > 0.0)) throw Error(ErrorCode::config, "clustering radii must be positive");
    if (i > 0 && !(radii[i] > radii[i - 1])) {
      throw Error(ErrorCode::config, "clustering radii must be strictly increasing");
    }
  }
  validate_scene(scene);

  Hierarchy h;
  h.radii.assign(radii.begin(), radii.end());
  h.root_kernel_id = scene.root_kernel_id;
  h.levels.emplace_back();
  auto& base = h.levels.back();
  base.reserve(scene.size());
  for (std::size_t k = 0; k < scene.size(); ++k) {
    CmsNode n;
    n.level = 0;
    n.position = scene.kernels[k].position;
    n.volume = kernel_volume(scene.kernels[k]);
    n.density = scene.attributes[k].density;
    n.mass = n.density * n.volume;
    n.attribute_vector = scene.attributes[k].attribute_vector;
    base.push_back(std::move(n));
  }

  for (std::size_t l = 1; l <= radii.size(); ++l) {
    auto& below = h.levels[l - 1];
    Positions pts(below.size());
    for (std::size_t i = 0; i < below.size(); ++i) pts[i] = below[i].position;
    const auto assignment = cluster_level(std::span<const Vec3>(pts.data(), pts.size()), radii[l - 1]);
    const std::size_t n_clusters =
        assignment.empty() ? 0 : *std::max_element(assignment.begin(), assignment.end()) + 1;

    std::vector<std::vector<std::size_t>> members(n_clusters);
    for (std::size_t i = 0; i < assignment.size(); ++i) members[assignment[i]].push_back(i);

    std::vector<CmsNode> level;
    level.reserve(n_clusters);
    std::vector<CmsChild> kids;
    for (std::size_t c = 0; c < n_clusters; ++c) {
      kids.clear();
      for (std::size_t i : members[c]) {
        kids.push_back({below[i].position, below[i].mass, below[i].volume, below[i].attribute_vector});
        below[i].parent = c;
      }
      CmsNode node = build_cms(kids);
      node.level = static_cast<int>(l);
      node.children = std::move(members[c]);
      level.push_back(std::move(node));
    }
    h.levels.push_back(std::move(level));
  }

  h.ancestors.resize(h.levels.size());
  h.ancestors[0].resize(scene.size());
  std::iota(h.ancestors[0].begin(), h.ancestors[0].end(), std::size_t{0});
  for (std::size_t l = 1; l < h.levels.size(); ++l) {
    h.ancestors[l].resize(scene.size());
    for (std::size_t k = 0; k < scene.size(); ++k) {
      h.ancestors[l][k] = h.levels[l - 1][h.ancestors[l - 1][k]].parent;
    }
  }
  return h;
}

inline HierarchyStats prediction_count(std::span<const std::size_t> level_counts) {
  if (level_counts.size() < 2) {
    throw Error(ErrorCode::invalid_argument, "prediction count needs at least one level above the kernels");
  }
  HierarchyStats s;
  s.level_counts.assign(level_counts.begin(), level_counts.end());
  s.n_kernels = level_counts[0];
  for (std::size_t l = 1; l < level_counts.size(); ++l) s.predictions += level_counts[l];
  s.ratio = static_cast<double>(s.predictions) / static_cast<double>(s.n_kernels);
  return s;
}

inline HierarchyStats prediction_count(const Hierarchy& h) {
  std::vector<std::size_t> counts;
  for (const auto& level : h.levels) counts.push_back(level.size());
  return prediction_count(counts);
}

// Level-count ratios gamma_l = |level l-1| / |level l|.
inline std::vector<double> branching_factors(std::span<const std::size_t> level_counts) {
  std::vector<double> gamma;
  for (std::size_t l = 1; l < level_counts.size(); ++l) {
    gamma.push_back(static_cast<double>(level_counts[l - 1]) / static_cast<double>(level_counts[l]));
  }
  return gamma;
}

// N_K * sum_i (prod_{j<=i} gamma_j)^-1; equals the direct node count.
inline double predictions_from_branching(std::size_t n_kernels, std::span<const double> gamma) {
  double total = 0.0, prod = 1.0;
  for (double g : gamma) {
    prod *= g;
    total += 1.0 / prod;
  }
  return static_cast<double>(n_kernels) * total;
}

}  // namespace splatdyn
