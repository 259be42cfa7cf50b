#pragma once

#include "splatdyn/common.hpp"
#include "splatdyn/hierarchy.hpp"
#include "splatdyn/providers/provider.hpp"

#include <numbers>

namespace splatdyn {

// Per-CMS state features. Local velocities are kept per child and also
// summarized (mean, RMS) so the network input has a fixed width.
struct NodeFeatures {
  Vec3 acceleration = Vec3::Zero();
  std::vector<Vec3> local_velocities;
  Vec3 velocity_mean = Vec3::Zero();
  Vec3 velocity_rms = Vec3::Zero();
  VecX attribute_vector;
};

struct EdgeFeatures {
  double deformation_ratio = 1.0;
  Vec3 direction = Vec3::UnitX();
  Vec3 relative_velocity = Vec3::Zero();
  double relative_angle_delta = 0.0;
};

struct GraphEdge {
  int level = 1;
  std::size_t source = 0;
  std::size_t dest = 0;
};

struct EdgeThresholds {
  double material_factor = 2.0;  // x clustering radius, template distance
  double deformed_factor = 3.0;  // x clustering radius, current distance
};

// Three consecutive slices of every level, newest first.
struct History {
  const LevelPositions* current = nullptr;
  const LevelPositions* previous = nullptr;
  const LevelPositions* previous2 = nullptr;
};

inline void check_dt(double dt) {
  if (!(dt > 0.0) || !std::isfinite(dt)) throw Error(ErrorCode::invalid_argument, "dt must be positive");
}

inline NodeFeatures node_features(const Hierarchy& h, const History& hist, double dt, int level,
                                  std::size_t node) {
  check_dt(dt);
  if (level < 1 || level > h.top_level()) {
    throw Error(ErrorCode::invalid_argument, "node features exist for levels 1..L only");
  }
  const auto l = static_cast<std::size_t>(level);
  const auto& x0 = (*hist.current)[l];
  const auto& x1 = (*hist.previous)[l];
  const auto& x2 = (*hist.previous2)[l];
  NodeFeatures f;
  f.acceleration = -(x0[node] - 2.0 * x1[node] + x2[node]) / (dt * dt);

  const CmsNode& cms = h.levels[l][node];
  const auto& c0 = (*hist.current)[l - 1];
  const auto& c1 = (*hist.previous)[l - 1];
  f.local_velocities.reserve(cms.children.size());
  Vec3 sq = Vec3::Zero();
  for (std::size_t k : cms.children) {
    const Vec3 v = ((c0[k] - x0[node]) - (c1[k] - x1[node])) / dt;
    f.local_velocities.push_back(v);
    f.velocity_mean += v;
    sq += v.cwiseAbs2();
  }
  if (!cms.children.empty()) {
    const double inv = 1.0 / static_cast<double>(cms.children.size());
    f.velocity_mean *= inv;
    f.velocity_rms = (sq * inv).cwiseSqrt();
  }
  f.attribute_vector = cms.attribute_vector;
  return f;
}

// Barycenter used for the angle feature of an edge leaving `source`: its
// parent CMS, or the static root for nodes on the top level.
struct AngleCenter {
  Vec3 current;
  Vec3 material;
};

inline AngleCenter angle_center(const Hierarchy& h, const LevelPositions& current, int level, std::size_t source,
                                const Vec3& root) {
  if (level == h.top_level()) return {root, root};
  const std::size_t p = h.level(level)[source].parent;
  return {current[static_cast<std::size_t>(level) + 1][p], h.level(level + 1)[p].position};
}

namespace detail {

inline double angle_between(const Vec3& a, const Vec3& b) {
  const double na = a.norm(), nb = b.norm();
  if (na < 1e-12 || nb < 1e-12) return 0.0;
  return std::acos(std::clamp(a.dot(b) / (na * nb), -1.0, 1.0));
}

}  // namespace detail

inline EdgeFeatures edge_features(const Vec3& xs, const Vec3& xd, const Vec3& xs_prev, const Vec3& xd_prev,
                                  const Vec3& Xs, const Vec3& Xd, const AngleCenter& c, double dt) {
  check_dt(dt);
  const double rest = (Xd - Xs).norm();
  if (!(rest > 0.0)) throw Error(ErrorCode::invalid_argument, "edge joins coincident template nodes");
  EdgeFeatures e;
  const Vec3 d = xd - xs;
  const double len = d.norm();
  e.deformation_ratio = len / rest;
  e.direction = len > 0.0 ? Vec3(d / len) : Vec3::Zero();
  e.relative_velocity = (d - (xd_prev - xs_prev)) / dt;
  e.relative_angle_delta =
      detail::angle_between(xd - c.current, xs - c.current) - detail::angle_between(Xd - c.material, Xs - c.material);
  return e;
}

// Same-level edges between nodes close in both material and deformed space.
// Both directions are emitted; order is deterministic (level, source, dest).
inline std::vector<GraphEdge> build_edges(const Hierarchy& h, const LevelPositions& current,
                                          const EdgeThresholds& t = {}) {
  std::vector<GraphEdge> edges;
  for (int l = 1; l <= h.top_level(); ++l) {
    const auto& nodes = h.level(l);
    const double radius = h.radii.at(static_cast<std::size_t>(l - 1));
    const double rm = t.material_factor * radius;
    const double rd = t.deformed_factor * radius;
    Positions material(nodes.size());
    for (std::size_t i = 0; i < nodes.size(); ++i) material[i] = nodes[i].position;
    const detail::PointGrid grid(material, rm);
    const auto& pos = current[static_cast<std::size_t>(l)];
    std::vector<std::size_t> near;
    for (std::size_t s = 0; s < nodes.size(); ++s) {
      near.clear();
      grid.for_each_within(material[s], rm, [&](std::size_t d) {
        if (d != s && (pos[d] - pos[s]).squaredNorm() <= rd * rd) near.push_back(d);
      });
      std::sort(near.begin(), near.end());
      for (std::size_t d : near) edges.push_back({l, s, d});
    }
  }
  return edges;
}

// Flattened network input for one time slice.
struct FeatureGraph {
  std::vector<std::size_t> level_offset;  // row of the first node of level l (index l, 1..L)
  Eigen::MatrixXd node_x;                 // one row per CMS at levels 1..L
  Eigen::MatrixXd edge_x;
  std::vector<std::size_t> source, dest;  // rows into node_x

  std::size_t node_count() const { return static_cast<std::size_t>(node_x.rows()); }
};

inline int node_feature_width(int attribute_dim, int levels) { return 9 + attribute_dim + levels; }
inline constexpr int kEdgeFeatureWidth = 8;

inline FeatureGraph build_feature_graph(const Hierarchy& h, const SceneTemplate& scene, const History& hist,
                                        double dt, const EdgeThresholds& t = {}) {
  check_dt(dt);
  const int top = h.top_level();
  if (top < 1) throw Error(ErrorCode::invalid_argument, "feature graph needs at least one CMS level");
  for (const auto* slice : {hist.current, hist.previous, hist.previous2}) {
    if (slice == nullptr || slice->size() != h.levels.size()) {
      throw Error(ErrorCode::shape_mismatch, "history slices do not match the hierarchy levels");
    }
    for (std::size_t l = 0; l < h.levels.size(); ++l) {
      if ((*slice)[l].size() != h.levels[l].size()) {
        throw Error(ErrorCode::shape_mismatch, "history level " + std::to_string(l) + " has wrong node count");
      }
    }
  }
  const int dim = static_cast<int>(h.level(1).front().attribute_vector.size());

  FeatureGraph g;
  g.level_offset.assign(static_cast<std::size_t>(top) + 2, 0);
  for (int l = 1; l <= top; ++l) {
    g.level_offset[static_cast<std::size_t>(l) + 1] = g.level_offset[static_cast<std::size_t>(l)] + h.level(l).size();
  }
  const std::size_t n_nodes = g.level_offset.back();
  g.node_x.setZero(static_cast<Eigen::Index>(n_nodes), node_feature_width(dim, top));
  for (int l = 1; l <= top; ++l) {
    for (std::size_t n = 0; n < h.level(l).size(); ++n) {
      const NodeFeatures f = node_features(h, hist, dt, l, n);
      auto row = g.node_x.row(static_cast<Eigen::Index>(g.level_offset[static_cast<std::size_t>(l)] + n));
      row.segment<3>(0) = f.acceleration;
      row.segment<3>(3) = f.velocity_mean;
      row.segment<3>(6) = f.velocity_rms;
      if (f.attribute_vector.size() != dim) {
        throw Error(ErrorCode::shape_mismatch, "attribute vectors differ in dimension");
      }
      row.segment(9, dim) = f.attribute_vector;
      row(9 + dim + (l - 1)) = 1.0;
    }
  }

  const Vec3 root = scene.root_position();
  const std::vector<GraphEdge> edges = build_edges(h, *hist.current, t);
  g.edge_x.resize(static_cast<Eigen::Index>(edges.size()), kEdgeFeatureWidth);
  g.source.resize(edges.size());
  g.dest.resize(edges.size());
  for (std::size_t i = 0; i < edges.size(); ++i) {
    const GraphEdge& e = edges[i];
    const auto l = static_cast<std::size_t>(e.level);
    const auto& cur = (*hist.current)[l];
    const auto& prev = (*hist.previous)[l];
    const EdgeFeatures f =
        edge_features(cur[e.source], cur[e.dest], prev[e.source], prev[e.dest], h.levels[l][e.source].position,
                      h.levels[l][e.dest].position, angle_center(h, *hist.current, e.level, e.source, root), dt);
    auto row = g.edge_x.row(static_cast<Eigen::Index>(i));
    row(0) = f.deformation_ratio;
    row.segment<3>(1) = f.direction;
    row.segment<3>(4) = f.relative_velocity;
    row(7) = f.relative_angle_delta;
    g.source[i] = g.level_offset[l] + e.source;
    g.dest[i] = g.level_offset[l] + e.dest;
  }
  return g;
}

inline FeatureGraph build_feature_graph(const ProviderInput& in, const EdgeThresholds& t = {}) {
  return build_feature_graph(*in.hierarchy, *in.scene, History{in.current, in.previous, in.previous2}, in.dt, t);
}

}  // namespace splatdyn
