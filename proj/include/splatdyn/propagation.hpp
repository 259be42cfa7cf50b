#pragma once

#include "splatdyn/common.hpp"
#include "splatdyn/deformation.hpp"
#include "splatdyn/hierarchy.hpp"
#include "splatdyn/splat_model.hpp"

namespace splatdyn {

struct LevelDeformationField {
  int level = 1;
  std::vector<PolarSvdGradient> gradients;
};

// One field per simulated level; fields[l - 1] holds level l.
using FieldSet = std::vector<LevelDeformationField>;

struct PropagationResult {
  Positions positions;    // deformed kernel centers
  Matrices covariances;   // deformed kernel covariances
  Matrices rotations;     // accumulated rotation R^1 ... R^L per kernel
  // level_positions[l][n]: deformed position of CMS n at level l (l >= 1);
  // level_positions[0] mirrors `positions`.
  std::vector<Positions> level_positions;
  // accumulated[l][n]: product of the gradients of n's strict ancestors,
  // F^{l+1} ... F^L; shared by every descendant of n.
  std::vector<Matrices> accumulated;
};

inline FieldSet identity_fields(const Hierarchy& h) {
  FieldSet fields;
  for (int l = 1; l <= h.top_level(); ++l) {
    fields.push_back({l, std::vector<PolarSvdGradient>(h.level(l).size())});
  }
  return fields;
}

inline void validate_fields(const Hierarchy& h, const FieldSet& fields) {
  if (static_cast<int>(fields.size()) != h.top_level()) {
    throw Error(ErrorCode::shape_mismatch, "expected " + std::to_string(h.top_level()) +
                                               " deformation fields, got " + std::to_string(fields.size()));
  }
  for (int l = 1; l <= h.top_level(); ++l) {
    const auto& f = fields[static_cast<std::size_t>(l - 1)];
    if (f.level != l) {
      throw Error(ErrorCode::shape_mismatch, "field " + std::to_string(l - 1) + " is tagged level " +
                                                 std::to_string(f.level) + ", expected " + std::to_string(l));
    }
    if (f.gradients.size() != h.level(l).size()) {
      throw Error(ErrorCode::shape_mismatch, "level " + std::to_string(l) + " has " +
                                                 std::to_string(h.level(l).size()) + " nodes but " +
                                                 std::to_string(f.gradients.size()) + " gradients");
    }
  }
}

// One recursion step: every child moves rigidly with its parent's local
// frame, x_k <- x_c + F_c (x_k - x_c). `pivots` are the parent positions.
inline Positions apply_level(std::span<const Vec3> pivots, std::span<const Vec3> child_positions,
                             std::span<const std::size_t> child_to_parent,
                             std::span<const Mat3> gradients) {
  if (child_to_parent.size() != child_positions.size()) {
    throw Error(ErrorCode::shape_mismatch, "child-to-parent map does not cover every child");
  }
  if (gradients.size() != pivots.size()) {
    throw Error(ErrorCode::shape_mismatch, "need exactly one gradient per parent");
  }
  Positions out(child_positions.size());
  for (std::size_t k = 0; k < child_positions.size(); ++k) {
    const std::size_t c = child_to_parent[k];
    if (c >= pivots.size()) {
      throw Error(ErrorCode::invalid_argument, "child " + std::to_string(k) + " has no parent");
    }
    out[k] = pivots[c] + gradients[c] * (child_positions[k] - pivots[c]);
  }
  return out;
}

inline Positions apply_level(std::span<const Vec3> pivots, std::span<const Vec3> child_positions,
                             std::span<const std::size_t> child_to_parent,
                             const LevelDeformationField& field) {
  Matrices f(field.gradients.size());
  for (std::size_t i = 0; i < f.size(); ++i) f[i] = compose(field.gradients[i]);
  return apply_level(pivots, child_positions, child_to_parent, std::span<const Mat3>(f.data(), f.size()));
}

// Coarse-to-fine propagation. Level L deforms about the static root kernel;
// every lower level deforms about its (already deformed) parent barycenter.
// Kernel covariances pick up the accumulated product F^1 ... F^L and
// rotations the matching product of U V^T.
inline PropagationResult propagate_recursive(const Hierarchy& h, const FieldSet& fields,
                                             const SceneTemplate& scene) {
  validate_fields(h, fields);
  if (scene.size() != h.kernel_count()) {
    throw Error(ErrorCode::shape_mismatch, "scene and hierarchy kernel counts differ");
  }
  const int top = h.top_level();
  const Vec3 root = scene.root_position();

  PropagationResult res;
  res.level_positions.resize(static_cast<std::size_t>(top) + 1);
  res.accumulated.resize(static_cast<std::size_t>(top) + 1);
  std::vector<Matrices> rot_acc(static_cast<std::size_t>(top) + 1);
  std::vector<Matrices> composed(static_cast<std::size_t>(top) + 1);
  std::vector<Matrices> local_rot(static_cast<std::size_t>(top) + 1);

  for (int l = 1; l <= top; ++l) {
    const auto& grads = fields[static_cast<std::size_t>(l - 1)].gradients;
    auto& cf = composed[static_cast<std::size_t>(l)];
    auto& cr = local_rot[static_cast<std::size_t>(l)];
    cf.resize(grads.size());
    cr.resize(grads.size());
    for (std::size_t i = 0; i < grads.size(); ++i) {
      cf[i] = compose(grads[i]);
      cr[i] = deformation_rotation(grads[i]);
    }
  }

  if (top == 0) {
    res.positions.resize(scene.size());
    res.covariances.resize(scene.size());
    res.rotations.assign(scene.size(), Mat3::Identity());
    for (std::size_t k = 0; k < scene.size(); ++k) {
      res.positions[k] = scene.kernels[k].position;
      res.covariances[k] = scene.kernels[k].covariance;
    }
    res.level_positions[0] = res.positions;
    res.accumulated[0].assign(scene.size(), Mat3::Identity());
    return res;
  }

  {
    const auto& nodes = h.level(top);
    auto& pos = res.level_positions[static_cast<std::size_t>(top)];
    pos.resize(nodes.size());
    res.accumulated[static_cast<std::size_t>(top)].assign(nodes.size(), Mat3::Identity());
    rot_acc[static_cast<std::size_t>(top)].assign(nodes.size(), Mat3::Identity());
    const auto& cf = composed[static_cast<std::size_t>(top)];
    for (std::size_t n = 0; n < nodes.size(); ++n) pos[n] = root + cf[n] * (nodes[n].position - root);
  }

  for (int l = top; l >= 1; --l) {
    const auto ul = static_cast<std::size_t>(l);
    const auto& parents = h.level(l);
    const auto& children = h.level(l - 1);
    const auto& parent_pos = res.level_positions[ul];
    const auto& parent_acc = res.accumulated[ul];

    // Child positions after all coarser passes, and this pass's pivots.
    Positions current(children.size());
    std::vector<std::size_t> parent_of(children.size());
    for (std::size_t i = 0; i < children.size(); ++i) {
      const std::size_t p = children[i].parent;
      parent_of[i] = p;
      current[i] = (l == top) ? children[i].position
                              : Vec3(parent_pos[p] + parent_acc[p] * (children[i].position - parents[p].position));
    }
    Positions pivots;
    if (l == top) {
      pivots.assign(parents.size(), root);
    } else {
      pivots = parent_pos;
    }
    const auto& cf = composed[ul];
    res.level_positions[ul - 1] =
        apply_level(std::span<const Vec3>(pivots.data(), pivots.size()),
                    std::span<const Vec3>(current.data(), current.size()), parent_of,
                    std::span<const Mat3>(cf.data(), cf.size()));

    auto& acc = res.accumulated[ul - 1];
    auto& racc = rot_acc[ul - 1];
    acc.resize(children.size());
    racc.resize(children.size());
    for (std::size_t i = 0; i < children.size(); ++i) {
      const std::size_t p = parent_of[i];
      acc[i] = cf[p] * parent_acc[p];
      racc[i] = local_rot[ul][p] * rot_acc[ul][p];
    }
  }

  res.positions = res.level_positions[0];
  res.covariances.resize(scene.size());
  res.rotations = rot_acc[0];
  for (std::size_t k = 0; k < scene.size(); ++k) {
    res.covariances[k] = transform_covariance(res.accumulated[0][k], scene.kernels[k].covariance);
  }
  return res;
}

// Closed-form kernel position for hierarchies with at most two levels:
//   L = 1: x_r + F1 (X_k - x_r)
//   L = 2: x1 + F1 F2 (X_k - X_c1),  x1 = x_r + F2 (X_c1 - x_r)
// Used as an independent check of the recursion.
inline Vec3 expanded_position(const Hierarchy& h, const FieldSet& fields, const SceneTemplate& scene,
                              std::size_t k) {
  validate_fields(h, fields);
  const Vec3 root = scene.root_position();
  const Vec3& xk = scene.kernels.at(k).position;
  switch (h.top_level()) {
    case 0:
      return xk;
    case 1: {
      const std::size_t c1 = h.ancestors[1][k];
      return root + compose(fields[0].gradients[c1]) * (xk - root);
    }
    case 2: {
      const std::size_t c1 = h.ancestors[1][k];
      const std::size_t c2 = h.ancestors[2][k];
      const Mat3 f1 = compose(fields[0].gradients[c1]);
      const Mat3 f2 = compose(fields[1].gradients[c2]);
      const Vec3& xc1 = h.level(1)[c1].position;
      const Vec3 anchor = root + f2 * (xc1 - root);
      return anchor + f1 * f2 * (xk - xc1);
    }
    default:
      throw Error(ErrorCode::invalid_argument, "expanded form is only defined for L <= 2");
  }
}

// Chain given top-down (F^L first); applies (F^1...F^L) S (F^1...F^L)^T.
inline Mat3 propagate_covariance(std::span<const Mat3> chain_top_down, const Mat3& covariance) {
  Mat3 product = Mat3::Identity();
  for (const Mat3& f : chain_top_down) product = f * product;
  return transform_covariance(product, covariance);
}

// Rotations given top-down (R^L first); returns (R^1...R^L)^T d.
inline Vec3 propagate_color_direction(std::span<const Mat3> rotations_top_down, const Vec3& direction) {
  Vec3 d = direction;
  for (auto it = rotations_top_down.rbegin(); it != rotations_top_down.rend(); ++it) {
    d = it->transpose() * d;
  }
  return d;
}

// Per-kernel baseline without a hierarchy: x_k = x_r + F_k (X_k - x_r).
inline PropagationResult propagate_flat(std::span<const Mat3> kernel_gradients, const SceneTemplate& scene) {
  if (kernel_gradients.size() != scene.size()) {
    throw Error(ErrorCode::shape_mismatch, "flat propagation needs one gradient per kernel");
  }
  const Vec3 root = scene.root_position();
  PropagationResult res;
  res.positions.resize(scene.size());
  res.covariances.resize(scene.size());
  res.rotations.assign(scene.size(), Mat3::Identity());
  for (std::size_t k = 0; k < scene.size(); ++k) {
    res.positions[k] = root + kernel_gradients[k] * (scene.kernels[k].position - root);
    res.covariances[k] = transform_covariance(kernel_gradients[k], scene.kernels[k].covariance);
  }
  res.level_positions = {res.positions};
  return res;
}

}  // namespace splatdyn
