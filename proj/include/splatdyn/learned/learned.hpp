#pragma once

#include "splatdyn/deformation.hpp"
#include "splatdyn/learned/model.hpp"
#include "splatdyn/propagation.hpp"
#include "splatdyn/providers/provider.hpp"

namespace splatdyn {

using RawOutput = Eigen::Matrix<double, kOutputWidth, 1>;

namespace detail {

// d R(q) / d q_i for a unit quaternion (w, x, y, z), i = 0..3.
inline std::array<Mat3, 4> rotation_partials(double w, double x, double y, double z) {
  std::array<Mat3, 4> d;
  d[0] << 0, -2 * z, 2 * y, 2 * z, 0, -2 * x, -2 * y, 2 * x, 0;
  d[1] << 0, 2 * y, 2 * z, 2 * y, -4 * x, -2 * w, 2 * z, 2 * w, -4 * x;
  d[2] << -4 * y, 2 * x, 2 * w, 2 * x, 0, 2 * z, -2 * w, 2 * z, -4 * y;
  d[3] << -4 * z, -2 * w, 2 * x, 2 * w, -4 * z, 2 * y, 2 * x, 2 * y, 0;
  return d;
}

inline Quat biased_quat(const RawOutput& raw, int at) {
  return Quat(raw(at) + 1.0, raw(at + 1), raw(at + 2), raw(at + 3));
}

// Gradient of a loss through R(q / |q|) back to the raw (unnormalized) q.
inline Eigen::Vector4d quat_backward(const Quat& q, const Mat3& g_rot) {
  const double n = q.norm();
  const Eigen::Vector4d u(q.w() / n, q.x() / n, q.y() / n, q.z() / n);
  const auto d = rotation_partials(u(0), u(1), u(2), u(3));
  Eigen::Vector4d g;
  for (int i = 0; i < 4; ++i) g(i) = (g_rot.array() * d[static_cast<std::size_t>(i)].array()).sum();
  return (g - u * u.dot(g)) / n;
}

}  // namespace detail

// Raw 11-vector -> polar-SVD gradient. The +1 on both scalar parts makes a
// zero output the identity; lambda = exp(logits) rescaled to unit product.
inline PolarSvdGradient map_output(const RawOutput& raw) {
  if (!raw.allFinite()) throw Error(ErrorCode::non_finite, "network output is not finite");
  const Quat qu = detail::biased_quat(raw, 0), qv = detail::biased_quat(raw, 4);
  if (qu.norm() == 0.0 || qv.norm() == 0.0) throw Error(ErrorCode::non_finite, "network output a zero quaternion");
  PolarSvdGradient g;
  g.quat_u = qu.normalized();
  g.quat_v = qv.normalized();
  const Vec3 s = raw.tail<3>();
  g.lambda = normalize_lambda(Vec3((s.array() - s.maxCoeff()).exp()));
  return g;
}

// d loss / d raw given d loss / d F, F = R(qu) diag(lambda) R(qv)^T.
inline RawOutput map_output_backward(const RawOutput& raw, const Mat3& g_f) {
  const PolarSvdGradient p = map_output(raw);
  const Mat3 u = quat_to_rotation(p.quat_u), v = quat_to_rotation(p.quat_v);
  const auto lam = p.lambda.asDiagonal();
  RawOutput out;
  out.segment<4>(0) = detail::quat_backward(detail::biased_quat(raw, 0), g_f * v * lam);
  out.segment<4>(4) = detail::quat_backward(detail::biased_quat(raw, 4), g_f.transpose() * u * lam);
  const Vec3 g_lambda = (u.transpose() * g_f * v).diagonal();
  const Vec3 weighted = p.lambda.cwiseProduct(g_lambda);
  out.tail<3>() = weighted.array() - weighted.sum() / 3.0;
  return out;
}

// Reverse pass of propagate_recursive for position outputs. g_positions[l][n]
// is d loss / d (deformed position of node n at level l), level 0 = kernels.
// Returns d loss / d F for every node at levels 1..L (index l - 1).
inline std::vector<Matrices> propagation_backward(const Hierarchy& h, const SceneTemplate& scene,
                                                  const std::vector<Matrices>& composed,
                                                  const PropagationResult& forward,
                                                  std::vector<Positions> g_positions) {
  const int top = h.top_level();
  std::vector<Matrices> g_f(static_cast<std::size_t>(top));
  std::vector<Matrices> g_acc(static_cast<std::size_t>(top) + 1);
  for (int l = 1; l <= top; ++l) g_f[static_cast<std::size_t>(l - 1)].assign(h.level(l).size(), Mat3::Zero());
  for (int l = 0; l <= top; ++l) g_acc[static_cast<std::size_t>(l)].assign(h.level(l).size(), Mat3::Zero());
  const Vec3 root = scene.root_position();

  for (int l = 0; l < top; ++l) {
    const auto ul = static_cast<std::size_t>(l);
    const auto& nodes = h.level(l);
    const auto& parents = h.level(l + 1);
    auto& gf = g_f[ul];  // gradients of level l + 1
    for (std::size_t n = 0; n < nodes.size(); ++n) {
      const std::size_t p = nodes[n].parent;
      const Vec3& gp = g_positions[ul][n];
      const Mat3& ga = g_acc[ul][n];
      if (l + 1 == top) {
        gf[p] += gp * (nodes[n].position - root).transpose() + ga;
      } else {
        const Mat3& f = composed[ul][p];
        const Mat3& a = forward.accumulated[ul + 1][p];
        const Mat3 gm = gp * (nodes[n].position - parents[p].position).transpose() + ga;
        gf[p] += gm * a.transpose();
        g_acc[ul + 1][p] += f.transpose() * gm;
        g_positions[ul + 1][p] += gp;
      }
    }
  }
  if (top >= 1) {
    const auto& nodes = h.level(top);
    auto& gf = g_f[static_cast<std::size_t>(top - 1)];
    for (std::size_t n = 0; n < nodes.size(); ++n) {
      gf[n] += g_positions[static_cast<std::size_t>(top)][n] * (nodes[n].position - root).transpose();
    }
  }
  return g_f;
}

inline std::vector<Matrices> composed_fields(const FieldSet& fields) {
  std::vector<Matrices> out;
  for (const auto& f : fields) {
    Matrices m(f.gradients.size());
    for (std::size_t i = 0; i < m.size(); ++i) m[i] = compose(f.gradients[i]);
    out.push_back(std::move(m));
  }
  return out;
}

// Maps the raw network output (rows ordered level 1 first) to one field
// per level; non-finite rows are reported by level and node index.
inline FieldSet fields_from_raw(const Hierarchy& h, const FeatureGraph& g, const Eigen::MatrixXd& raw) {
  if (raw.rows() != static_cast<Eigen::Index>(g.node_count()) || raw.cols() != kOutputWidth) {
    throw Error(ErrorCode::shape_mismatch, "network output has the wrong shape");
  }
  FieldSet fields;
  for (int l = 1; l <= h.top_level(); ++l) {
    LevelDeformationField f{l, {}};
    f.gradients.reserve(h.level(l).size());
    for (std::size_t n = 0; n < h.level(l).size(); ++n) {
      const auto row = static_cast<Eigen::Index>(g.level_offset[static_cast<std::size_t>(l)] + n);
      const RawOutput r = raw.row(row).transpose();
      if (!r.allFinite()) {
        throw Error(ErrorCode::non_finite, "non-finite network output at level " + std::to_string(l) + " node " +
                                               std::to_string(n));
      }
      f.gradients.push_back(map_output(r));
    }
    fields.push_back(std::move(f));
  }
  return fields;
}

// Network input for the undeformed, motionless scene.
inline FeatureGraph rest_feature_graph(const Hierarchy& h, const SceneTemplate& scene, double dt,
                                       const EdgeThresholds& t) {
  const LevelPositions rest = template_level_positions(h);
  return build_feature_graph(h, scene, History{&rest, &rest, &rest}, dt, t);
}

class LearnedProvider final : public GradientProvider {
 public:
  explicit LearnedProvider(GraphModel model) : model_(std::move(model)) {}

  FieldSet predict(const ProviderInput& in) override {
    const Hierarchy& h = *in.hierarchy;
    if (h.top_level() != model_.config().levels) {
      throw Error(ErrorCode::shape_mismatch, "model was built for " + std::to_string(model_.config().levels) +
                                                 " levels, hierarchy has " + std::to_string(h.top_level()));
    }
    const FeatureGraph g = build_feature_graph(in, model_.config().edges);
    Eigen::MatrixXd raw = model_.predict_raw(g);
    if (model_.config().rest_anchor) {
      if (rest_for_ != &h || rest_raw_.rows() != raw.rows()) {
        rest_raw_ = model_.predict_raw(rest_feature_graph(h, *in.scene, in.dt, model_.config().edges));
        rest_for_ = &h;
      }
      raw -= rest_raw_;
    }
    return fields_from_raw(h, g, raw);
  }

  std::string name() const override { return "learned"; }
  const GraphModel& model() const { return model_; }

 private:
  GraphModel model_;
  const Hierarchy* rest_for_ = nullptr;  // hierarchy the cached rest output belongs to
  Eigen::MatrixXd rest_raw_;
};

}  // namespace splatdyn
