#pragma once

#include "splatdyn/constraints.hpp"
#include "splatdyn/engine.hpp"
#include "splatdyn/learned/learned.hpp"

#include <chrono>
#include <functional>
#include <optional>
#include <thread>

namespace splatdyn {

struct TrainingConfig {
  int epochs = 24;
  int max_rollout = 16;       // curriculum cap on T
  int fixed_rollout = 0;      // > 0 pins T for every epoch
  int batches_per_epoch = 30;
  int batch_size = 4;         // rollout starts per optimizer step
  double learning_rate = 2e-3;
  double final_lr_fraction = 0.05;  // cosine decay target
  double momentum_weight = 1.0;
  double static_weight = 1.0;
  // Std-dev of subtree-coherent noise added independently to the three
  // input slices of every rollout window. Targets stay clean, so the network
  // also learns how to respond to states off the training trajectories.
  double input_noise = 3e-4;
  int threads = 0;            // 0 = hardware concurrency
  std::uint64_t seed = 7;

  int rollout_length(int epoch) const {
    if (fixed_rollout > 0) return fixed_rollout;
    return std::min(epoch + 1, max_rollout);
  }
};

struct EpochStats {
  int epoch = 0;
  int rollout = 1;
  double loss = 0.0;           // mean objective per supervised step
  double position_loss = 0.0;  // mean squared kernel error
  double static_loss = 0.0;    // mean over applied static terms (0 if none)
  int static_terms = 0;
  int samples = 0;
  double seconds = 0.0;
};

struct TrainingReport {
  std::vector<EpochStats> epochs;
  double initial_static_residual = 0.0;
  double final_static_residual = 0.0;
};

// Ground-truth frames with barycenters filled in for every level.
struct TrainingTrajectory {
  double dt = 1.0 / 50.0;
  std::vector<LevelPositions> frames;
};

inline TrainingTrajectory training_trajectory(const Hierarchy& h, const Trajectory& t) {
  TrainingTrajectory out;
  out.dt = t.dt;
  out.frames.reserve(t.frames.size());
  for (const Positions& f : t.frames) {
    if (f.size() != h.kernel_count()) throw Error(ErrorCode::shape_mismatch, "trajectory frame size differs from scene");
    LevelPositions lp(h.levels.size());
    lp[0] = f;
    recompute_barycenters(h, lp);
    out.frames.push_back(std::move(lp));
  }
  return out;
}

// State at frame t of a ground-truth trajectory (needs t >= 2).
inline SimState state_from_trajectory(const TrainingTrajectory& traj, const Hierarchy& h, const SceneTemplate& scene,
                                      std::size_t t) {
  if (t < 2 || t >= traj.frames.size()) throw Error(ErrorCode::invalid_argument, "frame index needs two predecessors");
  SimState s;
  s.dt = traj.dt;
  s.t = t;
  s.current = template_slice(h, scene);
  s.previous = s.current;
  s.current.level_positions = traj.frames[t];
  s.previous.level_positions = traj.frames[t - 1];
  s.previous2 = traj.frames[t - 2];
  return s;
}

struct StepObjective {
  double loss = 0.0;
  double position_loss = 0.0;
  double momentum = 0.0;
  LevelPositions predicted;  // pinned next state (only for supervised steps)
};

// One forward/backward through network -> output mapping -> propagation ->
// loss. With `target` the loss is the mean squared kernel error (root
// pinned) plus the weighted momentum term; without it the loss is the
// static term, mean squared distance to the template, root free.
// Adds `scale * d loss / d params` into grad.
//
// For rest-anchored models `anchor` carries the rest-state output, which is
// subtracted from the raw output; the seed that flows into it is
// accumulated in anchor->seed for one backward pass per sample.
struct RestAnchor {
  Eigen::MatrixXd raw;
  Eigen::MatrixXd seed;
};

inline StepObjective step_objective(const GraphModel& model, const Hierarchy& h, const SceneTemplate& scene,
                                    const History& hist, double dt, const Positions* target, double momentum_weight,
                                    double scale, VecX& grad, RestAnchor* anchor = nullptr) {
  const FeatureGraph g = build_feature_graph(h, scene, hist, dt, model.config().edges);
  ad::Tape tape(model.parameters());
  VecX inv_degree;
  const ad::Index out =
      model.forward(tape, g, model.node_scaler().apply(g.node_x), model.edge_scaler().apply(g.edge_x), inv_degree);
  Eigen::MatrixXd raw = tape.value(out);
  if (anchor != nullptr) raw -= anchor->raw;
  const FieldSet fields = fields_from_raw(h, g, raw);
  const std::vector<Matrices> composed = composed_fields(fields);
  PropagationResult r = propagate_recursive(h, fields, scene);

  const std::size_t n = scene.size();
  const double inv_n = 1.0 / static_cast<double>(n);
  std::vector<Positions> g_pos(h.levels.size());
  for (std::size_t l = 0; l < h.levels.size(); ++l) g_pos[l].assign(h.levels[l].size(), Vec3::Zero());

  StepObjective res;
  if (target != nullptr) {
    pin_root(r, scene);
    for (std::size_t k = 0; k < n; ++k) {
      const Vec3 d = r.positions[k] - (*target)[k];
      res.position_loss += d.squaredNorm() * inv_n;
      g_pos[0][k] = 2.0 * inv_n * d;
    }
    g_pos[0][scene.root_kernel_id].setZero();
    res.momentum = momentum_loss(h, r.level_positions);
    if (momentum_weight > 0.0) {
      const LevelPositions gm = momentum_loss_gradient(h, r.level_positions);
      for (std::size_t l = 0; l < gm.size(); ++l)
        for (std::size_t i = 0; i < gm[l].size(); ++i) g_pos[l][i] += momentum_weight * gm[l][i];
      g_pos[0][scene.root_kernel_id].setZero();
    }
    res.loss = res.position_loss + momentum_weight * res.momentum;
  } else {
    for (std::size_t k = 0; k < n; ++k) {
      const Vec3 d = r.positions[k] - scene.kernels[k].position;
      res.loss += d.squaredNorm() * inv_n;
      g_pos[0][k] = 2.0 * inv_n * d;
    }
  }

  const std::vector<Matrices> g_f = propagation_backward(h, scene, composed, r, std::move(g_pos));
  Eigen::MatrixXd seed(raw.rows(), raw.cols());
  for (int l = 1; l <= h.top_level(); ++l) {
    for (std::size_t i = 0; i < h.level(l).size(); ++i) {
      const auto row = static_cast<Eigen::Index>(g.level_offset[static_cast<std::size_t>(l)] + i);
      seed.row(row) =
          scale * map_output_backward(raw.row(row).transpose(), g_f[static_cast<std::size_t>(l - 1)][i]).transpose();
    }
  }
  tape.backward(out, seed, grad);
  if (anchor != nullptr) anchor->seed -= seed;
  if (target != nullptr) res.predicted = std::move(r.level_positions);
  return res;
}

// Total supervised objective for one rollout start, for gradient checks and
// the batch loop: T teacher-free steps (inputs detached between steps) plus
// an optional static term.
// Adds Gaussian noise shared by whole subtrees: every node (kernel or CMS)
// draws one displacement that moves all kernels below it, so the
// perturbation survives the averaging into barycenters. The root kernel
// stays put. Barycenters are refreshed afterwards.
inline void perturb_subtrees(const Hierarchy& h, const SceneTemplate& scene, LevelPositions& slice, double sigma,
                             std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, sigma);
  std::vector<Positions> shift(h.levels.size());
  for (std::size_t l = 0; l < h.levels.size(); ++l) {
    shift[l].resize(h.levels[l].size());
    for (Vec3& d : shift[l]) d = Vec3(n(rng), n(rng), n(rng));
  }
  for (std::size_t k = 0; k < slice[0].size(); ++k) {
    if (k == scene.root_kernel_id) continue;
    Vec3 d = shift[0][k];
    for (std::size_t l = 1; l < h.levels.size(); ++l) d += shift[l][h.ancestors[l][k]];
    slice[0][k] += d;
  }
  recompute_barycenters(h, slice);
}

struct SampleSpec {
  std::size_t trajectory = 0;
  std::size_t start = 2;
  int rollout = 1;
  bool apply_static = false;
  std::uint64_t noise_seed = 0;
};

struct SampleResult {
  double loss = 0.0;
  double position_loss = 0.0;
  double static_loss = 0.0;
  int steps = 0;
};

inline SampleResult sample_objective(const GraphModel& model, const Hierarchy& h, const SceneTemplate& scene,
                                     const std::vector<TrainingTrajectory>& data, const SampleSpec& s,
                                     const TrainingConfig& cfg, double scale, VecX& grad) {
  const TrainingTrajectory& traj = data.at(s.trajectory);
  if (s.start < 2 || s.start + static_cast<std::size_t>(s.rollout) >= traj.frames.size()) {
    throw Error(ErrorCode::invalid_argument, "rollout window leaves the trajectory");
  }
  SampleResult out;
  // The rest graph and its tape live for the whole sample; the tape keeps
  // references into the graph.
  std::optional<FeatureGraph> rest_graph;
  std::optional<ad::Tape> rest_tape;
  Eigen::MatrixXd rest_nodes, rest_edges;
  VecX rest_inv_degree;
  ad::Index rest_out = 0;
  RestAnchor anchor;
  if (model.config().rest_anchor) {
    rest_graph.emplace(rest_feature_graph(h, scene, traj.dt, model.config().edges));
    rest_nodes = model.node_scaler().apply(rest_graph->node_x);
    rest_edges = model.edge_scaler().apply(rest_graph->edge_x);
    rest_tape.emplace(model.parameters());
    rest_out = model.forward(*rest_tape, *rest_graph, rest_nodes, rest_edges, rest_inv_degree);
    anchor.raw = rest_tape->value(rest_out);
    anchor.seed = Eigen::MatrixXd::Zero(anchor.raw.rows(), anchor.raw.cols());
  }
  RestAnchor* a = rest_tape ? &anchor : nullptr;
  LevelPositions cur = traj.frames[s.start], prev = traj.frames[s.start - 1], prev2 = traj.frames[s.start - 2];
  if (cfg.input_noise > 0.0) {
    std::mt19937_64 rng(s.noise_seed);
    for (LevelPositions* slice : {&cur, &prev, &prev2}) perturb_subtrees(h, scene, *slice, cfg.input_noise, rng);
  }
  for (int i = 0; i < s.rollout; ++i) {
    const Positions& target = traj.frames[s.start + static_cast<std::size_t>(i) + 1][0];
    StepObjective o = step_objective(model, h, scene, History{&cur, &prev, &prev2}, traj.dt, &target,
                                     cfg.momentum_weight, scale, grad, a);
    out.loss += o.loss;
    out.position_loss += o.position_loss;
    ++out.steps;
    prev2 = std::move(prev);
    prev = std::move(cur);
    cur = std::move(o.predicted);
  }
  if (s.apply_static) {
    const LevelPositions rest = template_level_positions(h);
    const StepObjective o =
        step_objective(model, h, scene, History{&rest, &rest, &rest}, traj.dt, nullptr, 0.0,
                       scale * cfg.static_weight, grad, a);
    out.static_loss = o.loss;
    out.loss += cfg.static_weight * o.loss;
  }
  if (rest_tape) rest_tape->backward(rest_out, anchor.seed, grad);
  return out;
}

class Adam {
 public:
  explicit Adam(std::size_t n, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : m_(VecX::Zero(static_cast<Eigen::Index>(n))), v_(m_), b1_(beta1), b2_(beta2), eps_(eps) {}

  void step(VecX& params, const VecX& grad, double lr) {
    ++t_;
    m_ = b1_ * m_ + (1.0 - b1_) * grad;
    v_ = b2_ * v_ + (1.0 - b2_) * grad.cwiseAbs2();
    const double c1 = 1.0 - std::pow(b1_, t_), c2 = 1.0 - std::pow(b2_, t_);
    params.array() -= lr * (m_.array() / c1) / ((v_.array() / c2).sqrt() + eps_);
  }

 private:
  VecX m_, v_;
  double b1_, b2_, eps_;
  int t_ = 0;
};

// Fits feature standardization on ground-truth states (plus the rest state).
inline void fit_scalers(GraphModel& model, const Hierarchy& h, const SceneTemplate& scene,
                        const std::vector<TrainingTrajectory>& data, std::size_t stride = 4) {
  std::vector<FeatureGraph> graphs;
  const LevelPositions rest = template_level_positions(h);
  graphs.push_back(build_feature_graph(h, scene, History{&rest, &rest, &rest}, data.front().dt, model.config().edges));
  for (const auto& t : data) {
    for (std::size_t i = 2; i < t.frames.size(); i += stride) {
      graphs.push_back(build_feature_graph(h, scene, History{&t.frames[i], &t.frames[i - 1], &t.frames[i - 2]}, t.dt,
                                           model.config().edges));
    }
  }
  std::vector<const Eigen::MatrixXd*> nodes, edges;
  for (const auto& g : graphs) {
    nodes.push_back(&g.node_x);
    edges.push_back(&g.edge_x);
  }
  model.node_scaler() = FeatureScaler::fit(nodes, model.config().node_inputs());
  model.edge_scaler() = FeatureScaler::fit(edges, kEdgeFeatureWidth);
}

inline double model_static_residual(const GraphModel& model, const Hierarchy& h, const SceneTemplate& scene,
                                    double dt) {
  LearnedProvider p(model);
  return static_residual(scene, h, p, dt);
}

using EpochCallback = std::function<void(const EpochStats&)>;

// Curriculum training: epoch e rolls out T = min(e + 1, cap) steps from
// ground-truth states, adds the static term with probability 1/T, and takes
// one Adam step per batch. Deterministic for a fixed seed and thread count
// independent (per-sample gradients are summed in sample order).
inline TrainingReport train(GraphModel& model, const Hierarchy& h, const SceneTemplate& scene,
                            const std::vector<TrainingTrajectory>& data, const TrainingConfig& cfg,
                            const EpochCallback& on_epoch = {}) {
  if (data.empty()) throw Error(ErrorCode::invalid_argument, "no training trajectories");
  if (cfg.epochs < 1 || cfg.batch_size < 1 || cfg.batches_per_epoch < 1 || cfg.max_rollout < 1 ||
      !(cfg.learning_rate > 0.0)) {
    throw Error(ErrorCode::config, "training needs epochs, batches, batch size, rollout cap and lr > 0");
  }
  if (h.top_level() != model.config().levels) {
    throw Error(ErrorCode::shape_mismatch, "model level count does not match the hierarchy");
  }
  int longest = 0;
  for (const auto& t : data) longest = std::max(longest, static_cast<int>(t.frames.size()));
  int t_max = 0;
  for (int e = 0; e < cfg.epochs; ++e) t_max = std::max(t_max, cfg.rollout_length(e));
  if (longest < t_max + 3) {
    throw Error(ErrorCode::invalid_argument, "trajectories are shorter than the longest rollout window");
  }
  if (model.node_scaler().empty()) fit_scalers(model, h, scene, data);

  TrainingReport report;
  report.initial_static_residual = model_static_residual(model, h, scene, data.front().dt);

  std::mt19937_64 rng(cfg.seed);
  Adam adam(model.parameter_count());
  const unsigned threads =
      cfg.threads > 0 ? static_cast<unsigned>(cfg.threads) : std::max(1u, std::thread::hardware_concurrency());
  const int total_steps = cfg.epochs * cfg.batches_per_epoch;
  int opt_step = 0;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    const int T = cfg.rollout_length(epoch);
    const double p_static = 1.0 / static_cast<double>(T);
    EpochStats stats;
    stats.epoch = epoch;
    stats.rollout = T;
    for (int b = 0; b < cfg.batches_per_epoch; ++b) {
      std::vector<SampleSpec> specs;
      for (int i = 0; i < cfg.batch_size; ++i) {
        SampleSpec s;
        for (int tries = 0;; ++tries) {
          s.trajectory = std::uniform_int_distribution<std::size_t>(0, data.size() - 1)(rng);
          if (data[s.trajectory].frames.size() >= static_cast<std::size_t>(T) + 3) break;
        }
        s.start = std::uniform_int_distribution<std::size_t>(2, data[s.trajectory].frames.size() - 1 -
                                                                    static_cast<std::size_t>(T))(rng);
        s.rollout = T;
        s.apply_static = std::bernoulli_distribution(p_static)(rng);
        s.noise_seed = rng();
        specs.push_back(s);
      }
      const double scale = 1.0 / static_cast<double>(cfg.batch_size * T);
      std::vector<VecX> grads(specs.size(), VecX::Zero(static_cast<Eigen::Index>(model.parameter_count())));
      std::vector<SampleResult> results(specs.size());
      std::vector<std::exception_ptr> errors(specs.size());
      auto work = [&](std::size_t i) {
        try {
          results[i] = sample_objective(model, h, scene, data, specs[i], cfg, scale, grads[i]);
        } catch (...) {
          errors[i] = std::current_exception();
        }
      };
      for (std::size_t first = 0; first < specs.size(); first += threads) {
        std::vector<std::thread> pool;
        for (std::size_t i = first; i < std::min(specs.size(), first + threads); ++i) pool.emplace_back(work, i);
        for (auto& th : pool) th.join();
      }
      VecX grad = VecX::Zero(static_cast<Eigen::Index>(model.parameter_count()));
      for (std::size_t i = 0; i < specs.size(); ++i) {
        if (errors[i]) std::rethrow_exception(errors[i]);
        grad += grads[i];
        stats.loss += results[i].loss;
        stats.position_loss += results[i].position_loss;
        stats.samples += results[i].steps;
        if (specs[i].apply_static) {
          stats.static_loss += results[i].static_loss;
          ++stats.static_terms;
        }
      }
      const double progress = static_cast<double>(opt_step++) / static_cast<double>(std::max(1, total_steps - 1));
      const double lr = cfg.learning_rate * (cfg.final_lr_fraction + (1.0 - cfg.final_lr_fraction) * 0.5 *
                                                                         (1.0 + std::cos(std::numbers::pi * progress)));
      adam.step(model.parameters(), grad, lr);
    }
    stats.loss /= std::max(1, stats.samples);
    stats.position_loss /= std::max(1, stats.samples);
    if (stats.static_terms > 0) stats.static_loss /= stats.static_terms;
    stats.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    log::info("epoch " + std::to_string(epoch) + " T=" + std::to_string(T) + " loss=" + std::to_string(stats.loss));
    report.epochs.push_back(stats);
    if (on_epoch) on_epoch(stats);
  }
  report.final_static_residual = model_static_residual(model, h, scene, data.front().dt);
  return report;
}

}  // namespace splatdyn
