#pragma once

#include "splatdyn/learned/autodiff.hpp"
#include "splatdyn/learned/features.hpp"

#include <random>

namespace splatdyn {

struct ModelConfig {
  int rounds = 3;           // message-passing rounds
  int width = 32;           // hidden width
  int attribute_dim = 4;
  int levels = 2;           // simulated levels L (one-hot width)
  EdgeThresholds edges;
  std::uint64_t seed = 1;
  // Learnable per-node attributes: one row per CMS at levels 1..L of the
  // scene the model is trained on. 0 rows disables the table.
  int embedding_dim = 0;
  std::size_t embedding_rows = 0;
  // Subtract the network's own output on the rest state, so a static input
  // maps to the identity exactly.
  bool rest_anchor = false;

  int node_inputs() const { return node_feature_width(attribute_dim, levels); }
  int encoder_inputs() const { return node_inputs() + (embedding_rows > 0 ? embedding_dim : 0); }
};

// Reference configuration of the full-size network (16 rounds, width 128);
// kept as a preset, far too slow for desk-scale training.
inline ModelConfig large_scale_preset(int attribute_dim, int levels) {
  ModelConfig c;
  c.rounds = 16;
  c.width = 128;
  c.attribute_dim = attribute_dim;
  c.levels = levels;
  return c;
}

inline constexpr int kOutputWidth = 11;  // quat U (w,x,y,z), quat V, 3 singular-value logits

struct LayerShape {
  std::string name;
  Eigen::Index rows = 0, cols = 0;
  std::size_t offset = 0;
  std::size_t size() const { return static_cast<std::size_t>(rows * cols); }
};

// Per-column affine standardization applied to raw features.
struct FeatureScaler {
  VecX mean, scale;  // x' = (x - mean) / scale

  bool empty() const { return mean.size() == 0; }

  Eigen::MatrixXd apply(const Eigen::MatrixXd& x) const {
    if (empty()) return x;
    if (x.cols() != mean.size()) throw Error(ErrorCode::shape_mismatch, "feature width does not match scaler");
    return ((x.rowwise() - mean.transpose()).array().rowwise() / scale.transpose().array()).matrix();
  }

  static FeatureScaler fit(const std::vector<const Eigen::MatrixXd*>& batches, Eigen::Index cols) {
    FeatureScaler s;
    s.mean = VecX::Zero(cols);
    VecX sq = VecX::Zero(cols);
    double n = 0.0;
    for (const auto* b : batches) {
      s.mean += b->colwise().sum().transpose();
      sq += b->array().square().matrix().colwise().sum().transpose();
      n += static_cast<double>(b->rows());
    }
    s.scale = VecX::Ones(cols);
    if (n == 0.0) return s;
    s.mean /= n;
    for (Eigen::Index c = 0; c < cols; ++c) {
      const double var = std::max(0.0, sq(c) / n - s.mean(c) * s.mean(c));
      s.scale(c) = var > 1e-12 ? std::sqrt(var) : 1.0;  // constant columns pass through centered
    }
    return s;
  }
};

// Encode / message-pass / decode graph network with residual updates.
class GraphModel {
 public:
  GraphModel() = default;
  explicit GraphModel(const ModelConfig& c) : config_(c) {
    if (c.rounds < 1 || c.width < 1 || c.levels < 1 || c.attribute_dim < 0 || c.embedding_dim < 0) {
      throw Error(ErrorCode::config, "model needs rounds >= 1, width >= 1, levels >= 1");
    }
    if (c.embedding_rows > 0 && c.embedding_dim < 1) {
      throw Error(ErrorCode::config, "embedding table needs embedding_dim >= 1");
    }
    const Eigen::Index h = c.width;
    if (c.embedding_rows > 0) add("embed", static_cast<Eigen::Index>(c.embedding_rows), c.embedding_dim);
    add("node_enc.w", c.encoder_inputs(), h);
    add("node_enc.b", 1, h);
    add("edge_enc.w", kEdgeFeatureWidth, h);
    add("edge_enc.b", 1, h);
    for (int r = 0; r < c.rounds; ++r) {
      const std::string p = "round" + std::to_string(r);
      add(p + ".msg.w", 3 * h, h);
      add(p + ".msg.b", 1, h);
      add(p + ".upd.w", 2 * h, h);
      add(p + ".upd.b", 1, h);
    }
    add("dec.w1", h, h);
    add("dec.b1", 1, h);
    add("dec.w2", h, kOutputWidth);
    add("dec.b2", 1, kOutputWidth);
    params_ = VecX::Zero(static_cast<Eigen::Index>(total_));
    initialize(c.seed);
  }

  // Glorot-uniform weights, zero biases, zero output layer: a fresh model
  // predicts the identity everywhere. Embeddings start uniform in [-1, 1],
  // the range of the standardized features.
  void initialize(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    params_.setZero();
    for (const LayerShape& l : layers_) {
      if (l.rows == 1 || l.name.rfind("dec.w2", 0) == 0) continue;
      const double a = l.name == "embed" ? 1.0 : std::sqrt(6.0 / static_cast<double>(l.rows + l.cols));
      std::uniform_real_distribution<double> u(-a, a);
      for (std::size_t i = 0; i < l.size(); ++i) params_(static_cast<Eigen::Index>(l.offset + i)) = u(rng);
    }
  }

  const ModelConfig& config() const { return config_; }
  const std::vector<LayerShape>& layers() const { return layers_; }
  VecX& parameters() { return params_; }
  const VecX& parameters() const { return params_; }
  std::size_t parameter_count() const { return total_; }
  FeatureScaler& node_scaler() { return node_scaler_; }
  FeatureScaler& edge_scaler() { return edge_scaler_; }
  const FeatureScaler& node_scaler() const { return node_scaler_; }
  const FeatureScaler& edge_scaler() const { return edge_scaler_; }

  const LayerShape& layer(const std::string& name) const {
    for (const auto& l : layers_)
      if (l.name == name) return l;
    throw Error(ErrorCode::invalid_argument, "no layer named " + name);
  }

  // Records the forward pass on `tape` and returns the raw N x 11 output id.
  // The graph and inv_degree must outlive the tape (both are referenced).

  ad::Index forward(ad::Tape& tape, const FeatureGraph& g, const Eigen::MatrixXd& node_x,
                    const Eigen::MatrixXd& edge_x, VecX& inv_degree) const {
    if (node_x.cols() != config_.node_inputs()) {
      throw Error(ErrorCode::shape_mismatch, "node features have " + std::to_string(node_x.cols()) +
                                                 " columns, model expects " + std::to_string(config_.node_inputs()));
    }
    const auto n = static_cast<Eigen::Index>(g.node_count());
    inv_degree = VecX::Zero(n);
    for (std::size_t d : g.dest) inv_degree(static_cast<Eigen::Index>(d)) += 1.0;
    for (Eigen::Index i = 0; i < n; ++i) inv_degree(i) = inv_degree(i) > 0 ? 1.0 / inv_degree(i) : 0.0;

    auto p = [&](const std::string& name) {
      const LayerShape& l = layer(name);
      return tape.param(l.offset, l.rows, l.cols);
    };
    auto dense = [&](ad::Index x, const std::string& prefix) {
      return tape.add_bias(tape.matmul(x, p(prefix + ".w")), p(prefix + ".b"));
    };
    ad::Index x = tape.input(node_x);
    if (config_.embedding_rows > 0) {
      if (g.node_count() != config_.embedding_rows) {
        throw Error(ErrorCode::shape_mismatch, "graph has " + std::to_string(g.node_count()) +
                                                   " nodes, embedding table has " +
                                                   std::to_string(config_.embedding_rows));
      }
      x = tape.concat({x, p("embed")});
    }
    ad::Index h = tape.tanh(dense(x, "node_enc"));
    ad::Index e = tape.tanh(dense(tape.input(edge_x), "edge_enc"));
    for (int r = 0; r < config_.rounds; ++r) {
      const std::string pre = "round" + std::to_string(r);
      // dense([h_src, h_dst, e]) with the node blocks applied before the
      // gather: nodes are far fewer than edges.
      const LayerShape& w = layer(pre + ".msg.w");
      const auto block = [&](int b) {
        return tape.param(w.offset + static_cast<std::size_t>(b * w.cols * w.cols), w.cols, w.cols);
      };
      const ad::Index hs = tape.gather(tape.matmul(h, block(0)), g.source);
      const ad::Index hd = tape.gather(tape.matmul(h, block(1)), g.dest);
      const ad::Index pre_m = tape.add(tape.add(hs, hd), tape.matmul(e, block(2)));
      const ad::Index m = tape.tanh(tape.add_bias(pre_m, p(pre + ".msg.b")));
      e = tape.add(e, m);
      const ad::Index agg = tape.scatter_add(m, g.dest, n, inv_degree);
      h = tape.add(h, tape.tanh(dense(tape.concat({h, agg}), pre + ".upd")));
    }
    const ad::Index z = tape.tanh(tape.add_bias(tape.matmul(h, p("dec.w1")), p("dec.b1")));
    return tape.add_bias(tape.matmul(z, p("dec.w2")), p("dec.b2"));
  }

  Eigen::MatrixXd predict_raw(const FeatureGraph& g) const {
    ad::Tape tape(params_);
    VecX inv_degree;
    const ad::Index out = forward(tape, g, node_scaler_.apply(g.node_x), edge_scaler_.apply(g.edge_x), inv_degree);
    return tape.value(out);
  }

 private:
  void add(const std::string& name, Eigen::Index rows, Eigen::Index cols) {
    layers_.push_back({name, rows, cols, total_});
    total_ += static_cast<std::size_t>(rows * cols);
  }

  ModelConfig config_;
  std::vector<LayerShape> layers_;
  std::size_t total_ = 0;
  VecX params_;
  FeatureScaler node_scaler_, edge_scaler_;
};

}  // namespace splatdyn
