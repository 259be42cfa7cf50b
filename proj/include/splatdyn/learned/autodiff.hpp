#pragma once

#include "splatdyn/common.hpp"


// Minimal reverse-mode tape over batches (rows = items). Only the ops the
// graph network needs; parameters live in one flat vector so the optimizer
// and the checkpoint see a single array. Storage is row-major so gathers
// and scatters touch contiguous rows.
namespace splatdyn::ad {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Index = std::size_t;

class Tape {
 public:
  explicit Tape(const VecX& params) : params_(params) {}

  Index input(Matrix value) { return push({std::move(value), Op::input}); }

  // View of params[offset, offset + rows*cols) as a row-major rows x cols
  // matrix.
  Index param(std::size_t offset, Eigen::Index rows, Eigen::Index cols) {
    if (offset + static_cast<std::size_t>(rows * cols) > static_cast<std::size_t>(params_.size())) {
      throw Error(ErrorCode::shape_mismatch, "parameter slice out of range");
    }
    Node n{Eigen::Map<const Matrix>(params_.data() + offset, rows, cols), Op::param};
    n.offset = offset;
    return push(std::move(n));
  }

  Index matmul(Index a, Index b) {
    check_shape(value(a).cols() == value(b).rows(), "matmul");
    return push({value(a) * value(b), Op::matmul, a, b});
  }

  // a + bias, bias a 1 x cols row broadcast over the batch.
  Index add_bias(Index a, Index bias) {
    check_shape(value(bias).rows() == 1 && value(bias).cols() == value(a).cols(), "add_bias");
    return push({value(a).rowwise() + value(bias).row(0), Op::add_bias, a, bias});
  }

  Index add(Index a, Index b) {
    check_shape(value(a).rows() == value(b).rows() && value(a).cols() == value(b).cols(), "add");
    return push({value(a) + value(b), Op::add, a, b});
  }

  // 1 - 2 / (exp(2x) + 1): same values as std::tanh to a few ulp, but it
  // vectorizes through Eigen's exp.
  Index tanh(Index a) {
    return push({(1.0 - 2.0 / ((2.0 * value(a).array()).exp() + 1.0)).matrix(), Op::tanh, a});
  }

  Index concat(std::initializer_list<Index> parts) {
    Eigen::Index rows = value(*parts.begin()).rows(), cols = 0;
    for (Index p : parts) {
      check_shape(value(p).rows() == rows, "concat");
      cols += value(p).cols();
    }
    Matrix out(rows, cols);
    Eigen::Index c = 0;
    for (Index p : parts) {
      out.middleCols(c, value(p).cols()) = value(p);
      c += value(p).cols();
    }
    Node n{std::move(out), Op::concat};
    n.parts.assign(parts.begin(), parts.end());
    return push(std::move(n));
  }

  // out[i] = a[idx[i]]
  Index gather(Index a, const std::vector<std::size_t>& idx) {
    const Matrix& v = value(a);
    Matrix out(static_cast<Eigen::Index>(idx.size()), v.cols());
    for (std::size_t i = 0; i < idx.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = v.row(row(idx[i], v));
    Node n{std::move(out), Op::gather, a};
    n.idx = &idx;
    return push(std::move(n));
  }

  // out[idx[i]] += a[i] * weight[idx[i]]; out has `rows` rows.
  Index scatter_add(Index a, const std::vector<std::size_t>& idx, Eigen::Index rows, const VecX& weight) {
    const Matrix& v = value(a);
    check_shape(static_cast<Eigen::Index>(idx.size()) == v.rows() && weight.size() == rows, "scatter_add");
    Matrix out = Matrix::Zero(rows, v.cols());
    for (std::size_t i = 0; i < idx.size(); ++i) {
      if (idx[i] >= static_cast<std::size_t>(rows)) throw Error(ErrorCode::shape_mismatch, "scatter index");
      out.row(static_cast<Eigen::Index>(idx[i])) += weight(static_cast<Eigen::Index>(idx[i])) * v.row(static_cast<Eigen::Index>(i));
    }
    Node n{std::move(out), Op::scatter, a};
    n.idx = &idx;
    n.weight = &weight;
    return push(std::move(n));
  }

  const Matrix& value(Index i) const { return nodes_.at(i).value; }
  std::size_t size() const { return nodes_.size(); }

  // Seeds d(loss)/d(out) and accumulates d(loss)/d(params) into grad.
  void backward(Index out, const Matrix& seed, VecX& grad) {
    if (grad.size() != params_.size()) grad = VecX::Zero(params_.size());
    for (auto& n : nodes_) n.grad.resize(0, 0);
    accumulate(out, seed);
    for (Index i = out + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (n.grad.size() == 0) continue;
      const Matrix& g = n.grad;
      switch (n.op) {
        case Op::input:
          break;
        case Op::param:
          grad.segment(static_cast<Eigen::Index>(n.offset), g.size()) += Eigen::Map<const VecX>(g.data(), g.size());
          break;
        case Op::matmul:
          accumulate(n.a, g * value(n.b).transpose());
          accumulate(n.b, value(n.a).transpose() * g);
          break;
        case Op::add_bias:
          accumulate(n.a, g);
          accumulate(n.b, g.colwise().sum());
          break;
        case Op::add:
          accumulate(n.a, g);
          accumulate(n.b, g);
          break;
        case Op::tanh:
          accumulate(n.a, (g.array() * (1.0 - n.value.array().square())).matrix());
          break;
        case Op::concat: {
          Eigen::Index c = 0;
          for (Index p : n.parts) {
            const Eigen::Index w = value(p).cols();
            accumulate(p, g.middleCols(c, w));
            c += w;
          }
          break;
        }
        case Op::gather: {
          const Matrix& src = value(n.a);
          Matrix ga = Matrix::Zero(src.rows(), src.cols());
          for (std::size_t r = 0; r < n.idx->size(); ++r) ga.row(row((*n.idx)[r], src)) += g.row(static_cast<Eigen::Index>(r));
          accumulate(n.a, ga);
          break;
        }
        case Op::scatter: {
          const Matrix& src = value(n.a);
          Matrix ga(src.rows(), src.cols());
          for (std::size_t r = 0; r < n.idx->size(); ++r) {
            const auto t = static_cast<Eigen::Index>((*n.idx)[r]);
            ga.row(static_cast<Eigen::Index>(r)) = (*n.weight)(t) * g.row(t);
          }
          accumulate(n.a, ga);
          break;
        }
      }
    }
  }

 private:
  enum class Op { input, param, matmul, add_bias, add, tanh, concat, gather, scatter };

  struct Node {
    Matrix value;
    Op op;
    Index a = 0, b = 0;
    std::size_t offset = 0;
    std::vector<Index> parts;
    const std::vector<std::size_t>* idx = nullptr;
    const VecX* weight = nullptr;
    Matrix grad;
  };

  Index push(Node n) {
    nodes_.push_back(std::move(n));
    return nodes_.size() - 1;
  }

  static Eigen::Index row(std::size_t i, const Matrix& m) {
    if (i >= static_cast<std::size_t>(m.rows())) throw Error(ErrorCode::shape_mismatch, "gather index out of range");
    return static_cast<Eigen::Index>(i);
  }

  static void check_shape(bool ok, const char* op) {
    if (!ok) throw Error(ErrorCode::shape_mismatch, std::string("tape: bad operand shapes for ") + op);
  }

  template <typename Derived>
  void accumulate(Index i, const Eigen::MatrixBase<Derived>& g) {
    Node& n = nodes_[i];
    if (n.op == Op::input) return;
    if (n.grad.size() == 0) {
      n.grad = g;
    } else {
      n.grad += g;
    }
  }

  const VecX& params_;
  std::vector<Node> nodes_;
};

}  // namespace splatdyn::ad
