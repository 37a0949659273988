#pragma once

// Dense matrices with reverse-mode differentiation.
//
// A Tensor is a shared handle to a node holding a row-major double matrix and,
// once backward has reached it, a gradient of the same shape. Operations record
// a backward closure on the thread's active Tape whenever one of their inputs
// requires a gradient; with no active tape they only compute values.

#include <array>
#include <functional>
#include <initializer_list>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "hyperbert/errors.hpp"

namespace hyperbert {

using Index = Eigen::Index;
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Rng = std::mt19937_64;

namespace detail {

struct TensorNode {
  Matrix value;
  Matrix grad;  // empty until the first accumulation
  bool requires_grad = false;

  template <typename Derived>
  void accumulate(const Eigen::MatrixBase<Derived>& g) {
    if (grad.size() == 0) {
      grad = g;
    } else {
      grad += g;
    }
  }
};

}  // namespace detail

class Tensor {
 public:
  Tensor();
  explicit Tensor(Matrix value, bool requires_grad = false);

  static Tensor zeros(Index rows, Index cols, bool requires_grad = false);
  static Tensor scalar(double v, bool requires_grad = false);
  static Tensor from_rows(std::initializer_list<std::initializer_list<double>> rows,
                          bool requires_grad = false);

  Index rows() const { return node_->value.rows(); }
  Index cols() const { return node_->value.cols(); }
  Index size() const { return node_->value.size(); }
  std::array<Index, 2> shape() const { return {rows(), cols()}; }
  std::string shape_string() const;

  const Matrix& value() const { return node_->value; }
  // Mutable access for optimizers and initializers; never call mid-graph.
  Matrix& mutable_value() { return node_->value; }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }

  bool has_grad() const { return node_->grad.size() != 0; }
  // Gradient buffer; zero matrix of the value's shape when none was accumulated.
  Matrix grad() const;
  void zero_grad() { node_->grad.resize(0, 0); }

  double item() const;
  Tensor detach() const;
  bool same_node(const Tensor& other) const { return node_ == other.node_; }

  const std::shared_ptr<detail::TensorNode>& node() const { return node_; }

 private:
  std::shared_ptr<detail::TensorNode> node_;
};

// Ordered record of differentiable operations. Constructing a Tape makes it the
// active tape of the calling thread until it is destroyed.
class Tape {
 public:
  using BackwardFn = std::function<void(const Matrix& grad_out)>;

  Tape();
  ~Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  void record(const Tensor& output, BackwardFn fn);

  // Propagates d(loss)/d(x) into every recorded ancestor. A tape can be
  // consumed once; call reset() before recording the next graph.
  void backward(const Tensor& loss);
  void reset();

  std::size_t size() const { return entries_.size(); }
  bool consumed() const { return consumed_; }

  static Tape* current();

 private:
  friend class NoGradGuard;
  struct Entry {
    std::shared_ptr<detail::TensorNode> output;
    BackwardFn backward;
  };
  std::vector<Entry> entries_;
  bool consumed_ = false;
  Tape* previous_ = nullptr;
};

// Suspends recording on this thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  Tape* saved_;
};

// backward on the active tape.
void backward(const Tensor& loss);

// Active tape if any input requires a gradient, nullptr otherwise. When it
// returns a tape the caller must mark its output and record a closure.
Tape* recording_tape(std::initializer_list<const Tensor*> inputs);

// --- structural ---------------------------------------------------------
Tensor transpose(const Tensor& a);
Tensor concat_cols(std::span<const Tensor> parts);
Tensor concat_rows(std::span<const Tensor> parts);
Tensor slice_rows(const Tensor& a, Index begin, Index count);
Tensor slice_cols(const Tensor& a, Index begin, Index count);
// out[r] = a[indices[r]]; gradient scatter-adds, so repeated indices accumulate.
Tensor gather_rows(const Tensor& a, std::span<const Index> indices);

// --- arithmetic ---------------------------------------------------------
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
// a (m×n) plus a 1×n row broadcast over rows.
Tensor add_row(const Tensor& a, const Tensor& row);
Tensor scale(const Tensor& a, double s);
Tensor relu(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor sum(const Tensor& a);
// Mean over rows: m×n -> 1×n.
Tensor mean_rows(const Tensor& a);
// Σ a ⊙ weights with a constant weight matrix; returns a scalar.
Tensor weighted_sum(const Tensor& a, const Matrix& weights);

// --- normalization and probability --------------------------------------
Tensor softmax_rows(const Tensor& a);
// Per-row log Σ_{j: mask(r,j) != 0} exp(a(r,j)); m×n -> m×1. Rows with an
// empty mask yield 0 and receive no gradient.
Tensor masked_logsumexp_rows(const Tensor& a, const Matrix& mask);
Tensor log_softmax_rows(const Tensor& a);
Tensor layer_norm(const Tensor& a, const Tensor& gain, const Tensor& bias, double eps);
Tensor l2_normalize_rows(const Tensor& a, double eps = 1e-12);
// Inverted dropout: identity unless training, survivors scaled by 1/(1-p).
Tensor dropout(const Tensor& a, double p, bool training, Rng& rng);

// --- packed sequences ---------------------------------------------------
// A packed batch stacks n sequences of length T into an (n·T)×d matrix.
// pool_sequences: out[s] = Σ_t weights(s,t) · a[s·T + t]   (n×d)
Tensor pool_sequences(const Tensor& a, const Matrix& weights);
// expand_sequences: out[s·T + t] = weights(s,t) · a[s]   ((n·T)×d)
Tensor expand_sequences(const Tensor& a, const Matrix& weights);

}  // namespace hyperbert
