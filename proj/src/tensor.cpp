#include "hyperbert/tensor.hpp"

#include <cmath>
#include <limits>
#include <sstream>

namespace hyperbert {

namespace {

thread_local Tape* g_active_tape = nullptr;

std::string shape_of(const Matrix& m) {
  std::ostringstream os;
  os << "[" << m.rows() << "x" << m.cols() << "]";
  return os.str();
}

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + a.shape_string() + " vs " +
                         b.shape_string());
  }
}

// Marks `out` as differentiable and records `fn` when any input needs a gradient.
template <typename Fn>
void attach(Tensor& out, std::initializer_list<const Tensor*> inputs, Fn&& fn) {
  if (Tape* tape = recording_tape(inputs)) {
    out.set_requires_grad(true);
    tape->record(out, std::forward<Fn>(fn));
  }
}

}  // namespace

// --- Tensor -------------------------------------------------------------

Tensor::Tensor() : node_(std::make_shared<detail::TensorNode>()) {}

Tensor::Tensor(Matrix value, bool requires_grad) : node_(std::make_shared<detail::TensorNode>()) {
  node_->value = std::move(value);
  node_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(Index rows, Index cols, bool requires_grad) {
  return Tensor(Matrix::Zero(rows, cols), requires_grad);
}

Tensor Tensor::scalar(double v, bool requires_grad) {
  Matrix m(1, 1);
  m(0, 0) = v;
  return Tensor(std::move(m), requires_grad);
}

Tensor Tensor::from_rows(std::initializer_list<std::initializer_list<double>> rows,
                         bool requires_grad) {
  const Index r = static_cast<Index>(rows.size());
  const Index c = r == 0 ? 0 : static_cast<Index>(rows.begin()->size());
  Matrix m(r, c);
  Index i = 0;
  for (const auto& row : rows) {
    if (static_cast<Index>(row.size()) != c) {
      throw DimensionError("Tensor::from_rows: ragged rows");
    }
    Index j = 0;
    for (double v : row) m(i, j++) = v;
    ++i;
  }
  return Tensor(std::move(m), requires_grad);
}

std::string Tensor::shape_string() const { return shape_of(node_->value); }

Matrix Tensor::grad() const {
  if (!has_grad()) return Matrix::Zero(rows(), cols());
  return node_->grad;
}

double Tensor::item() const {
  if (size() != 1) throw ContractError("Tensor::item: tensor is " + shape_string());
  return node_->value(0, 0);
}

Tensor Tensor::detach() const { return Tensor(node_->value, false); }

// --- Tape ---------------------------------------------------------------

Tape::Tape() : previous_(g_active_tape) { g_active_tape = this; }

Tape::~Tape() {
  if (g_active_tape == this) g_active_tape = previous_;
}

Tape* Tape::current() { return g_active_tape; }

void Tape::record(const Tensor& output, BackwardFn fn) {
  if (consumed_) throw ContractError("Tape::record: tape already consumed; call reset()");
  entries_.push_back(Entry{output.node(), std::move(fn)});
}

void Tape::backward(const Tensor& loss) {
  if (loss.size() != 1) {
    throw ContractError("backward: loss must be a scalar, got " + loss.shape_string());
  }
  if (consumed_) throw ContractError("backward: tape already consumed; call reset() first");
  consumed_ = true;
  if (!loss.requires_grad()) return;
  loss.node()->accumulate(Matrix::Ones(1, 1));
  for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
    const auto& node = it->output;
    if (node->grad.size() == 0) continue;  // not an ancestor of the loss
    it->backward(node->grad);
  }
}

void Tape::reset() {
  entries_.clear();
  consumed_ = false;
}

NoGradGuard::NoGradGuard() : saved_(g_active_tape) { g_active_tape = nullptr; }
NoGradGuard::~NoGradGuard() { g_active_tape = saved_; }

void backward(const Tensor& loss) {
  Tape* tape = Tape::current();
  if (tape == nullptr) throw ContractError("backward: no active tape");
  tape->backward(loss);
}

Tape* recording_tape(std::initializer_list<const Tensor*> inputs) {
  Tape* tape = g_active_tape;
  if (tape == nullptr) return nullptr;
  for (const Tensor* t : inputs) {
    if (t->requires_grad()) return tape;
  }
  return nullptr;
}

// --- structural ---------------------------------------------------------

Tensor transpose(const Tensor& a) {
  Tensor out(a.value().transpose());
  attach(out, {&a}, [an = a.node()](const Matrix& g) {
    if (an->requires_grad) an->accumulate(g.transpose());
  });
  return out;
}

Tensor concat_cols(std::span<const Tensor> parts) {
  if (parts.empty()) throw DimensionError("concat_cols: no inputs");
  const Index rows = parts.front().rows();
  Index cols = 0;
  for (const auto& p : parts) {
    if (p.rows() != rows) {
      throw DimensionError("concat_cols: row mismatch " + parts.front().shape_string() + " vs " +
                           p.shape_string());
    }
    cols += p.cols();
  }
  Matrix m(rows, cols);
  Index offset = 0;
  for (const auto& p : parts) {
    m.middleCols(offset, p.cols()) = p.value();
    offset += p.cols();
  }
  Tensor out(std::move(m));
  if (Tape* tape = g_active_tape) {
    bool any = false;
    for (const auto& p : parts) any = any || p.requires_grad();
    if (any) {
      out.set_requires_grad(true);
      std::vector<std::shared_ptr<detail::TensorNode>> nodes;
      for (const auto& p : parts) nodes.push_back(p.node());
      tape->record(out, [nodes = std::move(nodes)](const Matrix& g) {
        Index off = 0;
        for (const auto& n : nodes) {
          const Index c = n->value.cols();
          if (n->requires_grad) n->accumulate(g.middleCols(off, c));
          off += c;
        }
      });
    }
  }
  return out;
}

Tensor concat_rows(std::span<const Tensor> parts) {
  if (parts.empty()) throw DimensionError("concat_rows: no inputs");
  const Index cols = parts.front().cols();
  Index rows = 0;
  for (const auto& p : parts) {
    if (p.cols() != cols) {
      throw DimensionError("concat_rows: column mismatch " + parts.front().shape_string() +
                           " vs " + p.shape_string());
    }
    rows += p.rows();
  }
  Matrix m(rows, cols);
  Index offset = 0;
  for (const auto& p : parts) {
    m.middleRows(offset, p.rows()) = p.value();
    offset += p.rows();
  }
  Tensor out(std::move(m));
  if (Tape* tape = g_active_tape) {
    bool any = false;
    for (const auto& p : parts) any = any || p.requires_grad();
    if (any) {
      out.set_requires_grad(true);
      std::vector<std::shared_ptr<detail::TensorNode>> nodes;
      for (const auto& p : parts) nodes.push_back(p.node());
      tape->record(out, [nodes = std::move(nodes)](const Matrix& g) {
        Index off = 0;
        for (const auto& n : nodes) {
          const Index r = n->value.rows();
          if (n->requires_grad) n->accumulate(g.middleRows(off, r));
          off += r;
        }
      });
    }
  }
  return out;
}

Tensor slice_rows(const Tensor& a, Index begin, Index count) {
  if (begin < 0 || count < 0 || begin + count > a.rows()) {
    throw DimensionError("slice_rows: range [" + std::to_string(begin) + ", " +
                         std::to_string(begin + count) + ") outside " + a.shape_string());
  }
  Tensor out(a.value().middleRows(begin, count));
  attach(out, {&a}, [an = a.node(), begin, count](const Matrix& g) {
    Matrix full = Matrix::Zero(an->value.rows(), an->value.cols());
    full.middleRows(begin, count) = g;
    an->accumulate(full);
  });
  return out;
}

Tensor slice_cols(const Tensor& a, Index begin, Index count) {
  if (begin < 0 || count < 0 || begin + count > a.cols()) {
    throw DimensionError("slice_cols: range [" + std::to_string(begin) + ", " +
                         std::to_string(begin + count) + ") outside " + a.shape_string());
  }
  Tensor out(a.value().middleCols(begin, count));
  attach(out, {&a}, [an = a.node(), begin, count](const Matrix& g) {
    Matrix full = Matrix::Zero(an->value.rows(), an->value.cols());
    full.middleCols(begin, count) = g;
    an->accumulate(full);
  });
  return out;
}

Tensor gather_rows(const Tensor& a, std::span<const Index> indices) {
  Matrix m(static_cast<Index>(indices.size()), a.cols());
  for (std::size_t r = 0; r < indices.size(); ++r) {
    const Index src = indices[r];
    if (src < 0 || src >= a.rows()) {
      throw DimensionError("gather_rows: index " + std::to_string(src) + " outside " +
                           a.shape_string());
    }
    m.row(static_cast<Index>(r)) = a.value().row(src);
  }
  Tensor out(std::move(m));
  attach(out, {&a},
         [an = a.node(), idx = std::vector<Index>(indices.begin(), indices.end())](const Matrix& g) {
           Matrix full = Matrix::Zero(an->value.rows(), an->value.cols());
           for (std::size_t r = 0; r < idx.size(); ++r) {
             full.row(idx[r]) += g.row(static_cast<Index>(r));
           }
           an->accumulate(full);
         });
  return out;
}

// --- arithmetic ---------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.rows()) {
    throw DimensionError("matmul: inner dimensions disagree " + a.shape_string() + " x " +
                         b.shape_string());
  }
  Tensor out(a.value() * b.value());
  attach(out, {&a, &b}, [an = a.node(), bn = b.node()](const Matrix& g) {
    if (an->requires_grad) an->accumulate(g * bn->value.transpose());
    if (bn->requires_grad) bn->accumulate(an->value.transpose() * g);
  });
  return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape("add", a, b);
  Tensor out(a.value() + b.value());
  attach(out, {&a, &b}, [an = a.node(), bn = b.node()](const Matrix& g) {
    if (an->requires_grad) an->accumulate(g);
    if (bn->requires_grad) bn->accumulate(g);
  });
  return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape("sub", a, b);
  Tensor out(a.value() - b.value());
  attach(out, {&a, &b}, [an = a.node(), bn = b.node()](const Matrix& g) {
    if (an->requires_grad) an->accumulate(g);
    if (bn->requires_grad) bn->accumulate(-g);
  });
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape("mul", a, b);
  Tensor out(a.value().cwiseProduct(b.value()));
  attach(out, {&a, &b}, [an = a.node(), bn = b.node()](const Matrix& g) {
    if (an->requires_grad) an->accumulate(g.cwiseProduct(bn->value));
    if (bn->requires_grad) bn->accumulate(g.cwiseProduct(an->value));
  });
  return out;
}

Tensor add_row(const Tensor& a, const Tensor& row) {
  if (row.rows() != 1 || row.cols() != a.cols()) {
    throw DimensionError("add_row: cannot broadcast " + row.shape_string() + " over " +
                         a.shape_string());
  }
  Matrix m = a.value();
  m.rowwise() += row.value().row(0);
  Tensor out(std::move(m));
  attach(out, {&a, &row}, [an = a.node(), rn = row.node()](const Matrix& g) {
    if (an->requires_grad) an->accumulate(g);
    if (rn->requires_grad) rn->accumulate(g.colwise().sum());
  });
  return out;
}

Tensor scale(const Tensor& a, double s) {
  Tensor out(a.value() * s);
  attach(out, {&a}, [an = a.node(), s](const Matrix& g) { an->accumulate(g * s); });
  return out;
}

Tensor relu(const Tensor& a) {
  Tensor out(a.value().cwiseMax(0.0));
  attach(out, {&a}, [an = a.node()](const Matrix& g) {
    an->accumulate(g.cwiseProduct((an->value.array() > 0.0).cast<double>().matrix()));
  });
  return out;
}

Tensor exp(const Tensor& a) {
  Tensor out(a.value().array().exp().matrix());
  attach(out, {&a}, [an = a.node(), on = out.node()](const Matrix& g) {
    an->accumulate(g.cwiseProduct(on->value));
  });
  return out;
}

Tensor log(const Tensor& a) {
  Tensor out(a.value().array().log().matrix());
  attach(out, {&a}, [an = a.node()](const Matrix& g) {
    an->accumulate(g.cwiseQuotient(an->value));
  });
  return out;
}

Tensor sum(const Tensor& a) {
  Tensor out = Tensor::scalar(a.value().sum());
  attach(out, {&a}, [an = a.node()](const Matrix& g) {
    an->accumulate(Matrix::Constant(an->value.rows(), an->value.cols(), g(0, 0)));
  });
  return out;
}

Tensor mean_rows(const Tensor& a) {
  if (a.rows() == 0) throw DimensionError("mean_rows: no rows");
  Tensor out(a.value().colwise().mean());
  attach(out, {&a}, [an = a.node()](const Matrix& g) {
    const double inv = 1.0 / static_cast<double>(an->value.rows());
    Matrix full(an->value.rows(), an->value.cols());
    full.rowwise() = g.row(0) * inv;
    an->accumulate(full);
  });
  return out;
}

Tensor weighted_sum(const Tensor& a, const Matrix& weights) {
  if (weights.rows() != a.rows() || weights.cols() != a.cols()) {
    throw DimensionError("weighted_sum: weights " + shape_of(weights) + " vs " + a.shape_string());
  }
  double total = 0.0;
  for (Index i = 0; i < a.rows(); ++i) {
    for (Index j = 0; j < a.cols(); ++j) total += a.value()(i, j) * weights(i, j);
  }
  Tensor out = Tensor::scalar(total);
  attach(out, {&a}, [an = a.node(), w = weights](const Matrix& g) { an->accumulate(w * g(0, 0)); });
  return out;
}

// --- normalization and probability --------------------------------------

Tensor softmax_rows(const Tensor& a) {
  if (a.value().hasNaN()) throw NumericError("softmax_rows: NaN input");
  Matrix m(a.rows(), a.cols());
  for (Index r = 0; r < a.rows(); ++r) {
    const double mx = a.value().row(r).maxCoeff();
    m.row(r) = (a.value().row(r).array() - mx).exp().matrix();
    m.row(r) /= m.row(r).sum();
  }
  Tensor out(std::move(m));
  attach(out, {&a}, [an = a.node(), on = out.node()](const Matrix& g) {
    const Matrix& y = on->value;
    Matrix d(y.rows(), y.cols());
    for (Index r = 0; r < y.rows(); ++r) {
      const double dot = g.row(r).dot(y.row(r));
      d.row(r) = y.row(r).cwiseProduct((g.row(r).array() - dot).matrix());
    }
    an->accumulate(d);
  });
  return out;
}

Tensor masked_logsumexp_rows(const Tensor& a, const Matrix& mask) {
  if (mask.rows() != a.rows() || mask.cols() != a.cols()) {
    throw DimensionError("masked_logsumexp_rows: mask " + shape_of(mask) + " vs " +
                         a.shape_string());
  }
  if (a.value().hasNaN()) throw NumericError("masked_logsumexp_rows: NaN input");
  Matrix out_v = Matrix::Zero(a.rows(), 1);
  for (Index r = 0; r < a.rows(); ++r) {
    double mx = -std::numeric_limits<double>::infinity();
    for (Index j = 0; j < a.cols(); ++j) {
      if (mask(r, j) != 0.0) mx = std::max(mx, a.value()(r, j));
    }
    if (!std::isfinite(mx)) continue;
    double s = 0.0;
    for (Index j = 0; j < a.cols(); ++j) {
      if (mask(r, j) != 0.0) s += std::exp(a.value()(r, j) - mx);
    }
    out_v(r, 0) = mx + std::log(s);
  }
  Tensor out(std::move(out_v));
  attach(out, {&a}, [an = a.node(), on = out.node(), mask](const Matrix& g) {
    Matrix d = Matrix::Zero(an->value.rows(), an->value.cols());
    for (Index r = 0; r < d.rows(); ++r) {
      for (Index j = 0; j < d.cols(); ++j) {
        if (mask(r, j) != 0.0) d(r, j) = g(r, 0) * std::exp(an->value(r, j) - on->value(r, 0));
      }
    }
    an->accumulate(d);
  });
  return out;
}

Tensor log_softmax_rows(const Tensor& a) {
  if (a.value().hasNaN()) throw NumericError("log_softmax_rows: NaN input");
  Matrix m(a.rows(), a.cols());
  for (Index r = 0; r < a.rows(); ++r) {
    const double mx = a.value().row(r).maxCoeff();
    const double lse = mx + std::log((a.value().row(r).array() - mx).exp().sum());
    m.row(r) = a.value().row(r).array() - lse;
  }
  Tensor out(std::move(m));
  attach(out, {&a}, [an = a.node(), on = out.node()](const Matrix& g) {
    Matrix d(g.rows(), g.cols());
    for (Index r = 0; r < g.rows(); ++r) {
      const double gs = g.row(r).sum();
      d.row(r) = g.row(r) - (on->value.row(r).array().exp() * gs).matrix();
    }
    an->accumulate(d);
  });
  return out;
}

Tensor layer_norm(const Tensor& a, const Tensor& gain, const Tensor& bias, double eps) {
  const Index d = a.cols();
  if (d < 1) throw DimensionError("layer_norm: empty feature dimension");
  if (gain.rows() != 1 || gain.cols() != d || bias.rows() != 1 || bias.cols() != d) {
    throw DimensionError("layer_norm: gain " + gain.shape_string() + " / bias " +
                         bias.shape_string() + " do not match " + a.shape_string());
  }
  Matrix normalized(a.rows(), d);
  Eigen::VectorXd inv_std(a.rows());
  for (Index r = 0; r < a.rows(); ++r) {
    const double mu = a.value().row(r).mean();
    const double var = (a.value().row(r).array() - mu).square().mean();
    inv_std(r) = 1.0 / std::sqrt(var + eps);
    normalized.row(r) = (a.value().row(r).array() - mu) * inv_std(r);
  }
  Matrix y = normalized.array().rowwise() * gain.value().row(0).array();
  y.rowwise() += bias.value().row(0);
  Tensor out(std::move(y));
  attach(out, {&a, &gain, &bias},
         [an = a.node(), gn = gain.node(), bn = bias.node(), normalized = std::move(normalized),
          inv_std = std::move(inv_std)](const Matrix& g) {
           if (gn->requires_grad) gn->accumulate(g.cwiseProduct(normalized).colwise().sum());
           if (bn->requires_grad) bn->accumulate(g.colwise().sum());
           if (an->requires_grad) {
             const double n = static_cast<double>(normalized.cols());
             Matrix dx(g.rows(), g.cols());
             for (Index r = 0; r < g.rows(); ++r) {
               Eigen::RowVectorXd dn = g.row(r).cwiseProduct(gn->value.row(0));
               const double mean_dn = dn.sum() / n;
               const double mean_dn_x = dn.dot(normalized.row(r)) / n;
               dx.row(r) = ((dn.array() - mean_dn) - normalized.row(r).array() * mean_dn_x) *
                           inv_std(r);
             }
             an->accumulate(dx);
           }
         });
  return out;
}

Tensor l2_normalize_rows(const Tensor& a, double eps) {
  Matrix y(a.rows(), a.cols());
  Eigen::VectorXd norms(a.rows());
  for (Index r = 0; r < a.rows(); ++r) {
    norms(r) = std::sqrt(a.value().row(r).squaredNorm() + eps);
    y.row(r) = a.value().row(r) / norms(r);
  }
  Tensor out(std::move(y));
  attach(out, {&a}, [an = a.node(), on = out.node(), norms = std::move(norms)](const Matrix& g) {
    Matrix d(g.rows(), g.cols());
    for (Index r = 0; r < g.rows(); ++r) {
      const double dot = on->value.row(r).dot(g.row(r));
      d.row(r) = (g.row(r) - on->value.row(r) * dot) / norms(r);
    }
    an->accumulate(d);
  });
  return out;
}

Tensor dropout(const Tensor& a, double p, bool training, Rng& rng) {
  if (p < 0.0 || p >= 1.0) throw ConfigError("dropout: p must lie in [0, 1)");
  if (!training || p == 0.0) return a;
  std::bernoulli_distribution keep(1.0 - p);
  const double factor = 1.0 / (1.0 - p);
  Matrix mask(a.rows(), a.cols());
  for (Index i = 0; i < mask.size(); ++i) mask.data()[i] = keep(rng) ? factor : 0.0;
  Tensor out(a.value().cwiseProduct(mask));
  attach(out, {&a}, [an = a.node(), mask = std::move(mask)](const Matrix& g) {
    an->accumulate(g.cwiseProduct(mask));
  });
  return out;
}

// --- packed sequences ---------------------------------------------------

Tensor pool_sequences(const Tensor& a, const Matrix& weights) {
  const Index n = weights.rows();
  const Index t = weights.cols();
  if (a.rows() != n * t) {
    throw DimensionError("pool_sequences: " + a.shape_string() + " is not a packing of " +
                         shape_of(weights));
  }
  Matrix m = Matrix::Zero(n, a.cols());
  for (Index s = 0; s < n; ++s) {
    for (Index k = 0; k < t; ++k) {
      const double w = weights(s, k);
      if (w != 0.0) m.row(s) += w * a.value().row(s * t + k);
    }
  }
  Tensor out(std::move(m));
  attach(out, {&a}, [an = a.node(), weights](const Matrix& g) {
    const Index tt = weights.cols();
    Matrix d = Matrix::Zero(an->value.rows(), an->value.cols());
    for (Index s = 0; s < weights.rows(); ++s) {
      for (Index k = 0; k < tt; ++k) {
        const double w = weights(s, k);
        if (w != 0.0) d.row(s * tt + k) = w * g.row(s);
      }
    }
    an->accumulate(d);
  });
  return out;
}

Tensor expand_sequences(const Tensor& a, const Matrix& weights) {
  const Index n = weights.rows();
  const Index t = weights.cols();
  if (a.rows() != n) {
    throw DimensionError("expand_sequences: " + a.shape_string() + " rows vs weights " +
                         shape_of(weights));
  }
  Matrix m = Matrix::Zero(n * t, a.cols());
  for (Index s = 0; s < n; ++s) {
    for (Index k = 0; k < t; ++k) {
      const double w = weights(s, k);
      if (w != 0.0) m.row(s * t + k) = w * a.value().row(s);
    }
  }
  Tensor out(std::move(m));
  attach(out, {&a}, [an = a.node(), weights](const Matrix& g) {
    const Index tt = weights.cols();
    Matrix d = Matrix::Zero(an->value.rows(), an->value.cols());
    for (Index s = 0; s < weights.rows(); ++s) {
      for (Index k = 0; k < tt; ++k) {
        const double w = weights(s, k);
        if (w != 0.0) d.row(s) += w * g.row(s * tt + k);
      }
    }
    an->accumulate(d);
  });
  return out;
}

}  // namespace hyperbert
