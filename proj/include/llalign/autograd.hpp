#pragma once

// Minimal reverse-mode automatic differentiation over dense row-major
// matrices. A Var is a handle to a graph node; operations record a closure
// that accumulates gradients into their inputs. Leaf parameters persist
// across steps and keep their gradient until zero_grad().

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <unordered_set>
#include <vector>

#include <Eigen/Dense>

#include "llalign/errors.hpp"

namespace llalign {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowVec = Eigen::Matrix<double, 1, Eigen::Dynamic>;

namespace ag {

struct Node {
  Matrix value;
  Matrix grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  Matrix& grad_buffer() {
    if (grad.size() == 0) grad = Matrix::Zero(value.rows(), value.cols());
    return grad;
  }
};

namespace detail {
inline bool& grad_enabled() {
  thread_local bool enabled = true;
  return enabled;
}
}  // namespace detail

/// Disables graph recording in its scope (inference).
class NoGradGuard {
 public:
  NoGradGuard() : prev_(detail::grad_enabled()) { detail::grad_enabled() = false; }
  ~NoGradGuard() { detail::grad_enabled() = prev_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

class Var {
 public:
  Var() = default;
  explicit Var(Matrix value, bool requires_grad = false) : node_(std::make_shared<Node>()) {
    node_->value = std::move(value);
    node_->requires_grad = requires_grad;
  }
  static Var scalar(double v) {
    Matrix m(1, 1);
    m(0, 0) = v;
    return Var(std::move(m));
  }

  bool defined() const { return node_ != nullptr; }
  const Matrix& value() const { return node_->value; }
  Matrix& mutable_value() { return node_->value; }
  const Matrix& grad() const { return node_->grad; }
  Matrix& mutable_grad() { return node_->grad; }
  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool r) { node_->requires_grad = r; }
  Eigen::Index rows() const { return node_->value.rows(); }
  Eigen::Index cols() const { return node_->value.cols(); }
  double item() const { return node_->value(0, 0); }
  void zero_grad() { node_->grad.resize(0, 0); }

  const std::shared_ptr<Node>& node() const { return node_; }

 private:
  friend Var make_op(Matrix, std::vector<Var>, std::function<void(Node&)>);
  std::shared_ptr<Node> node_;
};

/// Creates the result node of an operation. The closure receives the result
/// node (whose grad is populated) and must accumulate into parents that
/// require gradients.
inline Var make_op(Matrix value, std::vector<Var> inputs, std::function<void(Node&)> backward) {
  Var out(std::move(value));
  if (!detail::grad_enabled()) return out;
  bool any = false;
  for (const auto& in : inputs) any = any || in.requires_grad();
  if (!any) return out;
  out.node_->requires_grad = true;
  for (auto& in : inputs) out.node_->parents.push_back(in.node());
  out.node_->backward = std::move(backward);
  return out;
}

/// Runs reverse accumulation from a scalar (1x1) root, seeding d(root) = 1.
inline void backward(const Var& root) {
  if (root.rows() != 1 || root.cols() != 1) throw Error("backward() needs a scalar root");
  if (!root.requires_grad()) return;
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  // iterative post-order DFS
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(root.node().get(), 0);
  seen.insert(root.node().get());
  while (!stack.empty()) {
    auto& [n, i] = stack.back();
    if (i < n->parents.size()) {
      Node* p = n->parents[i++].get();
      if (p->requires_grad && !seen.count(p)) {
        seen.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }
  root.node()->grad_buffer()(0, 0) += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward && n->grad.size() != 0) n->backward(*n);
  }
}

inline Matrix& grad_of(const std::shared_ptr<Node>& n) { return n->grad_buffer(); }

// ---------------------------------------------------------------------------
// Linear algebra

/// a * b
inline Var matmul(const Var& a, const Var& b) {
  Matrix out;
  out.noalias() = a.value() * b.value();
  return make_op(std::move(out), {a, b}, [](Node& n) {
    auto& A = n.parents[0];
    auto& B = n.parents[1];
    if (A->requires_grad) grad_of(A).noalias() += n.grad * B->value.transpose();
    if (B->requires_grad) grad_of(B).noalias() += A->value.transpose() * n.grad;
  });
}

/// a * b^T
inline Var matmul_nt(const Var& a, const Var& b) {
  Matrix out;
  out.noalias() = a.value() * b.value().transpose();
  return make_op(std::move(out), {a, b}, [](Node& n) {
    auto& A = n.parents[0];
    auto& B = n.parents[1];
    if (A->requires_grad) grad_of(A).noalias() += n.grad * B->value;
    if (B->requires_grad) grad_of(B).noalias() += n.grad.transpose() * A->value;
  });
}

inline Var add(const Var& a, const Var& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw Error("add: shape mismatch");
  return make_op(a.value() + b.value(), {a, b}, [](Node& n) {
    for (auto& p : n.parents) {
      if (p->requires_grad) grad_of(p) += n.grad;
    }
  });
}

/// Adds a 1 x C row to every row of a.
inline Var add_row(const Var& a, const Var& row) {
  if (row.rows() != 1 || row.cols() != a.cols()) throw Error("add_row: shape mismatch");
  Matrix out = a.value();
  out.rowwise() += row.value().row(0);
  return make_op(std::move(out), {a, row}, [](Node& n) {
    auto& A = n.parents[0];
    auto& R = n.parents[1];
    if (A->requires_grad) grad_of(A) += n.grad;
    if (R->requires_grad) grad_of(R) += n.grad.colwise().sum();
  });
}

inline Var scale(const Var& a, double s) {
  return make_op(a.value() * s, {a}, [s](Node& n) {
    auto& A = n.parents[0];
    grad_of(A) += n.grad * s;
  });
}

/// Linear layer: x W + b.
inline Var linear(const Var& x, const Var& w, const Var& b) { return add_row(matmul(x, w), b); }

// ---------------------------------------------------------------------------
// Element-wise nonlinearities

inline Var tanh(const Var& a) {
  Matrix out = a.value().array().tanh().matrix();
  return make_op(out, {a}, [out](Node& n) {
    grad_of(n.parents[0]).array() += n.grad.array() * (1.0 - out.array().square());
  });
}

inline Var sigmoid(const Var& a) {
  Matrix out = (1.0 / (1.0 + (-a.value().array()).exp())).matrix();
  return make_op(out, {a}, [out](Node& n) {
    grad_of(n.parents[0]).array() += n.grad.array() * out.array() * (1.0 - out.array());
  });
}

inline constexpr double kGeluK = 0.7978845608028654;  // sqrt(2/pi)
inline constexpr double kGeluC = 0.044715;

/// GELU, tanh approximation.
inline Var gelu(const Var& a) {
  const double k = kGeluK, c = kGeluC;
  const auto& x = a.value().array();
  Matrix t = (k * (x + c * x.cube())).tanh().matrix();
  Matrix out = (0.5 * x * (1.0 + t.array())).matrix();
  return make_op(std::move(out), {a}, [t = std::move(t), k, c](Node& n) {
    const auto& x = n.parents[0]->value.array();
    const auto dt = (1.0 - t.array().square()) * k * (1.0 + 3.0 * c * x.square());
    grad_of(n.parents[0]).array() += n.grad.array() * (0.5 * (1.0 + t.array()) + 0.5 * x * dt);
  });
}

// ---------------------------------------------------------------------------
// Normalization

/// Row-wise layer normalization with affine gain/bias (1 x C each).
inline Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps = 1e-5) {
  const Eigen::Index rows = x.rows(), cols = x.cols();
  Matrix xhat(rows, cols);
  Eigen::VectorXd inv_std(rows);
  for (Eigen::Index r = 0; r < rows; ++r) {
    const auto row = x.value().row(r);
    const double mean = row.mean();
    const double var = (row.array() - mean).square().mean();
    inv_std(r) = 1.0 / std::sqrt(var + eps);
    xhat.row(r) = (row.array() - mean) * inv_std(r);
  }
  Matrix out = xhat;
  out.array().rowwise() *= gamma.value().row(0).array();
  out.rowwise() += beta.value().row(0);
  return make_op(std::move(out), {x, gamma, beta},
                 [xhat = std::move(xhat), inv_std = std::move(inv_std)](Node& n) {
                   auto& X = n.parents[0];
                   auto& G = n.parents[1];
                   auto& B = n.parents[2];
                   if (G->requires_grad) grad_of(G) += (n.grad.array() * xhat.array()).colwise().sum().matrix();
                   if (B->requires_grad) grad_of(B) += n.grad.colwise().sum();
                   if (X->requires_grad) {
                     const double c = static_cast<double>(xhat.cols());
                     Matrix g = n.grad;
                     g.array().rowwise() *= G->value.row(0).array();
                     Matrix& dx = grad_of(X);
                     for (Eigen::Index r = 0; r < g.rows(); ++r) {
                       const double mg = g.row(r).mean();
                       const double mgx = g.row(r).dot(xhat.row(r)) / c;
                       dx.row(r).array() += inv_std(r) * (g.row(r).array() - mg - xhat.row(r).array() * mgx);
                     }
                   }
                 });
}

// ---------------------------------------------------------------------------
// Shape manipulation

/// Vertical concatenation (all inputs share the column count).
inline Var vcat(const std::vector<Var>& parts) {
  Eigen::Index rows = 0;
  const Eigen::Index cols = parts.empty() ? 0 : parts[0].cols();
  for (const auto& p : parts) {
    if (p.cols() != cols) throw Error("vcat: column mismatch");
    rows += p.rows();
  }
  Matrix out(rows, cols);
  Eigen::Index at = 0;
  for (const auto& p : parts) {
    out.middleRows(at, p.rows()) = p.value();
    at += p.rows();
  }
  return make_op(std::move(out), parts, [](Node& n) {
    Eigen::Index at = 0;
    for (auto& p : n.parents) {
      const Eigen::Index r = p->value.rows();
      if (p->requires_grad) grad_of(p) += n.grad.middleRows(at, r);
      at += r;
    }
  });
}

/// Selects rows by index (embedding lookup, row slicing). Repeats allowed.
inline Var gather_rows(const Var& a, std::vector<int> idx) {
  Matrix out(static_cast<Eigen::Index>(idx.size()), a.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] < 0 || idx[i] >= a.rows()) throw Error("gather_rows: index out of range");
    out.row(static_cast<Eigen::Index>(i)) = a.value().row(idx[i]);
  }
  return make_op(std::move(out), {a}, [idx = std::move(idx)](Node& n) {
    Matrix& g = grad_of(n.parents[0]);
    for (std::size_t i = 0; i < idx.size(); ++i) g.row(idx[i]) += n.grad.row(static_cast<Eigen::Index>(i));
  });
}

inline Var slice_rows(const Var& a, Eigen::Index start, Eigen::Index count) {
  std::vector<int> idx(static_cast<std::size_t>(count));
  for (Eigen::Index i = 0; i < count; ++i) idx[static_cast<std::size_t>(i)] = static_cast<int>(start + i);
  return gather_rows(a, std::move(idx));
}

/// Reinterprets the row-major storage with a new shape.
inline Var reshape(const Var& a, Eigen::Index rows, Eigen::Index cols) {
  if (rows * cols != a.value().size()) throw Error("reshape: size mismatch");
  Matrix out = Eigen::Map<const Matrix>(a.value().data(), rows, cols);
  return make_op(std::move(out), {a}, [](Node& n) {
    auto& A = n.parents[0];
    Eigen::Map<Matrix>(grad_of(A).data(), n.grad.rows(), n.grad.cols()) += n.grad;
  });
}

inline Var mean_rows(const Var& a) {
  const double inv = 1.0 / static_cast<double>(a.rows());
  return make_op(a.value().colwise().mean(), {a}, [inv](Node& n) {
    grad_of(n.parents[0]).rowwise() += n.grad.row(0) * inv;
  });
}

/// Adds, to each row i, the sum of the columns of `table` (C x V) selected
/// by the bitmask masks[i] (bit v selects column v).
inline Var add_masked_columns(const Var& x, const Var& table, std::vector<std::uint8_t> masks) {
  if (static_cast<Eigen::Index>(masks.size()) != x.rows() || table.rows() != x.cols()) {
    throw Error("add_masked_columns: shape mismatch");
  }
  const Eigen::Index ncol = table.cols();
  Matrix out = x.value();
  for (Eigen::Index i = 0; i < out.rows(); ++i) {
    const auto m = masks[static_cast<std::size_t>(i)];
    if (!m) continue;
    for (Eigen::Index v = 0; v < ncol; ++v) {
      if (m & (1u << v)) out.row(i) += table.value().col(v).transpose();
    }
  }
  return make_op(std::move(out), {x, table}, [masks = std::move(masks), ncol](Node& n) {
    auto& X = n.parents[0];
    auto& T = n.parents[1];
    if (X->requires_grad) grad_of(X) += n.grad;
    if (T->requires_grad) {
      Matrix& g = grad_of(T);
      for (Eigen::Index i = 0; i < n.grad.rows(); ++i) {
        const auto m = masks[static_cast<std::size_t>(i)];
        if (!m) continue;
        for (Eigen::Index v = 0; v < ncol; ++v) {
          if (m & (1u << v)) g.col(v) += n.grad.row(i).transpose();
        }
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Attention

struct AttentionOptions {
  int heads = 1;
  bool causal = false;
  /// Optional per-key mask (true = may be attended). Empty means all keys.
  std::vector<bool> key_mask;
  /// When set, receives the attention probabilities of every head.
  std::vector<Matrix>* probs_out = nullptr;
};

/// Multi-head scaled dot-product attention on pre-projected q (Tq x D),
/// k, v (Tk x D). Heads split the D columns evenly.
inline Var attention(const Var& q, const Var& k, const Var& v, const AttentionOptions& opt) {
  const Eigen::Index tq = q.rows(), tk = k.rows(), d = q.cols();
  if (k.cols() != d || v.cols() != d || v.rows() != tk) throw Error("attention: shape mismatch");
  if (d % opt.heads != 0) throw Error("attention: width not divisible by heads");
  if (opt.causal && tq != tk) throw Error("attention: causal mode needs square scores");
  const Eigen::Index dh = d / opt.heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  const bool masked = !opt.key_mask.empty();
  if (masked && static_cast<Eigen::Index>(opt.key_mask.size()) != tk) throw Error("attention: key mask size");

  std::vector<Matrix> probs(static_cast<std::size_t>(opt.heads));
  Matrix out(tq, d);
  for (int h = 0; h < opt.heads; ++h) {
    const auto qh = q.value().middleCols(h * dh, dh);
    const auto kh = k.value().middleCols(h * dh, dh);
    const auto vh = v.value().middleCols(h * dh, dh);
    Matrix s;
    s.noalias() = qh * kh.transpose();
    s *= scale;
    for (Eigen::Index i = 0; i < tq; ++i) {
      double mx = -std::numeric_limits<double>::infinity();
      for (Eigen::Index j = 0; j < tk; ++j) {
        const bool ok = (!opt.causal || j <= i) && (!masked || opt.key_mask[static_cast<std::size_t>(j)]);
        if (!ok) s(i, j) = -std::numeric_limits<double>::infinity();
        else mx = std::max(mx, s(i, j));
      }
      if (mx == -std::numeric_limits<double>::infinity()) throw Error("attention: a query has no visible keys");
      double sum = 0.0;
      for (Eigen::Index j = 0; j < tk; ++j) {
        const double e = s(i, j) == -std::numeric_limits<double>::infinity() ? 0.0 : std::exp(s(i, j) - mx);
        s(i, j) = e;
        sum += e;
      }
      s.row(i) /= sum;
    }
    out.middleCols(h * dh, dh).noalias() = s * vh;
    probs[static_cast<std::size_t>(h)] = std::move(s);
  }
  if (opt.probs_out) *opt.probs_out = probs;
  return make_op(std::move(out), {q, k, v},
                 [probs = std::move(probs), heads = opt.heads, dh, scale](Node& n) {
                   auto& Q = n.parents[0];
                   auto& K = n.parents[1];
                   auto& V = n.parents[2];
                   for (int h = 0; h < heads; ++h) {
                     const Matrix& p = probs[static_cast<std::size_t>(h)];
                     const auto go = n.grad.middleCols(h * dh, dh);
                     if (V->requires_grad) grad_of(V).middleCols(h * dh, dh).noalias() += p.transpose() * go;
                     if (!Q->requires_grad && !K->requires_grad) continue;
                     Matrix dp;
                     dp.noalias() = go * V->value.middleCols(h * dh, dh).transpose();
                     // softmax backward: ds = p * (dp - rowsum(dp * p))
                     const Eigen::VectorXd rs = (dp.array() * p.array()).rowwise().sum();
                     Matrix ds = (p.array() * (dp.array().colwise() - rs.array())).matrix();
                     ds *= scale;
                     if (Q->requires_grad) {
                       grad_of(Q).middleCols(h * dh, dh).noalias() += ds * K->value.middleCols(h * dh, dh);
                     }
                     if (K->requires_grad) {
                       grad_of(K).middleCols(h * dh, dh).noalias() += ds.transpose() * Q->value.middleCols(h * dh, dh);
                     }
                   }
                 });
}

// ---------------------------------------------------------------------------
// Losses (all return 1x1)

/// Mean negative log-likelihood over rows with mask[i] = true. Returns 0 when
/// no row is selected.
inline Var masked_cross_entropy(const Var& logits, const std::vector<int>& targets,
                                const std::vector<bool>& mask) {
  const Eigen::Index rows = logits.rows();
  if (static_cast<Eigen::Index>(targets.size()) != rows || static_cast<Eigen::Index>(mask.size()) != rows) {
    throw Error("masked_cross_entropy: length mismatch");
  }
  std::size_t count = 0;
  for (bool m : mask) count += m;
  Matrix probs = Matrix::Zero(rows, logits.cols());
  double loss = 0.0;
  for (Eigen::Index r = 0; r < rows; ++r) {
    if (!mask[static_cast<std::size_t>(r)]) continue;
    const auto row = logits.value().row(r);
    const double mx = row.maxCoeff();
    const double lse = mx + std::log((row.array() - mx).exp().sum());
    loss += lse - row(targets[static_cast<std::size_t>(r)]);
    probs.row(r) = (row.array() - lse).exp();
  }
  const double inv = count ? 1.0 / static_cast<double>(count) : 0.0;
  Matrix out(1, 1);
  out(0, 0) = loss * inv;
  return make_op(std::move(out), {logits}, [probs = std::move(probs), targets, mask, inv](Node& n) {
    Matrix& g = grad_of(n.parents[0]);
    const double s = n.grad(0, 0) * inv;
    for (Eigen::Index r = 0; r < probs.rows(); ++r) {
      if (!mask[static_cast<std::size_t>(r)]) continue;
      g.row(r) += s * probs.row(r);
      g(r, targets[static_cast<std::size_t>(r)]) -= s;
    }
  });
}

/// Mean squared error against a constant target.
inline Var mse(const Var& pred, const Matrix& target) {
  if (pred.rows() != target.rows() || pred.cols() != target.cols()) throw Error("mse: shape mismatch");
  const double inv = 1.0 / static_cast<double>(pred.value().size());
  Matrix diff = pred.value() - target;
  Matrix out(1, 1);
  out(0, 0) = diff.squaredNorm() * inv;
  return make_op(std::move(out), {pred}, [diff = std::move(diff), inv](Node& n) {
    grad_of(n.parents[0]) += diff * (2.0 * inv * n.grad(0, 0));
  });
}

/// Sum of the entries (used for gradient checks with random projections).
inline Var sum(const Var& a) {
  Matrix out(1, 1);
  out(0, 0) = a.value().sum();
  return make_op(std::move(out), {a}, [](Node& n) { grad_of(n.parents[0]).array() += n.grad(0, 0); });
}

/// Frobenius inner product <a, w> for a constant weight matrix.
inline Var dot_const(const Var& a, const Matrix& w) {
  Matrix out(1, 1);
  out(0, 0) = (a.value().array() * w.array()).sum();
  return make_op(std::move(out), {a}, [w](Node& n) { grad_of(n.parents[0]) += w * n.grad(0, 0); });
}

}  // namespace ag
}  // namespace llalign
