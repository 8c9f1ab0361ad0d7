#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "tcnet/matrix.hpp"

namespace tcnet::ad {

class Tape;

/// Handle to a value slot on a tape. Cheap to copy; valid while its tape lives.
class Var {
 public:
  Var() = default;

  const Matrix& value() const;
  const Matrix& grad() const;
  std::size_t id() const noexcept { return id_; }
  Tape* tape() const noexcept { return tape_; }
  bool valid() const noexcept { return tape_ != nullptr; }
  double scalar() const { return value()[0]; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

// Receives the output gradient and value plus input values, and accumulates
// into the input gradients that are non-null.
using BackwardFn = std::function<void(const Matrix& grad_out, const Matrix& out,
                                      std::span<const Matrix* const> inputs,
                                      std::span<Matrix* const> input_grads)>;

/// Records matrix-valued operations for reverse-mode differentiation.
///
/// Nodes are appended in evaluation order, so the node index is already a
/// topological order; backward() walks it once from the root down. A tape is
/// meant for a single thread.
class Tape {
 public:
  Tape() { nodes_.reserve(256); }
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(Matrix value, bool requires_grad = true) {
    nodes_.push_back(Node{std::move(value), {}, {}, {}, requires_grad});
    return Var(this, nodes_.size() - 1);
  }
  Var constant(Matrix value) { return leaf(std::move(value), false); }

  Var record(Matrix value, const std::vector<Var>& inputs, BackwardFn backward) {
    bool needs = false;
    std::vector<std::size_t> ids;
    ids.reserve(inputs.size());
    for (const Var& v : inputs) {
      if (v.tape() != this) fail(ErrorKind::InvalidArgument, "operand recorded on another tape");
      ids.push_back(v.id());
      needs = needs || nodes_[v.id()].requires_grad;
    }
    if (!needs) {
      nodes_.push_back(Node{std::move(value), {}, {}, {}, false});
    } else {
      nodes_.push_back(Node{std::move(value), {}, std::move(ids), std::move(backward), true});
    }
    return Var(this, nodes_.size() - 1);
  }

  const Matrix& value(std::size_t id) const { return nodes_.at(id).value; }

  /// Gradient of the last backward root with respect to this slot; zeros if unused.
  const Matrix& grad(std::size_t id) const {
    Node& n = nodes_.at(id);
    if (n.grad.size() != n.value.size() || !n.grad.same_shape(n.value)) {
      n.grad = Matrix(n.value.rows(), n.value.cols());
    }
    return n.grad;
  }

  bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }
  std::size_t size() const noexcept { return nodes_.size(); }

  void backward(Var root) {
    if (root.tape() != this) fail(ErrorKind::InvalidArgument, "backward root from another tape");
    const Matrix& rv = value(root.id());
    if (rv.size() != 1) {
      fail(ErrorKind::DimensionMismatch, "backward root must be 1x1, got " + rv.shape_string());
    }
    for (std::size_t i = 0; i <= root.id(); ++i) {
      if (nodes_[i].requires_grad) nodes_[i].grad = Matrix(nodes_[i].value.rows(), nodes_[i].value.cols());
    }
    nodes_[root.id()].grad[0] = 1.0;

    std::vector<const Matrix*> in_vals;
    std::vector<Matrix*> in_grads;
    for (std::size_t i = root.id() + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.requires_grad || !n.backward) continue;
      in_vals.clear();
      in_grads.clear();
      for (std::size_t in : n.inputs) {
        in_vals.push_back(&nodes_[in].value);
        in_grads.push_back(nodes_[in].requires_grad ? &nodes_[in].grad : nullptr);
      }
      n.backward(n.grad, n.value, in_vals, in_grads);
    }
  }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
    bool requires_grad = false;
  };
  mutable std::vector<Node> nodes_;
};

inline const Matrix& Var::value() const { return tape_->value(id_); }
inline const Matrix& Var::grad() const { return tape_->grad(id_); }

namespace detail {

inline void accumulate(Matrix* dst, const Matrix& src) {
  if (dst == nullptr) return;
  double* d = dst->data();
  const double* s = src.data();
  for (std::size_t i = 0; i < src.size(); ++i) d[i] += s[i];
}

inline Tape& tape_of(const Var& v) {
  if (!v.valid()) fail(ErrorKind::InvalidArgument, "operation on an unbound Var");
  return *v.tape();
}

}  // namespace detail

inline Var matmul(Var a, Var b) {
  Matrix out = tcnet::matmul(a.value(), b.value());
  return detail::tape_of(a).record(
      std::move(out), {a, b},
      [](const Matrix& g, const Matrix&, std::span<const Matrix* const> in,
         std::span<Matrix* const> dg) {
        if (dg[0]) detail::accumulate(dg[0], matmul_nt(g, *in[1]));
        if (dg[1]) detail::accumulate(dg[1], matmul_tn(*in[0], g));
      });
}

inline Var transpose(Var a) {
  return detail::tape_of(a).record(
      tcnet::transpose(a.value()), {a},
      [](const Matrix& g, const Matrix&, std::span<const Matrix* const>,
         std::span<Matrix* const> dg) { detail::accumulate(dg[0], tcnet::transpose(g)); });
}

inline Var add(Var a, Var b) {
  require_same_shape(a.value(), b.value(), "add");
  Matrix out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.value()[i];
  return detail::tape_of(a).record(
      std::move(out), {a, b},
      [](const Matrix& g, const Matrix&, std::span<const Matrix* const>,
         std::span<Matrix* const> dg) {
        detail::accumulate(dg[0], g);
        detail::accumulate(dg[1], g);
      });
}

inline Var sub(Var a, Var b) {
  require_same_shape(a.value(), b.value(), "sub");
  Matrix out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b.value()[i];
  return detail::tape_of(a).record(
      std::move(out), {a, b},
      [](const Matrix& g, const Matrix&, std::span<const Matrix* const>,
         std::span<Matrix* const> dg) {
        detail::accumulate(dg[0], g);
        if (dg[1]) {
          double* d = dg[1]->data();
          for (std::size_t i = 0; i < g.size(); ++i) d[i] -= g[i];
        }
      });
}

inline Var scale(Var a, double factor) {
  Matrix out = a.value();
  for (double& v : out.values()) v *= factor;
  return detail::tape_of(a).record(
      std::move(out), {a},
      [factor](const Matrix& g, const Matrix&, std::span<const Matrix* const>,
               std::span<Matrix* const> dg) {
        double* d = dg[0]->data();
        for (std::size_t i = 0; i < g.size(); ++i) d[i] += factor * g[i];
      });
}

/// Adds a 1 x n row vector to every row of an m x n matrix.
inline Var add_row(Var a, Var bias) {
  const Matrix& av = a.value();
  const Matrix& bv = bias.value();
  if (bv.rows() != 1 || bv.cols() != av.cols()) {
    fail(ErrorKind::DimensionMismatch,
         "add_row: shapes " + av.shape_string() + " and " + bv.shape_string());
  }
  Matrix out = av;
  for (std::size_t r = 0; r < out.rows(); ++r) {
    auto row = out.row(r);
    for (std::size_t c = 0; c < row.size(); ++c) row[c] += bv[c];
  }
  return detail::tape_of(a).record(
      std::move(out), {a, bias},
      [](const Matrix& g, const Matrix&, std::span<const Matrix* const>,
         std::span<Matrix* const> dg) {
        detail::accumulate(dg[0], g);
        if (dg[1]) {
          double* d = dg[1]->data();
          for (std::size_t r = 0; r < g.rows(); ++r) {
            auto row = g.row(r);
            for (std::size_t c = 0; c < row.size(); ++c) d[c] += row[c];
          }
        }
      });
}

inline Var relu(Var a) {
  Matrix out = a.value();
  for (double& v : out.values()) v = v > 0.0 ? v : 0.0;
  return detail::tape_of(a).record(
      std::move(out), {a},
      [](const Matrix& g, const Matrix& out, std::span<const Matrix* const>,
         std::span<Matrix* const> dg) {
        double* d = dg[0]->data();
        for (std::size_t i = 0; i < g.size(); ++i)
          if (out[i] > 0.0) d[i] += g[i];
      });
}

inline Var sigmoid(Var a) {
  Matrix out = a.value();
  for (double& v : out.values()) {
    v = v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
  }
  return detail::tape_of(a).record(
      std::move(out), {a},
      [](const Matrix& g, const Matrix& out, std::span<const Matrix* const>,
         std::span<Matrix* const> dg) {
        double* d = dg[0]->data();
        for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * out[i] * (1.0 - out[i]);
      });
}

inline Var softmax_rows(Var a) {
  return detail::tape_of(a).record(
      tcnet::softmax_rows(a.value()), {a},
      [](const Matrix& g, const Matrix& y, std::span<const Matrix* const>,
         std::span<Matrix* const> dg) {
        Matrix& d = *dg[0];
        for (std::size_t r = 0; r < y.rows(); ++r) {
          auto yr = y.row(r);
          auto gr = g.row(r);
          double dot = 0.0;
          for (std::size_t c = 0; c < yr.size(); ++c) dot += gr[c] * yr[c];
          auto dr = d.row(r);
          for (std::size_t c = 0; c < yr.size(); ++c) dr[c] += yr[c] * (gr[c] - dot);
        }
      });
}

/// Row-wise layer normalization with 1 x d gain and bias.
inline Var layer_norm_rows(Var x, Var gain, Var bias, double eps = 1e-5) {
  const Matrix& xv = x.value();
  const std::size_t d = xv.cols();
  if (gain.value().rows() != 1 || gain.value().cols() != d || !gain.value().same_shape(bias.value())) {
    fail(ErrorKind::DimensionMismatch, "layer_norm_rows: gain/bias must be 1x" + std::to_string(d));
  }
  if (d < 2) fail(ErrorKind::DimensionMismatch, "layer_norm_rows: need at least 2 columns");
  Matrix out(xv.rows(), d);
  std::vector<double> inv_std(xv.rows());
  for (std::size_t r = 0; r < xv.rows(); ++r) {
    auto o = tcnet::layer_norm(xv.row(r), gain.value().row(0), bias.value().row(0), eps);
    std::copy(o.begin(), o.end(), out.row(r).begin());
    double mean = 0.0;
    for (double v : xv.row(r)) mean += v;
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (double v : xv.row(r)) var += (v - mean) * (v - mean);
    inv_std[r] = 1.0 / std::sqrt(var / static_cast<double>(d) + eps);
  }
  return detail::tape_of(x).record(
      std::move(out), {x, gain, bias},
      [inv_std = std::move(inv_std), d](const Matrix& g, const Matrix&,
                                        std::span<const Matrix* const> in,
                                        std::span<Matrix* const> dg) {
        const Matrix& xv = *in[0];
        const Matrix& gv = *in[1];
        std::vector<double> xhat(d), dxhat(d);
        for (std::size_t r = 0; r < xv.rows(); ++r) {
          auto xr = xv.row(r);
          auto gr = g.row(r);
          double mean = 0.0;
          for (double v : xr) mean += v;
          mean /= static_cast<double>(d);
          double m1 = 0.0, m2 = 0.0;
          for (std::size_t c = 0; c < d; ++c) {
            xhat[c] = (xr[c] - mean) * inv_std[r];
            dxhat[c] = gr[c] * gv[c];
            m1 += dxhat[c];
            m2 += dxhat[c] * xhat[c];
          }
          m1 /= static_cast<double>(d);
          m2 /= static_cast<double>(d);
          if (dg[0]) {
            auto dr = dg[0]->row(r);
            for (std::size_t c = 0; c < d; ++c) dr[c] += inv_std[r] * (dxhat[c] - m1 - xhat[c] * m2);
          }
          if (dg[1]) {
            double* dgain = dg[1]->data();
            for (std::size_t c = 0; c < d; ++c) dgain[c] += gr[c] * xhat[c];
          }
          if (dg[2]) {
            double* dbias = dg[2]->data();
            for (std::size_t c = 0; c < d; ++c) dbias[c] += gr[c];
          }
        }
      });
}

namespace detail {
inline Eigen::Map<const tcnet::detail::RowMajor> block_view(const Matrix& m, std::size_t b, std::size_t block) {
  return {m.data() + b * block * m.cols(), static_cast<Eigen::Index>(block), static_cast<Eigen::Index>(m.cols())};
}
inline Eigen::Map<tcnet::detail::RowMajor> block_view(Matrix& m, std::size_t b, std::size_t block) {
  return {m.data() + b * block * m.cols(), static_cast<Eigen::Index>(block), static_cast<Eigen::Index>(m.cols())};
}
}  // namespace detail

/// Per-block q_b * k_b^T for consecutive blocks of `block` rows.
inline Var block_matmul_nt(Var q, Var k, std::size_t block) {
  const Matrix& qv = q.value();
  const Matrix& kv = k.value();
  require_same_shape(qv, kv, "block_matmul_nt");
  if (block == 0 || qv.rows() % block != 0) {
    fail(ErrorKind::DimensionMismatch, "block_matmul_nt: rows not divisible by block size");
  }
  const std::size_t nb = qv.rows() / block;
  Matrix out(qv.rows(), block);
  for (std::size_t b = 0; b < nb; ++b)
    detail::block_view(out, b, block).noalias() =
        detail::block_view(qv, b, block).lazyProduct(detail::block_view(kv, b, block).transpose());
  return detail::tape_of(q).record(
      std::move(out), {q, k},
      [block, nb](const Matrix& g, const Matrix&, std::span<const Matrix* const> in, std::span<Matrix* const> dg) {
        for (std::size_t b = 0; b < nb; ++b) {
          const auto gb = detail::block_view(g, b, block);
          if (dg[0]) detail::block_view(*dg[0], b, block).noalias() += gb.lazyProduct(detail::block_view(*in[1], b, block));
          if (dg[1])
            detail::block_view(*dg[1], b, block).noalias() +=
                gb.transpose().lazyProduct(detail::block_view(*in[0], b, block));
        }
      });
}

/// Per-block a_b * v_b where a_b is block x block and v_b is block x w.
inline Var block_matmul(Var a, Var v, std::size_t block) {
  const Matrix& av = a.value();
  const Matrix& vv = v.value();
  if (av.cols() != block || av.rows() != vv.rows() || block == 0 || av.rows() % block != 0) {
    fail(ErrorKind::DimensionMismatch,
         "block_matmul: shapes " + av.shape_string() + " and " + vv.shape_string());
  }
  const std::size_t nb = av.rows() / block;
  Matrix out(av.rows(), vv.cols());
  for (std::size_t b = 0; b < nb; ++b)
    detail::block_view(out, b, block).noalias() =
        detail::block_view(av, b, block).lazyProduct(detail::block_view(vv, b, block));
  return detail::tape_of(a).record(
      std::move(out), {a, v},
      [block, nb](const Matrix& g, const Matrix&, std::span<const Matrix* const> in, std::span<Matrix* const> dg) {
        for (std::size_t b = 0; b < nb; ++b) {
          const auto gb = detail::block_view(g, b, block);
          if (dg[0])
            detail::block_view(*dg[0], b, block).noalias() +=
                gb.lazyProduct(detail::block_view(*in[1], b, block).transpose());
          if (dg[1])
            detail::block_view(*dg[1], b, block).noalias() +=
                detail::block_view(*in[0], b, block).transpose().lazyProduct(gb);
        }
      });
}

inline Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) fail(ErrorKind::InvalidArgument, "concat_cols: no inputs");
  const std::size_t rows = parts.front().value().rows();
  std::size_t cols = 0;
  for (const Var& p : parts) {
    if (p.value().rows() != rows) fail(ErrorKind::DimensionMismatch, "concat_cols: row counts differ");
    cols += p.value().cols();
  }
  Matrix out(rows, cols);
  std::size_t off = 0;
  for (const Var& p : parts) {
    const Matrix& pv = p.value();
    for (std::size_t r = 0; r < rows; ++r)
      std::copy(pv.row(r).begin(), pv.row(r).end(), out.row(r).begin() + static_cast<std::ptrdiff_t>(off));
    off += pv.cols();
  }
  return detail::tape_of(parts.front()).record(
      std::move(out), parts,
      [](const Matrix& g, const Matrix&, std::span<const Matrix* const> in,
         std::span<Matrix* const> dg) {
        std::size_t off = 0;
        for (std::size_t k = 0; k < in.size(); ++k) {
          const std::size_t w = in[k]->cols();
          if (dg[k]) {
            for (std::size_t r = 0; r < g.rows(); ++r) {
              auto gr = g.row(r);
              auto dr = dg[k]->row(r);
              for (std::size_t c = 0; c < w; ++c) dr[c] += gr[off + c];
            }
          }
          off += w;
        }
      });
}

inline Var reshape(Var a, std::size_t rows, std::size_t cols) {
  return detail::tape_of(a).record(
      a.value().reshaped(rows, cols), {a},
      [](const Matrix& g, const Matrix&, std::span<const Matrix* const>,
         std::span<Matrix* const> dg) {
        double* d = dg[0]->data();
        for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i];
      });
}

/// 1 x n vector of column sums (1^T a).
inline Var col_sum(Var a) {
  const Matrix& av = a.value();
  Matrix out(1, av.cols());
  for (std::size_t r = 0; r < av.rows(); ++r)
    for (std::size_t c = 0; c < av.cols(); ++c) out[c] += av(r, c);
  return detail::tape_of(a).record(
      std::move(out), {a},
      [](const Matrix& g, const Matrix&, std::span<const Matrix* const>,
         std::span<Matrix* const> dg) {
        Matrix& d = *dg[0];
        for (std::size_t r = 0; r < d.rows(); ++r)
          for (std::size_t c = 0; c < d.cols(); ++c) d(r, c) += g[c];
      });
}

/// 1 x 1 sum of squared entries (squared Frobenius norm).
inline Var sum_squares(Var a) {
  double s = 0.0;
  for (double v : a.value().values()) s += v * v;
  return detail::tape_of(a).record(
      Matrix(1, 1, s), {a},
      [](const Matrix& g, const Matrix&, std::span<const Matrix* const> in,
         std::span<Matrix* const> dg) {
        double* d = dg[0]->data();
        const Matrix& av = *in[0];
        for (std::size_t i = 0; i < av.size(); ++i) d[i] += 2.0 * g[0] * av[i];
      });
}

/// 1 x 1 mean of all entries.
inline Var mean_all(Var a) {
  const Matrix& av = a.value();
  double s = 0.0;
  for (double v : av.values()) s += v;
  const double n = static_cast<double>(av.size());
  return detail::tape_of(a).record(
      Matrix(1, 1, s / n), {a},
      [n](const Matrix& g, const Matrix&, std::span<const Matrix* const>,
          std::span<Matrix* const> dg) {
        double* d = dg[0]->data();
        for (std::size_t i = 0; i < dg[0]->size(); ++i) d[i] += g[0] / n;
      });
}

}  // namespace tcnet::ad
