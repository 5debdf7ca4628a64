// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Dense>
#include <functional>
#include <memory>
#include <utility>
#include <vector>

#include "i2c2w/errors.hpp"
#include "i2c2w/rng.hpp"

namespace i2c2w {

template <typename S>
using MatX = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;

// One value in the computation graph. `grad` stays empty until the node
// receives gradient during the backward sweep.
template <typename S>
struct Node {
  MatX<S> value;
  MatX<S> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node<S>>> parents;
  std::function<void(Node<S>&)> backward;

  void accumulate(const MatX<S>& g) {
    if (grad.size() == 0) grad = MatX<S>::Zero(value.rows(), value.cols());
    grad += g;
  }
  void zero_grad() { grad.resize(0, 0); }
  bool has_grad() const { return grad.size() != 0; }
};

template <typename S>
using Var = std::shared_ptr<Node<S>>;

// Trainable parameter; lives outside any tape, gradients accumulate across
// backward calls until explicitly zeroed.
template <typename S>
Var<S> make_param(MatX<S> value) {
  auto n = std::make_shared<Node<S>>();
  n->value = std::move(value);
  n->requires_grad = true;
  return n;
}

// Non-trainable input.
template <typename S>
Var<S> make_const(MatX<S> value) {
  auto n = std::make_shared<Node<S>>();
  n->value = std::move(value);
  return n;
}

// Records one forward pass. Nodes are appended in creation order; backward
// walks the record in reverse. When grad recording is off (evaluation mode)
// the tape keeps values only.
template <typename S>
class Tape {
 public:
  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}

  bool grad_enabled() const { return grad_enabled_; }

  Var<S> track(MatX<S> value, std::vector<Var<S>> parents,
               std::function<void(Node<S>&)> backward) {
    auto n = std::make_shared<Node<S>>();
    n->value = std::move(value);
    if (grad_enabled_) {
      for (const auto& p : parents)
        if (p->requires_grad) n->requires_grad = true;
      if (n->requires_grad) {
        n->parents = std::move(parents);
        n->backward = std::move(backward);
      }
    }
    nodes_.push_back(n);
    return n;
  }

  // Seeds d(loss)/d(loss) = seed and propagates to every parameter.
  void backward(const Var<S>& loss, S seed = S(1)) {
    if (loss->value.rows() != 1 || loss->value.cols() != 1)
      throw ShapeMismatch("backward expects a scalar loss node");
    loss->accumulate(MatX<S>::Constant(1, 1, seed));
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
      Node<S>& n = **it;
      if (n.requires_grad && n.has_grad() && n.backward) n.backward(n);
    }
  }

  void clear() { nodes_.clear(); }
  std::size_t size() const { return nodes_.size(); }

 private:
  bool grad_enabled_;
  std::vector<Var<S>> nodes_;
};

// ---------------------------------------------------------------------------
// primitive ops
// ---------------------------------------------------------------------------

template <typename S>
Var<S> matmul(Tape<S>& tape, const Var<S>& a, const Var<S>& b) {
  if (a->value.cols() != b->value.rows())
    throw ShapeMismatch("matmul " + std::to_string(a->value.rows()) + "x" +
                        std::to_string(a->value.cols()) + " * " +
                        std::to_string(b->value.rows()) + "x" +
                        std::to_string(b->value.cols()));
  MatX<S> out = a->value * b->value;
  return tape.track(std::move(out), {a, b}, [a, b](Node<S>& n) {
    if (a->requires_grad) a->accumulate(n.grad * b->value.transpose());
    if (b->requires_grad) b->accumulate(a->value.transpose() * n.grad);
  });
}

template <typename S>
Var<S> add(Tape<S>& tape, const Var<S>& a, const Var<S>& b) {
  if (a->value.rows() != b->value.rows() || a->value.cols() != b->value.cols())
    throw ShapeMismatch("add operands differ");
  return tape.track(a->value + b->value, {a, b}, [a, b](Node<S>& n) {
    if (a->requires_grad) a->accumulate(n.grad);
    if (b->requires_grad) b->accumulate(n.grad);
  });
}

// x (L x D) + row vector (1 x D) broadcast over rows
template <typename S>
Var<S> add_row(Tape<S>& tape, const Var<S>& x, const Var<S>& row) {
  if (row->value.rows() != 1 || row->value.cols() != x->value.cols())
    throw ShapeMismatch("add_row bias must be 1 x cols(x)");
  MatX<S> out = x->value.rowwise() + row->value.row(0);
  return tape.track(std::move(out), {x, row}, [x, row](Node<S>& n) {
    if (x->requires_grad) x->accumulate(n.grad);
    if (row->requires_grad) row->accumulate(n.grad.colwise().sum());
  });
}

// x + fixed matrix (no gradient into the constant).
template <typename S>
Var<S> add_mat(Tape<S>& tape, const Var<S>& x, const MatX<S>& m) {
  if (x->value.rows() != m.rows() || x->value.cols() != m.cols())
    throw ShapeMismatch("add_mat operands differ");
  return tape.track(x->value + m, {x}, [x](Node<S>& n) {
    if (x->requires_grad) x->accumulate(n.grad);
  });
}

template <typename S>
Var<S> scale(Tape<S>& tape, const Var<S>& x, S c) {
  return tape.track(MatX<S>(x->value * c), {x}, [x, c](Node<S>& n) {
    if (x->requires_grad) x->accumulate(n.grad * c);
  });
}

template <typename S>
Var<S> hadamard(Tape<S>& tape, const Var<S>& a, const Var<S>& b) {
  if (a->value.rows() != b->value.rows() || a->value.cols() != b->value.cols())
    throw ShapeMismatch("hadamard operands differ");
  return tape.track(MatX<S>(a->value.cwiseProduct(b->value)), {a, b},
                    [a, b](Node<S>& n) {
                      if (a->requires_grad)
                        a->accumulate(n.grad.cwiseProduct(b->value));
                      if (b->requires_grad)
                        b->accumulate(n.grad.cwiseProduct(a->value));
                    });
}

template <typename S>
Var<S> relu(Tape<S>& tape, const Var<S>& x) {
  MatX<S> out = x->value.cwiseMax(S(0));
  return tape.track(std::move(out), {x}, [x](Node<S>& n) {
    if (!x->requires_grad) return;
    MatX<S> g = (x->value.array() > S(0)).template cast<S>() * n.grad.array();
    x->accumulate(g);
  });
}

template <typename S>
Var<S> transpose(Tape<S>& tape, const Var<S>& x) {
  return tape.track(MatX<S>(x->value.transpose()), {x}, [x](Node<S>& n) {
    if (x->requires_grad) x->accumulate(n.grad.transpose());
  });
}

// column block [c0, c0+n)
template <typename S>
Var<S> cols(Tape<S>& tape, const Var<S>& x, int c0, int n) {
  if (c0 < 0 || c0 + n > x->value.cols())
    throw ShapeMismatch("cols slice out of range");
  return tape.track(MatX<S>(x->value.middleCols(c0, n)), {x},
                    [x, c0, n](Node<S>& node) {
                      if (!x->requires_grad) return;
                      MatX<S> g = MatX<S>::Zero(x->value.rows(), x->value.cols());
                      g.middleCols(c0, n) = node.grad;
                      x->accumulate(g);
                    });
}

template <typename S>
Var<S> hcat(Tape<S>& tape, const std::vector<Var<S>>& parts) {
  if (parts.empty()) throw ShapeMismatch("hcat of nothing");
  const auto rows = parts[0]->value.rows();
  int total = 0;
  for (const auto& p : parts) {
    if (p->value.rows() != rows) throw ShapeMismatch("hcat row counts differ");
    total += static_cast<int>(p->value.cols());
  }
  MatX<S> out(rows, total);
  int c = 0;
  for (const auto& p : parts) {
    out.middleCols(c, p->value.cols()) = p->value;
    c += static_cast<int>(p->value.cols());
  }
  return tape.track(std::move(out), parts, [parts](Node<S>& n) {
    int c = 0;
    for (const auto& p : parts) {
      const int w = static_cast<int>(p->value.cols());
      if (p->requires_grad) p->accumulate(n.grad.middleCols(c, w));
      c += w;
    }
  });
}

// Row-wise softmax.
template <typename S>
Var<S> softmax_rows(Tape<S>& tape, const Var<S>& x) {
  auto probs = std::make_shared<MatX<S>>(x->value);
  for (Eigen::Index r = 0; r < probs->rows(); ++r) {
    const S m = probs->row(r).maxCoeff();
    probs->row(r) = (probs->row(r).array() - m).exp();
    probs->row(r) /= probs->row(r).sum();
  }
  return tape.track(MatX<S>(*probs), {x}, [x, probs](Node<S>& n) {
    if (!x->requires_grad) return;
    MatX<S> g(n.grad.rows(), n.grad.cols());
    for (Eigen::Index r = 0; r < g.rows(); ++r) {
      const S dot = n.grad.row(r).dot(probs->row(r));
      g.row(r) = probs->row(r).cwiseProduct(
          (n.grad.row(r).array() - dot).matrix());
    }
    x->accumulate(g);
  });
}

// Row-wise layer normalization with affine gain/bias (both 1 x D).
template <typename S>
Var<S> layer_norm_rows(Tape<S>& tape, const Var<S>& x, const Var<S>& gain,
                       const Var<S>& bias, S eps = S(1e-5)) {
  const auto rows = x->value.rows();
  const auto d = x->value.cols();
  if (gain->value.cols() != d || bias->value.cols() != d)
    throw ShapeMismatch("layer_norm affine params must be 1 x D");
  auto xhat = std::make_shared<MatX<S>>(rows, d);
  auto inv_std = std::make_shared<Eigen::Matrix<S, Eigen::Dynamic, 1>>(rows);
  MatX<S> out(rows, d);
  for (Eigen::Index r = 0; r < rows; ++r) {
    const S mean = x->value.row(r).mean();
    const S var = (x->value.row(r).array() - mean).square().mean();
    const S istd = S(1) / std::sqrt(var + eps);
    (*inv_std)(r) = istd;
    xhat->row(r) = (x->value.row(r).array() - mean) * istd;
    out.row(r) = xhat->row(r).cwiseProduct(gain->value.row(0)) + bias->value.row(0);
  }
  return tape.track(
      std::move(out), {x, gain, bias},
      [x, gain, bias, xhat, inv_std, d](Node<S>& n) {
        if (gain->requires_grad) {
          MatX<S> gg = (n.grad.cwiseProduct(*xhat)).colwise().sum();
          gain->accumulate(gg);
        }
        if (bias->requires_grad) bias->accumulate(n.grad.colwise().sum());
        if (!x->requires_grad) return;
        MatX<S> gx(n.grad.rows(), n.grad.cols());
        const S inv_d = S(1) / static_cast<S>(d);
        for (Eigen::Index r = 0; r < n.grad.rows(); ++r) {
          Eigen::Matrix<S, 1, Eigen::Dynamic> dxh =
              n.grad.row(r).cwiseProduct(gain->value.row(0));
          const S sum_dxh = dxh.sum();
          const S sum_dxh_xhat = dxh.dot(xhat->row(r));
          gx.row(r) = ((*inv_std)(r)) *
                      (dxh.array() - inv_d * sum_dxh -
                       inv_d * sum_dxh_xhat * xhat->row(r).array());
        }
        x->accumulate(gx);
      });
}

// Inverted dropout; identity when not training or rate == 0.
template <typename S>
Var<S> dropout(Tape<S>& tape, const Var<S>& x, double rate, Rng& rng,
               bool training) {
  if (!training || rate <= 0.0) return x;
  auto mask = std::make_shared<MatX<S>>(x->value.rows(), x->value.cols());
  const S keep_scale = static_cast<S>(1.0 / (1.0 - rate));
  for (Eigen::Index i = 0; i < mask->size(); ++i)
    (*mask)(i) = rng.uniform() < rate ? S(0) : keep_scale;
  return tape.track(MatX<S>(x->value.cwiseProduct(*mask)), {x},
                    [x, mask](Node<S>& n) {
                      if (x->requires_grad)
                        x->accumulate(n.grad.cwiseProduct(*mask));
                    });
}

// Mean over all entries -> 1x1.
template <typename S>
Var<S> mean_all(Tape<S>& tape, const Var<S>& x) {
  const S inv = S(1) / static_cast<S>(x->value.size());
  MatX<S> out(1, 1);
  out(0, 0) = x->value.sum() * inv;
  return tape.track(std::move(out), {x}, [x, inv](Node<S>& n) {
    if (x->requires_grad)
      x->accumulate(MatX<S>::Constant(x->value.rows(), x->value.cols(),
                                      n.grad(0, 0) * inv));
  });
}

template <typename S>
Var<S> add_scalars(Tape<S>& tape, const std::vector<Var<S>>& terms) {
  if (terms.empty()) throw ShapeMismatch("add_scalars of nothing");
  MatX<S> out = MatX<S>::Zero(1, 1);
  for (const auto& t : terms) {
    if (t->value.size() != 1) throw ShapeMismatch("add_scalars expects 1x1 nodes");
    out(0, 0) += t->value(0, 0);
  }
  return tape.track(std::move(out), terms, [terms](Node<S>& n) {
    for (const auto& t : terms)
      if (t->requires_grad) t->accumulate(n.grad);
  });
}

}  // namespace i2c2w
