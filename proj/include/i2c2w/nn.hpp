// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "i2c2w/autograd.hpp"

namespace i2c2w {

struct MhaConfig {
  int model_dim = 128;  // D
  int num_heads = 8;    // M

  int head_dim() const { return model_dim / num_heads; }
  void validate() const {
    if (num_heads <= 0 || model_dim % num_heads != 0)
      throw BadDim("model_dim must be a positive multiple of num_heads");
  }
};

// Glorot-uniform initialized matrix.
template <typename S>
MatX<S> xavier_init(int rows, int cols, Rng& rng) {
  const double a = std::sqrt(6.0 / (rows + cols));
  MatX<S> m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i)
    m(i) = static_cast<S>(rng.uniform(-a, a));
  return m;
}

// Scaled dot-product attention. Q: Lq x dk, K: Lk x dk, V: Lk x dv.
// Optionally exposes the softmaxed weight node (Lq x Lk).
template <typename S>
Var<S> attention(Tape<S>& tape, const Var<S>& q, const Var<S>& k,
                 const Var<S>& v, Var<S>* weights_out = nullptr) {
  if (q->value.cols() != k->value.cols())
    throw ShapeMismatch("attention: Q and K feature dims differ");
  if (k->value.rows() != v->value.rows())
    throw ShapeMismatch("attention: K and V row counts differ");
  const S inv_sqrt_dk =
      static_cast<S>(1.0 / std::sqrt(static_cast<double>(q->value.cols())));
  auto scores = scale(tape, matmul(tape, q, transpose(tape, k)), inv_sqrt_dk);
  auto weights = softmax_rows(tape, scores);
  if (weights_out) *weights_out = weights;
  return matmul(tape, weights, v);
}

// Per-head projection weights; the paper's formulation carries no biases.
template <typename S>
struct MhaParams {
  Var<S> wq, wk, wv, wo;  // each D x D

  static MhaParams init(const MhaConfig& cfg, Rng& rng) {
    cfg.validate();
    const int d = cfg.model_dim;
    return {make_param(xavier_init<S>(d, d, rng)),
            make_param(xavier_init<S>(d, d, rng)),
            make_param(xavier_init<S>(d, d, rng)),
            make_param(xavier_init<S>(d, d, rng))};
  }
};

// Concat(head_1..head_M) Wo with head_i = attention(Q Wq_i, K Wk_i, V Wv_i);
// the per-head projections are column blocks of the D x D matrices.
// `head_weights_out`, when given, collects each head's attention weights.
template <typename S>
Var<S> multi_head_attention(Tape<S>& tape, const Var<S>& q, const Var<S>& k,
                            const Var<S>& v, const MhaParams<S>& p,
                            const MhaConfig& cfg,
                            std::vector<Var<S>>* head_weights_out = nullptr) {
  cfg.validate();
  if (q->value.cols() != cfg.model_dim || k->value.cols() != cfg.model_dim ||
      v->value.cols() != cfg.model_dim)
    throw ShapeMismatch("multi_head_attention expects D-dimensional inputs");
  const int dk = cfg.head_dim();
  auto qp = matmul(tape, q, p.wq);
  auto kp = matmul(tape, k, p.wk);
  auto vp = matmul(tape, v, p.wv);
  std::vector<Var<S>> heads;
  heads.reserve(cfg.num_heads);
  for (int h = 0; h < cfg.num_heads; ++h) {
    Var<S> w;
    auto head = attention(tape, cols(tape, qp, h * dk, dk),
                          cols(tape, kp, h * dk, dk),
                          cols(tape, vp, h * dk, dk),
                          head_weights_out ? &w : nullptr);
    if (head_weights_out) head_weights_out->push_back(w);
    heads.push_back(head);
  }
  return matmul(tape, hcat(tape, heads), p.wo);
}

// max(0, x W1 + b1) W2 + b2
template <typename S>
Var<S> feed_forward(Tape<S>& tape, const Var<S>& x, const Var<S>& w1,
                    const Var<S>& b1, const Var<S>& w2, const Var<S>& b2) {
  auto hidden = relu(tape, add_row(tape, matmul(tape, x, w1), b1));
  return add_row(tape, matmul(tape, hidden, w2), b2);
}

template <typename S>
struct FfnParams {
  Var<S> w1, b1, w2, b2;

  static FfnParams init(int model_dim, int hidden_dim, Rng& rng) {
    return {make_param(xavier_init<S>(model_dim, hidden_dim, rng)),
            make_param(MatX<S>(MatX<S>::Zero(1, hidden_dim))),
            make_param(xavier_init<S>(hidden_dim, model_dim, rng)),
            make_param(MatX<S>(MatX<S>::Zero(1, model_dim)))};
  }

  Var<S> forward(Tape<S>& tape, const Var<S>& x) const {
    return feed_forward(tape, x, w1, b1, w2, b2);
  }
};

template <typename S>
struct LayerNormParams {
  Var<S> gain, bias;

  static LayerNormParams init(int dim) {
    return {make_param(MatX<S>(MatX<S>::Ones(1, dim))),
            make_param(MatX<S>(MatX<S>::Zero(1, dim)))};
  }

  Var<S> forward(Tape<S>& tape, const Var<S>& x) const {
    return layer_norm_rows(tape, x, gain, bias);
  }
};

template <typename S>
struct Linear {
  Var<S> w;  // in x out
  Var<S> b;  // 1 x out

  static Linear init(int in_dim, int out_dim, Rng& rng) {
    return {make_param(xavier_init<S>(in_dim, out_dim, rng)),
            make_param(MatX<S>(MatX<S>::Zero(1, out_dim)))};
  }

  Var<S> forward(Tape<S>& tape, const Var<S>& x) const {
    return add_row(tape, matmul(tape, x, w), b);
  }
};

// Sinusoidal 2D positional encoding over an H x W grid, flattened row-major
// to (H*W) x D. The first D/2 channels encode the row index, the rest the
// column index, each as interleaved sin/cos at geometrically spaced
// frequencies.
template <typename S>
MatX<S> positional_encoding_2d(int height, int width, int dim) {
  if (dim % 4 != 0) throw BadDim("positional encoding dim must be divisible by 4");
  const int half = dim / 2;
  MatX<S> pe(height * width, dim);
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      const int row = y * width + x;
      for (int i = 0; i < half / 2; ++i) {
        const double div = std::pow(10000.0, (2.0 * i) / half);
        pe(row, 2 * i) = static_cast<S>(std::sin(y / div));
        pe(row, 2 * i + 1) = static_cast<S>(std::cos(y / div));
        pe(row, half + 2 * i) = static_cast<S>(std::sin(x / div));
        pe(row, half + 2 * i + 1) = static_cast<S>(std::cos(x / div));
      }
    }
  }
  return pe;
}

}  // namespace i2c2w
