// SPDX-License-Identifier: Apache-2.0
#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <vector>

#include "i2c2w/gradcheck.hpp"
#include "i2c2w/nn.hpp"

using namespace i2c2w;

namespace {

MatX<double> random_mat(int rows, int cols, Rng& rng, double scale = 1.0) {
  MatX<double> m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m(i) = rng.normal() * scale;
  return m;
}

// Straight-line re-implementation of scaled dot-product attention used as an
// independent oracle: explicit loops, no shared code with the library path.
MatX<double> attention_oracle(const MatX<double>& q, const MatX<double>& k,
                              const MatX<double>& v) {
  const int lq = static_cast<int>(q.rows());
  const int lk = static_cast<int>(k.rows());
  const int dk = static_cast<int>(q.cols());
  const int dv = static_cast<int>(v.cols());
  MatX<double> out = MatX<double>::Zero(lq, dv);
  for (int i = 0; i < lq; ++i) {
    std::vector<double> scores(lk, 0.0);
    double max_score = -1e300;
    for (int j = 0; j < lk; ++j) {
      double s = 0.0;
      for (int d = 0; d < dk; ++d) s += q(i, d) * k(j, d);
      scores[j] = s / std::sqrt(static_cast<double>(dk));
      max_score = std::max(max_score, scores[j]);
    }
    double z = 0.0;
    for (int j = 0; j < lk; ++j) z += std::exp(scores[j] - max_score);
    for (int j = 0; j < lk; ++j) {
      const double w = std::exp(scores[j] - max_score) / z;
      for (int d = 0; d < dv; ++d) out(i, d) += w * v(j, d);
    }
  }
  return out;
}

}  // namespace

TEST_CASE("attention with identical keys averages the values") {
  Rng rng(11);
  MatX<double> k_row = random_mat(1, 4, rng);
  MatX<double> k(5, 4);
  for (int r = 0; r < 5; ++r) k.row(r) = k_row;
  auto qv = make_const(random_mat(3, 4, rng));
  auto kv = make_const(k);
  auto vv = make_const(random_mat(5, 4, rng));

  Tape<double> tape;
  auto out = attention(tape, qv, kv, vv);
  const MatX<double> mean_v = vv->value.colwise().mean();
  for (int r = 0; r < 3; ++r)
    CHECK((out->value.row(r) - mean_v).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("attention saturates to the selected value row") {
  const int d = 4;
  MatX<double> k = MatX<double>::Identity(d, d);
  MatX<double> q = MatX<double>::Zero(1, d);
  q(0, 0) = 1.0;
  Rng rng(12);
  MatX<double> v = random_mat(d, 3, rng);

  Tape<double> tape;
  for (double s : {1.0, 10.0, 100.0, 1000.0}) {
    auto out = attention(tape, make_const(MatX<double>(q * s)), make_const(k),
                         make_const(v));
    const double err = (out->value.row(0) - v.row(0)).cwiseAbs().maxCoeff();
    if (s >= 1000.0) CHECK(err < 1e-9);
  }

  // larger scale always gets closer
  auto out_small = attention(tape, make_const(MatX<double>(q * 5.0)),
                             make_const(k), make_const(v));
  auto out_large = attention(tape, make_const(MatX<double>(q * 50.0)),
                             make_const(k), make_const(v));
  CHECK((out_large->value.row(0) - v.row(0)).norm() <
        (out_small->value.row(0) - v.row(0)).norm());
}

TEST_CASE("attention matches the straight-line oracle") {
  Rng rng(13);
  auto q = make_const(random_mat(3, 4, rng));
  auto k = make_const(random_mat(5, 4, rng));
  auto v = make_const(random_mat(5, 2, rng));

  Tape<double> tape;
  Var<double> weights;
  auto out = attention(tape, q, k, v, &weights);
  const MatX<double> expected = attention_oracle(q->value, k->value, v->value);
  CHECK((out->value - expected).cwiseAbs().maxCoeff() < 1e-10);
  for (int r = 0; r < 3; ++r)
    CHECK(std::abs(weights->value.row(r).sum() - 1.0) < 1e-6);

  auto bad_k = make_const(random_mat(5, 3, rng));
  CHECK_THROWS_AS(attention(tape, q, bad_k, v), ShapeMismatch);
}

TEST_CASE("single-head attention with identity projections degenerates") {
  MhaConfig cfg{4, 1};
  MhaParams<double> p;
  p.wq = make_const(MatX<double>(MatX<double>::Identity(4, 4)));
  p.wk = make_const(MatX<double>(MatX<double>::Identity(4, 4)));
  p.wv = make_const(MatX<double>(MatX<double>::Identity(4, 4)));
  p.wo = make_const(MatX<double>(MatX<double>::Identity(4, 4)));

  Rng rng(14);
  auto q = make_const(random_mat(3, 4, rng));
  auto k = make_const(random_mat(6, 4, rng));
  auto v = make_const(random_mat(6, 4, rng));

  Tape<double> tape;
  auto mha = multi_head_attention(tape, q, k, v, p, cfg);
  auto plain = attention(tape, q, k, v);
  CHECK((mha->value - plain->value).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("zero output projection yields zero attention output") {
  Rng rng(15);
  MhaConfig cfg{8, 2};
  MhaParams<double> p = MhaParams<double>::init(cfg, rng);
  p.wo = make_const(MatX<double>(MatX<double>::Zero(8, 8)));

  auto x = make_const(random_mat(5, 8, rng));
  Tape<double> tape;
  auto out = multi_head_attention(tape, x, x, x, p, cfg);
  CHECK(out->value.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("two-head attention equals explicit per-head composition") {
  Rng rng(16);
  MhaConfig cfg{8, 2};
  MhaParams<double> p = MhaParams<double>::init(cfg, rng);
  auto q = make_const(random_mat(4, 8, rng));
  auto k = make_const(random_mat(6, 8, rng));
  auto v = make_const(random_mat(6, 8, rng));

  Tape<double> tape;
  auto out = multi_head_attention(tape, q, k, v, p, cfg);

  // compositional oracle: project, slice, run two plain attentions, concat
  const MatX<double> qp = q->value * p.wq->value;
  const MatX<double> kp = k->value * p.wk->value;
  const MatX<double> vp = v->value * p.wv->value;
  MatX<double> joined(4, 8);
  joined.middleCols(0, 4) = attention_oracle(qp.middleCols(0, 4),
                                             kp.middleCols(0, 4),
                                             vp.middleCols(0, 4));
  joined.middleCols(4, 4) = attention_oracle(qp.middleCols(4, 4),
                                             kp.middleCols(4, 4),
                                             vp.middleCols(4, 4));
  const MatX<double> expected = joined * p.wo->value;
  CHECK((out->value - expected).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("feed forward constant and zeroing paths") {
  Rng rng(17);
  const int d = 6, hidden = 10;
  auto w1 = make_const(MatX<double>(MatX<double>::Zero(d, hidden)));
  auto b1 = make_const(MatX<double>(MatX<double>::Zero(1, hidden)));
  auto w2 = make_const(MatX<double>(MatX<double>::Zero(hidden, d)));
  auto b2 = make_const(random_mat(1, d, rng));
  auto x = make_const(random_mat(3, d, rng));

  Tape<double> tape;
  auto out = feed_forward(tape, x, w1, b1, w2, b2);
  for (int r = 0; r < 3; ++r)
    CHECK((out->value.row(r) - b2->value.row(0)).cwiseAbs().maxCoeff() == 0.0);

  // all-negative pre-activations die in the ReLU
  auto w1r = make_const(random_mat(d, hidden, rng));
  auto b1_neg = make_const(MatX<double>(MatX<double>::Constant(1, hidden, -1e6)));
  auto w2r = make_const(random_mat(hidden, d, rng));
  auto out2 = feed_forward(tape, x, w1r, b1_neg, w2r, b2);
  for (int r = 0; r < 3; ++r)
    CHECK((out2->value.row(r) - b2->value.row(0)).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("feed forward matches elementwise oracle") {
  Rng rng(18);
  const int l = 4, d = 5, hidden = 7;
  auto x = make_const(random_mat(l, d, rng));
  auto w1 = make_const(random_mat(d, hidden, rng));
  auto b1 = make_const(random_mat(1, hidden, rng));
  auto w2 = make_const(random_mat(hidden, d, rng));
  auto b2 = make_const(random_mat(1, d, rng));

  Tape<double> tape;
  auto out = feed_forward(tape, x, w1, b1, w2, b2);

  MatX<double> expected(l, d);
  for (int i = 0; i < l; ++i) {
    std::vector<double> h(hidden);
    for (int j = 0; j < hidden; ++j) {
      double s = b1->value(0, j);
      for (int c = 0; c < d; ++c) s += x->value(i, c) * w1->value(c, j);
      h[j] = std::max(0.0, s);
    }
    for (int j = 0; j < d; ++j) {
      double s = b2->value(0, j);
      for (int c = 0; c < hidden; ++c) s += h[c] * w2->value(c, j);
      expected(i, j) = s;
    }
  }
  CHECK((out->value - expected).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("layer norm handles constant and symmetric rows") {
  auto gain = make_const(MatX<double>(MatX<double>::Ones(1, 2)));
  auto bias_val = MatX<double>(1, 2);
  bias_val << 0.3, -0.7;
  auto bias = make_const(bias_val);

  Tape<double> tape;
  auto c = make_const(MatX<double>(MatX<double>::Constant(1, 2, 5.0)));
  auto out = layer_norm_rows(tape, c, gain, bias);
  CHECK((out->value - bias->value).cwiseAbs().maxCoeff() < 1e-12);

  MatX<double> pm(1, 2);
  pm << 1.0, -1.0;
  auto zero_bias = make_const(MatX<double>(MatX<double>::Zero(1, 2)));
  auto out2 = layer_norm_rows(tape, make_const(pm), gain, zero_bias);
  const double expect = 1.0 / std::sqrt(1.0 + 1e-5);
  CHECK(std::abs(out2->value(0, 0) - expect) < 1e-12);
  CHECK(std::abs(out2->value(0, 1) + expect) < 1e-12);
}

TEST_CASE("layer norm gradient on a constant row stays near zero") {
  auto x = make_param(MatX<double>(MatX<double>::Constant(1, 6, 2.5)));
  auto gain = make_const(MatX<double>(MatX<double>::Ones(1, 6)));
  auto bias = make_const(MatX<double>(MatX<double>::Zero(1, 6)));

  Tape<double> tape;
  auto out = mean_all(tape, layer_norm_rows(tape, x, gain, bias));
  tape.backward(out);
  CHECK(x->grad.cwiseAbs().maxCoeff() < 1e-6);
}

TEST_CASE("gradients of attention, mha and ffn match finite differences") {
  Rng rng(19);
  MhaConfig cfg{8, 2};
  MhaParams<double> p = MhaParams<double>::init(cfg, rng);
  auto q = make_param(random_mat(3, 8, rng));
  auto k = make_param(random_mat(5, 8, rng));
  auto v = make_param(random_mat(5, 8, rng));

  auto report = grad_check(
      [&](Tape<double>& t) {
        return mean_all(t, multi_head_attention(t, q, k, v, p, cfg));
      },
      {q, k, v, p.wq, p.wk, p.wv, p.wo});
  CHECK(report.max_rel_error < 1e-4);

  FfnParams<double> ffn = FfnParams<double>::init(8, 12, rng);
  auto x = make_param(random_mat(4, 8, rng));
  auto report2 = grad_check(
      [&](Tape<double>& t) { return mean_all(t, ffn.forward(t, x)); },
      {x, ffn.w1, ffn.b1, ffn.w2, ffn.b2});
  CHECK(report2.max_rel_error < 1e-4);
}

TEST_CASE("2d positional encoding is deterministic, bounded and injective") {
  CHECK_THROWS_AS(positional_encoding_2d<double>(2, 2, 6), BadDim);

  const auto pe1 = positional_encoding_2d<double>(4, 16, 32);
  const auto pe2 = positional_encoding_2d<double>(4, 16, 32);
  CHECK(pe1 == pe2);
  CHECK(pe1.rows() == 64);
  CHECK(pe1.cols() == 32);
  CHECK(pe1.maxCoeff() <= 1.0);
  CHECK(pe1.minCoeff() >= -1.0);

  // exhaustive distinctness over a 64x64 grid
  const auto pe = positional_encoding_2d<double>(64, 64, 8);
  std::vector<std::vector<double>> rows(pe.rows());
  for (Eigen::Index r = 0; r < pe.rows(); ++r) {
    rows[r].resize(pe.cols());
    for (Eigen::Index c = 0; c < pe.cols(); ++c) rows[r][c] = pe(r, c);
  }
  std::sort(rows.begin(), rows.end());
  CHECK(std::adjacent_find(rows.begin(), rows.end()) == rows.end());
}

TEST_CASE("forward passes stay finite on wide input ranges") {
  Rng rng(20);
  MhaConfig cfg{16, 4};
  MhaParams<double> p = MhaParams<double>::init(cfg, rng);
  FfnParams<double> ffn = FfnParams<double>::init(16, 32, rng);
  LayerNormParams<double> ln = LayerNormParams<double>::init(16);

  for (int trial = 0; trial < 20; ++trial) {
    MatX<double> xv(6, 16);
    for (Eigen::Index i = 0; i < xv.size(); ++i)
      xv(i) = rng.uniform(-10.0, 10.0);
    auto x = make_const(xv);
    Tape<double> tape;
    auto out = ln.forward(
        tape, ffn.forward(tape, multi_head_attention(tape, x, x, x, p, cfg)));
    CHECK(out->value.allFinite());
  }
}
