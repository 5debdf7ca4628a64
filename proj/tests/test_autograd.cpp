// SPDX-License-Identifier: Apache-2.0
#include <catch2/catch_amalgamated.hpp>

#include "i2c2w/autograd.hpp"
#include "i2c2w/gradcheck.hpp"

using namespace i2c2w;

namespace {

MatX<double> random_mat(int rows, int cols, Rng& rng, double scale = 1.0) {
  MatX<double> m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m(i) = rng.normal() * scale;
  return m;
}

}  // namespace

TEST_CASE("matmul forward and gradient") {
  Rng rng(1);
  auto a = make_param(random_mat(3, 4, rng));
  auto b = make_param(random_mat(4, 2, rng));

  Tape<double> tape;
  auto c = matmul(tape, a, b);
  CHECK(c->value.isApprox(a->value * b->value));

  auto report = grad_check(
      [&](Tape<double>& t) { return mean_all(t, relu(t, matmul(t, a, b))); },
      {a, b});
  CHECK(report.max_rel_error < 1e-6);

  auto bad = make_param(random_mat(3, 3, rng));
  CHECK_THROWS_AS(matmul(tape, a, bad), ShapeMismatch);
}

TEST_CASE("elementwise op gradients") {
  Rng rng(2);
  auto x = make_param(random_mat(4, 5, rng));
  auto y = make_param(random_mat(4, 5, rng));
  auto row = make_param(random_mat(1, 5, rng));

  auto report = grad_check(
      [&](Tape<double>& t) {
        auto h = hadamard(t, add(t, x, y), add_row(t, x, row));
        return mean_all(t, scale(t, h, 1.7));
      },
      {x, y, row});
  CHECK(report.max_rel_error < 1e-6);
}

TEST_CASE("softmax rows sum to one and gradient matches") {
  Rng rng(3);
  auto x = make_param(random_mat(5, 7, rng, 2.0));
  auto w = make_param(random_mat(7, 1, rng));

  Tape<double> tape;
  auto p = softmax_rows(tape, x);
  for (int r = 0; r < 5; ++r)
    CHECK(std::abs(p->value.row(r).sum() - 1.0) < 1e-12);
  CHECK(p->value.minCoeff() > 0.0);

  auto report = grad_check(
      [&](Tape<double>& t) {
        return mean_all(t, matmul(t, softmax_rows(t, x), w));
      },
      {x});
  CHECK(report.max_rel_error < 1e-6);
}

TEST_CASE("transpose, cols and hcat gradients") {
  Rng rng(4);
  auto x = make_param(random_mat(4, 6, rng));

  auto report = grad_check(
      [&](Tape<double>& t) {
        auto left = cols(t, x, 0, 3);
        auto right = cols(t, x, 3, 3);
        auto joined = hcat(t, {right, left});
        return mean_all(t, matmul(t, joined, transpose(t, joined)));
      },
      {x});
  CHECK(report.max_rel_error < 1e-6);
}

TEST_CASE("layer norm makes rows standard and gradient matches") {
  Rng rng(5);
  auto x = make_param(random_mat(3, 8, rng, 3.0));
  auto gain = make_param(random_mat(1, 8, rng));
  auto bias = make_param(random_mat(1, 8, rng));

  Tape<double> tape;
  auto unit_gain = make_param(MatX<double>(MatX<double>::Ones(1, 8)));
  auto zero_bias = make_param(MatX<double>(MatX<double>::Zero(1, 8)));
  auto normed = layer_norm_rows(tape, x, unit_gain, zero_bias);
  for (int r = 0; r < 3; ++r) {
    CHECK(std::abs(normed->value.row(r).mean()) < 1e-7);
    const double var = (normed->value.row(r).array() -
                        normed->value.row(r).mean()).square().mean();
    CHECK(std::abs(var - 1.0) < 1e-4);
  }

  auto report = grad_check(
      [&](Tape<double>& t) {
        return mean_all(t, relu(t, layer_norm_rows(t, x, gain, bias)));
      },
      {x, gain, bias});
  CHECK(report.max_rel_error < 1e-4);
}

TEST_CASE("dropout is identity in eval mode and masks in train mode") {
  Rng rng(6);
  auto x = make_param(random_mat(10, 10, rng));

  Tape<double> tape;
  Rng drop_rng(9);
  auto eval_out = dropout(tape, x, 0.5, drop_rng, false);
  CHECK(eval_out.get() == x.get());

  auto train_out = dropout(tape, x, 0.5, drop_rng, true);
  int zeros = 0;
  for (Eigen::Index i = 0; i < train_out->value.size(); ++i) {
    const double v = train_out->value(i);
    if (v == 0.0)
      ++zeros;
    else
      CHECK(std::abs(v - 2.0 * x->value(i)) < 1e-12);
  }
  CHECK(zeros > 20);
  CHECK(zeros < 80);
}

TEST_CASE("backward accumulates across shared subexpressions") {
  auto x = make_param(MatX<double>(MatX<double>::Constant(1, 1, 3.0)));
  Tape<double> tape;
  auto y = add(tape, x, x);  // dy/dx = 2
  tape.backward(y);
  CHECK(x->grad(0, 0) == 2.0);
  x->zero_grad();

  auto report = grad_check(
      [&](Tape<double>& t) {
        auto s = add(t, x, x);
        return hadamard(t, s, s);  // (2x)^2
      },
      {x});
  CHECK(report.max_rel_error < 1e-8);
}

TEST_CASE("grad disabled tape records values only") {
  Rng rng(7);
  auto x = make_param(random_mat(2, 2, rng));
  Tape<double> tape(false);
  auto y = relu(tape, matmul(tape, x, x));
  CHECK(!y->requires_grad);
  CHECK(y->parents.empty());
}
