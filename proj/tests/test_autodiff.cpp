// Copyright (c) 2026, the desklm authors
// SPDX-License-Identifier: Apache-2.0
//
// Tape autodiff tests. Gradients are validated against closed forms where one
// exists and against central finite differences everywhere else; the finite
// difference path evaluates on a gradient-disabled tape, so it is independent
// of the backward code it checks.

#include <doctest.h>

#include <cmath>
#include <vector>

#include "desklm/autodiff.hpp"
#include "desklm/tensor.hpp"

using namespace desklm;

namespace {

Tensor<double> arange(const Shape& shape, double lo, double step) {
  Tensor<double> t(shape);
  for (std::int64_t i = 0; i < t.numel(); ++i) t[i] = lo + step * static_cast<double>(i);
  return t;
}

}  // namespace

TEST_CASE("sum of squares gradient matches the closed form 2x") {
  Tensor<double> x = arange({3, 4}, -1.1, 0.27);
  x.requires_grad = true;
  Tape<double> tape;
  Var<double> vx = tape.leaf(x);
  Var<double> y = sum_all(square(vx));
  tape.backward(y);
  Tensor<double> g = tape.grad(vx);
  for (std::int64_t i = 0; i < x.numel(); ++i) {
    CHECK(g[i] == doctest::Approx(2.0 * x[i]).epsilon(1e-12));
  }
}

TEST_CASE("grad_check on sum of squares is tight") {
  Tensor<double> x = arange({2, 5}, 0.3, -0.17);
  double err = grad_check<double>(
      [](Tape<double>&, Var<double> v) { return sum_all(square(v)); }, x, 1e-5);
  CHECK(err < 1e-8);
}

TEST_CASE("grad_check of a constant function is exactly zero") {
  Tensor<double> x({4}, 2.0);
  double err = grad_check<double>(
      [](Tape<double>& t, Var<double>) {
        Tensor<double> c = Tensor<double>::scalar(3.5);
        return t.constant(c);
      },
      x, 1e-4);
  CHECK(err == 0.0);
}

TEST_CASE("matmul produces [2,4] from [2,3]x[3,4] and matches hand values") {
  Tape<double> tape;
  Tensor<double> a({2, 3}, {1, 2, 3, 4, 5, 6});
  Tensor<double> b({3, 4}, {1, 0, 0, 1, 0, 1, 0, 2, 0, 0, 1, 3});
  Var<double> y = matmul(tape.leaf(a), tape.leaf(b));
  const Tensor<double>& v = tape.value(y);
  REQUIRE(v.shape == Shape{2, 4});
  CHECK(v.at(0, 0) == 1.0);
  CHECK(v.at(0, 1) == 2.0);
  CHECK(v.at(0, 2) == 3.0);
  CHECK(v.at(0, 3) == 14.0);
  CHECK(v.at(1, 3) == 32.0);
}

TEST_CASE("matmul with mismatched inner dims names both shapes") {
  Tape<double> tape;
  Var<double> a = tape.leaf(Tensor<double>({2, 3}, 1.0));
  Var<double> b = tape.leaf(Tensor<double>({4, 5}, 1.0));
  CHECK_THROWS_WITH_AS(matmul(a, b), doctest::Contains("inner dims 3 vs 4"), ShapeError);
}

TEST_CASE("matmul gradients match finite differences") {
  Tensor<double> a = arange({3, 4}, -0.6, 0.13);
  Tensor<double> b = arange({4, 2}, 0.2, -0.09);
  double err = grad_check_many<double>(
      [](Tape<double>&, std::vector<Var<double>>& v) {
        return sum_all(square(matmul(v[0], v[1])));
      },
      {a, b}, 1e-5);
  CHECK(err < 1e-7);
}

TEST_CASE("matmul_nt equals matmul against the explicit transpose") {
  Tape<double> tape;
  Rng rng(7);
  Tensor<double> a = randn<double>({3, 5}, rng);
  Tensor<double> b = randn<double>({4, 5}, rng);
  Tensor<double> bt({5, 4});
  bt.mat() = b.mat().transpose();
  Var<double> y1 = matmul_nt(tape.leaf(a), tape.leaf(b));
  Var<double> y2 = matmul(tape.leaf(a), tape.leaf(bt));
  const Tensor<double>&v1 = tape.value(y1), &v2 = tape.value(y2);
  for (std::int64_t i = 0; i < v1.numel(); ++i) CHECK(v1[i] == doctest::Approx(v2[i]));
}

TEST_CASE("softmax over an all-equal row is uniform 1/n") {
  Tape<double> tape;
  Tensor<double> x({1, 8}, 3.25);
  Var<double> p = softmax_rows(tape.leaf(x));
  for (std::int64_t c = 0; c < 8; ++c) {
    CHECK(tape.value(p).at(0, c) == doctest::Approx(0.125).epsilon(1e-14));
  }
}

TEST_CASE("masked softmax zeroes masked entries exactly and renormalizes") {
  Tape<double> tape;
  Tensor<double> x({2, 4}, {1.0, 2.0, 3.0, 4.0, -1.0, 0.0, 1.0, 2.0});
  Tensor<double> mask({2, 4}, {1, 1, 0, 0, 1, 1, 1, 0});
  Var<double> p = masked_softmax_rows(tape.leaf(x), mask);
  const Tensor<double>& v = tape.value(p);
  CHECK(v.at(0, 2) == 0.0);
  CHECK(v.at(0, 3) == 0.0);
  CHECK(v.at(1, 3) == 0.0);
  CHECK(v.at(0, 0) + v.at(0, 1) == doctest::Approx(1.0).epsilon(1e-14));
  CHECK(v.at(1, 0) + v.at(1, 1) + v.at(1, 2) == doctest::Approx(1.0).epsilon(1e-14));
  // masked pair renormalizes to a 2-way softmax
  const double e1 = std::exp(1.0), e2 = std::exp(2.0);
  CHECK(v.at(0, 0) == doctest::Approx(e1 / (e1 + e2)).epsilon(1e-13));
}

TEST_CASE("logsumexp is shift invariant: lse(x+c) = lse(x) + c") {
  Tape<double> tape;
  Rng rng(11);
  Tensor<double> x = randn<double>({3, 7}, rng);
  Tensor<double> xs = x;
  const double c = 123.456;
  for (std::int64_t i = 0; i < xs.numel(); ++i) xs[i] += c;
  Var<double> l1 = logsumexp_rows(tape.leaf(x));
  Var<double> l2 = logsumexp_rows(tape.leaf(xs));
  for (std::int64_t r = 0; r < 3; ++r) {
    CHECK(tape.value(l2)[r] == doctest::Approx(tape.value(l1)[r] + c).epsilon(1e-12));
  }
}

TEST_CASE("composite graph gradient vs finite differences") {
  // layer_norm -> gelu -> matmul -> logsumexp -> masked mean
  Rng rng(42);
  Tensor<double> x = randn<double>({4, 6}, rng);
  Tensor<double> g({6}, 1.0);
  Tensor<double> b({6}, 0.1);
  Tensor<double> w = randn<double>({6, 5}, rng, 0.5);
  double err = grad_check_many<double>(
      [](Tape<double>&, std::vector<Var<double>>& v) {
        Var<double> h = layer_norm(v[0], v[1], v[2], 1e-5);
        h = gelu(h);
        h = matmul(h, v[3]);
        Var<double> lse = logsumexp_rows(h);
        Tensor<double> m({4}, {1, 0, 1, 1});
        return masked_mean(lse, m);
      },
      {x, g, b, w}, 1e-5);
  CHECK(err < 1e-6);
}

TEST_CASE("rope at position zero is the identity") {
  Tape<double> tape;
  Rng rng(3);
  Tensor<double> x = randn<double>({2, 8}, rng);
  Var<double> y = rope(tape.leaf(x), {0, 0}, 10000.0, 4);
  const Tensor<double>& v = tape.value(y);
  for (std::int64_t i = 0; i < x.numel(); ++i) CHECK(v[i] == doctest::Approx(x[i]).epsilon(1e-15));
}

TEST_CASE("rope preserves per-pair norms and has exact gradients") {
  Rng rng(5);
  Tensor<double> x = randn<double>({3, 8}, rng);
  Tape<double> tape;
  Var<double> y = rope(tape.leaf(x), {0, 5, 11}, 5000042.0, 4);
  const Tensor<double>& v = tape.value(y);
  for (std::int64_t r = 0; r < 3; ++r) {
    for (std::int64_t h = 0; h < 2; ++h) {
      for (std::int64_t i = 0; i < 2; ++i) {
        const double a = x.at(r, h * 4 + i), b = x.at(r, h * 4 + i + 2);
        const double ya = v.at(r, h * 4 + i), yb = v.at(r, h * 4 + i + 2);
        CHECK(ya * ya + yb * yb == doctest::Approx(a * a + b * b).epsilon(1e-12));
      }
    }
  }
  double err = grad_check<double>(
      [](Tape<double>&, Var<double> vx) {
        return sum_all(square(rope(vx, {0, 5, 11}, 5000042.0, 4)));
      },
      x, 1e-5);
  CHECK(err < 1e-7);
}

TEST_CASE("rope rejects odd head_dim and width mismatch") {
  Tape<double> tape;
  Var<double> x = tape.leaf(Tensor<double>({2, 8}, 1.0));
  CHECK_THROWS_AS(rope(x, {0, 1}, 10000.0, 3), ShapeError);
  CHECK_THROWS_AS(rope(x, {0, 1}, 10000.0, 6), ShapeError);
  CHECK_THROWS_AS(rope(x, {0}, 10000.0, 4), ShapeError);
}

TEST_CASE("gather_rows and pick_per_row route gradients to the right slots") {
  Tensor<double> table = arange({5, 3}, 0.0, 1.0);
  double err = grad_check<double>(
      [](Tape<double>&, Var<double> t) {
        Var<double> rows = gather_rows(t, {4, 0, 4});
        return sum_all(square(rows));
      },
      table, 1e-5);
  CHECK(err < 1e-8);

  Tape<double> tape;
  Tensor<double> x = arange({3, 4}, 1.0, 1.0);
  x.requires_grad = true;
  Var<double> vx = tape.leaf(x);
  Var<double> picked = pick_per_row(vx, {2, 0, 3});
  tape.backward(sum_all(picked));
  Tensor<double> g = tape.grad(vx);
  CHECK(g.at(0, 2) == 1.0);
  CHECK(g.at(1, 0) == 1.0);
  CHECK(g.at(2, 3) == 1.0);
  double total = 0.0;
  for (std::int64_t i = 0; i < g.numel(); ++i) total += g[i];
  CHECK(total == 3.0);
}

TEST_CASE("gather_rows rejects out-of-vocab ids") {
  Tape<double> tape;
  Var<double> t = tape.leaf(Tensor<double>({5, 3}, 1.0));
  CHECK_THROWS_AS(gather_rows(t, {5}), ValidationError);
  CHECK_THROWS_AS(gather_rows(t, {-1}), ValidationError);
}

TEST_CASE("diamond graph accumulates: d(x+x)/dx = 2") {
  Tape<double> tape;
  Tensor<double> x({3}, {1.0, -2.0, 0.5});
  x.requires_grad = true;
  Var<double> vx = tape.leaf(x);
  tape.backward(sum_all(vx + vx));
  Tensor<double> g = tape.grad(vx);
  for (std::int64_t i = 0; i < 3; ++i) CHECK(g[i] == 2.0);
}

TEST_CASE("add_rowvec bias gradient is the column sum") {
  Tape<double> tape;
  Tensor<double> a = arange({3, 2}, 0.0, 1.0);
  a.requires_grad = true;
  Tensor<double> b({2}, {10.0, 20.0});
  b.requires_grad = true;
  Var<double> va = tape.leaf(a), vb = tape.leaf(b);
  tape.backward(sum_all(add_rowvec(va, vb)));
  Tensor<double> gb = tape.grad(vb);
  CHECK(gb[0] == 3.0);
  CHECK(gb[1] == 3.0);
}

TEST_CASE("slice_cols / concat_cols round-trip and differentiate") {
  Rng rng(9);
  Tensor<double> x = randn<double>({2, 6}, rng);
  Tape<double> tape;
  Var<double> vx = tape.leaf(x);
  Var<double> left = slice_cols(vx, 0, 2);
  Var<double> mid = slice_cols(vx, 2, 3);
  Var<double> right = slice_cols(vx, 5, 1);
  Var<double> back = concat_cols<double>({left, mid, right});
  const Tensor<double>& v = tape.value(back);
  for (std::int64_t i = 0; i < x.numel(); ++i) CHECK(v[i] == x[i]);

  double err = grad_check<double>(
      [](Tape<double>&, Var<double> v2) {
        Var<double> l = slice_cols(v2, 0, 3);
        Var<double> r = slice_cols(v2, 3, 3);
        return sum_all(square(concat_cols<double>({r, l})));
      },
      x, 1e-5);
  CHECK(err < 1e-8);
}

TEST_CASE("Program: backward before forward raises a graph error") {
  Program<double> prog([](Tape<double>&, const Program<double>::NamedVars& in) {
    Program<double>::NamedVars out;
    out["y"] = in.at("x");
    return out;
  });
  Program<double>::NamedTensors seeds;
  seeds["y"] = Tensor<double>({2}, 1.0);
  CHECK_THROWS_WITH_AS(prog.backward(seeds), doctest::Contains("forward"), GraphError);
}

TEST_CASE("Program: named forward and backward round-trip") {
  Program<double> prog([](Tape<double>&, const Program<double>::NamedVars& in) {
    Program<double>::NamedVars out;
    out["loss"] = sum_all(square(in.at("w")));
    return out;
  });
  Tensor<double> w({2, 2}, {1.0, 2.0, 3.0, 4.0});
  w.requires_grad = true;
  auto out = prog.forward({{"w", w}});
  CHECK(out.at("loss")[0] == doctest::Approx(30.0));
  auto grads = prog.backward({{"loss", Tensor<double>::scalar(1.0)}});
  REQUIRE(grads.count("w") == 1);
  CHECK(grads.at("w").at(1, 1) == doctest::Approx(8.0));
}

TEST_CASE("Program rejects unknown output names in backward") {
  Program<double> prog([](Tape<double>&, const Program<double>::NamedVars& in) {
    Program<double>::NamedVars out;
    out["y"] = in.at("x");
    return out;
  });
  Tensor<double> x({1}, 1.0);
  prog.forward({{"x", x}});
  CHECK_THROWS_AS(prog.backward({{"nope", Tensor<double>({1}, 1.0)}}), GraphError);
}

TEST_CASE("backward is deterministic: identical graphs give identical bits") {
  auto run = []() {
    Rng rng(123);
    Tensor<double> x = randn<double>({5, 5}, rng);
    x.requires_grad = true;
    Tensor<double> w = randn<double>({5, 5}, rng);
    w.requires_grad = true;
    Tape<double> tape;
    Var<double> vx = tape.leaf(x), vw = tape.leaf(w);
    Var<double> h = gelu(matmul(vx, vw));
    tape.backward(sum_all(square(h)));
    return std::make_pair(tensor_checksum(tape.grad(vx)), tensor_checksum(tape.grad(vw)));
  };
  auto a = run();
  auto b = run();
  CHECK(a.first == b.first);
  CHECK(a.second == b.second);
}

TEST_CASE("ops do not mutate their inputs") {
  Tape<double> tape;
  Tensor<double> x({2, 2}, {1.0, 2.0, 3.0, 4.0});
  Var<double> vx = tape.leaf(x);
  const std::uint64_t before = tensor_checksum(tape.value(vx));
  (void)gelu(vx);
  (void)square(vx);
  (void)softmax_rows(vx);
  (void)scale(vx, 3.0);
  CHECK(tensor_checksum(tape.value(vx)) == before);
}

TEST_CASE("backward on a gradient-disabled tape raises") {
  Tape<double> tape(false);
  Tensor<double> x({2}, 1.0);
  x.requires_grad = true;
  Var<double> vx = tape.leaf(x);
  Var<double> y = sum_all(vx);
  CHECK_THROWS_AS(tape.backward(y), GraphError);
}

TEST_CASE("seed shape mismatch raises a shape error") {
  Tape<double> tape;
  Tensor<double> x({3}, 1.0);
  x.requires_grad = true;
  Var<double> vx = tape.leaf(x);
  CHECK_THROWS_AS(tape.backward(vx, Tensor<double>({2}, 1.0)), ShapeError);
}
