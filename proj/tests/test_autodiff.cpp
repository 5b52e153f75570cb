#include <cmath>

#include "doctest.h"

#include "stprog/errors.hpp"
#include "stprog/gradcheck.hpp"
#include "stprog/ops.hpp"
#include "stprog/rng.hpp"

using namespace stprog;

namespace {
Tensor random_tensor(std::vector<std::size_t> shape, std::uint64_t seed,
                     double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  Rng rng(seed);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(lo, hi);
  return t;
}
}  // namespace

TEST_CASE("product rule: d(x*y)/dx at (3,5) is 5") {
  Graph g;
  Var x = g.leaf(Tensor::scalar(3.0));
  Var y = g.leaf(Tensor::scalar(5.0));
  Var p = mul(x, y);
  g.backward(p);
  CHECK(g.grad(x)[0] == 5.0);
  CHECK(g.grad(y)[0] == 3.0);
}

TEST_CASE("gradient of an unused leaf is exactly zero") {
  Graph g;
  Var x = g.leaf(Tensor::scalar(2.0));
  Var unused = g.leaf(Tensor({3}, {1, 2, 3}));
  Var loss = mul(x, x);
  g.backward(loss);
  Tensor du = g.grad(unused);
  for (std::size_t i = 0; i < du.size(); ++i) CHECK(du[i] == 0.0);
}

TEST_CASE("gradients accumulate additively across consumers") {
  Graph g;
  Var x = g.leaf(Tensor::scalar(4.0));
  Var y = add(mul(x, x), x);  // x^2 + x -> dy/dx = 2x + 1 = 9
  g.backward(y);
  CHECK(g.grad(x)[0] == doctest::Approx(9.0));
}

TEST_CASE("backward requires a scalar loss") {
  Graph g;
  Var x = g.leaf(Tensor({2}, {1, 2}));
  CHECK_THROWS_AS(g.backward(x), ShapeError);
}

TEST_CASE("softmax-cross-entropy gradient equals probs minus one-hot") {
  // loss = -log softmax(z)[target]; dz = p - onehot
  const std::size_t n = 6, target = 2;
  Tensor logits = random_tensor({n}, 99, -2.0, 2.0);

  Graph g;
  Var z = g.leaf(logits);
  Var p = softmax(z, 0);
  // -log p[target] via dot with a one-hot and log composition:
  // use mul with one-hot then sum, then -log by gradcheck over composition.
  std::vector<double> onehot(n, 0.0);
  onehot[target] = 1.0;
  Var picked = dot_const(p, onehot);
  // loss = -log(picked): implemented through scale/log composition below.
  // log is not a public op; check against the analytic fact instead:
  g.backward(picked);
  // d picked / d z_j = p_t (delta_tj - p_j). Then d(-log)/dz = p - onehot.
  const double pt = picked.value()[0];
  Tensor dz = g.grad(z);
  for (std::size_t j = 0; j < n; ++j) {
    const double expect = pt * ((j == target ? 1.0 : 0.0) - p.value()[j]);
    CHECK(dz[j] == doctest::Approx(expect).epsilon(1e-12));
  }
}

TEST_CASE("grad_check on sum of squares") {
  auto f = [](Graph& g, const std::vector<Var>& in) {
    return sum_all(mul(in[0], in[0]));
  };
  Tensor x({3}, {1.0, 2.0, 3.0});

  // analytic gradient should be [2,4,6]
  Graph g;
  Var v = g.leaf(x);
  Var loss = sum_all(mul(v, v));
  g.backward(loss);
  Tensor dx = g.grad(v);
  CHECK(dx[0] == doctest::Approx(2.0));
  CHECK(dx[1] == doctest::Approx(4.0));
  CHECK(dx[2] == doctest::Approx(6.0));

  auto rep = grad_check(f, {x});
  CHECK(rep.probes == 3);
  CHECK(rep.max_rel_err < 1e-8);
}

TEST_CASE("grad_check covers composite ops") {
  Rng seeds(7);
  auto f = [](Graph& g, const std::vector<Var>& in) {
    Var h = gelu(linear(in[0], in[1], in[2]));
    Var y = softmax(h, 0);
    return mean_all(mul(y, y));
  };
  std::vector<Tensor> inputs{random_tensor({5}, seeds.next_u64()),
                             random_tensor({4, 5}, seeds.next_u64()),
                             random_tensor({4}, seeds.next_u64())};
  auto rep = grad_check(f, inputs);
  CHECK(rep.max_rel_err < 1e-4);
}

TEST_CASE("grad_check layer_norm") {
  Rng seeds(21);
  auto f = [](Graph& g, const std::vector<Var>& in) {
    return mean_all(mul(layer_norm(in[0], in[1], in[2]), in[0]));
  };
  std::vector<Tensor> inputs{random_tensor({3, 6}, seeds.next_u64()),
                             random_tensor({6}, seeds.next_u64(), 0.5, 1.5),
                             random_tensor({6}, seeds.next_u64())};
  auto rep = grad_check(f, inputs);
  CHECK(rep.max_rel_err < 1e-4);
}

TEST_CASE("grad_check matmul / concat / slice / stack") {
  Rng seeds(33);
  auto f = [](Graph& g, const std::vector<Var>& in) {
    Var m = matmul(in[0], in[1]);        // {2,3}x{3,2}
    Var c = concat({in[0], m}, 1);       // {2,5}
    Var row0 = slice1d(mean_keep_axis(c, 1), 1, 3);
    Var s = stack_rows({row0, row0});
    return sum_all(mul(s, s));
  };
  std::vector<Tensor> inputs{random_tensor({2, 3}, seeds.next_u64()),
                             random_tensor({3, 2}, seeds.next_u64())};
  auto rep = grad_check(f, inputs);
  CHECK(rep.max_rel_err < 1e-4);
}

TEST_CASE("grad_check subsampled probes stay deterministic") {
  auto f = [](Graph& g, const std::vector<Var>& in) {
    return sum_all(mul(in[0], in[0]));
  };
  Tensor x = random_tensor({40}, 5);
  auto a = grad_check(f, {x}, 1e-5, 7, 77);
  auto b = grad_check(f, {x}, 1e-5, 7, 77);
  CHECK(a.probes == 7);
  CHECK(a.max_rel_err == b.max_rel_err);
}

TEST_CASE("embedding-style lookup sparsity: untouched rows get zero grad") {
  Graph g;
  Tensor table({4, 3});
  for (std::size_t i = 0; i < table.size(); ++i) table[i] = 0.1 * double(i);
  Var e = g.leaf(table);
  // Loss reads only row 2 through a mask.
  Tensor mask({4, 3});
  for (std::size_t j = 0; j < 3; ++j) mask[2 * 3 + j] = 1.0;
  Var loss = sum_all(mul(e, g.constant(mask)));
  g.backward(loss);
  Tensor de = g.grad(e);
  for (std::size_t r = 0; r < 4; ++r)
    for (std::size_t j = 0; j < 3; ++j)
      CHECK(de[r * 3 + j] == (r == 2 ? 1.0 : 0.0));
}
