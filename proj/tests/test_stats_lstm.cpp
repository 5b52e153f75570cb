#include <cmath>

#include "doctest.h"

#include "stprog/errors.hpp"
#include "stprog/gradcheck.hpp"
#include "stprog/lstm.hpp"
#include "stprog/ops.hpp"
#include "stprog/rng.hpp"
#include "stprog/stats.hpp"

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

TEST_CASE("cosine of a vector with itself is 1") {
  Graph g;
  Tensor a = random_tensor({6}, 11);
  Var c = cosine_similarity(g.leaf(a), g.leaf(a));
  CHECK(c.value()[0] == doctest::Approx(1.0).epsilon(1e-14));
}

TEST_CASE("cosine rejects zero-norm vectors") {
  Graph g;
  Var a = g.leaf(Tensor({3}));
  Var b = g.leaf(Tensor({3}, {1, 2, 3}));
  CHECK_THROWS_AS(cosine_similarity(a, b), ValueError);
}

TEST_CASE("covariance of a single row is the zero matrix") {
  Graph g;
  Var c = covariance(g.leaf(Tensor({1, 4}, {3, -1, 2, 7})));
  for (std::size_t i = 0; i < 16; ++i) CHECK(c.value()[i] == 0.0);
}

TEST_CASE("covariance hand example with the 1/B convention") {
  Graph g;
  Var c = covariance(g.leaf(Tensor({2, 2}, {1, 0, -1, 0})));
  CHECK(c.value().at({0, 0}) == doctest::Approx(1.0));
  CHECK(c.value().at({0, 1}) == 0.0);
  CHECK(c.value().at({1, 0}) == 0.0);
  CHECK(c.value().at({1, 1}) == 0.0);
}

TEST_CASE("covariance matches a direct loop and is symmetric") {
  Rng seeds(550);
  Tensor h = random_tensor({5, 4}, seeds.next_u64(), -2.0, 2.0);
  Graph g;
  Var c = covariance(g.leaf(h));
  const std::size_t b = 5, d = 4;
  std::vector<double> mean(d, 0.0);
  for (std::size_t i = 0; i < b; ++i)
    for (std::size_t j = 0; j < d; ++j) mean[j] += h.at({i, j}) / b;
  for (std::size_t p = 0; p < d; ++p)
    for (std::size_t q = 0; q < d; ++q) {
      double acc = 0.0;
      for (std::size_t i = 0; i < b; ++i)
        acc += (h.at({i, p}) - mean[p]) * (h.at({i, q}) - mean[q]);
      acc /= b;
      CHECK(c.value().at({p, q}) == doctest::Approx(acc).epsilon(1e-13));
      CHECK(std::abs(c.value().at({p, q}) - c.value().at({q, p})) < 1e-14);
    }
  for (std::size_t p = 0; p < d; ++p) CHECK(c.value().at({p, p}) >= 0.0);
}

TEST_CASE("frobenius norm and its gradient") {
  Graph g;
  Var m = g.leaf(Tensor({2, 2}, {3, 0, 4, 0}));
  Var n = frobenius_norm(m);
  CHECK(n.value()[0] == doctest::Approx(5.0));

  auto f = [](Graph& gg, const std::vector<Var>& in) {
    return frobenius_norm(in[0]);
  };
  CHECK(grad_check(f, {random_tensor({3, 3}, 81)}).max_rel_err < 1e-4);
}

TEST_CASE("covariance + cosine gradients pass central differences") {
  Rng seeds(660);
  auto f = [](Graph& g, const std::vector<Var>& in) {
    Var c = covariance(in[0]);
    return add(frobenius_norm(c), cosine_similarity(in[1], in[2]));
  };
  std::vector<Tensor> inputs{random_tensor({4, 3}, seeds.next_u64()),
                             random_tensor({5}, seeds.next_u64(), 0.5, 1.5),
                             random_tensor({5}, seeds.next_u64(), 0.5, 1.5)};
  CHECK(grad_check(f, inputs).max_rel_err < 1e-4);
}

TEST_CASE("lstm_cell with all-zero parameters and states yields zeros") {
  Graph g;
  const std::size_t h = 3, in = 2;
  LstmWeights w{g.leaf(Tensor({4 * h, in})), g.leaf(Tensor({4 * h})),
                g.leaf(Tensor({4 * h, h})), g.leaf(Tensor({4 * h}))};
  auto [hn, cn] = lstm_cell(g.leaf(Tensor({in})), g.leaf(Tensor({h})),
                            g.leaf(Tensor({h})), w);
  for (std::size_t i = 0; i < h; ++i) {
    CHECK(hn.value()[i] == 0.0);
    CHECK(cn.value()[i] == 0.0);
  }
}

TEST_CASE("saturated forget gate: c ~= c_prev + i*g") {
  Rng seeds(770);
  Graph g;
  const std::size_t h = 2, in = 2;
  Tensor w_ih = random_tensor({4 * h, in}, seeds.next_u64());
  Tensor w_hh = random_tensor({4 * h, h}, seeds.next_u64());
  Tensor b_ih({4 * h});
  for (std::size_t i = h; i < 2 * h; ++i) b_ih[i] = 100.0;  // forget-gate bias
  Tensor b_hh({4 * h});

  Tensor x = random_tensor({in}, seeds.next_u64());
  Tensor h0 = random_tensor({h}, seeds.next_u64());
  Tensor c0 = random_tensor({h}, seeds.next_u64());

  LstmWeights w{g.leaf(w_ih), g.leaf(b_ih), g.leaf(w_hh), g.leaf(b_hh)};
  Var xv = g.leaf(x);
  Var hv = g.leaf(h0);
  Var cv = g.leaf(c0);
  auto [hn, cn] = lstm_cell(xv, hv, cv, w);

  // expected: forget gate saturates to 1 so c = c_prev + i*g
  for (std::size_t j = 0; j < h; ++j) {
    double zi = 0.0, zg = 0.0;
    for (std::size_t i = 0; i < in; ++i) {
      zi += w_ih.at({j, i}) * x[i];
      zg += w_ih.at({2 * h + j, i}) * x[i];
    }
    for (std::size_t i = 0; i < h; ++i) {
      zi += w_hh.at({j, i}) * h0[i];
      zg += w_hh.at({2 * h + j, i}) * h0[i];
    }
    const double gate_i = 1.0 / (1.0 + std::exp(-zi));
    const double cand = std::tanh(zg);
    CHECK(cn.value()[j] == doctest::Approx(c0[j] + gate_i * cand).epsilon(1e-6));
  }
}

TEST_CASE("lstm_cell gradient vs finite differences on a 2-unit cell") {
  Rng seeds(880);
  const std::size_t h = 2, in = 2;
  auto f = [h, in](Graph& g, const std::vector<Var>& v) {
    LstmWeights w{v[3], v[4], v[5], v[6]};
    auto [hn, cn] = lstm_cell(v[0], v[1], v[2], w);
    return mean_all(mul(hn, add(hn, cn)));
  };
  std::vector<Tensor> inputs{
      random_tensor({in}, seeds.next_u64()), random_tensor({h}, seeds.next_u64()),
      random_tensor({h}, seeds.next_u64()),
      random_tensor({4 * h, in}, seeds.next_u64()),
      random_tensor({4 * h}, seeds.next_u64()),
      random_tensor({4 * h, h}, seeds.next_u64()),
      random_tensor({4 * h}, seeds.next_u64())};
  CHECK(grad_check(f, inputs).max_rel_err < 1e-4);
}
