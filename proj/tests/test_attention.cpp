#include <cmath>

#include "doctest.h"

#include "stprog/attention.hpp"
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

// Direct evaluation of softmax(Q K^T / sqrt(dk)) V by explicit loops,
// written independently of the library kernels.
Tensor attention_ref(const Tensor& q, const Tensor& k, const Tensor& v) {
  const std::size_t t = q.extent(0), dk = q.extent(1), dv = v.extent(1);
  const double alpha = 1.0 / std::sqrt((double)dk);
  Tensor out({t, dv});
  for (std::size_t r = 0; r < t; ++r) {
    std::vector<double> row(t);
    double mx = -1e300;
    for (std::size_t c = 0; c < t; ++c) {
      double s = 0.0;
      for (std::size_t i = 0; i < dk; ++i) s += q.at({r, i}) * k.at({c, i});
      row[c] = s * alpha;
      mx = std::max(mx, row[c]);
    }
    double z = 0.0;
    for (std::size_t c = 0; c < t; ++c) {
      row[c] = std::exp(row[c] - mx);
      z += row[c];
    }
    for (std::size_t c = 0; c < t; ++c) row[c] /= z;
    for (std::size_t c = 0; c < t; ++c)
      for (std::size_t i = 0; i < dv; ++i)
        out.at({r, i}) += row[c] * v.at({c, i});
  }
  return out;
}

}  // namespace

TEST_CASE("scaled_dot_attention matches the explicit-loop reference") {
  Rng seeds(606);
  for (int trial = 0; trial < 10; ++trial) {
    Tensor q = random_tensor({5, 3}, seeds.next_u64());
    Tensor k = random_tensor({5, 3}, seeds.next_u64());
    Tensor v = random_tensor({5, 4}, seeds.next_u64());
    Graph g;
    Var y = scaled_dot_attention(g.leaf(q), g.leaf(k), g.leaf(v));
    Tensor ref = attention_ref(q, k, v);
    for (std::size_t i = 0; i < ref.size(); ++i)
      CHECK(y.value()[i] == doctest::Approx(ref[i]).epsilon(1e-13));
  }
}

TEST_CASE("attention rows are a stochastic matrix (V = identity probe)") {
  Rng seeds(707);
  const std::size_t t = 6;
  Tensor q = random_tensor({t, 4}, seeds.next_u64(), -3.0, 3.0);
  Tensor k = random_tensor({t, 4}, seeds.next_u64(), -3.0, 3.0);
  Tensor eye({t, t});
  for (std::size_t i = 0; i < t; ++i) eye.at({i, i}) = 1.0;
  Graph g;
  Var a = scaled_dot_attention(g.leaf(q), g.leaf(k), g.leaf(eye));
  for (std::size_t r = 0; r < t; ++r) {
    double sum = 0.0;
    for (std::size_t c = 0; c < t; ++c) {
      CHECK(a.value().at({r, c}) >= 0.0);
      sum += a.value().at({r, c});
    }
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-13));
  }
}

TEST_CASE("singleton attention returns V") {
  Graph g;
  Tensor q = random_tensor({1, 3}, 1);
  Tensor k = random_tensor({1, 3}, 2);
  Tensor v = random_tensor({1, 5}, 3);
  Var y = scaled_dot_attention(g.leaf(q), g.leaf(k), g.leaf(v));
  for (std::size_t i = 0; i < 5; ++i) CHECK(y.value()[i] == v[i]);
}

TEST_CASE("temporal_site_attention matches a direct per-site evaluation") {
  Rng seeds(808);
  const std::size_t t = 3, c = 2, ew = 2, dk = 3;
  Tensor f = random_tensor({t, c, 2, 2, 2}, seeds.next_u64());
  Tensor e = random_tensor({t, ew}, seeds.next_u64());
  Tensor wq = random_tensor({dk, c + ew}, seeds.next_u64());
  Tensor wk = random_tensor({dk, c + ew}, seeds.next_u64());
  Tensor wv = random_tensor({c, c + ew}, seeds.next_u64());

  Graph g;
  Var out = temporal_site_attention(g.leaf(f), g.leaf(e), g.leaf(wq),
                                    g.leaf(wk), g.leaf(wv));
  REQUIRE(out.value().same_shape(f));

  const std::size_t sites = 8;
  for (std::size_t s = 0; s < sites; ++s) {
    // Tokens: X_t = [f[t,:,site]; e[t,:]]
    Tensor x({t, c + ew});
    for (std::size_t tt = 0; tt < t; ++tt) {
      for (std::size_t cc = 0; cc < c; ++cc)
        x.at({tt, cc}) = f[(tt * c + cc) * sites + s];
      for (std::size_t j = 0; j < ew; ++j) x.at({tt, c + j}) = e.at({tt, j});
    }
    auto project = [&](const Tensor& w) {
      Tensor r({t, w.extent(0)});
      for (std::size_t tt = 0; tt < t; ++tt)
        for (std::size_t o = 0; o < w.extent(0); ++o) {
          double acc = 0.0;
          for (std::size_t i = 0; i < c + ew; ++i)
            acc += w.at({o, i}) * x.at({tt, i});
          r.at({tt, o}) = acc;
        }
      return r;
    };
    Tensor ref = attention_ref(project(wq), project(wk), project(wv));
    for (std::size_t tt = 0; tt < t; ++tt)
      for (std::size_t cc = 0; cc < c; ++cc)
        CHECK(out.value()[(tt * c + cc) * sites + s] ==
              doctest::Approx(ref.at({tt, cc})).epsilon(1e-13));
  }
}

TEST_CASE("zeroed query projection gives uniform weights (mean over V)") {
  Rng seeds(909);
  const std::size_t t = 4, c = 3, ew = 2;
  Tensor f = random_tensor({t, c, 1, 2, 1}, seeds.next_u64());
  Tensor e = random_tensor({t, ew}, seeds.next_u64());
  Tensor wq({2, c + ew});  // zero -> all scores equal -> softmax uniform
  Tensor wk = random_tensor({2, c + ew}, seeds.next_u64());
  Tensor wv = random_tensor({c, c + ew}, seeds.next_u64());
  Graph g;
  Var fv = g.leaf(f);
  Var out = temporal_site_attention(fv, g.leaf(e), g.leaf(wq), g.leaf(wk),
                                    g.leaf(wv));
  // every timestep output equals the mean over timesteps
  const std::size_t sites = 2;
  for (std::size_t s = 0; s < sites; ++s)
    for (std::size_t cc = 0; cc < c; ++cc) {
      const double first = out.value()[(0 * c + cc) * sites + s];
      double mean_check = 0.0;
      for (std::size_t tt = 0; tt < t; ++tt)
        mean_check += out.value()[(tt * c + cc) * sites + s];
      mean_check /= (double)t;
      CHECK(first == doctest::Approx(mean_check).epsilon(1e-13));
      for (std::size_t tt = 1; tt < t; ++tt)
        CHECK(out.value()[(tt * c + cc) * sites + s] ==
              doctest::Approx(first).epsilon(1e-13));
    }
}

TEST_CASE("T=1 temporal attention reduces to the value projection") {
  Rng seeds(111);
  const std::size_t c = 2, ew = 1;
  Tensor f = random_tensor({1, c, 1, 1, 2}, seeds.next_u64());
  Tensor e = random_tensor({1, ew}, seeds.next_u64());
  Tensor wq = random_tensor({2, c + ew}, seeds.next_u64());
  Tensor wk = random_tensor({2, c + ew}, seeds.next_u64());
  Tensor wv = random_tensor({c, c + ew}, seeds.next_u64());
  Graph g;
  Var out = temporal_site_attention(g.leaf(f), g.leaf(e), g.leaf(wq),
                                    g.leaf(wk), g.leaf(wv));
  for (std::size_t s = 0; s < 2; ++s)
    for (std::size_t cc = 0; cc < c; ++cc) {
      double vproj = 0.0;
      for (std::size_t i = 0; i < c; ++i)
        vproj += wv.at({cc, i}) * f[(0 * c + i) * 2 + s];
      for (std::size_t j = 0; j < ew; ++j)
        vproj += wv.at({cc, c + j}) * e.at({0, j});
      CHECK(out.value()[(0 * c + cc) * 2 + s] ==
            doctest::Approx(vproj).epsilon(1e-13));
    }
}

TEST_CASE("temporal attention is permutation-equivariant over timesteps") {
  Rng seeds(222);
  const std::size_t t = 4, c = 2, ew = 2;
  Tensor f = random_tensor({t, c, 1, 1, 2}, seeds.next_u64());
  Tensor e = random_tensor({t, ew}, seeds.next_u64());
  Tensor wq = random_tensor({3, c + ew}, seeds.next_u64());
  Tensor wk = random_tensor({3, c + ew}, seeds.next_u64());
  Tensor wv = random_tensor({c, c + ew}, seeds.next_u64());

  const std::size_t perm[t] = {2, 0, 3, 1};
  Tensor fp(f.shape()), ep(e.shape());
  const std::size_t sites = 2;
  for (std::size_t tt = 0; tt < t; ++tt) {
    for (std::size_t cc = 0; cc < c; ++cc)
      for (std::size_t s = 0; s < sites; ++s)
        fp[(tt * c + cc) * sites + s] = f[(perm[tt] * c + cc) * sites + s];
    for (std::size_t j = 0; j < ew; ++j) ep.at({tt, j}) = e.at({perm[tt], j});
  }

  Graph g;
  Var o1 = temporal_site_attention(g.leaf(f), g.leaf(e), g.leaf(wq), g.leaf(wk),
                                   g.leaf(wv));
  Var o2 = temporal_site_attention(g.leaf(fp), g.leaf(ep), g.leaf(wq),
                                   g.leaf(wk), g.leaf(wv));
  for (std::size_t tt = 0; tt < t; ++tt)
    for (std::size_t cc = 0; cc < c; ++cc)
      for (std::size_t s = 0; s < sites; ++s)
        CHECK(o2.value()[(tt * c + cc) * sites + s] ==
              doctest::Approx(o1.value()[(perm[tt] * c + cc) * sites + s])
                  .epsilon(1e-13));
}

TEST_CASE("attention gradients pass central differences") {
  Rng seeds(333);
  SUBCASE("scaled_dot_attention") {
    auto fn = [](Graph& g, const std::vector<Var>& in) {
      return mean_all(
          mul(scaled_dot_attention(in[0], in[1], in[2]), in[2]));
    };
    std::vector<Tensor> inputs{random_tensor({3, 2}, seeds.next_u64()),
                               random_tensor({3, 2}, seeds.next_u64()),
                               random_tensor({3, 2}, seeds.next_u64())};
    CHECK(grad_check(fn, inputs).max_rel_err < 1e-4);
  }
  SUBCASE("temporal_site_attention") {
    auto fn = [](Graph& g, const std::vector<Var>& in) {
      Var y = temporal_site_attention(in[0], in[1], in[2], in[3], in[4]);
      return mean_all(mul(y, y));
    };
    std::vector<Tensor> inputs{random_tensor({3, 2, 1, 2, 1}, seeds.next_u64()),
                               random_tensor({3, 2}, seeds.next_u64()),
                               random_tensor({2, 4}, seeds.next_u64()),
                               random_tensor({2, 4}, seeds.next_u64()),
                               random_tensor({2, 4}, seeds.next_u64())};
    CHECK(grad_check(fn, inputs).max_rel_err < 1e-4);
  }
}
