#include <cmath>

#include "doctest.h"

#include "stprog/conv.hpp"
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

// Independent reference: direct nested-loop correlation with zero padding.
Tensor conv3d_ref(const Tensor& x, const Tensor& w, const Tensor& b, int s,
                  int p) {
  const std::size_t ci = x.extent(0), d = x.extent(1), h = x.extent(2),
                    wd = x.extent(3);
  const std::size_t co = w.extent(0);
  auto oext = [&](std::size_t in) {
    return static_cast<std::size_t>((static_cast<long long>(in) + 2 * p - 3) / s + 1);
  };
  const std::size_t od = oext(d), oh = oext(h), ow = oext(wd);
  Tensor y({co, od, oh, ow});
  for (std::size_t c = 0; c < co; ++c)
    for (std::size_t zo = 0; zo < od; ++zo)
      for (std::size_t yo = 0; yo < oh; ++yo)
        for (std::size_t xo = 0; xo < ow; ++xo) {
          double acc = b[c];
          for (std::size_t cc = 0; cc < ci; ++cc)
            for (int kz = 0; kz < 3; ++kz)
              for (int ky = 0; ky < 3; ++ky)
                for (int kx = 0; kx < 3; ++kx) {
                  const long long z = (long long)zo * s - p + kz;
                  const long long yy = (long long)yo * s - p + ky;
                  const long long xx = (long long)xo * s - p + kx;
                  if (z < 0 || z >= (long long)d || yy < 0 ||
                      yy >= (long long)h || xx < 0 || xx >= (long long)wd)
                    continue;
                  acc += x.at({cc, (std::size_t)z, (std::size_t)yy,
                               (std::size_t)xx}) *
                         w.at({c, cc, (std::size_t)kz, (std::size_t)ky,
                               (std::size_t)kx});
                }
          y.at({c, zo, yo, xo}) = acc;
        }
  return y;
}

// Independent reference for the transposed convolution via output scatter.
Tensor convt_ref(const Tensor& x, const Tensor& w, int s, int p) {
  const std::size_t ci = x.extent(0), di = x.extent(1), hi = x.extent(2),
                    wi = x.extent(3);
  const std::size_t co = w.extent(1), k = w.extent(2);
  auto oext = [&](std::size_t in) {
    return static_cast<std::size_t>((static_cast<long long>(in) - 1) * s - 2 * p +
                                    (long long)k);
  };
  Tensor y({co, oext(di), oext(hi), oext(wi)});
  const std::size_t od = y.extent(1), oh = y.extent(2), ow = y.extent(3);
  for (std::size_t cc = 0; cc < ci; ++cc)
    for (std::size_t zi = 0; zi < di; ++zi)
      for (std::size_t yi = 0; yi < hi; ++yi)
        for (std::size_t xi = 0; xi < wi; ++xi) {
          const double xv = x.at({cc, zi, yi, xi});
          for (std::size_t c = 0; c < co; ++c)
            for (std::size_t kz = 0; kz < k; ++kz)
              for (std::size_t ky = 0; ky < k; ++ky)
                for (std::size_t kx = 0; kx < k; ++kx) {
                  const long long z = (long long)zi * s - p + (long long)kz;
                  const long long yy = (long long)yi * s - p + (long long)ky;
                  const long long xx = (long long)xi * s - p + (long long)kx;
                  if (z < 0 || z >= (long long)od || yy < 0 ||
                      yy >= (long long)oh || xx < 0 || xx >= (long long)ow)
                    continue;
                  y.at({c, (std::size_t)z, (std::size_t)yy, (std::size_t)xx}) +=
                      xv * w.at({cc, c, kz, ky, kx});
                }
        }
  return y;
}

double dot_all(const Tensor& a, const Tensor& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

}  // namespace

TEST_CASE("conv3d sums 27 ones to a scalar 27") {
  Graph g;
  Var x = g.leaf(Tensor::full({1, 3, 3, 3}, 1.0));
  Var w = g.leaf(Tensor::full({1, 1, 3, 3, 3}, 1.0));
  Var b = g.leaf(Tensor({1}));
  Var y = conv3d(x, w, b, 1, 0);
  CHECK(y.value().size() == 1);
  CHECK(y.value()[0] == doctest::Approx(27.0));
}

TEST_CASE("conv3d delta kernel with padding 1 is the identity") {
  Graph g;
  Tensor x = random_tensor({2, 3, 4, 5}, 32);
  Tensor w({2, 2, 3, 3, 3});
  w.at({0, 0, 1, 1, 1}) = 1.0;
  w.at({1, 1, 1, 1, 1}) = 1.0;
  Var y = conv3d(g.leaf(x), g.leaf(w), g.leaf(Tensor({2})), 1, 1);
  REQUIRE(y.value().same_shape(x));
  for (std::size_t i = 0; i < x.size(); ++i)
    CHECK(y.value()[i] == doctest::Approx(x[i]).epsilon(1e-15));
}

TEST_CASE("conv3d matches the nested-loop reference on random inputs") {
  Rng seeds(1001);
  for (int trial = 0; trial < 20; ++trial) {
    const int s = 1 + (trial % 2);
    const int p = trial % 3;
    Tensor x = random_tensor({2, 4, 4, 4}, seeds.next_u64());
    Tensor w = random_tensor({3, 2, 3, 3, 3}, seeds.next_u64());
    Tensor b = random_tensor({3}, seeds.next_u64());
    if ((4 + 2 * p - 3) / s + 1 <= 0) continue;
    Graph g;
    Var y = conv3d(g.leaf(x), g.leaf(w), g.leaf(b), s, p);
    Tensor ref = conv3d_ref(x, w, b, s, p);
    REQUIRE(y.value().same_shape(ref));
    for (std::size_t i = 0; i < ref.size(); ++i)
      CHECK(y.value()[i] == doctest::Approx(ref[i]).epsilon(1e-13));
  }
}

TEST_CASE("conv3d shape errors") {
  Graph g;
  Var x = g.leaf(Tensor({2, 4, 4, 4}));
  Var w = g.leaf(Tensor({3, 5, 3, 3, 3}));  // wrong input channels
  Var b = g.leaf(Tensor({3}));
  CHECK_THROWS_AS(conv3d(x, w, b, 1, 0), ShapeError);

  Var w2 = g.leaf(Tensor({3, 2, 3, 3, 3}));
  Var x2 = g.leaf(Tensor({2, 2, 4, 4}));  // depth 2 -> output extent 0
  CHECK_THROWS_AS(conv3d(x2, w2, g.leaf(Tensor({3})), 1, 0), ShapeError);
}

TEST_CASE("conv_transpose3d 1x1x1 identity and single-voxel expansion") {
  Graph g;
  Tensor x = random_tensor({1, 2, 2, 2}, 9);
  Tensor w1({1, 1, 1, 1, 1}, {1.0});
  Var y = conv_transpose3d(g.leaf(x), g.leaf(w1), 1, 0);
  REQUIRE(y.value().same_shape(x));
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(y.value()[i] == x[i]);

  // stride 2 on a single voxel with a 2x2x2 kernel reproduces the kernel
  Tensor xv({1, 1, 1, 1}, {1.0});
  Tensor w2 = random_tensor({1, 1, 2, 2, 2}, 10);
  Var y2 = conv_transpose3d(g.leaf(xv), g.leaf(w2), 2, 0);
  REQUIRE(y2.value().shape() == std::vector<std::size_t>{1, 2, 2, 2});
  for (std::size_t i = 0; i < 8; ++i)
    CHECK(y2.value()[i] == doctest::Approx(w2[i]).epsilon(1e-15));
}

TEST_CASE("conv_transpose3d matches the scatter reference") {
  Rng seeds(2002);
  for (int trial = 0; trial < 12; ++trial) {
    const int s = 1 + (trial % 3);
    const int p = trial % 2;
    const std::size_t k = 2 + (trial % 3);
    Tensor x = random_tensor({2, 3, 3, 3}, seeds.next_u64());
    Tensor w = random_tensor({2, 2, k, k, k}, seeds.next_u64());
    if ((3 - 1) * s - 2 * p + (int)k < 1) continue;
    Graph g;
    Var y = conv_transpose3d(g.leaf(x), g.leaf(w), s, p);
    Tensor ref = convt_ref(x, w, s, p);
    REQUIRE(y.value().same_shape(ref));
    for (std::size_t i = 0; i < ref.size(); ++i)
      CHECK(y.value()[i] == doctest::Approx(ref[i]).epsilon(1e-13));
  }
}

TEST_CASE("adjoint identity <conv(x),y> == <x, convT(y)>") {
  // Extents are sampled so the conv arithmetic inverts exactly:
  // D = (Do-1)*s - 2p + 3 makes convT(y) congruent with x.
  Rng seeds(3003);
  for (int trial = 0; trial < 12; ++trial) {
    const int s = 1 + (trial % 2);
    const int p = (trial / 2) % 2;
    auto in_extent = [&](std::size_t out) {
      return static_cast<std::size_t>((long long)(out - 1) * s - 2 * p + 3);
    };
    const std::size_t d = in_extent(2 + trial % 2), h = in_extent(2),
                      wdt = in_extent(3);
    Tensor x = random_tensor({2, d, h, wdt}, seeds.next_u64());
    Tensor w = random_tensor({3, 2, 3, 3, 3}, seeds.next_u64());
    Graph g;
    Var cx = conv3d(g.leaf(x), g.leaf(w), g.leaf(Tensor({3})), s, p);
    Tensor y = random_tensor(cx.value().shape(), seeds.next_u64());
    Var cty = conv_transpose3d(g.leaf(y), g.leaf(w), s, p);
    REQUIRE(cty.value().same_shape(x));
    const double lhs = dot_all(cx.value(), y);
    const double rhs = dot_all(x, cty.value());
    CHECK(lhs == doctest::Approx(rhs).epsilon(1e-11));
  }
}

TEST_CASE("conv_transpose3d negative extent error") {
  Graph g;
  Var x = g.leaf(Tensor({1, 1, 1, 1}));
  Var w = g.leaf(Tensor({1, 1, 2, 2, 2}));
  CHECK_THROWS_AS(conv_transpose3d(x, w, 1, 3), ShapeError);
}

TEST_CASE("temporal_conv identity kernel and boundary behaviour") {
  Graph g;
  Tensor x = random_tensor({4, 2, 2, 2, 2}, 44);

  Tensor wid({2, 2, 3});
  wid.at({0, 0, 1}) = 1.0;  // kernel [0,1,0] on the matching channel
  wid.at({1, 1, 1}) = 1.0;
  Var y = temporal_conv(g.leaf(x), g.leaf(wid), g.leaf(Tensor({2})));
  REQUIRE(y.value().same_shape(x));
  for (std::size_t i = 0; i < x.size(); ++i)
    CHECK(y.value()[i] == doctest::Approx(x[i]).epsilon(1e-15));

  // constant-in-time input with single-channel kernel [1,1,1]:
  // interior timesteps tripled, boundary timesteps doubled.
  Tensor xc({4, 1, 1, 1, 1}, {2.0, 2.0, 2.0, 2.0});
  Tensor ws = Tensor::full({1, 1, 3}, 1.0);
  Var y2 = temporal_conv(g.leaf(xc), g.leaf(ws), g.leaf(Tensor({1})));
  CHECK(y2.value()[0] == doctest::Approx(4.0));
  CHECK(y2.value()[1] == doctest::Approx(6.0));
  CHECK(y2.value()[2] == doctest::Approx(6.0));
  CHECK(y2.value()[3] == doctest::Approx(4.0));
}

TEST_CASE("temporal_conv matches a direct loop over (t,c,d,h,w)") {
  Rng seeds(4004);
  Tensor x = random_tensor({5, 3, 2, 3, 2}, seeds.next_u64());
  Tensor w = random_tensor({2, 3, 3}, seeds.next_u64());
  Tensor b = random_tensor({2}, seeds.next_u64());
  Graph g;
  Var y = temporal_conv(g.leaf(x), g.leaf(w), g.leaf(b));

  const std::size_t t = 5, ci = 3, co = 2, dd = 2, hh = 3, ww = 2;
  for (std::size_t tt = 0; tt < t; ++tt)
    for (std::size_t c = 0; c < co; ++c)
      for (std::size_t z = 0; z < dd; ++z)
        for (std::size_t yy = 0; yy < hh; ++yy)
          for (std::size_t xx = 0; xx < ww; ++xx) {
            double acc = b[c];
            for (std::size_t cc = 0; cc < ci; ++cc)
              for (int k = 0; k < 3; ++k) {
                const long long ts = (long long)tt - 1 + k;
                if (ts < 0 || ts >= (long long)t) continue;
                acc += x.at({(std::size_t)ts, cc, z, yy, xx}) *
                       w.at({c, cc, (std::size_t)k});
              }
            CHECK(y.value().at({tt, c, z, yy, xx}) ==
                  doctest::Approx(acc).epsilon(1e-13));
          }
}

TEST_CASE("temporal_conv rejects kernels that are not length 3") {
  Graph g;
  Var x = g.leaf(Tensor({3, 1, 1, 1, 1}));
  Var w = g.leaf(Tensor({1, 1, 5}));
  CHECK_THROWS_AS(temporal_conv(x, w, g.leaf(Tensor({1}))), ShapeError);
}

TEST_CASE("conv gradients pass central differences") {
  Rng seeds(5005);
  SUBCASE("conv3d") {
    auto f = [](Graph& g, const std::vector<Var>& in) {
      Var y = conv3d(in[0], in[1], in[2], 2, 1);
      return mean_all(mul(y, y));
    };
    std::vector<Tensor> inputs{random_tensor({2, 4, 4, 4}, seeds.next_u64()),
                               random_tensor({2, 2, 3, 3, 3}, seeds.next_u64()),
                               random_tensor({2}, seeds.next_u64())};
    CHECK(grad_check(f, inputs).max_rel_err < 1e-4);
  }
  SUBCASE("conv_transpose3d") {
    auto f = [](Graph& g, const std::vector<Var>& in) {
      Var y = conv_transpose3d(in[0], in[1], in[2], 2, 0);
      return mean_all(mul(y, y));
    };
    std::vector<Tensor> inputs{random_tensor({2, 2, 2, 2}, seeds.next_u64()),
                               random_tensor({2, 2, 2, 2, 2}, seeds.next_u64()),
                               random_tensor({2}, seeds.next_u64())};
    CHECK(grad_check(f, inputs).max_rel_err < 1e-4);
  }
  SUBCASE("temporal_conv") {
    auto f = [](Graph& g, const std::vector<Var>& in) {
      Var y = temporal_conv(in[0], in[1], in[2]);
      return mean_all(mul(y, y));
    };
    std::vector<Tensor> inputs{random_tensor({3, 2, 2, 2, 2}, seeds.next_u64()),
                               random_tensor({2, 2, 3}, seeds.next_u64()),
                               random_tensor({2}, seeds.next_u64())};
    CHECK(grad_check(f, inputs).max_rel_err < 1e-4);
  }
}
