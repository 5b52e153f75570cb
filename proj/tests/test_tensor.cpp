#include "doctest.h"

#include "stprog/errors.hpp"
#include "stprog/ops.hpp"
#include "stprog/tensor.hpp"

using namespace stprog;

TEST_CASE("tensor shape and buffer invariants") {
  Tensor t({2, 3});
  CHECK(t.size() == 6);
  CHECK(t.rank() == 2);
  CHECK(t[0] == 0.0);

  CHECK_THROWS_AS(Tensor({2, 0}), ShapeError);
  CHECK_THROWS_AS(Tensor({2, 2}, {1.0, 2.0, 3.0}), ShapeError);

  Tensor s = Tensor::scalar(4.5);
  CHECK(s.rank() == 0);
  CHECK(s.size() == 1);
  CHECK(s[0] == 4.5);
}

TEST_CASE("multi-index access") {
  Tensor t({2, 3}, {1, 2, 3, 4, 5, 6});
  CHECK(t.at({0, 0}) == 1);
  CHECK(t.at({1, 2}) == 6);
  t.at({1, 0}) = 9;
  CHECK(t[3] == 9);
  CHECK_THROWS_AS(t.at({2, 0}), ShapeError);
  CHECK_THROWS_AS(t.at({0}), ShapeError);
}

TEST_CASE("shape mismatch errors name the operation and shapes") {
  Graph g;
  Var a = g.leaf(Tensor({2, 2}));
  Var b = g.leaf(Tensor({3}));
  try {
    add(a, b);
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    std::string msg = e.what();
    CHECK(msg.find("add") != std::string::npos);
    CHECK(msg.find("[2x2]") != std::string::npos);
    CHECK(msg.find("[3]") != std::string::npos);
  }
}

TEST_CASE("softmax of a constant row is uniform") {
  Graph g;
  Var x = g.leaf(Tensor({3}, {0.0, 0.0, 0.0}));
  Var y = softmax(x, 0);
  for (std::size_t i = 0; i < 3; ++i)
    CHECK(y.value()[i] == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
}

TEST_CASE("softmax rows sum to 1 within 1e-12 for random finite input") {
  Graph g;
  Tensor x({4, 7});
  std::uint64_t s = 12345;
  for (std::size_t i = 0; i < x.size(); ++i) {
    s = s * 6364136223846793005ULL + 1442695040888963407ULL;
    x[i] = static_cast<double>(static_cast<std::int64_t>(s >> 20)) * 1e-10;
  }
  Var y = softmax(g.leaf(x), 1);
  for (std::size_t r = 0; r < 4; ++r) {
    double sum = 0.0;
    for (std::size_t c = 0; c < 7; ++c) sum += y.value()[r * 7 + c];
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-13));
    for (std::size_t c = 0; c < 7; ++c) CHECK(y.value()[r * 7 + c] >= 0.0);
  }
}

TEST_CASE("sigmoid(0) is one half") {
  Graph g;
  Var y = sigmoid(g.leaf(Tensor::scalar(0.0)));
  CHECK(y.value()[0] == 0.5);
}

TEST_CASE("matmul identity") {
  Graph g;
  Tensor eye({3, 3});
  for (int i = 0; i < 3; ++i) eye[i * 3 + i] = 1.0;
  Tensor a({3, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9});
  Var y = matmul(g.leaf(eye), g.leaf(a));
  for (std::size_t i = 0; i < 9; ++i) CHECK(y.value()[i] == a[i]);
}

TEST_CASE("matmul inner dimension mismatch") {
  Graph g;
  Var a = g.leaf(Tensor({2, 3}));
  Var b = g.leaf(Tensor({2, 3}));
  CHECK_THROWS_AS(matmul(a, b), ShapeError);
}

TEST_CASE("concat along an axis and gradient routing") {
  Graph g;
  Var a = g.leaf(Tensor({2, 2}, {1, 2, 3, 4}));
  Var b = g.leaf(Tensor({2, 1}, {5, 6}));
  Var c = concat({a, b}, 1);
  CHECK(c.value().shape() == std::vector<std::size_t>{2, 3});
  CHECK(c.value()[2] == 5);
  CHECK(c.value()[5] == 6);

  Var loss = sum_all(mul(c, c));
  g.backward(loss);
  Tensor da = g.grad(a);
  Tensor db = g.grad(b);
  CHECK(da[3] == doctest::Approx(8.0));  // d/dx x^2 = 2x
  CHECK(db[1] == doctest::Approx(12.0));
}

TEST_CASE("gelu exact values") {
  // gelu(0) = 0; gelu is x*Phi(x) with the Gaussian CDF.
  Graph g;
  Var y = gelu(g.leaf(Tensor({3}, {0.0, 1.0, -1.0})));
  CHECK(y.value()[0] == 0.0);
  CHECK(y.value()[1] == doctest::Approx(0.8413447460685429).epsilon(1e-14));
  CHECK(y.value()[2] == doctest::Approx(-0.15865525393145707).epsilon(1e-12));
}
