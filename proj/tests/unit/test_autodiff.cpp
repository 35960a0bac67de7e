#include <doctest.h>

#include <cmath>
#include <string>

#include "diffedit/autodiff.hpp"
#include "diffedit/error.hpp"
#include "support.hpp"

using namespace diffedit;

namespace {

Tensor naive_matmul(const Tensor& a, const Tensor& b) {
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor out({m, n});
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += a[i * k + p] * b[p * n + j];
      out[i * n + j] = s;
    }
  }
  return out;
}

}  // namespace

TEST_SUITE("autodiff") {
  TEST_CASE("record: sum of squares") {
    Tape tape;
    Var x = tape.leaf(Tensor::vector({1, 2, 3}));
    Var y = sum(mul(x, x));
    CHECK(y.value().item() == 14.0);
    CHECK(tape.node_count() == 2);
    const Gradients g = tape.backward(y);
    CHECK(g[x] == Tensor::vector({2, 4, 6}));
  }

  TEST_CASE("record: l1 of a zero difference") {
    Tape tape;
    const Tensor v = Tensor::vector({0.5, -1, 2});
    Var y = l1_norm(sub(tape.leaf(v), tape.constant(v)));
    CHECK(y.value().item() == 0.0);
  }

  TEST_CASE("record: matmul against a naive loop") {
    const Tensor a = test::random_tensor({2, 3}, 1);
    const Tensor x = test::random_tensor({3, 1}, 2);
    Tape tape;
    Var y = matmul(tape.leaf(a), tape.leaf(x));
    CHECK(y.shape() == Shape{2, 1});
    CHECK(y.value() == naive_matmul(a, x));
  }

  TEST_CASE("gradients have the shape of their values") {
    Tape tape;
    Var a = tape.leaf(test::random_tensor({2, 3}, 3));
    Var b = tape.leaf(test::random_tensor({3, 4}, 4));
    Var c = tape.leaf(test::random_tensor({1, 4}, 5));
    Var unused = tape.leaf(test::random_tensor({7}, 6));
    Var out = sum(tanh(add(matmul(a, b), broadcast(c, {2, 4}))));
    const Shape sa = a.shape(), sb = b.shape(), sc = c.shape();
    const Gradients g = tape.backward(out);
    CHECK(g[a].shape() == sa);
    CHECK(g[b].shape() == sb);
    CHECK(g[c].shape() == sc);
    CHECK(g[unused] == Tensor({7}));
    CHECK(g.leaf_count() == 4);
    CHECK_THROWS_AS(g[out], ConfigError);
  }

  TEST_CASE("per-primitive gradients agree with central differences") {
    const Tensor p = test::random_tensor({2, 3}, 11, 0.2, 1.2);
    const Tensor w = test::random_tensor({3, 2}, 12);
    const Tensor q = test::random_tensor({2, 3}, 13, 0.5, 1.5);
    struct Case {
      const char* name;
      RecordedFn fn;
    };
    const Case cases[] = {
        {"add", [&](Tape& t, Var x) { return sum(mul(add(x, t.constant(q)), x)); }},
        {"sub", [&](Tape& t, Var x) { return sum(mul(sub(t.constant(q), x), x)); }},
        {"mul", [&](Tape& t, Var x) { return sum(mul(x, t.constant(q))); }},
        {"div", [&](Tape& t, Var x) { return sum(div(t.constant(q), x)); }},
        {"scale", [](Tape&, Var x) { return sum(mul(scale(x, -2.5), x)); }},
        {"matmul", [&](Tape& t, Var x) { return sum(tanh(matmul(x, t.constant(w)))); }},
        {"tanh", [](Tape&, Var x) { return sum(tanh(x)); }},
        {"mean", [](Tape&, Var x) { return mean(mul(x, x)); }},
        {"l1", [&](Tape& t, Var x) { return l1_norm(sub(x, t.constant(q))); }},
        {"l2", [](Tape&, Var x) { return l2_norm(x); }},
        {"dot", [&](Tape& t, Var x) { return dot(x, mul(x, t.constant(q))); }},
        {"concat", [&](Tape& t, Var x) { return sum(tanh(concat(x, t.constant(q)))); }},
        {"broadcast",
         [](Tape& t, Var x) {
           Var r = matmul(t.constant(Tensor({1, 2}, std::vector<double>{0.5, -1.5})), x);
           Var b = broadcast(r, {4, 3});
           return sum(mul(b, b));
         }},
        {"scalar-broadcast", [](Tape& t, Var x) {
           return sum(mul(x, mul(t.constant(Tensor::scalar(3.0)), x)));
         }},
    };
    for (const Case& c : cases) {
      CAPTURE(std::string(c.name));
      CHECK(grad_check(c.fn, p, 1e-6) < 1e-6);
    }
  }

  TEST_CASE("explicit seed gives a vector-Jacobian product") {
    Tape tape;
    Var x = tape.leaf(Tensor::vector({1, 2}));
    Var y = scale(x, 3.0);
    const Gradients g = tape.backward(y, Tensor::vector({1, -1}));
    CHECK(g[x] == Tensor::vector({3, -3}));
  }

  TEST_CASE("l1 subgradient at zero is zero") {
    Tape tape;
    Var x = tape.leaf(Tensor::vector({0, 2, -3}));
    const Gradients g = tape.backward(l1_norm(x));
    CHECK(g[x] == Tensor::vector({0, 1, -1}));
  }

  TEST_CASE("shape errors name the primitive and both shapes") {
    Tape tape;
    Var a = tape.leaf(Tensor({2, 3}));
    Var b = tape.leaf(Tensor({3, 2}));
    try {
      add(a, b);
      FAIL("expected ShapeError");
    } catch (const ShapeError& e) {
      const std::string msg = e.what();
      CHECK(msg.find("add") != std::string::npos);
      CHECK(msg.find("[2,3]") != std::string::npos);
      CHECK(msg.find("[3,2]") != std::string::npos);
    }
    CHECK_THROWS_AS(matmul(a, a), ShapeError);
    CHECK_THROWS_AS(dot(a, b), ShapeError);
    CHECK_THROWS_AS(concat(a, tape.leaf(Tensor({3, 3}))), ShapeError);
    CHECK_THROWS_AS(broadcast(a, {4, 4}), ShapeError);
  }

  TEST_CASE("non-finite results raise numeric overflow") {
    Tape tape;
    Var big = tape.leaf(Tensor::vector({1e300}));
    CHECK_THROWS_AS(mul(big, big), NumericError);
    Var zero = tape.constant(Tensor::vector({0.0}));
    CHECK_THROWS_AS(div(tape.constant(Tensor::vector({1.0})), zero), NumericError);
  }

  TEST_CASE("retained count grows during recording and resets on clear") {
    Tape tape;
    Var x = tape.leaf(test::random_tensor({4, 4}, 21));
    std::size_t last = tape.retained_count();
    CHECK(last == 0);
    Var h = x;
    for (int i = 0; i < 5; ++i) {
      h = tanh(matmul(h, x));
      CHECK(tape.retained_count() >= last);
      last = tape.retained_count();
    }
    CHECK(last > 0);
    tape.clear();
    CHECK(tape.retained_count() == 0);
  }

  TEST_CASE("constant-only expressions retain nothing") {
    Tape tape;
    Var c = tape.constant(test::random_tensor({3, 3}, 22));
    Var y = sum(tanh(matmul(c, c)));
    CHECK(tape.retained_count() == 0);
    CHECK_FALSE(y.requires_grad());
  }

  TEST_CASE("tapes are single use") {
    Tape tape;
    Var x = tape.leaf(Tensor::vector({1, 2}));
    Var y = sum(x);
    tape.backward(y);
    CHECK(tape.stale());
    CHECK_THROWS_AS(tape.backward(y), StaleTapeError);
    CHECK_THROWS_AS(tape.leaf(Tensor::vector({1})), StaleTapeError);
  }

  TEST_CASE("backward requires a one-element output without a seed") {
    Tape tape;
    Var x = tape.leaf(Tensor::vector({1, 2}));
    CHECK_THROWS_AS(tape.backward(scale(x, 2.0)), ShapeError);
  }
}
