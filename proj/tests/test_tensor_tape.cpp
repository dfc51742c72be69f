#include <doctest.h>

#include <cmath>
#include <functional>
#include <random>

#include "ckgan/rng.hpp"
#include "ckgan/tape.hpp"

using namespace ckgan;

namespace {

// central finite difference of a scalar function of flat inputs
double central_diff(const std::function<double(const std::vector<Tensor>&)>& f,
                    std::vector<Tensor> inputs, std::size_t which, std::size_t flat, double h) {
  inputs[which][flat] += h;
  double up = f(inputs);
  inputs[which][flat] -= 2 * h;
  double dn = f(inputs);
  return (up - dn) / (2 * h);
}

using Builder = std::function<Val(Tape&, const std::vector<Val>&)>;

// compares reverse-mode gradients against central differences for every
// element of every input
void check_gradients(const Builder& build, std::vector<Tensor> inputs, double rel_tol = 1e-4,
                     double h = 1e-5, double abs_floor = 1e-7) {
  auto eval = [&](const std::vector<Tensor>& ins) {
    Tape t;
    std::vector<Val> vals;
    for (std::size_t i = 0; i < ins.size(); ++i)
      vals.push_back(t.input("v" + std::to_string(i), ins[i]));
    return t.value(build(t, vals)).item();
  };

  Tape t;
  std::vector<Val> vals;
  std::vector<std::string> names;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    names.push_back("v" + std::to_string(i));
    vals.push_back(t.input(names.back(), inputs[i]));
  }
  Val out = build(t, vals);
  GradMap gm = t.gradient(out, names);

  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const Tensor& g = gm.at(names[i]);
    for (std::size_t k = 0; k < g.size(); ++k) {
      double fd = central_diff(eval, inputs, i, k, h);
      double ad = g[k];
      double denom = std::max({std::fabs(fd), std::fabs(ad), abs_floor});
      INFO("input ", i, " element ", k, ": ad=", ad, " fd=", fd);
      CHECK(std::fabs(ad - fd) / denom < rel_tol);
    }
  }
}

Tensor random_tensor(Shape shape, Rng& rng, double lo = -2.0, double hi = 2.0) {
  Tensor t(std::move(shape));
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(lo, hi);
  return t;
}

// keeps kinky ops (relu, abs, sign) away from their non-differentiable points
Tensor random_tensor_away_from_zero(Shape shape, Rng& rng) {
  Tensor t = random_tensor(std::move(shape), rng);
  for (std::size_t i = 0; i < t.size(); ++i)
    if (std::fabs(t[i]) < 0.05) t[i] = t[i] < 0 ? t[i] - 0.1 : t[i] + 0.1;
  return t;
}

}  // namespace

TEST_CASE("tensor basics") {
  Tensor t({2, 3});
  CHECK(t.size() == 6);
  t(1, 2) = 5.0;
  CHECK(t[5] == 5.0);
  CHECK(Tensor::scalar(3.0).item() == 3.0);
  CHECK_THROWS_AS(Tensor({2}, {1.0, 2.0, 3.0}), std::invalid_argument);
  Tensor bad({2});
  bad[0] = std::nan("");
  CHECK_FALSE(bad.all_finite());
}

TEST_CASE("evaluate: square at 3 gives 9") {
  Tape t;
  Val x = t.input("x", Tensor::scalar(3.0));
  Val y = t.square(x);
  CHECK(t.value(y).item() == doctest::Approx(9.0));
}

TEST_CASE("evaluate: relu on [-1, 2]") {
  Tape t;
  Val x = t.input("x", Tensor({2}, {-1.0, 2.0}));
  Val y = t.relu(x);
  CHECK(t.value(y)[0] == 0.0);
  CHECK(t.value(y)[1] == 2.0);
}

TEST_CASE("evaluate: matmul matches triple-loop oracle") {
  Rng rng(42);
  Tensor a = random_tensor({2, 3}, rng), b = random_tensor({3, 1}, rng);
  Tape t;
  Val m = t.matmul(t.input("a", a), t.input("b", b));
  // independent triple-loop product
  Tensor want({2, 1});
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t j = 0; j < 1; ++j)
      for (std::size_t k = 0; k < 3; ++k) want(i, j) += a(i, k) * b(k, j);
  for (std::size_t i = 0; i < want.size(); ++i)
    CHECK(t.value(m)[i] == doctest::Approx(want[i]).epsilon(1e-12));
}

TEST_CASE("evaluate: shape mismatch error names the node") {
  Tape t;
  Val a = t.input("a", Tensor({2}));
  Val b = t.input("b", Tensor({3}));
  CHECK_THROWS_WITH_AS(t.add(a, b), doctest::Contains("shape mismatch"), TapeError);
}

TEST_CASE("evaluate: non-finite intermediate raises naming the node") {
  Tape t;
  Val x = t.input("x", Tensor::scalar(-1.0));
  CHECK_THROWS_WITH_AS(t.log_(x), doctest::Contains("non-finite"), TapeError);
}

TEST_CASE("gradient: d/dx x^2 = 6 at x=3") {
  Tape t;
  Val x = t.input("x", Tensor::scalar(3.0));
  GradMap g = t.gradient(t.square(x), {"x"});
  CHECK(g.at("x").item() == doctest::Approx(6.0));
}

TEST_CASE("gradient: d/dx tanh = 1 at x=0") {
  Tape t;
  Val x = t.input("x", Tensor::scalar(0.0));
  GradMap g = t.gradient(t.tanh_(x), {"x"});
  CHECK(g.at("x").item() == doctest::Approx(1.0));
}

TEST_CASE("gradient: errors") {
  Tape t;
  Val x = t.input("x", Tensor({2}, {1.0, 2.0}));
  Val y = t.square(x);
  CHECK_THROWS_AS(t.gradient(y, {"x"}), TapeError);          // non-scalar output
  Val s = t.sum_all(y);
  CHECK_THROWS_AS(t.gradient(s, {"nope"}), TapeError);       // unknown variable
}

TEST_CASE("gradient: unused variable gets a zero tensor of its shape") {
  Tape t;
  Val x = t.input("x", Tensor::scalar(2.0));
  Val unused = t.input("u", Tensor({3}));
  (void)unused;
  GradMap g = t.gradient(t.square(x), {"x", "u"});
  CHECK(g.at("u").shape() == Shape{3});
  for (std::size_t i = 0; i < 3; ++i) CHECK(g.at("u")[i] == 0.0);
}

TEST_CASE("per-primitive gradients match finite differences") {
  Rng rng(7);

  auto unary = [&](const char* tag, std::function<Val(Tape&, Val)> op, bool positive_domain,
                   bool away_from_zero) {
    INFO("primitive: ", tag);
    Tensor in = away_from_zero ? random_tensor_away_from_zero({3, 2}, rng)
                               : random_tensor({3, 2}, rng);
    if (positive_domain)
      for (std::size_t i = 0; i < in.size(); ++i) in[i] = std::fabs(in[i]) + 0.5;
    check_gradients([&](Tape& t, const std::vector<Val>& v) { return t.sum_all(op(t, v[0])); },
                    {in});
  };

  unary("relu", [](Tape& t, Val a) { return t.relu(a); }, false, true);
  unary("tanh", [](Tape& t, Val a) { return t.tanh_(a); }, false, false);
  unary("exp", [](Tape& t, Val a) { return t.exp_(a); }, false, false);
  unary("log", [](Tape& t, Val a) { return t.log_(a); }, true, false);
  unary("sqrt", [](Tape& t, Val a) { return t.sqrt_(a); }, true, false);
  unary("abs", [](Tape& t, Val a) { return t.abs_(a); }, false, true);
  unary("square", [](Tape& t, Val a) { return t.square(a); }, false, false);
  unary("scale", [](Tape& t, Val a) { return t.scale(a, -1.7); }, false, false);
  unary("add_const", [](Tape& t, Val a) { return t.add_const(a, 0.3); }, false, false);

  auto binary = [&](const char* tag, std::function<Val(Tape&, Val, Val)> op, bool b_positive) {
    INFO("primitive: ", tag);
    Tensor a = random_tensor({2, 3}, rng);
    Tensor b = random_tensor({2, 3}, rng);
    if (b_positive)
      for (std::size_t i = 0; i < b.size(); ++i) b[i] = std::fabs(b[i]) + 0.5;
    check_gradients(
        [&](Tape& t, const std::vector<Val>& v) { return t.sum_all(op(t, v[0], v[1])); }, {a, b});
  };
  binary("add", [](Tape& t, Val a, Val b) { return t.add(a, b); }, false);
  binary("sub", [](Tape& t, Val a, Val b) { return t.sub(a, b); }, false);
  binary("mul", [](Tape& t, Val a, Val b) { return t.mul(a, b); }, false);
  binary("div", [](Tape& t, Val a, Val b) { return t.div(a, b); }, true);

  // matmul
  check_gradients(
      [](Tape& t, const std::vector<Val>& v) { return t.sum_all(t.square(t.matmul(v[0], v[1]))); },
      {random_tensor({3, 4}, rng), random_tensor({4, 2}, rng)});

  // transpose
  check_gradients(
      [](Tape& t, const std::vector<Val>& v) {
        return t.sum_all(t.mul(t.transpose(v[0]), t.transpose(v[0])));
      },
      {random_tensor({2, 5}, rng)});

  // reductions and broadcasts
  check_gradients(
      [](Tape& t, const std::vector<Val>& v) { return t.sum_all(t.square(t.sum_rows(v[0]))); },
      {random_tensor({4, 3}, rng)});
  check_gradients(
      [](Tape& t, const std::vector<Val>& v) { return t.sum_all(t.square(t.sum_cols(v[0]))); },
      {random_tensor({4, 3}, rng)});
  check_gradients(
      [](Tape& t, const std::vector<Val>& v) {
        return t.sum_all(t.square(t.broadcast_full(t.sum_all(v[0]), {2, 2})));
      },
      {random_tensor({3}, rng)});
  check_gradients(
      [](Tape& t, const std::vector<Val>& v) {
        return t.sum_all(t.square(t.broadcast_rows(v[0], 4)));
      },
      {random_tensor({3}, rng)});
  check_gradients(
      [](Tape& t, const std::vector<Val>& v) {
        return t.sum_all(t.square(t.broadcast_cols(v[0], 4)));
      },
      {random_tensor({3}, rng)});

  // fused row ops
  check_gradients(
      [](Tape& t, const std::vector<Val>& v) { return t.sum_all(t.square(t.add_rows(v[0], v[1]))); },
      {random_tensor({4, 3}, rng), random_tensor({3}, rng)});
  check_gradients(
      [](Tape& t, const std::vector<Val>& v) { return t.sum_all(t.square(t.sub_rows(v[0], v[1]))); },
      {random_tensor({4, 3}, rng), random_tensor({3}, rng)});
  check_gradients(
      [](Tape& t, const std::vector<Val>& v) { return t.sum_all(t.square(t.mul_rows(v[0], v[1]))); },
      {random_tensor({4, 3}, rng), random_tensor({3}, rng)});
  {
    Tensor m = random_tensor({4, 3}, rng);
    Tensor v = random_tensor({3}, rng);
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = std::fabs(v[i]) + 0.5;
    check_gradients(
        [](Tape& t, const std::vector<Val>& vv) {
          return t.sum_all(t.square(t.div_rows(vv[0], vv[1])));
        },
        {m, v});
  }

  // softmax
  check_gradients(
      [](Tape& t, const std::vector<Val>& v) {
        return t.sum_all(t.mul(t.softmax(v[0]), t.constant(Tensor({4}, {0.3, -1.0, 2.0, 0.5}))));
      },
      {random_tensor({4}, rng)});

  // index / index_grad
  check_gradients(
      [](Tape& t, const std::vector<Val>& v) {
        return t.sum_all(t.mul(t.index_grad(t.index(v[0], 2), 1, 5),
                               t.constant(Tensor({5}, {1, 2, 3, 4, 5}))));
      },
      {random_tensor({5}, rng)});

  // pairwise distances
  check_gradients(
      [](Tape& t, const std::vector<Val>& v) {
        return t.sum_all(t.square(t.pairwise_sqdist(v[0], v[1])));
      },
      {random_tensor({3, 2}, rng), random_tensor({4, 2}, rng)});
  check_gradients(
      [&](Tape& t, const std::vector<Val>& v) {
        return t.sum_all(t.square(t.pairwise_l1(v[0], v[1])));
      },
      {random_tensor_away_from_zero({3, 2}, rng), random_tensor({4, 2}, rng)});
}

TEST_CASE("gradient of a 2-layer MLP loss matches finite differences") {
  Rng rng(11);
  Tensor x = random_tensor({4, 3}, rng);
  Tensor w1 = random_tensor({3, 8}, rng, -0.7, 0.7);
  Tensor b1 = random_tensor({8}, rng, -0.2, 0.2);
  Tensor w2 = random_tensor({8, 2}, rng, -0.7, 0.7);
  Tensor b2 = random_tensor({2}, rng, -0.2, 0.2);

  check_gradients(
      [&](Tape& t, const std::vector<Val>& v) {
        Val h = t.tanh_(t.add_rows(t.matmul(t.constant(x), v[0]), v[1]));
        Val out = t.add_rows(t.matmul(h, v[2]), v[3]);
        return t.mean_all(t.square(out));
      },
      {w1, b1, w2, b2});
}

TEST_CASE("double backprop: d2/dx2 of x^3 at 2 is 12") {
  Tape t;
  Val x = t.input("x", Tensor::scalar(2.0));
  Val y = t.mul(t.square(x), x);
  std::vector<Val> first = t.gradient_as_nodes(y, {t.find_input("x")});
  GradMap second = t.gradient(first[0], {"x"});
  CHECK(second.at("x").item() == doctest::Approx(12.0));
}

TEST_CASE("double backprop: gradient-penalty toy case") {
  // f(x) = w x; penalty = || df/dx ||^2 = w^2; d(penalty)/dw = 2w = 6 at w=3
  Tape t;
  Val w = t.input("w", Tensor::scalar(3.0));
  Val x = t.input("x", Tensor::scalar(2.0));
  Val f = t.mul(w, x);
  Val inner = t.gradient_as_nodes(f, {t.find_input("x")})[0];
  Val penalty = t.square(inner);
  GradMap g = t.gradient(penalty, {"w"});
  CHECK(g.at("w").item() == doctest::Approx(6.0));
}

TEST_CASE("double backprop: MLP penalty gradient matches finite differences") {
  // 2-16-2 network; scalar = sum of outputs; penalty = mean row norm^2 of
  // d(scalar)/d(input); gradient of the penalty w.r.t. weights checked by FD.
  Rng rng(13);
  Tensor x = random_tensor({3, 2}, rng);
  Tensor w1 = random_tensor({2, 16}, rng, -0.6, 0.6);
  Tensor b1 = random_tensor({16}, rng, -0.2, 0.2);
  Tensor w2 = random_tensor({16, 2}, rng, -0.6, 0.6);

  check_gradients(
      [&](Tape& t, const std::vector<Val>& v) {
        Val xin = t.input("xin", x);
        Val h = t.tanh_(t.add_rows(t.matmul(xin, v[0]), v[1]));
        Val out = t.matmul(h, v[2]);
        Val total = t.sum_all(out);
        Val inner = t.gradient_as_nodes(total, {xin})[0];
        return t.mean_all(t.sum_cols(t.square(inner)));
      },
      {w1, b1, w2}, 1e-3);
}

TEST_CASE("gradient_as_nodes followed by evaluate equals gradient exactly") {
  Rng rng(17);
  Tensor a = random_tensor({3, 3}, rng);
  Tensor b = random_tensor({3, 3}, rng);

  Tape t1;
  Val va = t1.input("a", a), vb = t1.input("b", b);
  Val out1 = t1.mean_all(t1.square(t1.matmul(t1.tanh_(va), vb)));
  GradMap via_gradient = t1.gradient(out1, {"a", "b"});

  Tape t2;
  Val wa = t2.input("a", a), wb = t2.input("b", b);
  Val out2 = t2.mean_all(t2.square(t2.matmul(t2.tanh_(wa), wb)));
  std::vector<Val> nodes = t2.gradient_as_nodes(out2, {wa, wb});

  for (std::size_t i = 0; i < a.size(); ++i)
    CHECK(via_gradient.at("a")[i] == t2.value(nodes[0])[i]);
  for (std::size_t i = 0; i < b.size(); ++i)
    CHECK(via_gradient.at("b")[i] == t2.value(nodes[1])[i]);
}

TEST_CASE("tape replay determinism is bitwise") {
  Rng rng(23);
  Tensor a = random_tensor({4, 4}, rng);
  Tape t;
  Val va = t.input("a", a);
  Val out = t.softmax(t.sum_rows(t.exp_(t.scale(t.matmul(va, t.transpose(va)), 0.1))));
  t.mark_output("out", out);
  auto r1 = t.evaluate({{"a", a}});
  auto r2 = t.evaluate({{"a", a}});
  REQUIRE(r1.at("out").size() == r2.at("out").size());
  for (std::size_t i = 0; i < r1.at("out").size(); ++i)
    CHECK(r1.at("out")[i] == r2.at("out")[i]);
}

TEST_CASE("evaluate rebinds inputs") {
  Tape t;
  Val x = t.input("x", Tensor::scalar(3.0));
  t.mark_output("y", t.square(x));
  auto r = t.evaluate({{"x", Tensor::scalar(5.0)}});
  CHECK(r.at("y").item() == 25.0);
  CHECK_THROWS_AS(t.evaluate({{"z", Tensor::scalar(1.0)}}), TapeError);
  CHECK_THROWS_AS(t.evaluate({{"x", Tensor({2})}}), TapeError);
}

TEST_CASE("linearity of differentiation") {
  Rng rng(29);
  Tensor x = random_tensor({5}, rng);
  double a = 1.7, b = -0.4;

  auto grad_of = [&](std::function<Val(Tape&, Val)> f) {
    Tape t;
    Val vx = t.input("x", x);
    return t.gradient(f(t, vx), {"x"}).at("x");
  };

  Tensor gf = grad_of([](Tape& t, Val v) { return t.sum_all(t.square(v)); });
  Tensor gg = grad_of([](Tape& t, Val v) { return t.sum_all(t.exp_(v)); });
  Tensor gsum = grad_of([&](Tape& t, Val v) {
    return t.add(t.scale(t.sum_all(t.square(v)), a), t.scale(t.sum_all(t.exp_(v)), b));
  });

  for (std::size_t i = 0; i < x.size(); ++i)
    CHECK(gsum[i] == doctest::Approx(a * gf[i] + b * gg[i]).epsilon(1e-12));
}

TEST_CASE("argmax one-hot routes gradient into the selected slot only") {
  Tape t;
  Val v = t.input("v", Tensor({4}, {0.1, 2.0, -1.0, 2.0}));  // tie at 1 and 3
  Val oh = t.argmax_onehot(v);
  CHECK(t.value(oh)[1] == 1.0);  // lowest index wins
  CHECK(t.value(oh)[3] == 0.0);
  Val picked = t.sum_all(t.mul(t.argmax_onehot_grad(t.constant(Tensor({4}, {5, 6, 7, 8})), v),
                               t.constant(Tensor({4}, {1, 1, 1, 1}))));
  CHECK(t.value(picked).item() == 6.0);
}
