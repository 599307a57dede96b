#include <cmath>
#include <limits>

#include "conceptmem/error.hpp"
#include "conceptmem/gradcheck.hpp"
#include "conceptmem/ops.hpp"
#include "conceptmem/params.hpp"
#include "doctest.h"

using namespace cmem;

namespace {

Array eval1(Var (*op)(Var), const Array& x) {
  Tape t(false);
  return op(t.constant(x)).value();
}

Array grad_of_sum(Var (*op)(Var), const Array& x) {
  Tape t;
  Parameter p{"x", x};
  const Var leaf = t.parameter(p);
  t.backward(ops::sum(op(leaf)));
  Array g(x.shape());
  t.for_each_parameter_grad([&](const Parameter&, const Array& grad) { g = grad; });
  return g;
}

}  // namespace

TEST_CASE("array rejects non-finite values and bad shapes") {
  CHECK_THROWS_AS(Array({2}, {1.0, std::numeric_limits<double>::quiet_NaN()}), NumericError);
  CHECK_THROWS_AS(Array({2}, {1.0, std::numeric_limits<double>::infinity()}), NumericError);
  CHECK_THROWS_AS(Array({2, 2}, {1.0, 2.0, 3.0}), DimensionError);
  CHECK_THROWS_AS(Array(Shape{0}), DimensionError);
}

TEST_CASE("matmul examples") {
  Tape t(false);
  const Var eye = t.constant(Array::matrix(2, 2, {1, 0, 0, 1}));
  const Var m = t.constant(Array::matrix(2, 2, {1, 2, 3, 4}));
  CHECK(ops::matmul(eye, m).value() == Array::matrix(2, 2, {1, 2, 3, 4}));

  const Var a = t.constant(Array::matrix(1, 2, {1, 2}));
  const Var b = t.constant(Array::matrix(2, 1, {3, 4}));
  CHECK(ops::matmul(a, b).value() == Array::matrix(1, 1, {11}));

  CHECK_THROWS_AS(ops::matmul(a, a), DimensionError);
  try {
    ops::matmul(a, a);
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("[1 x 2]") != std::string::npos);
  }
}

TEST_CASE("matmul gradient matches finite differences") {
  Rng rng(3);
  auto rand = [&](std::size_t r, std::size_t c) {
    Array a({r, c});
    for (auto& v : a.data()) v = rng.uniform(-1, 1);
    return a;
  };
  const auto report = grad_check([](Tape&, std::span<const Var> in) { return ops::sum(ops::matmul(in[0], in[1])); },
                                 {rand(3, 4), rand(4, 2)}, 1e-6);
  CHECK(report.passed);
  CHECK(report.max_rel_error < 1e-6);
}

TEST_CASE("conv2d examples") {
  Tape t(false);
  const Var ones = t.constant(Array::filled({1, 5, 5}, 1.0));
  const Var k = t.constant(Array::filled({1, 1, 3, 3}, 1.0));
  const Var b = t.constant(Array({1}));
  const Array out = ops::conv2d_3x3(ones, k, b).value();
  CHECK(out.shape() == Shape{1, 5, 5});
  for (std::size_t i = 1; i < 4; ++i) {
    for (std::size_t j = 1; j < 4; ++j) CHECK(out[i * 5 + j] == 9.0);
  }
  CHECK(out[0] == 4.0);

  Rng rng(5);
  Array x({1, 4, 4});
  for (auto& v : x.data()) v = rng.normal();
  Array delta({1, 1, 3, 3});
  delta[4] = 1.0;
  CHECK(ops::conv2d_3x3(t.constant(x), t.constant(delta), b).value() == x);

  CHECK_THROWS_AS(ops::conv2d_3x3(t.constant(Array({2, 4, 4})), k, b), DimensionError);
}

TEST_CASE("conv2d gradients on a 1x4x4 input") {
  Rng rng(9);
  auto rand = [&](Shape s) {
    Array a(s);
    for (auto& v : a.data()) v = rng.uniform(-1, 1);
    return a;
  };
  const auto report = grad_check(
      [](Tape& t, std::span<const Var> in) {
        return ops::sum(ops::mul(ops::conv2d_3x3(in[0], in[1], in[2]), t.constant(Array::filled({2, 4, 4}, 0.5))));
      },
      {rand({1, 4, 4}), rand({2, 1, 3, 3}), rand({2})}, 1e-6);
  CHECK(report.passed);
}

TEST_CASE("maxpool examples") {
  Tape t(false);
  CHECK(ops::maxpool2(t.constant(Array({1, 2, 2}, {1, 2, 3, 4}))).value() == Array({1, 1, 1}, {4}));
  CHECK_THROWS_AS(ops::maxpool2(t.constant(Array({1, 3, 4}))), DimensionError);

  Tape g;
  Parameter p{"x", Array::filled({1, 2, 2}, 7.0)};
  const Var y = ops::maxpool2(g.parameter(p));
  CHECK(y.value() == Array({1, 1, 1}, {7}));
  g.backward(ops::sum(y));
  g.for_each_parameter_grad([](const Parameter&, const Array& grad) {
    CHECK(grad == Array({1, 2, 2}, {1, 0, 0, 0}));
  });
}

TEST_CASE("relu examples") {
  CHECK(eval1(ops::relu, Array::vector({-1, 0, 2})) == Array::vector({0, 0, 2}));
  CHECK(eval1(ops::relu, Array::vector({-3, -1})) == Array::vector({0, 0}));
  CHECK(grad_of_sum(ops::relu, Array::vector({-3, -1})) == Array::vector({0, 0}));
  CHECK(grad_of_sum(ops::relu, Array::vector({-1, 0, 2})) == Array::vector({0, 0, 1}));
}

TEST_CASE("batchnorm examples") {
  Tape t(false);
  const Var gamma = t.constant(Array::vector({1}));
  const Var beta = t.constant(Array::vector({0}));
  const Array rm({1}), rv = Array::filled({1}, 1.0);
  ops::BatchStats stats;
  const Array y = ops::batchnorm(t.constant(Array::matrix(2, 1, {1, 3})), gamma, beta, ops::NormMode::Train, rm, rv,
                                 &stats)
                      .value();
  const double s = 1.0 / std::sqrt(1.0 + ops::kBatchNormEpsilon);
  CHECK(y[0] == doctest::Approx(-s).epsilon(1e-15));
  CHECK(y[1] == doctest::Approx(s).epsilon(1e-15));
  CHECK(stats.mean[0] == 2.0);
  CHECK(stats.var[0] == 1.0);

  const Var beta2 = t.constant(Array::vector({0.25}));
  const Array c = ops::batchnorm(t.constant(Array::matrix(3, 1, {5, 5, 5})), gamma, beta2, ops::NormMode::Train, rm,
                                 rv)
                      .value();
  for (double v : c.data()) CHECK(v == 0.25);

  Array running_mean({1}), running_var = Array::filled({1}, 1.0);
  ops::update_running_stats(running_mean, running_var, stats);
  CHECK(running_mean[0] == doctest::Approx(0.2));
  CHECK(running_var[0] == doctest::Approx(1.0));

  // Eval mode uses running statistics only.
  const Array e = ops::batchnorm(t.constant(Array::matrix(1, 1, {3})), gamma, beta, ops::NormMode::Eval,
                                 Array::vector({1}), Array::vector({4}))
                      .value();
  CHECK(e[0] == doctest::Approx(2.0 / std::sqrt(4.0 + ops::kBatchNormEpsilon)));
}

TEST_CASE("batchnorm gradients") {
  Rng rng(21);
  auto rand = [&](Shape s) {
    Array a(s);
    for (auto& v : a.data()) v = rng.uniform(-1, 1);
    return a;
  };
  const Array w = rand({4, 3});
  const auto report = grad_check(
      [&](Tape& t, std::span<const Var> in) {
        const Var y = ops::batchnorm(in[0], in[1], in[2], ops::NormMode::Train, Array({3}), Array::filled({3}, 1.0));
        return ops::sum(ops::mul(y, t.constant(w)));
      },
      {rand({4, 3}), rand({3}), rand({3})}, 1e-5);
  CHECK(report.passed);
}

TEST_CASE("gru cell examples") {
  Tape t(false);
  auto z = [&](std::size_t r, std::size_t c) { return t.constant(Array({r, c})); };
  auto zb = [&](std::size_t n) { return t.constant(Array({n})); };
  ops::GruWeights w{z(3, 2), z(3, 3), zb(3), z(3, 2), z(3, 3), zb(3), z(3, 2), z(3, 3), zb(3)};
  CHECK(ops::gru_cell(t.constant(Array({2})), t.constant(Array({3})), w).value() == Array({3}));

  w.b_z = t.constant(Array::filled({3}, 50.0));
  const Array h = Array::vector({0.3, -0.7, 0.1});
  Array x = Array::vector({1.0, -2.0});
  const Array next = ops::gru_cell(t.constant(x), t.constant(h), w).value();
  CHECK(max_abs_diff(next, h) < 1e-12);

  CHECK_THROWS_AS(ops::gru_cell(t.constant(Array({3})), t.constant(h), w), DimensionError);
}

TEST_CASE("gru unrolled over three steps matches finite differences") {
  Rng rng(8);
  auto rand = [&](Shape s) {
    Array a(s);
    for (auto& v : a.data()) v = rng.uniform(-1, 1);
    return a;
  };
  std::vector<Array> point{rand({3, 1}), rand({3, 3}), rand({3}), rand({3, 1}), rand({3, 3}),
                           rand({3}),    rand({3, 1}), rand({3, 3}), rand({3})};
  const auto report = grad_check(
      [](Tape& t, std::span<const Var> in) {
        ops::GruWeights w{in[0], in[1], in[2], in[3], in[4], in[5], in[6], in[7], in[8]};
        Var h = t.constant(Array({3}));
        for (double x : {0.5, -1.0, 2.0}) h = ops::gru_cell(t.constant(Array::scalar(x)), h, w);
        return ops::sum(ops::mul(h, t.constant(Array::vector({1.0, -2.0, 0.5}))));
      },
      point, 1e-6);
  CHECK(report.passed);
}

TEST_CASE("softmax examples and properties") {
  CHECK(eval1(ops::softmax, Array::vector({0, 0})) == Array::vector({0.5, 0.5}));
  const Array big = eval1(ops::softmax, Array::vector({1000, 1000, 1000}));
  for (double v : big.data()) CHECK(v == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
  const Array ln2 = eval1(ops::softmax, Array::vector({std::log(2.0), 0}));
  CHECK(ln2[0] == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
  CHECK(ln2[1] == doctest::Approx(1.0 / 3.0).epsilon(1e-15));

  Rng rng(17);
  for (int trial = 0; trial < 200; ++trial) {
    Array l({1 + rng.below(9)});
    for (auto& v : l.data()) v = rng.uniform(-30, 30);
    const Array p = eval1(ops::softmax, l);
    double sum = 0.0;
    for (double v : p.data()) {
      CHECK(v >= 0.0);
      sum += v;
    }
    CHECK(std::abs(sum - 1.0) <= 1e-12);
    Array shifted = l;
    const double c = rng.uniform(-100, 100);
    for (auto& v : shifted.data()) v += c;
    CHECK(max_abs_diff(eval1(ops::softmax, shifted), p) <= 1e-12);
  }
}

TEST_CASE("grad_check examples") {
  const auto sq = grad_check([](Tape&, std::span<const Var> in) { return ops::mul(in[0], in[0]); },
                             {Array::scalar(3.0)}, 1e-9);
  CHECK(sq.passed);
  CHECK(sq.max_rel_error < 1e-9);

  CHECK_THROWS_AS(grad_check([](Tape&, std::span<const Var> in) { return in[0]; }, {Array::vector({1, 2})}, 1e-4),
                  UsageError);
  CHECK_THROWS_AS(grad_check([](Tape&, std::span<const Var> in) { return in[0]; }, {Array::scalar(1)}, 0.0),
                  UsageError);

  // Negative control: a square whose backward reports x instead of 2x.
  const auto broken = grad_check(
      [](Tape& t, std::span<const Var> in) {
        const Var x = in[0];
        Array v = x.value();
        v[0] = v[0] * v[0];
        return t.push(v, {x}, [x](Tape& tp, const Array& g) {
          Array d({1});
          d[0] = g[0] * tp.value(x)[0];
          tp.accumulate(x, d);
        });
      },
      {Array::scalar(3.0)}, 1e-4);
  CHECK_FALSE(broken.passed);
  CHECK(broken.max_rel_error > 1e-4);
}

TEST_CASE("a node consumed twice accumulates its gradient") {
  Tape t;
  Parameter p{"x", Array::scalar(1.5)};
  const Var x = t.parameter(p);
  t.backward(ops::add(x, x));
  REQUIRE(t.grad(x) != nullptr);
  CHECK((*t.grad(x))[0] == 2.0);
}

TEST_CASE("running_mean reproduces the incremental mean") {
  Tape t(false);
  Var m = t.constant(Array({2}));
  const std::vector<Array> xs{Array::vector({4, 2}), Array::vector({2, 0}), Array::vector({0, 1})};
  for (std::size_t i = 0; i < xs.size(); ++i) m = ops::running_mean(m, t.constant(xs[i]), i);
  CHECK(m.value()[0] == doctest::Approx(2.0).epsilon(1e-15));
  CHECK(m.value()[1] == doctest::Approx(1.0).epsilon(1e-15));
}

TEST_CASE("every op passes the gradient suite on a few seeds") {
  for (const auto& s : run_gradient_suite(5, 1e-4)) {
    INFO(s.op);
    CHECK(s.passed);
  }
}

TEST_CASE("checkpoint serialization round-trips bit-exactly") {
  Rng rng(4);
  Checkpoint ck;
  ck.metadata = "{\"k\": 1}";
  ParamSet a(99);
  a.add("w", glorot_uniform({3, 5}, 3, 5, rng));
  a.add("stat", Array::vector({1e-300, -0.0, 3.25}), false);
  ParamSet b(7);
  b.add("b", Array::vector({std::nextafter(1.0, 2.0)}));
  ck.sections = {{"first", a}, {"second", b}};
  const auto bytes = serialize(ck);
  const Checkpoint back = deserialize(bytes);
  CHECK(back.metadata == ck.metadata);
  REQUIRE(back.sections.size() == 2);
  CHECK(back.sections[0].first == "first");
  CHECK(back.sections[0].second == a);
  CHECK(back.sections[1].second == b);
  CHECK(back.sections[0].second.seed() == 99);
  CHECK(std::signbit(back.sections[0].second.at("stat").value[1]));
  CHECK(serialize(back) == bytes);

  auto truncated = bytes;
  truncated.resize(bytes.size() / 2);
  CHECK_THROWS_AS(deserialize(truncated), LoadError);
}

TEST_CASE("glorot bounds") {
  Rng rng(1);
  const Array w = glorot_uniform({20, 30}, 20, 30, rng);
  const double a = std::sqrt(6.0 / 50.0);
  for (double v : w.data()) CHECK(std::abs(v) <= a);
}
