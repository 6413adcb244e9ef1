#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <functional>
#include <vector>

#include "gvq/core/rng.hpp"
#include "gvq/core/tape.hpp"
#include "../support/gradcheck.hpp"

using gvq::GradTape;
using gvq::Var;
using gvq_test::max_rel_err;
using gvq_test::numeric_grad;

namespace {

// Checks the analytic gradient of a graph (built by `build` from a single
// input leaf) against central differences of the same scalar output.
void check_unary_graph(const std::function<Var(GradTape&, Var)>& build,
                       const std::vector<double>& x0, double tol = 1e-6) {
  auto value_of = [&](const std::vector<double>& x) {
    GradTape t;
    Var in = t.leaf(x);
    Var out = build(t, in);
    return t.value(out)[0];
  };
  GradTape t;
  Var in = t.leaf(x0);
  Var out = build(t, in);
  t.backward(out);
  auto numeric = numeric_grad(value_of, x0);
  REQUIRE(max_rel_err(t.grad(in), numeric) < tol);
}

}  // namespace

TEST_CASE("elementwise and reduction ops match finite differences") {
  std::vector<double> x = {0.3, -1.2, 2.0, 0.7};
  std::vector<double> y = {1.5, 0.4, -0.8, 2.2};

  check_unary_graph([&](GradTape& t, Var in) { return t.sum(t.mul(in, t.leaf(y))); }, x);
  check_unary_graph([&](GradTape& t, Var in) { return t.sum(t.add(in, t.leaf(y))); }, x);
  check_unary_graph([&](GradTape& t, Var in) { return t.sum(t.sub(t.leaf(y), in)); }, x);
  check_unary_graph([&](GradTape& t, Var in) { return t.mean(t.scale(in, -2.5)); }, x);
  check_unary_graph([&](GradTape& t, Var in) { return t.dot(in, in); }, x);
  check_unary_graph([&](GradTape& t, Var in) { return t.sum(t.square(in)); }, x);
  check_unary_graph([&](GradTape& t, Var in) { return t.sum(t.add_scalar(in, 3.0)); }, x);
  check_unary_graph(
      [&](GradTape& t, Var in) { return t.pick(t.concat({in, t.leaf(y)}), 2); }, x);
  check_unary_graph([&](GradTape& t, Var in) { return t.sum(t.slice(in, 1, 2)); }, x);
}

TEST_CASE("nonlinearities match finite differences away from kinks") {
  std::vector<double> x = {0.9, -1.4, 2.2, -0.3, 0.05};
  check_unary_graph([](GradTape& t, Var in) { return t.sum(t.relu(in)); }, x);
  check_unary_graph([](GradTape& t, Var in) { return t.sum(t.sigmoid(in)); }, x);
  check_unary_graph([](GradTape& t, Var in) { return t.sum(t.tanh_op(in)); }, x);
  check_unary_graph([](GradTape& t, Var in) { return t.sum(t.exp_op(in)); }, x);
  check_unary_graph([](GradTape& t, Var in) { return t.sum(t.clip(in, -1.0, 1.0)); }, x);

  std::vector<double> pos = {0.5, 1.3, 0.02, 2.0};
  check_unary_graph([](GradTape& t, Var in) { return t.sum(t.log_op(in)); }, pos);
}

TEST_CASE("scale_by broadcasts a scalar with correct gradients") {
  std::vector<double> x = {1.0, -2.0, 0.5};
  auto value_of = [&](const std::vector<double>& all) {
    GradTape t;
    Var v = t.leaf({all[0], all[1], all[2]});
    Var s = t.leaf({all[3]});
    return t.value(t.sum(t.scale_by(v, s)))[0];
  };
  GradTape t;
  Var v = t.leaf(x);
  Var s = t.scalar(0.7);
  t.backward(t.sum(t.scale_by(v, s)));
  auto numeric = numeric_grad(value_of, {1.0, -2.0, 0.5, 0.7});
  REQUIRE(gvq_test::rel_err(t.grad(v)[0], numeric[0]) < 1e-6);
  REQUIRE(gvq_test::rel_err(t.grad(v)[2], numeric[2]) < 1e-6);
  REQUIRE(gvq_test::rel_err(t.grad(s)[0], numeric[3]) < 1e-6);
}

TEST_CASE("minimum routes gradient to the smaller operand, ties to first") {
  GradTape t;
  Var a = t.leaf({1.0, 5.0, 2.0});
  Var b = t.leaf({2.0, 3.0, 2.0});
  t.backward(t.sum(t.minimum(a, b)));
  REQUIRE(t.grad(a) == std::vector<double>{1.0, 0.0, 1.0});
  REQUIRE(t.grad(b) == std::vector<double>{0.0, 1.0, 0.0});
}

TEST_CASE("affine matches finite differences in W, b, and x") {
  gvq::RngStream rng(11);
  std::vector<double> W(12), b(3), x(4);
  for (auto* v : {&W, &b, &x})
    for (double& e : *v) e = rng.uniform(-1.0, 1.0);

  auto loss_from = [&](const std::vector<double>& w_, const std::vector<double>& b_,
                       const std::vector<double>& x_) {
    GradTape t;
    Var y = t.affine(t.leaf(w_), t.leaf(b_), t.leaf(x_));
    return t.value(t.dot(y, y))[0];
  };

  GradTape t;
  Var Wv = t.leaf(W), bv = t.leaf(b), xv = t.leaf(x);
  Var y = t.affine(Wv, bv, xv);
  t.backward(t.dot(y, y));

  auto nW = numeric_grad([&](const std::vector<double>& w_) { return loss_from(w_, b, x); }, W);
  auto nb = numeric_grad([&](const std::vector<double>& b_) { return loss_from(W, b_, x); }, b);
  auto nx = numeric_grad([&](const std::vector<double>& x_) { return loss_from(W, b, x_); }, x);
  REQUIRE(max_rel_err(t.grad(Wv), nW) < 1e-6);
  REQUIRE(max_rel_err(t.grad(bv), nb) < 1e-6);
  REQUIRE(max_rel_err(t.grad(xv), nx) < 1e-6);
}

TEST_CASE("log_softmax gradient matches finite differences") {
  std::vector<double> logits = {1.2, -0.7, 0.3, 2.5};
  check_unary_graph(
      [](GradTape& t, Var in) {
        Var ls = t.log_softmax(in);
        // Entropy-like composition exercises the full Jacobian.
        Var p = t.exp_op(ls);
        return t.scale(t.dot(p, ls), -1.0);
      },
      logits);
  // Sanity: log-probs sum to 1 after exp.
  GradTape t;
  Var ls = t.log_softmax(t.leaf(logits));
  double s = 0.0;
  for (double v : t.value(ls)) s += std::exp(v);
  REQUIRE(std::fabs(s - 1.0) < 1e-12);
}

TEST_CASE("stop_grad blocks all gradient flow") {
  GradTape t;
  Var x = t.leaf({2.0, 3.0});
  Var y = t.stop_grad(x);
  REQUIRE(t.value(y) == t.value(x));
  t.backward(t.dot(y, y));
  REQUIRE(t.grad(x) == std::vector<double>{0.0, 0.0});
}

TEST_CASE("straight_through forwards one value and backprops to the other") {
  GradTape t;
  Var z = t.leaf({0.5, -1.0});
  Var c = t.leaf({2.0, 2.0});
  Var q = t.straight_through(c, z);
  REQUIRE(t.value(q) == std::vector<double>{2.0, 2.0});

  Var w = t.leaf({3.0, 4.0});
  t.backward(t.dot(q, w));
  REQUIRE(t.grad(z) == std::vector<double>{3.0, 4.0});
  REQUIRE(t.grad(c) == std::vector<double>{0.0, 0.0});
}

TEST_CASE("quantizer loss split: each term reaches exactly one side") {
  // ||z - sg(q)||^2 must push only z; ||sg(z) - c||^2 must push only c.
  GradTape t;
  Var z = t.leaf({1.0, 0.0});
  Var c = t.leaf({0.0, 2.0});
  Var commit = t.sum(t.square(t.sub(z, t.stop_grad(c))));
  t.backward(commit);
  REQUIRE(t.grad(z) == std::vector<double>{2.0, -4.0});
  REQUIRE(t.grad(c) == std::vector<double>{0.0, 0.0});

  GradTape t2;
  Var z2 = t2.leaf({1.0, 0.0});
  Var c2 = t2.leaf({0.0, 2.0});
  t2.backward(t2.sum(t2.square(t2.sub(t2.stop_grad(z2), c2))));
  REQUIRE(t2.grad(z2) == std::vector<double>{0.0, 0.0});
  REQUIRE(t2.grad(c2) == std::vector<double>{-2.0, 4.0});
}

TEST_CASE("gumbel_binary value and gradient") {
  double logit = 0.4, tau = 0.7, g0 = 0.9, g1 = -0.2;
  GradTape t;
  Var l = t.scalar(logit);
  Var s = t.gumbel_binary(l, tau, g0, g1);
  // exp((l+g1)/tau) / (exp((l+g1)/tau) + exp(g0/tau)) written as a sigmoid.
  double e1 = std::exp((logit + g1) / tau), e0 = std::exp(g0 / tau);
  REQUIRE(std::fabs(t.value(s)[0] - e1 / (e1 + e0)) < 1e-12);
  t.backward(s);
  auto numeric = numeric_grad(
      [&](const std::vector<double>& x) {
        GradTape t2;
        return t2.value(t2.gumbel_binary(t2.scalar(x[0]), tau, g0, g1))[0];
      },
      {logit});
  REQUIRE(gvq_test::rel_err(t.grad(l)[0], numeric[0]) < 1e-6);
}

TEST_CASE("gaussian_reparam and kl_std_normal match finite differences") {
  std::vector<double> mean = {0.3, -0.5}, logvar = {0.2, -1.0}, eps = {0.7, -1.3};
  auto value_of = [&](const std::vector<double>& all) {
    GradTape t;
    Var m = t.leaf({all[0], all[1]});
    Var lv = t.leaf({all[2], all[3]});
    Var z = t.gaussian_reparam(m, lv, eps);
    Var kl = t.kl_std_normal(m, lv);
    return t.value(t.add(t.dot(z, z), kl))[0];
  };
  GradTape t;
  Var m = t.leaf(mean), lv = t.leaf(logvar);
  Var z = t.gaussian_reparam(m, lv, eps);
  t.backward(t.add(t.dot(z, z), t.kl_std_normal(m, lv)));
  auto numeric = numeric_grad(value_of, {0.3, -0.5, 0.2, -1.0});
  REQUIRE(gvq_test::rel_err(t.grad(m)[0], numeric[0]) < 1e-6);
  REQUIRE(gvq_test::rel_err(t.grad(m)[1], numeric[1]) < 1e-6);
  REQUIRE(gvq_test::rel_err(t.grad(lv)[0], numeric[2]) < 1e-6);
  REQUIRE(gvq_test::rel_err(t.grad(lv)[1], numeric[3]) < 1e-6);

  GradTape t3;
  Var zero = t3.leaf({0.0, 0.0});
  REQUIRE(t3.value(t3.kl_std_normal(zero, t3.leaf({0.0, 0.0})))[0] == 0.0);
}

TEST_CASE("parameter reuse accumulates gradients across uses") {
  gvq::Tensor p({2.0, -1.0}, {2});
  GradTape t;
  Var a = t.param("p", p);
  Var b = t.param("p", p);
  REQUIRE(a.idx == b.idx);
  t.backward(t.add(t.sum(t.mul(a, a)), t.sum(a)));
  // d/dp (p^2 + p) = 2p + 1
  REQUIRE(t.grad(a) == std::vector<double>{5.0, -1.0});
}

TEST_CASE("tape misuse throws contract errors") {
  GradTape t;
  Var x = t.leaf({1.0, 2.0});
  REQUIRE_THROWS_AS(t.backward(x), gvq::ContractError);  // non-scalar

  GradTape t2;
  Var y = t2.scalar(1.0);
  t2.backward(y);
  REQUIRE_THROWS_AS(t2.backward(y), gvq::ContractError);  // consumed

  GradTape t3;
  REQUIRE_THROWS_AS(t3.add(t3.leaf({1.0}), t3.leaf({1.0, 2.0})), gvq::ContractError);
  REQUIRE_THROWS_AS(t3.value(Var{}), gvq::ContractError);
}
