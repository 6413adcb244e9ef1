#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "gvq/core/mlp.hpp"
#include "gvq/train/losses.hpp"

using namespace gvq;

TEST_CASE("vq loss values") {
  CHECK(vq_loss_value({1.0, -2.0}, {1.0, -2.0}, 0.25) == 0.0);
  CHECK(vq_loss_value({1.0, 0.0}, {0.0, 0.0}, 0.25) == Catch::Approx(1.25).margin(1e-15));
}

TEST_CASE("vq loss tape splits gradient between encoder and code paths") {
  GradTape t;
  Tensor zt({2.0, -4.0}, {2});
  Tensor ct({0.0, 0.0}, {2});
  Var z = t.param("z", zt);
  Var c = t.param("c", ct);
  Var loss = vq_loss(t, z, c, 0.25);
  CHECK(t.value(loss)[0] == Catch::Approx((4.0 + 16.0) * 1.25).margin(1e-12));
  t.backward(loss);
  auto g = t.gradients();
  // Commitment term only: d/dz ||z - sg[c]||^2 = 2z.
  CHECK(g["z"][0] == Catch::Approx(4.0).margin(1e-12));
  CHECK(g["z"][1] == Catch::Approx(-8.0).margin(1e-12));
  // Pull term only: d/dc beta ||sg[z] - c||^2 = 2 beta (c - z).
  CHECK(g["c"][0] == Catch::Approx(-1.0).margin(1e-12));
  CHECK(g["c"][1] == Catch::Approx(2.0).margin(1e-12));
}

TEST_CASE("vq loss stop-gradient: encoder blind to pull term, code blind to commitment") {
  // beta = 0 kills the pull term; the code gradient must vanish entirely.
  {
    GradTape t;
    Var z = t.param("z", Tensor({3.0, 1.0}, {2}));
    Var c = t.param("c", Tensor({1.0, -1.0}, {2}));
    t.backward(vq_loss(t, z, c, 0.0));
    auto g = t.gradients();
    CHECK(g["c"][0] == 0.0);
    CHECK(g["c"][1] == 0.0);
    CHECK(g["z"][0] == Catch::Approx(4.0));
  }
  // Huge beta scales only the code gradient, never the encoder's.
  {
    GradTape t1, t2;
    Var z1 = t1.param("z", Tensor({3.0, 1.0}, {2}));
    Var c1 = t1.param("c", Tensor({1.0, -1.0}, {2}));
    t1.backward(vq_loss(t1, z1, c1, 0.25));
    Var z2 = t2.param("z", Tensor({3.0, 1.0}, {2}));
    Var c2 = t2.param("c", Tensor({1.0, -1.0}, {2}));
    t2.backward(vq_loss(t2, z2, c2, 250.0));
    CHECK(t1.gradients()["z"] == t2.gradients()["z"]);
    CHECK(t2.gradients()["c"][0] == Catch::Approx(1000.0 * t1.gradients()["c"][0] / 1.0));
  }
}

TEST_CASE("ib loss values") {
  // Prior match: zero mean, unit variance.
  CHECK(ib_loss_value({0.0, 0.0}, {0.0, 0.0}, 1.0, 1.0, 0.01) == 0.0);
  // Closed-form KL at mean 1, logvar 0, d=1 is 0.5.
  CHECK(kl_std_normal_value({1.0}, {0.0}) == Catch::Approx(0.5).margin(1e-15));
  CHECK(ib_loss_value({1.0}, {0.0}, 2.0, 2.0, 0.01) == Catch::Approx(0.005).margin(1e-15));
  // Imperfect prediction adds half squared error.
  CHECK(ib_loss_value({0.0}, {0.0}, 3.0, 1.0, 0.01) == Catch::Approx(2.0).margin(1e-15));
}

TEST_CASE("ib loss tape matches value and reaches the reward head") {
  GradTape t;
  Var mean = t.param("mean", Tensor({1.0, -0.5}, {2}));
  Var logvar = t.param("logvar", Tensor({0.2, -0.3}, {2}));
  Var rp = t.param("rp", Tensor({1.7}, {1}));
  Var loss = ib_loss(t, mean, logvar, rp, 2.0, 0.01);
  double expect = ib_loss_value({1.0, -0.5}, {0.2, -0.3}, 1.7, 2.0, 0.01);
  CHECK(t.value(loss)[0] == Catch::Approx(expect).margin(1e-14));
  t.backward(loss);
  // d/drp 0.5 (rp - r)^2 = rp - r.
  CHECK(t.gradients()["rp"][0] == Catch::Approx(-0.3).margin(1e-12));
}

TEST_CASE("gate loss") {
  CHECK(gate_loss_value({0.0, 0.0, 0.0}, 0.001) == 0.0);
  CHECK(gate_loss_value({0.5, 0.5, 1.0, 1.0}, 0.001) == Catch::Approx(0.003).margin(1e-15));
  CHECK_THROWS_AS(gate_loss_value({1.5}, 0.001), ContractError);

  GradTape t;
  std::vector<Var> probs = {t.param("p0", Tensor({0.5}, {1})), t.param("p1", Tensor({0.5}, {1})),
                            t.param("p2", Tensor({1.0}, {1})), t.param("p3", Tensor({1.0}, {1}))};
  Var loss = gate_loss(t, probs, 0.001);
  CHECK(t.value(loss)[0] == Catch::Approx(0.003).margin(1e-15));
  t.backward(loss);
  auto g = t.gradients();
  for (const char* name : {"p0", "p1", "p2", "p3"})
    CHECK(g[name][0] == Catch::Approx(0.001).margin(1e-18));
}

TEST_CASE("constraint penalty") {
  CHECK(constraint_penalty_value(700.0, 800.0, 0.01) == 0.0);
  CHECK(constraint_penalty_value(800.0, 800.0, 0.01) == 0.0);
  CHECK(constraint_penalty_value(900.0, 800.0, 0.01) == Catch::Approx(100.0).margin(1e-12));
  CHECK_THROWS_AS(constraint_penalty_value(10.0, 0.0, 0.01), ContractError);

  // Continuous and flat at the budget: finite-difference slope vanishes.
  double h = 1e-7;
  double up = constraint_penalty_value(800.0 + h, 800.0, 0.01);
  double dn = constraint_penalty_value(800.0 - h, 800.0, 0.01);
  CHECK(up < 1e-12);
  CHECK(dn == 0.0);

  GradTape t;
  Var cost = t.param("cost", Tensor({900.0}, {1}));
  Var pen = constraint_penalty(t, cost, 800.0, 0.01);
  CHECK(t.value(pen)[0] == Catch::Approx(100.0).margin(1e-12));
  t.backward(pen);
  // d/dc lambda_c (c - B)^2 = 2 lambda_c (c - B) = 2.
  CHECK(t.gradients()["cost"][0] == Catch::Approx(2.0).margin(1e-12));
}

TEST_CASE("constraint penalty gradient is zero exactly at the budget") {
  GradTape t;
  Var cost = t.param("cost", Tensor({800.0}, {1}));
  t.backward(constraint_penalty(t, cost, 800.0, 0.01));
  CHECK(t.gradients()["cost"][0] == 0.0);
}

TEST_CASE("dual penalty uses a constant multiplier") {
  GradTape t;
  Var cost = t.param("cost", Tensor({850.0}, {1}));
  Var pen = dual_penalty(t, cost, 800.0, 0.5);
  CHECK(t.value(pen)[0] == Catch::Approx(25.0).margin(1e-12));
  t.backward(pen);
  CHECK(t.gradients()["cost"][0] == Catch::Approx(0.5).margin(1e-15));
}

TEST_CASE("dual update worked example") {
  ConstraintState s;
  s.mode = ConstraintMode::kPrimalDual;
  s.budget = 800.0;
  s.dual = 0.5;
  s.dual_lr = 0.001;
  ConstraintState nxt = dual_update(s, 850.0);
  CHECK(nxt.dual == Catch::Approx(0.55).margin(1e-15));
  CHECK(nxt.cost_ema == Catch::Approx(850.0).margin(1e-15));
}

TEST_CASE("dual update projects at zero") {
  ConstraintState s;
  s.mode = ConstraintMode::kPrimalDual;
  s.budget = 800.0;
  s.dual = 0.0;
  s.dual_lr = 0.001;
  ConstraintState nxt = dual_update(s, 100.0);
  CHECK(nxt.dual == 0.0);
  for (int i = 0; i < 50; ++i) nxt = dual_update(nxt, 0.0);
  CHECK(nxt.dual == 0.0);
}

TEST_CASE("dual increases monotonically under persistent over-budget cost") {
  ConstraintState s;
  s.mode = ConstraintMode::kPrimalDual;
  s.budget = 800.0;
  s.dual_lr = 0.001;
  double prev = s.dual;
  for (int i = 0; i < 100; ++i) {
    s = dual_update(s, 850.0);
    CHECK(s.dual > prev);
    CHECK(s.dual >= 0.0);
    prev = s.dual;
  }
  // Steady EMA means a constant step of dual_lr * 50 per update.
  CHECK(s.dual == Catch::Approx(100 * 0.001 * 50.0).margin(1e-9));
}

TEST_CASE("dual ema tracks falling costs and the multiplier comes back down") {
  ConstraintState s;
  s.mode = ConstraintMode::kPrimalDual;
  s.budget = 800.0;
  s.dual_lr = 0.001;
  for (int i = 0; i < 20; ++i) s = dual_update(s, 900.0);
  double peak = s.dual;
  CHECK(peak > 0.0);
  for (int i = 0; i < 400; ++i) s = dual_update(s, 100.0);
  CHECK(s.dual < peak);
  CHECK(s.dual >= 0.0);
  CHECK(s.cost_ema < 150.0);
}

TEST_CASE("dual update requires primal-dual mode") {
  ConstraintState s;
  s.mode = ConstraintMode::kSoft;
  CHECK_THROWS_AS(dual_update(s, 100.0), ContractError);
}

TEST_CASE("total loss worked example and linearity") {
  LossWeights w;
  CHECK(total_loss_value(0.0, 0.0, 0.0, 0.0, 0.0, w) == 0.0);
  CHECK(total_loss_value(2.0, 1.25, 0.5, 3.0, 0.0, w) == Catch::Approx(3.258).margin(1e-12));

  LossWeights w2 = w;
  w2.lambda_ib = 2.0 * w.lambda_ib;
  double base = total_loss_value(2.0, 1.25, 0.5, 3.0, 0.0, w);
  double doubled = total_loss_value(2.0, 1.25, 0.5, 3.0, 0.0, w2);
  CHECK(doubled - base == Catch::Approx(w.lambda_ib * 0.5).margin(1e-12));
  // Every other component contribution is untouched.
  CHECK(total_loss_value(2.0, 1.25, 0.0, 3.0, 0.0, w2) ==
        Catch::Approx(total_loss_value(2.0, 1.25, 0.0, 3.0, 0.0, w)).margin(1e-12));
}

TEST_CASE("total loss aborts on non-finite components with a diagnostic") {
  LossWeights w;
  try {
    total_loss_value(std::nan(""), 0.0, 0.0, 0.0, 0.0, w);
    FAIL("expected TrainingAbort");
  } catch (const TrainingAbort& e) {
    CHECK(std::string(e.what()).find("rl") != std::string::npos);
  }
  try {
    total_loss_value(0.0, 0.0, 0.0, 0.0, std::numeric_limits<double>::infinity(), w);
    FAIL("expected TrainingAbort");
  } catch (const TrainingAbort& e) {
    CHECK(std::string(e.what()).find("constraint") != std::string::npos);
  }
}

TEST_CASE("total loss tape composition matches value path") {
  LossWeights w;
  GradTape t;
  Var rl = t.param("rl", Tensor({2.0}, {1}));
  Var vq = t.param("vq", Tensor({1.25}, {1}));
  Var ib = t.param("ib", Tensor({0.5}, {1}));
  Var gate = t.param("gate", Tensor({3.0}, {1}));
  Var cons = t.param("cons", Tensor({0.25}, {1}));
  Var total = total_loss(t, rl, vq, ib, gate, cons, w);
  CHECK(t.value(total)[0] ==
        Catch::Approx(total_loss_value(2.0, 1.25, 0.5, 3.0, 0.25, w)).margin(1e-14));
  t.backward(total);
  auto g = t.gradients();
  CHECK(g["rl"][0] == 1.0);
  CHECK(g["vq"][0] == Catch::Approx(w.lambda_vq));
  CHECK(g["ib"][0] == Catch::Approx(w.lambda_ib));
  CHECK(g["gate"][0] == Catch::Approx(w.lambda_gate));
  CHECK(g["cons"][0] == 1.0);
}

TEST_CASE("loss weights validation") {
  LossWeights w;
  w.validate();
  w.beta_vq = -0.1;
  CHECK_THROWS_AS(w.validate(), ConfigError);
}

TEST_CASE("temperature schedule endpoints and midpoint") {
  CHECK(temperature_schedule(0, 100) == Catch::Approx(1.0).margin(1e-15));
  CHECK(temperature_schedule(100, 100) == Catch::Approx(0.1).margin(1e-15));
  CHECK(temperature_schedule(50, 100) == Catch::Approx(std::sqrt(0.1)).margin(1e-12));
  CHECK(temperature_schedule(0, 0) == 1.0);
  CHECK_THROWS_AS(temperature_schedule(5, 4), ContractError);
  CHECK_THROWS_AS(temperature_schedule(-1, 4), ContractError);
  // Custom endpoints interpolate the same way.
  CHECK(temperature_schedule(1, 2, 4.0, 1.0) == Catch::Approx(2.0).margin(1e-12));
  // Monotone decrease along the whole schedule.
  double prev = 2.0;
  for (int e = 0; e <= 40; ++e) {
    double tau = temperature_schedule(e, 40);
    CHECK(tau < prev);
    prev = tau;
  }
}

TEST_CASE("constraint mode names round trip") {
  CHECK(constraint_mode_from_name("soft") == ConstraintMode::kSoft);
  CHECK(constraint_mode_from_name("primal_dual") == ConstraintMode::kPrimalDual);
  CHECK_THROWS_AS(constraint_mode_from_name("hard"), ConfigError);
  CHECK(std::string(constraint_mode_name(ConstraintMode::kSoft)) == "soft");
}
