#include "common.hpp"

#include "stochrob/attacks.hpp"

#include <doctest.h>

#include <cmath>

using namespace stochrob;
using namespace testutil;

namespace {

// Deterministic logits f_0 = 0, f_1 = (3, 4) . x, so the neg-margin loss at y = 0 has gradient (3, 4).
StochasticModel three_four() {
  Mat W(2, 2);
  W << 0, 0, 3, 4;
  return make_linear_gaussian(W, 0.0);
}

StochasticModel saturated() {
  const Architecture a{{2, 2}, Activation::relu, OutputKind::softmax};
  Mat W(2, 2);
  W << 500, 0, -500, 0;
  return StochasticModel(a, pack(a, {W}, {Vec::Zero(2)}), NoiseSpec::none());
}

AttackSpec spec_of(AttackMethod m, double eta, LossKind loss = LossKind::cross_entropy) {
  AttackSpec s;
  s.method = m;
  s.eta = eta;
  s.loss = loss;
  return s;
}

StochasticModel noisy_mlp(Seed s, double sigma = 0.3) {
  return make_mlp(Architecture{{3, 10, 3}, Activation::tanh, OutputKind::softmax}, s, NoiseSpec::gaussian(sigma));
}

}  // namespace

TEST_CASE("FGM normalizes the gradient to length eta") {
  const StochasticModel m = three_four();
  const McEstimator est(m, sample_params(m, Seed{1}, 1));
  const Vec x = Vec::Constant(2, 0.1);
  CHECK((attack_gradient(est, x, 0, LossKind::neg_margin) - Vec((Vec(2) << 3, 4).finished())).norm() < 1e-15);
  const AttackResult r = fgm_l2(est, x, 0, spec_of(AttackMethod::fgm_l2, 1.0, LossKind::neg_margin));
  CHECK(r.delta[0] == doctest::Approx(0.6).epsilon(1e-15));
  CHECK(r.delta[1] == doctest::Approx(0.8).epsilon(1e-15));
  CHECK(std::abs(r.realized_norm - 1.0) <= 1e-12);
  CHECK(r.requested_norm == 1.0);
  CHECK(!r.zero_gradient);
  CHECK(std::abs(effective_length(r) - 1.0) <= 1e-12);
}

TEST_CASE("saturated softmax yields a vanished gradient") {
  const StochasticModel m = saturated();
  const McEstimator est(m, sample_params(m, Seed{1}, 1));
  const Vec x = Vec::Unit(2, 0);
  for (AttackMethod method : {AttackMethod::fgm_l2, AttackMethod::fgsm_linf, AttackMethod::pgd}) {
    const AttackResult r = run_attack(m, x, 0, spec_of(method, 0.3), Seed{2});
    CHECK(r.zero_gradient);
    CHECK(r.delta.norm() == 0.0);
    CHECK(effective_length(r) == 0.0);
  }
  // CW on logits still has a direction
  const AttackResult cw = fgm_l2(est, x, 0, spec_of(AttackMethod::fgm_l2, 0.3, LossKind::cw_logits));
  CHECK(!cw.zero_gradient);
  CHECK(cw.delta.norm() == doctest::Approx(0.3));
}

TEST_CASE("box clipping recomputes the realized perturbation") {
  Vec x(2), d(2);
  x << 0.95, 0.5;
  d << 0.15, 0.2;
  const Vec r = clip_perturbation(x, d, Box{0.0, 1.0});
  CHECK(r[0] == doctest::Approx(0.05).epsilon(1e-12));
  CHECK(r[1] == doctest::Approx(0.2).epsilon(1e-15));
  CHECK(r.norm() == doctest::Approx(std::sqrt(0.0425)).epsilon(1e-12));
  CHECK(std::abs(r.norm() - 0.20616) < 1e-5);
  CHECK(clip_perturbation(x, d, std::nullopt) == d);
}

TEST_CASE("FGSM takes the sign of every component") {
  // attack gradient (0.2, -3) from the neg-margin loss of f_1 = (0.2, -3) . x
  Mat W(2, 2);
  W << 0, 0, 0.2, -3;
  const StochasticModel m = make_linear_gaussian(W, 0.0);
  const McEstimator est(m, sample_params(m, Seed{1}, 1));
  const AttackResult r = fgsm_linf(est, Vec::Zero(2), 0, spec_of(AttackMethod::fgsm_linf, 0.1, LossKind::neg_margin));
  CHECK(r.delta[0] == 0.1);
  CHECK(r.delta[1] == -0.1);
  CHECK(r.realized_norm == 0.1);

  W << 0, 0, 0.0, 2.0;
  const StochasticModel m2 = make_linear_gaussian(W, 0.0);
  const McEstimator est2(m2, sample_params(m2, Seed{1}, 1));
  const AttackResult r2 = fgsm_linf(est2, Vec::Zero(2), 0, spec_of(AttackMethod::fgsm_linf, 0.1, LossKind::neg_margin));
  CHECK(r2.delta[0] == 0.0);
  CHECK(r2.delta[1] == 0.1);
  CHECK(effective_length(r2, Norm::linf) == 0.1);

  const McEstimator zero(saturated(), sample_params(saturated(), Seed{1}, 1));
  const StochasticModel sat = saturated();
  const AttackResult r3 = fgsm_linf(McEstimator(sat, sample_params(sat, Seed{1}, 1)), Vec::Unit(2, 0), 0,
                                    spec_of(AttackMethod::fgsm_linf, 0.1));
  CHECK(r3.zero_gradient);
  CHECK(r3.delta.norm() == 0.0);
  (void)zero;
}

TEST_CASE("FGSM components lie in {-eta, 0, eta} before clipping") {
  Rng rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    const StochasticModel m = noisy_mlp(Seed{rng()});
    const Vec x = uniform_vec(rng, 3, 0.0, 1.0);
    const AttackResult r = run_attack(m, x, trial % 3, spec_of(AttackMethod::fgsm_linf, 0.05), Seed{rng()});
    for (int i = 0; i < 3; ++i) CHECK((r.delta[i] == 0.05 || r.delta[i] == -0.05 || r.delta[i] == 0.0));
    CHECK(r.realized_norm <= 0.05 + 1e-12);
  }
}

TEST_CASE("FGM has length eta whenever the gradient is nonzero and nothing is clipped") {
  Rng rng(12);
  for (int trial = 0; trial < 100; ++trial) {
    const StochasticModel m = noisy_mlp(Seed{rng()});
    const Vec x = normal_vec(rng, 3);
    const double eta = std::uniform_real_distribution<double>(1e-3, 3.0)(rng);
    for (LossKind loss : {LossKind::cross_entropy, LossKind::neg_margin, LossKind::cw_logits}) {
      AttackSpec s = spec_of(AttackMethod::fgm_l2, eta, loss);
      s.S_A = 1 + trial % 7;
      const AttackResult r = run_attack(m, x, trial % 3, s, Seed{rng()});
      REQUIRE(!r.zero_gradient);
      CHECK(std::abs(r.delta.norm() - eta) <= 1e-12);
    }
  }
}

TEST_CASE("PGD stays inside the ball and the box") {
  Rng rng(13);
  for (int trial = 0; trial < 50; ++trial) {
    const StochasticModel m = noisy_mlp(Seed{rng()}, 0.5);
    const Vec x = uniform_vec(rng, 3, 0.0, 1.0);
    AttackSpec s = spec_of(AttackMethod::pgd, 0.4);
    s.S_A = 3;
    s.pgd_steps = 8;
    s.pgd_step = 0.15;
    if (trial % 2) s.box = Box{0.0, 1.0};
    s.resample_per_step = trial % 3 != 0;
    const AttackResult r = run_attack(m, x, 0, s, Seed{rng()});
    CHECK(r.delta.norm() <= 0.4 + 1e-12);
    CHECK(r.per_step_norms.size() == 8);
    for (double n : r.per_step_norms) CHECK(n <= 0.4 + 1e-12);
    if (s.box) {
      const Vec adv = x + r.delta;
      CHECK(adv.minCoeff() >= 0.0);
      CHECK(adv.maxCoeff() <= 1.0);
    }
  }
}

TEST_CASE("one fixed-set PGD step of size eta is FGM") {
  Rng rng(14);
  for (int trial = 0; trial < 50; ++trial) {
    const StochasticModel m = noisy_mlp(Seed{rng()});
    const Vec x = uniform_vec(rng, 3, 0.0, 1.0);
    const Seed seed{rng()};
    AttackSpec s = spec_of(AttackMethod::pgd, 0.7);
    s.S_A = 5;
    s.pgd_steps = 1;
    s.pgd_step = 0.7;
    s.resample_per_step = false;
    if (trial % 2) s.box = Box{0.0, 1.0};
    const AttackResult p = pgd(m, x, 1, s, seed);
    s.method = AttackMethod::fgm_l2;
    const AttackResult f = run_attack(m, x, 1, s, seed);
    CHECK((p.delta.array() == f.delta.array()).all());
  }
}

TEST_CASE("multi-step PGD beats single-step FGM on deterministic nets") {
  Rng rng(15);
  int wins = 0;
  const int n = 200;
  for (int trial = 0; trial < n; ++trial) {
    const Architecture arch{{2, 16, 3}, Activation::relu, OutputKind::softmax};
    const StochasticModel m = make_mlp(arch, Seed{rng()});
    const Vec x = normal_vec(rng, 2);
    const int y = argmax(forward(arch, m.base_params(), x));
    AttackSpec s = spec_of(AttackMethod::pgd, 0.5);
    s.pgd_steps = 10;
    s.pgd_step = 0.1;
    const AttackResult p = run_attack(m, x, y, s, Seed{1});
    s.method = AttackMethod::fgm_l2;
    const AttackResult f = run_attack(m, x, y, s, Seed{1});
    const double lp = loss_eval(forward(arch, m.base_params(), x + p.delta), y, LossKind::cross_entropy);
    const double lf = loss_eval(forward(arch, m.base_params(), x + f.delta), y, LossKind::cross_entropy);
    wins += lp >= lf;
  }
  MESSAGE("PGD loss >= FGM loss in ", wins, " of ", n);
  CHECK(wins >= 0.9 * n);
}

TEST_CASE("projection leaves feasible perturbations untouched") {
  Rng rng(16);
  for (int trial = 0; trial < 100; ++trial) {
    const Vec d = normal_vec(rng, 4);
    const double r = std::abs(normal_vec(rng, 1)[0]) + 0.1;
    const Vec p = project_l2_ball(d, r);
    CHECK(p.norm() <= r);
    const Vec pp = project_l2_ball(p, r);
    CHECK((pp.array() == p.array()).all());
    if (d.norm() <= r) CHECK((p.array() == d.array()).all());
  }
}

TEST_CASE("attacks are bit-identical for identical inputs") {
  const StochasticModel m = noisy_mlp(Seed{17}, 0.4);
  const Vec x = Vec::Constant(3, 0.3);
  for (AttackMethod method : {AttackMethod::fgm_l2, AttackMethod::fgsm_linf, AttackMethod::pgd}) {
    AttackSpec s = spec_of(method, 0.2);
    s.S_A = 4;
    const AttackResult a = run_attack(m, x, 2, s, Seed{18});
    const AttackResult b = run_attack(m, x, 2, s, Seed{18});
    CHECK((a.delta.array() == b.delta.array()).all());
    CHECK(a.per_step_norms == b.per_step_norms);
    CHECK(a.attack_seed == b.attack_seed);
  }
}

TEST_CASE("a targeted step is the sign flip of the untargeted step towards the target") {
  Rng rng(19);
  for (int trial = 0; trial < 30; ++trial) {
    const StochasticModel m = make_linear_gaussian(normal_mat(rng, 3, 4), 0.0);
    const Vec x = normal_vec(rng, 4);
    const int j = trial % 3;
    for (LossKind loss : {LossKind::neg_margin, LossKind::cw_logits}) {
      AttackSpec s = spec_of(AttackMethod::fgm_l2, 0.3, loss);
      const AttackResult untargeted = run_attack(m, x, j, s, Seed{1});
      s.target = j;
      const AttackResult targeted = run_attack(m, x, (j + 1) % 3, s, Seed{1});
      CHECK(((targeted.delta + untargeted.delta).array() == 0.0).all());
    }
  }
}

TEST_CASE("non-finite gradients are reported") {
  const Architecture a{{1, 2}, Activation::relu, OutputKind::logits};
  ParamVector theta{Vec(4)};
  theta.flat << 1e308, -1e308, 0.0, 0.0;
  const StochasticModel m(a, theta, NoiseSpec::none());
  AttackSpec s = spec_of(AttackMethod::fgm_l2, 0.1, LossKind::neg_margin);
  // the margin gradient w_0 - w_1 overflows
  CHECK_THROWS_AS(run_attack(m, Vec::Constant(1, 1e-300), 0, s, Seed{1}), NumericalError);
  s.method = AttackMethod::pgd;
  try {
    run_attack(m, Vec::Constant(1, 1e-300), 0, s, Seed{1});
    FAIL("expected an error");
  } catch (const NumericalError& e) {
    CHECK(std::string(e.what()).find("step 0") != std::string::npos);
  }
}

TEST_CASE("attack specs are validated") {
  AttackSpec s;
  s.eta = 0.0;
  CHECK_THROWS(s.validate());
  s.eta = 0.1;
  s.S_A = 0;
  CHECK_THROWS(s.validate());
  s.S_A = 1;
  s.method = AttackMethod::pgd;
  s.pgd_steps = 0;
  CHECK_THROWS(s.validate());
  s.pgd_steps = 3;
  CHECK_NOTHROW(s.validate());
  CHECK(s.step_size() == doctest::Approx(0.02));
  CHECK(parse_attack_method("pgd") == AttackMethod::pgd);
  CHECK_THROWS(parse_attack_method("deepfool"));
}
