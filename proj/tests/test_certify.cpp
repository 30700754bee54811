#include "common.hpp"

#include "stochrob/certify.hpp"

#include <doctest.h>

#include <cmath>

using namespace stochrob;
using namespace testutil;

namespace {

Vec v2(double a, double b) { return (Vec(2) << a, b).finished(); }

// Logits f_0 = w . x, f_1 = -w . x.
StochasticModel binary_linear(const Vec& w, double sigma = 0.0) {
  Mat W(2, w.size());
  W.row(0) = w.transpose();
  W.row(1) = -w.transpose();
  return make_linear_gaussian(W, sigma);
}

McEstimator det(const StochasticModel& m) { return McEstimator(m, sample_params(m, Seed{1}, 1)); }

StochasticModel random_quadratic(Rng& rng, int d, int k, double sigma) {
  std::vector<Mat> Q;
  std::vector<Vec> a;
  for (int c = 0; c < k; ++c) {
    const Mat A = normal_mat(rng, d, d);
    Q.push_back(0.25 * (A + A.transpose()));
    a.push_back(normal_vec(rng, d));
  }
  return make_quadratic(Q, a, NoiseSpec::gaussian(sigma));
}

}  // namespace

TEST_CASE("cosine alignment") {
  const Vec g = v2(0.3, -1.2);
  CHECK(cosine_alignment(g, -g) == doctest::Approx(-1.0).epsilon(1e-15));
  CHECK(cosine_alignment(v2(1, 0), v2(0, 1)) == 0.0);
  CHECK(cosine_alignment(v2(1, 0), v2(1, 1)) == doctest::Approx(1.0 / std::sqrt(2.0)).epsilon(1e-15));
  CHECK_THROWS_AS(cosine_alignment(Vec::Zero(2), v2(1, 0)), std::invalid_argument);
  CHECK_THROWS_AS(cosine_alignment(v2(1, 0), Vec::Zero(2)), std::invalid_argument);
  Rng rng(1);
  for (int i = 0; i < 1000; ++i) {
    const Vec a = normal_vec(rng, 5);
    const double c = cosine_alignment(a, a * 3.7);
    CHECK(c <= 1.0);
    CHECK(c >= -1.0);
  }
}

TEST_CASE("closed-form radii") {
  CHECK(linear_r(2.0, 1.0, 0.0) == kInf);
  CHECK(linear_r(2.0, 1.0, 0.4) == kInf);
  CHECK(linear_r(2.0, 1.0, -1.0) == 2.0);
  CHECK(linear_r(1.0, 2.0, -0.5) == 1.0);
  double V = 0.0;
  CHECK(smooth_r(2.0, 1.0, -1.0, 0.5, 1.0, &V) == doctest::Approx(2.0 / 1.5).epsilon(1e-15));
  CHECK(V == -1.5);
  CHECK(smooth_r(2.0, 1.0, 0.9, 0.5, 1.0, &V) == kInf);
  CHECK(V == doctest::Approx(0.4));
}

TEST_CASE("radii are monotone in margin and in the descent rate") {
  Rng rng(2);
  std::uniform_real_distribution<double> u(0.01, 5.0), neg(-1.0, -0.01);
  for (int i = 0; i < 10'000; ++i) {
    const double m = u(rng), g = u(rng), c = neg(rng);
    const double r = linear_r(m, g, c);
    CHECK(linear_r(m * 1.01, g, c) > r);
    CHECK(linear_r(m, g * 1.01, c) < r);
    CHECK(linear_r(m, g, std::max(-1.0, c * 1.01)) <= r);
    const double L = u(rng), dn = u(rng);
    CHECK(smooth_r(m, g, c, 0.0, dn) == doctest::Approx(r).epsilon(1e-12));
    CHECK(smooth_r(m, g, c, L, dn) < r);
    CHECK(smooth_r(m, g, c, 2 * L, dn) < smooth_r(m, g, c, L, dn));
  }
}

TEST_CASE("linear certificate: the cos = -1 case is the deterministic distance") {
  // margin f_0 - f_1 = x_0 at x = (2, 0) is 2 with gradient (1, 0)
  const StochasticModel m = binary_linear(v2(0.5, 0.0));
  const Vec x = v2(2.0, 0.0);
  const Certificate c = linear_certificate(det(m), x, 0, v2(-1.5, 0.0));
  REQUIRE(c.per_class.size() == 1);
  CHECK(c.bound(1).margin == 2.0);
  CHECK(c.bound(1).grad_norm == 1.0);
  CHECK(c.bound(1).cosine == -1.0);
  CHECK(c.r_min == 2.0);
  CHECK(c.argmin_class == 1);
  CHECK(c.delta_norm == 1.5);
  CHECK(c.certified());
  CHECK(c.r_min == deterministic_distance(m, x, 0));
  CHECK_FALSE(linear_certificate(det(m), x, 0, v2(-2.5, 0.0)).certified());

  // every cosine non-negative: never breaks
  const Certificate up = linear_certificate(det(m), x, 0, v2(1e6, 3.0));
  CHECK(up.r_min == kInf);
  CHECK(up.argmin_class == -1);
  CHECK(up.certified());
}

TEST_CASE("deterministic distance") {
  const StochasticModel m = binary_linear(v2(1.0, 0.0));
  CHECK(deterministic_distance(m, v2(2.0, 0.0), 0) == 2.0);
  CHECK(deterministic_distance(m, v2(0.0, 0.7), 0) == 0.0);
  CHECK_THROWS_AS(deterministic_distance(m, v2(-1.0, 0.0), 0), CertificateError);
  CHECK_THROWS_AS(deterministic_distance(binary_linear(v2(1.0, 0.0), 0.1), v2(2.0, 0.0), 0), std::invalid_argument);
  bool degenerate = false;
  CHECK(deterministic_distance(binary_linear(v2(0.0, 0.0)), v2(1.0, 1.0), 0, &degenerate) == kInf);
  CHECK(degenerate);
}

TEST_CASE("deterministic distance against a line search along the steepest direction") {
  Rng rng(3);
  int exact = 0, n = 0;
  for (int trial = 0; trial < 300; ++trial) {
    const StochasticModel m = make_linear_gaussian(normal_mat(rng, 3, 3), 0.0, normal_vec(rng, 3));
    const McEstimator est = det(m);
    const Vec x = normal_vec(rng, 3);
    const Vec f = est.mean_scores(x);
    const int y = argmax(f);
    const int cs = argmax_excluding(f, y);
    const double dist = deterministic_distance(m, x, y);
    const Vec g = est.margin_gradient(x, y, cs);
    const auto t = boundary_line_search(est, x, y, -g, 2.0 * dist + 1.0);
    REQUIRE(t.has_value());
    // another boundary can be crossed first; the distance to c* is never undercut
    CHECK(*t <= dist * (1 + 1e-6));
    const int flipped_to = est.classify(x - g.normalized() * (*t));
    ++n;
    if (flipped_to == cs) {
      ++exact;
      CHECK(std::abs(*t - dist) <= 1e-6 * dist);
    }
  }
  MESSAGE(exact, " of ", n, " searches crossed into the runner-up class");
  CHECK(exact >= n / 2);
}

TEST_CASE("the linear certificate is exact for linear-Gaussian classifiers") {
  Rng rng(4);
  int agree = 0, neutral = 0, certified = 0, n = 0;
  while (n < 1000) {
    const int d = uniform_int(rng, 2, 5), k = uniform_int(rng, 2, 4);
    const StochasticModel m = make_linear_gaussian(normal_mat(rng, k, d), 0.5, normal_vec(rng, k));
    const Vec x = normal_vec(rng, d);
    const McEstimator inf(m, sample_params(m, Seed{rng()}, uniform_int(rng, 1, 20), SampleRole::inference));
    const int y = inf.classify(x);
    AttackSpec spec;
    spec.eta = std::exp(std::uniform_real_distribution<double>(std::log(0.01), std::log(5.0))(rng));
    spec.S_A = uniform_int(rng, 1, 20);
    spec.loss = uniform_int(rng, 0, 1) ? LossKind::neg_margin : LossKind::cw_logits;
    const AttackResult atk = run_attack(m, x, y, spec, Seed{rng()});
    if (atk.zero_gradient) continue;
    ++n;
    const Certificate c = linear_certificate(inf, x, y, atk.delta);
    if (std::abs(c.r_min - c.delta_norm) <= 1e-9 * c.delta_norm) {
      ++neutral;
      continue;
    }
    const bool robust = inf.classify(x + atk.delta) == y;
    CHECK(c.certified() == robust);
    agree += c.certified() == robust;
    certified += c.certified();
  }
  MESSAGE(agree, " agreements, ", neutral, " in the neutral zone, ", certified, " certified");
  CHECK(certified > 100);
  CHECK(certified < 900);
}

TEST_CASE("the smooth certificate is sound on quadratic classifiers with their exact smoothness") {
  Rng rng(5);
  int certified = 0, flipped = 0, violations = 0, n = 0;
  while (n < 10'000) {
    const int d = uniform_int(rng, 2, 4), k = uniform_int(rng, 2, 3);
    const StochasticModel m = random_quadratic(rng, d, k, 0.5);
    const double L = m.quadratic_smoothness();
    const Vec x = normal_vec(rng, d);
    const McEstimator inf(m, sample_params(m, Seed{rng()}, uniform_int(rng, 1, 10), SampleRole::inference));
    const int y = inf.classify(x);
    AttackSpec spec;
    spec.eta = std::exp(std::uniform_real_distribution<double>(std::log(0.01), std::log(3.0))(rng));
    spec.S_A = uniform_int(rng, 1, 10);
    spec.loss = LossKind::neg_margin;
    const AttackResult atk = run_attack(m, x, y, spec, Seed{rng()});
    if (atk.zero_gradient) continue;
    ++n;
    const Certificate c = smooth_certificate(inf, x, y, atk.delta, L);
    const bool robust = inf.classify(x + atk.delta) == y;
    flipped += !robust;
    certified += c.certified();
    violations += c.certified() && !robust;
  }
  MESSAGE(certified, " certified, ", flipped, " flipped, ", violations, " violations of ", n);
  CHECK(violations == 0);
  CHECK(certified > 1000);
  CHECK(flipped > 1000);
}

TEST_CASE("the smooth certificate with L = 0 is the linear one, larger L only weakens it") {
  Rng rng(6);
  for (int trial = 0; trial < 200; ++trial) {
    const Architecture arch{{3, 8, 3}, Activation::tanh, OutputKind::softmax};
    const StochasticModel m = make_mlp(arch, Seed{rng()}, NoiseSpec::gaussian(0.3));
    const McEstimator inf(m, sample_params(m, Seed{rng()}, 5));
    const Vec x = normal_vec(rng, 3);
    const int y = inf.classify(x);
    const Vec delta = normal_vec(rng, 3) * 0.3;
    const Certificate lin = linear_certificate(inf, x, y, delta);
    const Certificate s0 = smooth_certificate(inf, x, y, delta, 0.0);
    const Certificate s1 = smooth_certificate(inf, x, y, delta, 1.0);
    const Certificate s2 = smooth_certificate(inf, x, y, delta, 4.0);
    for (const ClassBound& b : lin.per_class) {
      const double r0 = s0.bound(b.c).r_value;
      if (b.r_value == kInf)
        CHECK(r0 == kInf);
      else
        CHECK(std::abs(r0 - b.r_value) <= 1e-12 * b.r_value);
      CHECK(s1.bound(b.c).r_value <= r0);
      CHECK(s2.bound(b.c).r_value <= s1.bound(b.c).r_value);
      CHECK(s1.bound(b.c).V == doctest::Approx(b.grad_norm * b.cosine - 1.0 * delta.norm()).epsilon(1e-12));
    }
    CHECK(s0.certified() == lin.certified());
    if (s2.certified()) CHECK(s1.certified());
    if (s1.certified()) CHECK(lin.certified());
  }
}

TEST_CASE("boundary line search") {
  const StochasticModel m = binary_linear(v2(0.5, 0.25));
  const McEstimator est = det(m);
  const Vec x = v2(1.0, 0.6);
  const Vec dir = v2(-0.8, -0.6);
  const double margin = est.mean_scores(x)[0] - est.mean_scores(x)[1];
  const Vec g = est.margin_gradient(x, 0, 1);
  const double analytic = margin / (-g.norm() * cosine_alignment(g, dir));
  const auto t = boundary_line_search(est, x, 0, dir * 7.0, 10.0);
  REQUIRE(t.has_value());
  CHECK(std::abs(*t - analytic) <= 1e-9);
  CHECK(std::abs(*t - linear_certificate(est, x, 0, dir).r_min) <= 1e-9);
  CHECK_FALSE(boundary_line_search(est, x, 0, dir, 0.5 * analytic).has_value());
  CHECK_FALSE(boundary_line_search(est, x, 0, -dir, 1e6).has_value());
  CHECK_FALSE(boundary_line_search(est, x, 0, v2(-0.25, 0.5), 1e6).has_value());
  CHECK_THROWS(boundary_line_search(est, x, 0, dir, 0.0));
}

TEST_CASE("line search along delta agrees with the smallest linear radius") {
  Rng rng(7);
  for (int trial = 0; trial < 300; ++trial) {
    const int d = uniform_int(rng, 2, 4), k = uniform_int(rng, 2, 4);
    const StochasticModel m = make_linear_gaussian(normal_mat(rng, k, d), 0.4, normal_vec(rng, k));
    const McEstimator inf(m, sample_params(m, Seed{rng()}, 8));
    const Vec x = normal_vec(rng, d);
    const int y = inf.classify(x);
    const Vec delta = normal_vec(rng, d);
    const Certificate c = linear_certificate(inf, x, y, delta);
    if (c.r_min == kInf) {
      CHECK_FALSE(boundary_line_search(inf, x, y, delta, 1e3).has_value());
      continue;
    }
    const auto t = boundary_line_search(inf, x, y, delta, 2.0 * c.r_min + 1.0);
    REQUIRE(t.has_value());
    CHECK(std::abs(*t - c.r_min) <= 1e-6 * c.r_min + 1e-12);
  }
}

TEST_CASE("targeted certificates") {
  Rng rng(8);
  for (int trial = 0; trial < 200; ++trial) {
    const StochasticModel m = make_linear_gaussian(normal_mat(rng, 4, 3), 0.3);
    const McEstimator inf(m, sample_params(m, Seed{rng()}, 4));
    const Vec x = normal_vec(rng, 3);
    const int y = inf.classify(x);
    const Vec delta = normal_vec(rng, 3);
    const Certificate c = linear_certificate(inf, x, y, delta);
    for (const ClassBound& b : c.per_class) {
      CHECK(b.r_value >= c.r_min);
      if (c.certified()) CHECK(c.targeted_verdict(b.c) == Verdict::certified_robust);
      CHECK((c.targeted_verdict(b.c) == Verdict::certified_robust) == (b.r_value > c.delta_norm));
    }
    CHECK_THROWS_AS(c.bound(y), std::out_of_range);
  }
}

TEST_CASE("certificate hypotheses are enforced") {
  const StochasticModel m = binary_linear(v2(1.0, 0.0));
  CHECK_THROWS_AS(linear_certificate(det(m), v2(-1.0, 0.0), 0, v2(0.1, 0.0)), CertificateError);
  CHECK_THROWS_AS(linear_certificate(det(m), v2(1.0, 0.0), 0, Vec::Zero(2)), std::invalid_argument);
  CHECK_THROWS_AS(smooth_certificate(det(m), v2(1.0, 0.0), 0, v2(0.1, 0.0), -1.0), std::invalid_argument);

  // a constant margin: positive margin is certified, a tie is an error
  Mat W = Mat::Zero(2, 2);
  const StochasticModel flat = make_linear_gaussian(W, 0.0, v2(1.0, 0.0));
  const Certificate c = linear_certificate(det(flat), v2(0.3, 0.3), 0, v2(0.1, 0.2));
  CHECK(c.bound(1).gradient_vanished);
  CHECK(c.r_min == kInf);
  const Certificate s = smooth_certificate(det(flat), v2(0.3, 0.3), 0, v2(0.3, 0.4), 2.0);
  CHECK(s.bound(1).V == -1.0);
  CHECK(s.r_min == 1.0);
  const StochasticModel tie = make_linear_gaussian(W, 0.0);
  CHECK_THROWS_AS(linear_certificate(det(tie), v2(0.3, 0.3), 0, v2(0.1, 0.2)), CertificateError);
}

TEST_CASE("robustness probability") {
  const StochasticModel dm = binary_linear(v2(0.5, 0.0));
  const Vec x = v2(2.0, 0.0);
  AttackSpec spec;
  spec.eta = 1.5;
  spec.loss = LossKind::neg_margin;
  for (double eta : {1.5, 2.5}) {
    spec.eta = eta;
    const ProbabilityEstimate p = robustness_probability(dm, x, 0, spec, 1, 1, 20, Seed{9});
    const bool single = linear_certificate(det(dm), x, 0, run_attack(dm, x, 0, spec, Seed{1}).delta).certified();
    CHECK(p.p_hat == (single ? 1.0 : 0.0));
    CHECK(p.ci95 == 0.0);
    CHECK(p.trials == 20);
  }

  const StochasticModel noisy = binary_linear(v2(0.5, 0.2), 0.3);
  spec.eta = 1e-12;
  CHECK(robustness_probability(noisy, x, 0, spec, 3, 3, 200, Seed{10}).p_hat == 1.0);

  // a point near the boundary with parameter noise: about half the trials certify
  spec.eta = 0.5;
  const Vec near = v2(0.6, 0.0);
  const ProbabilityEstimate small = robustness_probability(noisy, near, 0, spec, 2, 2, 500, Seed{11});
  const ProbabilityEstimate ref = robustness_probability(noisy, near, 0, spec, 2, 2, 50'000, Seed{12});
  MESSAGE("p(500) = ", small.p_hat, " +- ", small.ci95, ", p(50000) = ", ref.p_hat);
  CHECK(ref.p_hat > 0.1);
  CHECK(ref.p_hat < 0.9);
  CHECK(std::abs(small.p_hat - ref.p_hat) <= small.ci95);

  RobustnessOptions threaded;
  threaded.threads = 4;
  const ProbabilityEstimate t4 = robustness_probability(noisy, near, 0, spec, 2, 2, 500, Seed{11}, threaded);
  CHECK(t4.certified == small.certified);
  CHECK_THROWS(robustness_probability(noisy, near, 0, spec, 2, 2, 0, Seed{11}));
}

TEST_CASE("empirical smoothness") {
  Rng rng(13);
  LipschitzOptions o;
  o.region = Box{-2.0, 2.0};
  o.n_pairs = 500;
  const StochasticModel lin = make_linear_gaussian(normal_mat(rng, 3, 4), 0.5);
  CHECK(empirical_lipschitz(McEstimator(lin, sample_params(lin, Seed{14}, 5)), o) <= 1e-9);

  // Q = diag(1.5, -0.5): |2Q| = 3, attained along the first axis
  Mat Q = Mat::Zero(2, 2);
  Q(0, 0) = 1.5;
  Q(1, 1) = -0.5;
  const StochasticModel q = make_quadratic({Q, Mat::Zero(2, 2)}, {v2(1.0, 0.0), v2(0.0, 1.0)});
  o.n_pairs = 10'000;
  const double Lq = empirical_lipschitz(det(q), o);
  CHECK(Lq <= 3.0 + 1e-9);
  CHECK(Lq >= 0.99 * 3.0);

  const Architecture arch{{2, 16, 2}, Activation::tanh, OutputKind::softmax};
  // sharpened weights so the inner net is far from linear on the unit box
  const StochasticModel inner = make_mlp(arch, Seed{15});
  const SmoothedModel sm{inner.with_params(ParamVector{inner.base_params().flat * 8.0}), 0.25, 64};
  const McEstimator est(sm, sample_params(sm.inner, Seed{16}, 1), Seed{17});
  o.region = Box{0.0, 1.0};
  o.n_pairs = 2000;
  o.max_distance = 0.05;
  const double Ls = empirical_lipschitz(est, o);
  MESSAGE("smoothed estimate ", Ls, " against the bound ", sm.L_bound());
  CHECK(Ls > 0.0);
  CHECK(Ls <= sm.L_bound());

  o.n_pairs = 0;
  CHECK_THROWS(empirical_lipschitz(est, o));
}
