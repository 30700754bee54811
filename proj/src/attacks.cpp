#include "stochrob/attacks.hpp"

#include <cmath>

namespace stochrob {

std::string to_string(AttackMethod m) {
  switch (m) {
    case AttackMethod::fgm_l2: return "fgm_l2";
    case AttackMethod::fgsm_linf: return "fgsm_linf";
    case AttackMethod::pgd: return "pgd";
  }
  return "?";
}

AttackMethod parse_attack_method(std::string_view s) {
  if (s == "fgm_l2" || s == "fgm") return AttackMethod::fgm_l2;
  if (s == "fgsm_linf" || s == "fgsm") return AttackMethod::fgsm_linf;
  if (s == "pgd") return AttackMethod::pgd;
  throw std::invalid_argument("unknown attack method '" + std::string(s) + "'");
}

void AttackSpec::validate() const {
  if (!(eta > 0.0)) throw std::invalid_argument("attack: eta must be positive");
  if (S_A < 1) throw std::invalid_argument("attack: S_A must be >= 1");
  if (method == AttackMethod::pgd && (pgd_steps < 1 || !(step_size() > 0.0)))
    throw std::invalid_argument("attack: pgd needs steps >= 1 and a positive step size");
  if (box && !(box->lo < box->hi)) throw std::invalid_argument("attack: empty box");
}

Vec attack_gradient(const McEstimator& est, const Vec& x, int y, LossKind loss, std::optional<int> target) {
  const Stage stage = loss == LossKind::cw_logits ? Stage::logits : Stage::output;
  const Vec v = est.mean(x, stage);
  const int t = target.value_or(y);
  if (t < 0 || t >= v.size()) throw std::invalid_argument("attack: class index out of range");
  Vec u;
  if (loss == LossKind::cw_logits) {
    u = Vec::Zero(v.size());
    u[argmax_excluding(v, t)] = 1.0;
    u[t] = -1.0;
  } else {
    u = loss_upstream(v, t, loss);
  }
  if (target) u = -u;
  return est.pullback(x, u, stage);
}

Vec project_l2_ball(const Vec& delta, double radius) {
  const double n = delta.norm();
  if (n <= radius) return delta;
  Vec p = delta * (radius / n);
  // rounding can leave the rescaled norm one ulp outside the ball
  double shrink = 1.0;
  while (p.norm() > radius) {
    shrink = std::nextafter(shrink, 0.0);
    p = delta * (radius / n * shrink);
  }
  return p;
}

Vec clip_perturbation(const Vec& x, const Vec& delta, const std::optional<Box>& box) {
  if (!box) return delta;
  const Vec adv = (x + delta).cwiseMax(box->lo).cwiseMin(box->hi);
  return adv - x;
}

namespace {

Vec normalized_step(const Vec& delta, const Vec& g, double gnorm, double nu, double eta) {
  return project_l2_ball(delta + g * (nu / gnorm), eta);
}

AttackResult empty_result(const Vec& x, const AttackSpec& spec) {
  AttackResult r;
  r.delta = Vec::Zero(x.size());
  r.requested_norm = spec.eta;
  return r;
}

}  // namespace

AttackResult fgm_l2(const McEstimator& attack_set, const Vec& x, int y, const AttackSpec& spec) {
  spec.validate();
  AttackResult r = empty_result(x, spec);
  r.attack_seed = attack_set.set().seed;
  const Vec g = attack_gradient(attack_set, x, y, spec.loss, spec.target);
  const double gnorm = g.norm();
  if (!(gnorm >= kZeroGradient)) {
    r.zero_gradient = true;
    return r;
  }
  r.delta = clip_perturbation(x, normalized_step(Vec::Zero(x.size()), g, gnorm, spec.eta, spec.eta), spec.box);
  r.realized_norm = r.delta.norm();
  return r;
}

AttackResult fgsm_linf(const McEstimator& attack_set, const Vec& x, int y, const AttackSpec& spec) {
  spec.validate();
  AttackResult r = empty_result(x, spec);
  r.attack_seed = attack_set.set().seed;
  const Vec g = attack_gradient(attack_set, x, y, spec.loss, spec.target);
  if (!(g.norm() >= kZeroGradient)) {
    r.zero_gradient = true;
    return r;
  }
  Vec d(x.size());
  for (Eigen::Index i = 0; i < d.size(); ++i) d[i] = g[i] > 0.0 ? spec.eta : (g[i] < 0.0 ? -spec.eta : 0.0);
  r.delta = clip_perturbation(x, d, spec.box);
  r.realized_norm = r.delta.lpNorm<Eigen::Infinity>();
  return r;
}

EstimatorFactory attack_sampler(const StochasticModel& model, int S_A) {
  return [&model, S_A](Seed s) { return McEstimator(model, sample_params(model, s, S_A, SampleRole::attack)); };
}

EstimatorFactory attack_sampler(const SmoothedModel& sm, int S_A) {
  return [&sm, S_A](Seed s) {
    return McEstimator(sm, sample_params(sm.inner, s, S_A, SampleRole::attack), split_seed(s, "smoothing-noise", 0));
  };
}

AttackResult pgd(const EstimatorFactory& sampler, const Vec& x, int y, const AttackSpec& spec, Seed seed) {
  spec.validate();
  AttackResult r = empty_result(x, spec);
  r.attack_seed = seed;
  r.zero_gradient = true;
  const double nu = spec.step_size();
  std::optional<McEstimator> fixed;
  if (!spec.resample_per_step) fixed.emplace(sampler(seed));
  for (int t = 0; t < spec.pgd_steps; ++t) {
    try {
      const McEstimator est = fixed ? *fixed : sampler(split_seed(seed, "pgd-step", t));
      const Vec g = attack_gradient(est, x + r.delta, y, spec.loss, spec.target);
      const double gnorm = g.norm();
      if (gnorm >= kZeroGradient) {
        r.zero_gradient = false;
        r.delta = clip_perturbation(x, normalized_step(r.delta, g, gnorm, nu, spec.eta), spec.box);
      }
    } catch (const NumericalError& e) {
      throw NumericalError("pgd step " + std::to_string(t) + ": " + e.what());
    }
    r.per_step_norms.push_back(r.delta.norm());
  }
  r.realized_norm = r.delta.norm();
  return r;
}

AttackResult pgd(const StochasticModel& model, const Vec& x, int y, const AttackSpec& spec, Seed seed) {
  return pgd(attack_sampler(model, spec.S_A), x, y, spec, seed);
}

AttackResult run_attack(const EstimatorFactory& sampler, const Vec& x, int y, const AttackSpec& spec, Seed seed) {
  switch (spec.method) {
    case AttackMethod::fgm_l2: return fgm_l2(sampler(seed), x, y, spec);
    case AttackMethod::fgsm_linf: return fgsm_linf(sampler(seed), x, y, spec);
    case AttackMethod::pgd: return pgd(sampler, x, y, spec, seed);
  }
  throw std::logic_error("unreachable attack method");
}

AttackResult run_attack(const StochasticModel& model, const Vec& x, int y, const AttackSpec& spec, Seed seed) {
  return run_attack(attack_sampler(model, spec.S_A), x, y, spec, seed);
}

double effective_length(const AttackResult& result, Norm p) {
  return p == Norm::l2 ? result.delta.norm() : result.delta.lpNorm<Eigen::Infinity>();
}

}  // namespace stochrob
