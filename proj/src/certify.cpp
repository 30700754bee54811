#include "stochrob/certify.hpp"

#include "stochrob/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>

namespace stochrob {

const ClassBound& Certificate::bound(int c) const {
  for (const auto& b : per_class)
    if (b.c == c) return b;
  throw std::out_of_range("certificate has no bound for class " + std::to_string(c));
}

Verdict Certificate::targeted_verdict(int j) const {
  return bound(j).r_value > delta_norm ? Verdict::certified_robust : Verdict::not_certified;
}

double cosine_alignment(const Vec& g, const Vec& delta) {
  const double ng = g.norm(), nd = delta.norm();
  if (!(ng > 0.0) || !(nd > 0.0)) throw std::invalid_argument("cosine_alignment: angle with a zero vector is undefined");
  return std::clamp(g.dot(delta) / (ng * nd), -1.0, 1.0);
}

double linear_r(double margin, double grad_norm, double cosine) {
  if (cosine >= 0.0) return kInf;
  return -margin / (grad_norm * cosine);
}

double smooth_r(double margin, double grad_norm, double cosine, double L, double delta_norm, double* V_out) {
  const double V = grad_norm * cosine - L * delta_norm;
  if (V_out) *V_out = V;
  if (V >= 0.0) return kInf;
  return margin / std::abs(V);
}

namespace {

Certificate build(const McEstimator& inference, const Vec& x, int y, const Vec& delta, CertificateKind kind, double L) {
  if (kind == CertificateKind::smooth && !(L >= 0.0)) throw std::invalid_argument("smooth certificate needs L >= 0");
  const int k = inference.num_classes();
  if (y < 0 || y >= k) throw std::invalid_argument("certificate: label out of range");
  const double dnorm = delta.norm();
  if (!(dnorm > 0.0)) throw std::invalid_argument("certificate: the perturbation must be non-zero");

  const Vec scores = inference.mean_scores(x);
  if (argmax(scores) != y)
    throw CertificateError("certificate: x is not classified as " + std::to_string(y) + " by the inference estimate");
  const Mat J = inference.jacobian(x);

  Certificate cert;
  cert.kind = kind;
  cert.L = L;
  cert.y = y;
  cert.delta_norm = dnorm;
  for (int c = 0; c < k; ++c) {
    if (c == y) continue;
    ClassBound b;
    b.c = c;
    b.margin = scores[y] - scores[c];
    const Vec g = (J.row(y) - J.row(c)).transpose();
    b.grad_norm = g.norm();
    if (b.grad_norm < kZeroGradient) {
      b.gradient_vanished = true;
      b.cosine = 0.0;
      if (kind == CertificateKind::linear) {
        if (!(b.margin > 0.0))
          throw CertificateError("certificate: class " + std::to_string(c) + " has a vanished gradient and no margin");
        b.r_value = kInf;
      } else {
        b.V = -L * dnorm;
        b.r_value = b.V < 0.0 ? b.margin / std::abs(b.V) : kInf;
      }
    } else {
      b.cosine = std::clamp(g.dot(delta) / (b.grad_norm * dnorm), -1.0, 1.0);
      if (kind == CertificateKind::linear)
        b.r_value = linear_r(b.margin, b.grad_norm, b.cosine);
      else
        b.r_value = smooth_r(b.margin, b.grad_norm, b.cosine, L, dnorm, &b.V);
    }
    if (b.r_value < cert.r_min) {
      cert.r_min = b.r_value;
      cert.argmin_class = c;
    }
    cert.per_class.push_back(b);
  }
  cert.verdict = cert.r_min > dnorm ? Verdict::certified_robust : Verdict::not_certified;
  return cert;
}

}  // namespace

Certificate linear_certificate(const McEstimator& inference, const Vec& x, int y, const Vec& delta) {
  return build(inference, x, y, delta, CertificateKind::linear, 0.0);
}

Certificate smooth_certificate(const McEstimator& inference, const Vec& x, int y, const Vec& delta, double L) {
  return build(inference, x, y, delta, CertificateKind::smooth, L);
}

Certificate linear_certificate(const StochasticModel& model, const Vec& x, int y, const SampleSet& set_I,
                               const Vec& delta) {
  return linear_certificate(McEstimator(model, set_I), x, y, delta);
}

Certificate smooth_certificate(const StochasticModel& model, const Vec& x, int y, const SampleSet& set_I,
                               const Vec& delta, double L) {
  return smooth_certificate(McEstimator(model, set_I), x, y, delta, L);
}

double deterministic_distance(const StochasticModel& model, const Vec& x, int y, bool* degenerate) {
  if (!model.deterministic()) throw std::invalid_argument("deterministic_distance: the model is stochastic");
  const ParamVector& theta = model.base_params();
  const Vec f = model.scores(theta, x);
  if (y < 0 || y >= f.size()) throw std::invalid_argument("deterministic_distance: label out of range");
  const int c = argmax_excluding(f, y);
  const double margin = f[y] - f[c];
  if (margin < 0.0) throw CertificateError("deterministic_distance: x is misclassified");
  Vec u = Vec::Zero(f.size());
  u[y] = 1.0;
  u[c] = -1.0;
  const double gn = model.pullback(theta, x, u, Stage::output).norm();
  if (degenerate) *degenerate = false;
  if (!(gn > 0.0)) {
    if (degenerate) *degenerate = true;
    std::clog << "stochrob: warning: margin gradient vanishes, distance is unbounded\n";
    return kInf;
  }
  return margin / gn;
}

std::optional<double> boundary_line_search(const McEstimator& inference, const Vec& x, int y, const Vec& direction,
                                           double t_max) {
  if (!(t_max > 0.0)) throw std::invalid_argument("line search: t_max must be positive");
  const double n = direction.norm();
  if (!(n > 0.0)) throw std::invalid_argument("line search: zero direction");
  const Vec u = direction / n;
  constexpr int kGrid = 2048;
  constexpr int kBisect = 60;
  auto flipped = [&](double t) { return inference.classify(x + t * u) != y; };
  for (int i = 1; i <= kGrid; ++i) {
    const double hi_t = t_max * i / kGrid;
    if (!flipped(hi_t)) continue;
    double lo = t_max * (i - 1) / kGrid, hi = hi_t;
    for (int s = 0; s < kBisect; ++s) {
      const double mid = 0.5 * (lo + hi);
      (flipped(mid) ? hi : lo) = mid;
    }
    return hi;
  }
  return std::nullopt;
}

ProbabilityEstimate robustness_probability(const StochasticModel& model, const Vec& x, int y, const AttackSpec& spec,
                                           int S_A, int S_I, int n_trials, Seed seed, const RobustnessOptions& opts) {
  if (n_trials < 1) throw std::invalid_argument("robustness_probability: n_trials must be >= 1");
  if (S_I < 1) throw std::invalid_argument("robustness_probability: S_I must be >= 1");
  AttackSpec a = spec;
  a.S_A = S_A;
  a.validate();
  std::vector<char> robust(n_trials, 0);
  parallel_for(n_trials, opts.threads, [&](int i) {
    const AttackResult atk = run_attack(model, x, y, a, split_seed(seed, "attack", i));
    const McEstimator inf(model, sample_params(model, split_seed(seed, "infer", i), S_I, SampleRole::inference));
    if (inf.classify(x) != y) return;
    if (!(atk.delta.norm() > 0.0)) {
      robust[i] = 1;
      return;
    }
    const Certificate c = opts.smooth ? smooth_certificate(inf, x, y, atk.delta, opts.L)
                                      : linear_certificate(inf, x, y, atk.delta);
    robust[i] = c.certified() ? 1 : 0;
  });
  ProbabilityEstimate est;
  est.trials = n_trials;
  est.certified = static_cast<int>(std::count(robust.begin(), robust.end(), 1));
  est.p_hat = static_cast<double>(est.certified) / n_trials;
  est.ci95 = 1.96 * std::sqrt(est.p_hat * (1.0 - est.p_hat) / n_trials);
  return est;
}

double empirical_lipschitz(const McEstimator& f, const LipschitzOptions& opts) {
  if (opts.n_pairs < 1) throw std::invalid_argument("empirical_lipschitz: n_pairs must be >= 1");
  if (!(opts.region.lo < opts.region.hi)) throw std::invalid_argument("empirical_lipschitz: empty region");
  const int d = f.input_dim();
  Rng rng = make_rng(opts.seed);
  std::uniform_real_distribution<double> u(opts.region.lo, opts.region.hi);
  std::normal_distribution<double> n01(0.0, 1.0);
  std::uniform_real_distribution<double> radius(0.0, opts.max_distance);
  double best = 0.0;
  for (int p = 0; p < opts.n_pairs; ++p) {
    Vec a(d), b(d);
    for (int i = 0; i < d; ++i) a[i] = u(rng);
    if (opts.max_distance > 0.0) {
      Vec dir(d);
      for (int i = 0; i < d; ++i) dir[i] = n01(rng);
      b = a + dir.normalized() * radius(rng);
    } else {
      for (int i = 0; i < d; ++i) b[i] = u(rng);
    }
    const double dist = (a - b).norm();
    if (dist < 1e-12) continue;
    const Mat diff = f.jacobian(a) - f.jacobian(b);
    for (Eigen::Index c = 0; c < diff.rows(); ++c) best = std::max(best, diff.row(c).norm() / dist);
  }
  return best;
}

}  // namespace stochrob
