#include "stochrob/analysis.hpp"

#include "stochrob/parallel.hpp"

#include <boost/math/distributions/binomial.hpp>
#include <boost/math/distributions/students_t.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>

namespace stochrob {

namespace {

double quantile_sorted(const std::vector<double>& s, double q) {
  const double pos = q * (static_cast<double>(s.size()) - 1.0);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, s.size() - 1);
  return s[lo] + (pos - static_cast<double>(lo)) * (s[hi] - s[lo]);
}

}  // namespace

Summary summarize(std::span<const double> values) {
  Summary s;
  s.n = static_cast<int>(values.size());
  if (values.empty()) return s;
  std::vector<double> sorted(values.begin(), values.end());
  std::sort(sorted.begin(), sorted.end());
  s.mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
  s.median = quantile_sorted(sorted, 0.5);
  s.q25 = quantile_sorted(sorted, 0.25);
  s.q75 = quantile_sorted(sorted, 0.75);
  return s;
}

double sample_variance(std::span<const double> values) {
  if (values.size() < 2) return 0.0;
  // shifted by the first value so a constant sequence gives exactly zero
  const double shift = values.front();
  double m = 0.0;
  for (double v : values) m += v - shift;
  m /= static_cast<double>(values.size());
  double ss = 0.0;
  for (double v : values) ss += (v - shift - m) * (v - shift - m);
  return ss / static_cast<double>(values.size() - 1);
}

VarianceReport prediction_variance(const StochasticModel& model, const Dataset& points, int n_mc, Seed seed,
                                   int threads) {
  if (n_mc < 2) throw std::invalid_argument("prediction_variance: n_mc must be >= 2");
  VarianceReport rep;
  rep.n_mc = n_mc;
  rep.per_point_variance.assign(points.size(), 0.0);
  parallel_for(points.size(), threads, [&](int i) {
    const SampleSet set = sample_params(model, split_seed(seed, "variance", i), n_mc);
    const Vec x = points.point(i);
    const int y = points.y[i];
    const McEstimator est(model, set);
    const McPrediction p = est.predict(x);
    // shifted by the first draw so identical realizations give exactly zero
    const Eigen::ArrayXd v = p.per_sample_scores.col(y).array() - p.per_sample_scores(0, y);
    const double mean = v.mean();
    rep.per_point_variance[i] = std::max(0.0, (v - mean).square().sum() / n_mc);
  });
  rep.summary = summarize(rep.per_point_variance);
  return rep;
}

VectorMoments::VectorMoments(int dim, bool keep_norms)
    : mean_(Vec::Zero(dim)), m2_(Vec::Zero(dim)), keep_(keep_norms) {}

void VectorMoments::add(const Vec& v) {
  ++n_;
  const Vec d = v - mean_;
  mean_ += d / static_cast<double>(n_);
  m2_ += d.cwiseProduct(v - mean_);
  const double nv = v.norm();
  const double dn = nv - norm_mean_;
  norm_mean_ += dn / static_cast<double>(n_);
  norm_m2_ += dn * (nv - norm_mean_);
  if (keep_) norms_.push_back(nv);
}

GradientStats VectorMoments::finish() const {
  GradientStats g;
  g.mean_vector = mean_;
  g.cov_diag = n_ > 1 ? Vec(m2_ / static_cast<double>(n_ - 1)) : Vec(Vec::Zero(mean_.size()));
  g.norm_samples = norms_;
  g.mean_norm = norm_mean_;
  g.mean_norm_se = n_ > 1 ? std::sqrt(norm_m2_ / static_cast<double>(n_ - 1) / static_cast<double>(n_)) : 0.0;
  g.lower = mean_.norm();
  g.upper = std::sqrt(mean_.squaredNorm() + g.cov_diag.sum());
  return g;
}

GradientStats gradient_norm_stats(const StochasticModel& model, const Vec& x, int y, int c, int S_I, int n_repeats,
                                  Seed seed) {
  if (n_repeats < 2) throw std::invalid_argument("gradient_norm_stats: n_repeats must be >= 2");
  VectorMoments acc(model.input_dim());
  for (int r = 0; r < n_repeats; ++r) {
    const McEstimator est(model, sample_params(model, split_seed(seed, "grad-repeat", r), S_I, SampleRole::inference));
    acc.add(est.margin_gradient(x, y, c));
  }
  return acc.finish();
}

GradientStats gaussian_norm_stats(const Vec& mu, const Vec& var, long n_draws, Seed seed, bool keep_norms) {
  if (mu.size() != var.size()) throw std::invalid_argument("gaussian_norm_stats: dimension mismatch");
  if ((var.array() < 0.0).any()) throw std::invalid_argument("gaussian_norm_stats: negative variance");
  Rng rng = make_rng(seed);
  std::normal_distribution<double> n01(0.0, 1.0);
  const Vec sd = var.cwiseSqrt();
  VectorMoments acc(static_cast<int>(mu.size()), keep_norms);
  Vec x(mu.size());
  for (long i = 0; i < n_draws; ++i) {
    for (Eigen::Index j = 0; j < x.size(); ++j) x[j] = mu[j] + sd[j] * n01(rng);
    acc.add(x);
  }
  return acc.finish();
}

AngleSample angle_for_delta(const McEstimator& inference, const Vec& x, int y, const Vec& delta) {
  const Certificate cert = linear_certificate(inference, x, y, delta);
  int j = cert.argmin_class;
  if (j < 0) j = argmax_excluding(inference.mean_scores(x), y);
  const ClassBound& b = cert.bound(j);
  return {b.cosine, j, b.grad_norm, cert.r_min};
}

AngleReport angle_distribution(const StochasticModel& model, const Dataset& data, const AttackSpec& spec, int S_A,
                               int S_I, Seed seed, int threads) {
  AttackSpec a = spec;
  a.S_A = S_A;
  a.validate();
  const int n = data.size();
  enum : char { kOk, kMisclassified, kZeroDelta };
  std::vector<char> status(n, kOk);
  std::vector<AngleSample> samples(n);
  parallel_for(n, threads, [&](int i) {
    const Vec x = data.point(i);
    const int y = data.y[i];
    const McEstimator inf(model, sample_params(model, split_seed(seed, "infer", i), S_I, SampleRole::inference));
    if (inf.classify(x) != y) {
      status[i] = kMisclassified;
      return;
    }
    const AttackResult atk = run_attack(model, x, y, a, split_seed(seed, "attack", i));
    if (!(atk.delta.norm() > 0.0)) {
      status[i] = kZeroDelta;
      return;
    }
    samples[i] = angle_for_delta(inf, x, y, atk.delta);
  });
  AngleReport rep;
  for (int i = 0; i < n; ++i) {
    if (status[i] == kMisclassified) {
      ++rep.skipped_misclassified;
    } else if (status[i] == kZeroDelta) {
      ++rep.skipped_zero_delta;
    } else {
      rep.cosines.push_back(samples[i].cosine);
      rep.points.push_back(i);
      rep.classes.push_back(samples[i].cls);
      rep.grad_norms.push_back(samples[i].grad_norm);
    }
  }
  rep.summary = summarize(rep.cosines);
  return rep;
}

ExtremeCount extreme_prediction_count(const StochasticModel& model, const Dataset& data, double threshold, Seed seed) {
  if (!(threshold > 0.5 && threshold <= 1.0)) throw std::invalid_argument("extreme_prediction_count: threshold must lie in (0.5, 1]");
  ExtremeCount out;
  out.flags.assign(data.size(), 0);
  for (int i = 0; i < data.size(); ++i) {
    const SampleSet one = sample_params(model, split_seed(seed, "extreme", i), 1);
    const Vec f = model.scores(one.params[0], one.input_offsets.empty() ? data.point(i)
                                                                        : Vec(data.point(i) + one.input_offsets[0]));
    if (f.maxCoeff() >= threshold) {
      out.flags[i] = 1;
      ++out.count;
    }
  }
  out.fraction = data.size() > 0 ? static_cast<double>(out.count) / data.size() : 0.0;
  return out;
}

LinearFit fit_line(std::span<const double> xs, std::span<const double> ys) {
  if (xs.size() != ys.size() || xs.size() < 3) throw std::invalid_argument("fit_line: need at least 3 paired values");
  const double n = static_cast<double>(xs.size());
  const double mx = std::accumulate(xs.begin(), xs.end(), 0.0) / n;
  const double my = std::accumulate(ys.begin(), ys.end(), 0.0) / n;
  double sxx = 0.0, sxy = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    sxx += (xs[i] - mx) * (xs[i] - mx);
    sxy += (xs[i] - mx) * (ys[i] - my);
    syy += (ys[i] - my) * (ys[i] - my);
  }
  if (!(sxx > 0.0)) throw std::invalid_argument("fit_line: x values must not all coincide");
  LinearFit f;
  f.slope = sxy / sxx;
  f.intercept = my - f.slope * mx;
  double sse = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double r = ys[i] - (f.intercept + f.slope * xs[i]);
    sse += r * r;
  }
  f.r2 = syy > 0.0 ? 1.0 - sse / syy : 1.0;
  f.slope_se = std::sqrt(sse / (n - 2.0) / sxx);
  return f;
}

CltResult clt_scaling_check(const StochasticModel& model, const Vec& x, int cls, std::span<const int> S_grid,
                            int n_repeats, Seed seed) {
  std::vector<int> distinct(S_grid.begin(), S_grid.end());
  std::sort(distinct.begin(), distinct.end());
  distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
  if (distinct.size() < 4) throw std::invalid_argument("clt_scaling_check: need at least 4 distinct sample sizes");
  if (n_repeats < 50) throw std::invalid_argument("clt_scaling_check: need at least 50 repeats");
  CltResult out;
  std::vector<double> logS, logV;
  for (int S : S_grid) {
    std::vector<double> means(n_repeats);
    for (int r = 0; r < n_repeats; ++r) {
      const Seed s = split_seed(split_seed(seed, "clt-size", static_cast<std::uint64_t>(S)), "repeat", r);
      means[r] = McEstimator(model, sample_params(model, s, S)).mean_scores(x)[cls];
    }
    const double v = sample_variance(means);
    if (!(v > 0.0)) throw std::domain_error("CLT check undefined: the estimate has zero variance");
    out.S.push_back(S);
    out.variance.push_back(v);
    logS.push_back(std::log(static_cast<double>(S)));
    logV.push_back(std::log(v));
  }
  out.fit = fit_line(logS, logV);
  return out;
}

PairedTest paired_t_less(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size() || a.size() < 2) throw std::invalid_argument("paired_t_less: need >= 2 pairs");
  std::vector<double> d(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) d[i] = a[i] - b[i];
  PairedTest t;
  t.n = static_cast<int>(d.size());
  t.mean_diff = std::accumulate(d.begin(), d.end(), 0.0) / t.n;
  const double se = std::sqrt(sample_variance(d) / t.n);
  if (!(se > 0.0)) {
    t.statistic = t.mean_diff < 0.0 ? -kInf : (t.mean_diff > 0.0 ? kInf : 0.0);
    t.p_value = t.mean_diff < 0.0 ? 0.0 : 1.0;
    return t;
  }
  t.statistic = t.mean_diff / se;
  boost::math::students_t dist(t.n - 1);
  t.p_value = boost::math::cdf(dist, t.statistic);
  return t;
}

PairedTest mcnemar_greater(std::span<const char> a, std::span<const char> b) {
  if (a.size() != b.size()) throw std::invalid_argument("mcnemar_greater: outcome vectors differ in length");
  int only_a = 0, only_b = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i] && !b[i]) ++only_a;
    if (!a[i] && b[i]) ++only_b;
  }
  PairedTest t;
  t.n = static_cast<int>(a.size());
  t.mean_diff = static_cast<double>(only_a - only_b) / std::max<std::size_t>(1, a.size());
  t.statistic = only_a - only_b;
  const int discordant = only_a + only_b;
  if (discordant == 0) return t;
  boost::math::binomial dist(discordant, 0.5);
  // P(X >= only_a) under the null of symmetric discordance.
  t.p_value = only_a == 0 ? 1.0 : boost::math::cdf(boost::math::complement(dist, only_a - 1));
  return t;
}

}  // namespace stochrob
