#pragma once

#include "stochrob/attacks.hpp"
#include "stochrob/certify.hpp"
#include "stochrob/models.hpp"

#include <span>
#include <vector>

namespace stochrob {

struct Summary {
  double mean = 0.0;
  double median = 0.0;
  double q25 = 0.0;
  double q75 = 0.0;
  int n = 0;
};

/// Quartiles use linear interpolation between order statistics.
Summary summarize(std::span<const double> values);
double sample_variance(std::span<const double> values);

struct VarianceReport {
  std::vector<double> per_point_variance;
  int n_mc = 0;
  Summary summary;
};

/// Per point, the population variance (1/N) of f_y(x, theta) over n_mc fresh draws.
VarianceReport prediction_variance(const StochasticModel& model, const Dataset& points, int n_mc, Seed seed,
                                   int threads = 1);

struct GradientStats {
  Vec mean_vector;
  Vec cov_diag;  // unbiased per-coordinate variance of the sampled vectors
  std::vector<double> norm_samples;
  double mean_norm = 0.0;
  double mean_norm_se = 0.0;
  double lower = 0.0;  // ||mean||
  double upper = 0.0;  // sqrt(||mean||^2 + tr(cov))
};

/// Streaming moments of a stream of vectors.
class VectorMoments {
 public:
  explicit VectorMoments(int dim, bool keep_norms = true);
  void add(const Vec& v);
  GradientStats finish() const;

 private:
  Vec mean_, m2_;
  double norm_mean_ = 0.0, norm_m2_ = 0.0;
  long n_ = 0;
  bool keep_;
  std::vector<double> norms_;
};

/// n_repeats independent inference sets of size S_I; records ||grad f^I_{y-c}(x)|| for each.
GradientStats gradient_norm_stats(const StochasticModel& model, const Vec& x, int y, int c, int S_I, int n_repeats,
                                  Seed seed);
/// Draws X ~ N(mu, diag(var)) directly: the oracle configuration for the norm bounds.
GradientStats gaussian_norm_stats(const Vec& mu, const Vec& var, long n_draws, Seed seed, bool keep_norms = false);

struct AngleReport {
  std::vector<double> cosines;
  std::vector<int> points;   // dataset index of every reported cosine
  std::vector<int> classes;  // the class j attaining the smallest r
  std::vector<double> grad_norms;
  Summary summary;
  int skipped_misclassified = 0;
  int skipped_zero_delta = 0;
};

struct AngleSample {
  double cosine = 0.0;
  int cls = -1;
  double grad_norm = 0.0;
  double r_min = kInf;
};

/// cos(alpha_j) between the inference margin gradient and delta for the class j with the
/// smallest linear r. When every r is infinite the runner-up class of f^I(x) is used.
AngleSample angle_for_delta(const McEstimator& inference, const Vec& x, int y, const Vec& delta);

/// Point i attacks with split_seed(seed, "attack", i) and infers with split_seed(seed, "infer", i).
AngleReport angle_distribution(const StochasticModel& model, const Dataset& data, const AttackSpec& spec, int S_A,
                               int S_I, Seed seed, int threads = 1);

struct ExtremeCount {
  int count = 0;
  double fraction = 0.0;
  std::vector<char> flags;
};

/// One realization per point (split_seed(seed, "extreme", i)); flags max_c f_c >= threshold.
ExtremeCount extreme_prediction_count(const StochasticModel& model, const Dataset& data, double threshold, Seed seed);

struct LinearFit {
  double slope = 0.0;
  double intercept = 0.0;
  double r2 = 0.0;
  double slope_se = 0.0;
};

LinearFit fit_line(std::span<const double> xs, std::span<const double> ys);

struct CltResult {
  LinearFit fit;
  std::vector<int> S;
  std::vector<double> variance;
};

/// Var over n_repeats independent sets of f^S_cls(x), regressed on log S.
CltResult clt_scaling_check(const StochasticModel& model, const Vec& x, int cls, std::span<const int> S_grid,
                            int n_repeats, Seed seed);

struct PairedTest {
  double mean_diff = 0.0;  // mean of a - b
  double statistic = 0.0;
  double p_value = 1.0;    // one-sided
  int n = 0;
};

/// One-sided paired t-test of H1: mean(a - b) < 0.
PairedTest paired_t_less(std::span<const double> a, std::span<const double> b);
/// Exact one-sided McNemar test of H1: outcome a succeeds more often than outcome b.
PairedTest mcnemar_greater(std::span<const char> a, std::span<const char> b);

}  // namespace stochrob
