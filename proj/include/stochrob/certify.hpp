#pragma once

#include "stochrob/attacks.hpp"
#include "stochrob/models.hpp"

#include <limits>
#include <optional>
#include <stdexcept>
#include <vector>

namespace stochrob {

inline constexpr double kInf = std::numeric_limits<double>::infinity();

/// The certificate's hypothesis (x classified as y by the inference estimate) does not hold,
/// or a class has a vanished margin gradient together with a non-positive margin.
class CertificateError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Verdict { certified_robust, not_certified };
enum class CertificateKind { linear, smooth };

struct ClassBound {
  int c = 0;
  double margin = 0.0;     // f^I_y(x) - f^I_c(x)
  double grad_norm = 0.0;  // ||grad f^I_{y-c}(x)||_2
  double cosine = 0.0;     // angle between that gradient and delta
  double r_value = kInf;
  double V = 0.0;          // grad_norm * cosine - L ||delta||, smooth certificates only
  bool gradient_vanished = false;
};

struct Certificate {
  CertificateKind kind = CertificateKind::linear;
  double L = 0.0;
  int y = 0;
  std::vector<ClassBound> per_class;  // every c != y, ascending
  double r_min = kInf;
  int argmin_class = -1;  // class attaining r_min, -1 when every r is infinite
  double delta_norm = 0.0;
  Verdict verdict = Verdict::not_certified;

  const ClassBound& bound(int c) const;
  /// Targeted variant: only the boundary towards class j has to be out of reach.
  Verdict targeted_verdict(int j) const;
  bool certified() const { return verdict == Verdict::certified_robust; }
};

/// cos of the angle between g and delta, clamped to [-1, 1]. Throws on a zero vector.
double cosine_alignment(const Vec& g, const Vec& delta);

/// Directional distance to the class-c boundary of a linear estimate along delta:
/// +inf when cos >= 0, else -margin / (grad_norm * cos).
double linear_r(double margin, double grad_norm, double cosine);
/// The L-smooth analogue: V = grad_norm * cos - L ||delta||; +inf when V >= 0, else margin / |V|.
double smooth_r(double margin, double grad_norm, double cosine, double L, double delta_norm, double* V_out = nullptr);

Certificate linear_certificate(const McEstimator& inference, const Vec& x, int y, const Vec& delta);
Certificate smooth_certificate(const McEstimator& inference, const Vec& x, int y, const Vec& delta, double L);
Certificate linear_certificate(const StochasticModel& model, const Vec& x, int y, const SampleSet& set_I, const Vec& delta);
Certificate smooth_certificate(const StochasticModel& model, const Vec& x, int y, const SampleSet& set_I, const Vec& delta,
                               double L);

/// (f_y - max_{c != y} f_c) / ||grad (f_y - f_c*)||_2 for a deterministic model. Returns +inf
/// (and reports through `degenerate`) when the gradient vanishes.
double deterministic_distance(const StochasticModel& model, const Vec& x, int y, bool* degenerate = nullptr);

/// Smallest t in (0, t_max] at which the inference estimate stops predicting y along the
/// normalized direction: first flip on a 2048-point grid, refined by 60 bisection steps.
std::optional<double> boundary_line_search(const McEstimator& inference, const Vec& x, int y, const Vec& direction,
                                           double t_max);

struct ProbabilityEstimate {
  double p_hat = 0.0;
  double ci95 = 0.0;  // half-width, normal approximation
  int certified = 0;
  int trials = 0;
};

struct RobustnessOptions {
  bool smooth = false;
  double L = 0.0;
  int threads = 1;
};

/// Fraction of independent (A, I) draws for which the certificate holds. Trial i uses
/// split_seed(seed, "attack", i) and split_seed(seed, "infer", i). A vanished attack leaves
/// x unchanged and counts as robust iff f^I classifies x correctly; a trial whose inference
/// estimate misclassifies x counts as not robust.
ProbabilityEstimate robustness_probability(const StochasticModel& model, const Vec& x, int y, const AttackSpec& spec,
                                           int S_A, int S_I, int n_trials, Seed seed,
                                           const RobustnessOptions& opts = {});

/// Pairs drawn uniformly in the box [lo, hi]^d.
struct LipschitzOptions {
  Box region;
  int n_pairs = 1000;
  Seed seed{1};
  /// Upper bound on pair distance; 0 draws both points independently over the whole box.
  double max_distance = 0.0;
};

/// Largest sampled ||grad f_c(x1) - grad f_c(x2)|| / ||x1 - x2|| over pairs and classes; a
/// lower bound on the smoothness constant. Pairs closer than 1e-12 are skipped.
double empirical_lipschitz(const McEstimator& f, const LipschitzOptions& opts);

}  // namespace stochrob
