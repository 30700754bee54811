#pragma once

#include "stochrob/numerics.hpp"

#include <optional>
#include <random>
#include <string>
#include <vector>

namespace stochrob {

/// Random engine for one derived seed.
using Rng = std::mt19937_64;
inline Rng make_rng(Seed s) { return Rng(s.value); }

enum class NoiseKind { none, additive_gaussian, dropout };

struct NoiseSpec {
  NoiseKind kind = NoiseKind::none;
  double sigma = 0.0;  // additive_gaussian: std of every parameter perturbation
  double p = 0.0;      // dropout: drop probability of a hidden unit

  static NoiseSpec none() { return {}; }
  static NoiseSpec gaussian(double sigma) { return {NoiseKind::additive_gaussian, sigma, 0.0}; }
  static NoiseSpec dropout(double p) { return {NoiseKind::dropout, 0.0, p}; }
  void validate() const;
};

std::string to_string(NoiseKind k);
NoiseKind parse_noise_kind(std::string_view s);

enum class ModelFamily { mlp, quadratic };

/// One realization of the parameter distribution. `scale` is the per-parameter factor that
/// maps base-parameter gradients onto realized-parameter gradients (dropout masks); empty
/// means all ones.
struct Realized {
  ParamVector theta;
  Vec scale;
};

/// A classifier f(x, theta) with a parameter sampler p(theta).
///
/// mlp: a fully connected network over `arch`; noise acts on every weight and bias
/// (additive) or on hidden units (dropout, inverted scaling).
/// quadratic: f_c(x) = x^T Q_c x + a_c . x with parameters laid out per class as Q_c
/// (row-major) followed by a_c; additive noise perturbs only the a_c entries so every
/// realization shares the same exact smoothness constant.
class StochasticModel {
 public:
  StochasticModel() = default;
  StochasticModel(Architecture arch, ParamVector base, NoiseSpec noise, double input_noise = 0.0);

  static StochasticModel quadratic(const std::vector<Mat>& Q, const std::vector<Vec>& a,
                                   NoiseSpec noise = {});
  /// Reassembles a model from its serialized parts.
  static StochasticModel restore(ModelFamily family, Architecture arch, ParamVector base,
                                 NoiseSpec noise, double input_noise);

  ModelFamily family() const { return family_; }
  const Architecture& arch() const { return arch_; }
  const ParamVector& base_params() const { return base_; }
  const NoiseSpec& noise() const { return noise_; }
  double input_noise() const { return input_noise_; }
  int input_dim() const { return arch_.input_dim(); }
  int num_classes() const { return arch_.num_classes(); }
  bool deterministic() const;

  StochasticModel with_noise(NoiseSpec noise) const;
  StochasticModel with_params(ParamVector base) const;

  Realized sample(Rng& rng) const;

  Vec scores(const ParamVector& theta, const Vec& x) const;
  Vec logits(const ParamVector& theta, const Vec& x) const;
  /// Gradient w.r.t. x of <u, stage(x, theta)>.
  Vec pullback(const ParamVector& theta, const Vec& x, const Vec& u, Stage stage) const;
  /// k x d Jacobian of the scores of one realization.
  Mat jacobian(const ParamVector& theta, const Vec& x) const;

  /// Exact smoothness constant 2 max_c ||Q_c||_2 of the quadratic family.
  double quadratic_smoothness() const;

 private:
  ModelFamily family_ = ModelFamily::mlp;
  Architecture arch_;
  ParamVector base_;
  NoiseSpec noise_;
  double input_noise_ = 0.0;
};

enum class SampleRole { attack, inference, generic };
std::string to_string(SampleRole r);

/// An explicit draw {theta_1..theta_S}. `input_offsets` is empty unless the model injects
/// input noise, in which case realization s evaluates f(x + input_offsets[s], theta_s).
struct SampleSet {
  std::vector<ParamVector> params;
  std::vector<Vec> input_offsets;
  Seed seed;
  SampleRole role = SampleRole::generic;

  int size() const { return static_cast<int>(params.size()); }
};

/// Realization s is drawn from its own child seed split_seed(seed, "theta", s), so a set of
/// size S is a prefix of the set of size S' > S drawn from the same seed.
SampleSet sample_params(const StochasticModel& model, Seed seed, int S,
                        SampleRole role = SampleRole::generic);

struct McPrediction {
  Vec mean_scores;
  Mat per_sample_scores;  // S x k
  int predicted_class = 0;
};

/// f(x) = E_eps[f_inner(x + eps)], eps ~ N(0, sigma^2 I), evaluated with m_noise draws per
/// parameter realization.
struct SmoothedModel {
  StochasticModel inner;
  double sigma = 0.25;
  int m_noise = 10;

  double L_bound() const { return 2.0 / (sigma * sigma); }
};

/// The Monte-Carlo estimate f^S(x) = (1/S) sum_s f(x, theta_s) for one fixed sample set,
/// optionally composed with fixed Gaussian smoothing draws. All means are taken in index
/// order. The referenced model must outlive the estimator.
class McEstimator {
 public:
  McEstimator(const StochasticModel& model, SampleSet set);
  McEstimator(const SmoothedModel& sm, SampleSet set, Seed noise_seed);
  /// `noise` holds set.size() * sm.m_noise draws, realization-major.
  McEstimator(const SmoothedModel& sm, SampleSet set, std::vector<Vec> noise);

  const StochasticModel& model() const { return *model_; }
  const SampleSet& set() const { return set_; }
  int num_classes() const { return model_->num_classes(); }
  int input_dim() const { return model_->input_dim(); }

  McPrediction predict(const Vec& x) const;
  Vec mean(const Vec& x, Stage stage) const;
  Vec mean_scores(const Vec& x) const { return mean(x, Stage::output); }
  int classify(const Vec& x) const { return argmax(mean_scores(x)); }
  /// Gradient of <u, mean stage output>.
  Vec pullback(const Vec& x, const Vec& u, Stage stage) const;
  Mat jacobian(const Vec& x) const;
  Vec margin_gradient(const Vec& x, int y, int c) const;

 private:
  const StochasticModel* model_;
  SampleSet set_;
  int per_param_ = 1;
  std::vector<Vec> offsets_;  // one per member, empty when no member is shifted

  int members() const { return set_.size() * per_param_; }
  Vec member_input(const Vec& x, int m) const;
};

McPrediction mc_predict(const StochasticModel& model, const Vec& x, const SampleSet& set);
Vec mc_margin_gradient(const StochasticModel& model, const Vec& x, const SampleSet& set, int y, int c);
McPrediction smooth_predict(const SmoothedModel& sm, const Vec& x, const SampleSet& set, Seed noise_seed);

/// Labeled points, one row per point. Labels are 0-based.
struct Dataset {
  Mat X;
  std::vector<int> y;
  int num_classes = 2;

  int size() const { return static_cast<int>(X.rows()); }
  int dim() const { return static_cast<int>(X.cols()); }
  Vec point(int i) const { return X.row(i).transpose(); }
  Dataset slice(int begin, int end) const;
};

struct TrainOptions {
  int epochs = 100;
  double lr = 1e-2;
  int batch = 32;
  int noisy_copies = 0;      // replace every example by this many Gaussian-perturbed copies
  double sigma_train = 0.0;  // std of those copies
  bool sample_noise = true;  // draw one parameter realization per example during training
  double weight_decay = 0.0;
  Seed seed{1};
};

struct TrainResult {
  StochasticModel model;
  std::vector<double> epoch_loss;
};

/// Mini-batch Adam on softmax cross-entropy. Throws NumericalError naming the epoch if the
/// loss stops being finite.
TrainResult train(const StochasticModel& init, const Dataset& data, const TrainOptions& opts);

/// He (relu) or Glorot (tanh) normal initialization, zero biases.
ParamVector init_params(const Architecture& arch, Seed seed);

StochasticModel make_mlp(const Architecture& arch, Seed init_seed, NoiseSpec noise = {});

/// Logits f_c(x) = theta_c . x + b_c with every weight and bias ~ N(mean, sigma_w^2).
StochasticModel make_linear_gaussian(const Mat& mean_weights, double sigma_w,
                                     const Vec& mean_bias = Vec());

StochasticModel make_quadratic(const std::vector<Mat>& Q, const std::vector<Vec>& a,
                               NoiseSpec noise = {});

void save_checkpoint(const StochasticModel& model, const std::string& path);
StochasticModel load_checkpoint(const std::string& path);
std::string checkpoint_json(const StochasticModel& model);
StochasticModel checkpoint_from_json(const std::string& text);

}  // namespace stochrob
