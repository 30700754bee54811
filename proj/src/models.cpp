#include "stochrob/models.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace stochrob {

std::string to_string(NoiseKind k) {
  switch (k) {
    case NoiseKind::none: return "none";
    case NoiseKind::additive_gaussian: return "additive_gaussian";
    case NoiseKind::dropout: return "dropout";
  }
  return "?";
}

NoiseKind parse_noise_kind(std::string_view s) {
  if (s == "none") return NoiseKind::none;
  if (s == "additive_gaussian" || s == "gaussian") return NoiseKind::additive_gaussian;
  if (s == "dropout") return NoiseKind::dropout;
  throw std::invalid_argument("unknown noise kind '" + std::string(s) + "'");
}

std::string to_string(SampleRole r) {
  switch (r) {
    case SampleRole::attack: return "attack";
    case SampleRole::inference: return "inference";
    case SampleRole::generic: return "generic";
  }
  return "?";
}

void NoiseSpec::validate() const {
  if (kind == NoiseKind::additive_gaussian && !(sigma >= 0.0))
    throw std::invalid_argument("additive noise needs sigma >= 0");
  if (kind == NoiseKind::dropout && !(p > 0.0 && p < 1.0))
    throw std::invalid_argument("dropout probability must lie in (0, 1)");
}

namespace {

int quadratic_block(int d) { return d * d + d; }

}  // namespace

StochasticModel::StochasticModel(Architecture arch, ParamVector base, NoiseSpec noise, double input_noise)
    : arch_(std::move(arch)), base_(std::move(base)), noise_(noise), input_noise_(input_noise) {
  arch_.validate();
  noise_.validate();
  if (base_.size() != arch_.num_params())
    throw std::invalid_argument("model: parameter vector does not match the architecture");
  if (!(input_noise_ >= 0.0)) throw std::invalid_argument("model: input noise must be >= 0");
  require_finite(base_.flat, "base parameters");
}

StochasticModel StochasticModel::quadratic(const std::vector<Mat>& Q, const std::vector<Vec>& a,
                                           NoiseSpec noise) {
  if (Q.empty() || Q.size() != a.size()) throw std::invalid_argument("quadratic: need one (Q, a) pair per class");
  const int d = static_cast<int>(Q.front().rows());
  const int k = static_cast<int>(Q.size());
  if (noise.kind == NoiseKind::dropout) throw std::invalid_argument("quadratic: dropout is not defined");
  noise.validate();
  StochasticModel m;
  m.family_ = ModelFamily::quadratic;
  m.arch_ = Architecture{{d, k}, Activation::relu, OutputKind::logits};
  m.noise_ = noise;
  m.base_.flat.resize(k * quadratic_block(d));
  for (int c = 0; c < k; ++c) {
    if (Q[c].rows() != d || Q[c].cols() != d || a[c].size() != d)
      throw std::invalid_argument("quadratic: inconsistent dimensions");
    if ((Q[c] - Q[c].transpose()).norm() > 1e-12 * (1.0 + Q[c].norm()))
      throw std::invalid_argument("quadratic: Q must be symmetric");
    double* block = m.base_.flat.data() + c * quadratic_block(d);
    Eigen::Map<RowMat>(block, d, d) = Q[c];
    Eigen::Map<Vec>(block + d * d, d) = a[c];
  }
  require_finite(m.base_.flat, "quadratic parameters");
  return m;
}

StochasticModel StochasticModel::restore(ModelFamily family, Architecture arch, ParamVector base,
                                         NoiseSpec noise, double input_noise) {
  if (family == ModelFamily::mlp) return StochasticModel(std::move(arch), std::move(base), noise, input_noise);
  const int d = arch.input_dim(), k = arch.num_classes();
  if (base.size() != k * quadratic_block(d)) throw std::invalid_argument("quadratic: parameter count mismatch");
  std::vector<Mat> Q(k);
  std::vector<Vec> a(k);
  for (int c = 0; c < k; ++c) {
    const double* block = base.flat.data() + c * quadratic_block(d);
    Q[c] = Eigen::Map<const RowMat>(block, d, d);
    a[c] = Eigen::Map<const Vec>(block + d * d, d);
  }
  StochasticModel m = quadratic(Q, a, noise);
  m.input_noise_ = input_noise;
  return m;
}

bool StochasticModel::deterministic() const {
  const bool param_noise = noise_.kind == NoiseKind::dropout ||
                           (noise_.kind == NoiseKind::additive_gaussian && noise_.sigma > 0.0);
  return !param_noise && input_noise_ == 0.0;
}

StochasticModel StochasticModel::with_noise(NoiseSpec noise) const {
  if (family_ == ModelFamily::quadratic && noise.kind == NoiseKind::dropout)
    throw std::invalid_argument("quadratic: dropout is not defined");
  noise.validate();
  StochasticModel m = *this;
  m.noise_ = noise;
  return m;
}

StochasticModel StochasticModel::with_params(ParamVector base) const {
  if (base.size() != base_.size()) throw std::invalid_argument("with_params: size mismatch");
  StochasticModel m = *this;
  m.base_ = std::move(base);
  return m;
}

Realized StochasticModel::sample(Rng& rng) const {
  Realized r{base_, Vec()};
  switch (noise_.kind) {
    case NoiseKind::none:
      break;
    case NoiseKind::additive_gaussian: {
      if (noise_.sigma == 0.0) break;
      std::normal_distribution<double> n(0.0, noise_.sigma);
      if (family_ == ModelFamily::mlp) {
        for (Eigen::Index i = 0; i < r.theta.size(); ++i) r.theta.flat[i] += n(rng);
      } else {
        const int d = input_dim();
        for (int c = 0; c < num_classes(); ++c) {
          double* a = r.theta.flat.data() + c * quadratic_block(d) + d * d;
          for (int i = 0; i < d; ++i) a[i] += n(rng);
        }
      }
      break;
    }
    case NoiseKind::dropout: {
      std::bernoulli_distribution keep(1.0 - noise_.p);
      const double up = 1.0 / (1.0 - noise_.p);
      r.scale = Vec::Ones(r.theta.size());
      // Hidden unit j of layer l feeds column j of the weight matrix of layer l.
      for (int l = 1; l < arch_.num_layers(); ++l) {
        const int in = arch_.layer_sizes[l], out = arch_.layer_sizes[l + 1];
        const int off = arch_.weight_offset(l);
        for (int j = 0; j < in; ++j) {
          const double f = keep(rng) ? up : 0.0;
          for (int i = 0; i < out; ++i) {
            r.theta.flat[off + i * in + j] *= f;
            r.scale[off + i * in + j] = f;
          }
        }
      }
      break;
    }
  }
  return r;
}

Vec StochasticModel::scores(const ParamVector& theta, const Vec& x) const {
  if (family_ == ModelFamily::mlp) return forward(arch_, theta, x);
  return logits(theta, x);
}

Vec StochasticModel::logits(const ParamVector& theta, const Vec& x) const {
  if (family_ == ModelFamily::mlp) return forward_logits(arch_, theta, x);
  const int d = input_dim(), k = num_classes();
  if (x.size() != d) throw std::invalid_argument("quadratic: input dimension mismatch");
  Vec f(k);
  for (int c = 0; c < k; ++c) {
    const double* block = theta.flat.data() + c * quadratic_block(d);
    const Eigen::Map<const RowMat> Q(block, d, d);
    const Eigen::Map<const Vec> a(block + d * d, d);
    f[c] = x.dot(Q * x) + a.dot(x);
  }
  require_finite(f, "quadratic scores");
  return f;
}

Vec StochasticModel::pullback(const ParamVector& theta, const Vec& x, const Vec& u, Stage stage) const {
  if (family_ == ModelFamily::mlp) {
    const ForwardTrace t = forward_trace(arch_, theta, x);
    Vec g;
    backward(arch_, theta, t, u, stage, &g, nullptr);
    return g;
  }
  const int d = input_dim();
  Vec g = Vec::Zero(d);
  for (int c = 0; c < num_classes(); ++c) {
    if (u[c] == 0.0) continue;
    const double* block = theta.flat.data() + c * quadratic_block(d);
    const Eigen::Map<const RowMat> Q(block, d, d);
    const Eigen::Map<const Vec> a(block + d * d, d);
    g += u[c] * (Q * x + Q.transpose() * x + a);
  }
  return g;
}

Mat StochasticModel::jacobian(const ParamVector& theta, const Vec& x) const {
  const int k = num_classes();
  Mat J(k, input_dim());
  if (family_ == ModelFamily::mlp) {
    const ForwardTrace t = forward_trace(arch_, theta, x);
    Vec g;
    for (int c = 0; c < k; ++c) {
      backward(arch_, theta, t, Vec::Unit(k, c), Stage::output, &g, nullptr);
      J.row(c) = g.transpose();
    }
    return J;
  }
  for (int c = 0; c < k; ++c) J.row(c) = pullback(theta, x, Vec::Unit(k, c), Stage::output).transpose();
  return J;
}

double StochasticModel::quadratic_smoothness() const {
  if (family_ != ModelFamily::quadratic) throw std::logic_error("quadratic_smoothness: not a quadratic model");
  const int d = input_dim();
  double best = 0.0;
  for (int c = 0; c < num_classes(); ++c) {
    const Mat Q = Eigen::Map<const RowMat>(base_.flat.data() + c * quadratic_block(d), d, d);
    Eigen::SelfAdjointEigenSolver<Mat> es(0.5 * (Q + Q.transpose()), Eigen::EigenvaluesOnly);
    best = std::max(best, es.eigenvalues().cwiseAbs().maxCoeff());
  }
  return 2.0 * best;
}

SampleSet sample_params(const StochasticModel& model, Seed seed, int S, SampleRole role) {
  if (S < 1) throw std::invalid_argument("sample_params: S must be >= 1");
  SampleSet set;
  set.seed = seed;
  set.role = role;
  set.params.reserve(S);
  for (int s = 0; s < S; ++s) {
    Rng rng = make_rng(split_seed(seed, "theta", s));
    set.params.push_back(model.sample(rng).theta);
  }
  if (model.input_noise() > 0.0) {
    std::normal_distribution<double> n(0.0, model.input_noise());
    set.input_offsets.reserve(S);
    for (int s = 0; s < S; ++s) {
      Rng rng = make_rng(split_seed(seed, "input", s));
      Vec e(model.input_dim());
      for (Eigen::Index i = 0; i < e.size(); ++i) e[i] = n(rng);
      set.input_offsets.push_back(std::move(e));
    }
  }
  return set;
}

McEstimator::McEstimator(const StochasticModel& model, SampleSet set)
    : model_(&model), set_(std::move(set)), offsets_(set_.input_offsets) {
  if (set_.size() < 1) throw std::invalid_argument("estimator: empty sample set");
}

namespace {

std::vector<Vec> draw_smoothing_noise(const SmoothedModel& sm, int S, Seed seed) {
  std::normal_distribution<double> n(0.0, sm.sigma);
  std::vector<Vec> noise;
  noise.reserve(static_cast<std::size_t>(S) * sm.m_noise);
  for (int i = 0; i < S * sm.m_noise; ++i) {
    Rng rng = make_rng(split_seed(seed, "smoothing", i));
    Vec e(sm.inner.input_dim());
    for (Eigen::Index j = 0; j < e.size(); ++j) e[j] = n(rng);
    noise.push_back(std::move(e));
  }
  return noise;
}

}  // namespace

McEstimator::McEstimator(const SmoothedModel& sm, SampleSet set, Seed noise_seed)
    : McEstimator(sm, set, draw_smoothing_noise(sm, set.size(), noise_seed)) {}

McEstimator::McEstimator(const SmoothedModel& sm, SampleSet set, std::vector<Vec> noise)
    : model_(&sm.inner), set_(std::move(set)), per_param_(sm.m_noise) {
  if (!(sm.sigma > 0.0)) throw std::invalid_argument("smoothing: sigma must be positive");
  if (sm.m_noise < 1) throw std::invalid_argument("smoothing: m_noise must be >= 1");
  if (static_cast<int>(noise.size()) != members())
    throw std::invalid_argument("smoothing: expected S * m_noise noise draws");
  offsets_ = std::move(noise);
  if (!set_.input_offsets.empty())
    for (int m = 0; m < members(); ++m) offsets_[m] += set_.input_offsets[m / per_param_];
}

Vec McEstimator::member_input(const Vec& x, int m) const {
  if (offsets_.empty()) return x;
  return x + offsets_[m];
}

McPrediction McEstimator::predict(const Vec& x) const {
  const int k = num_classes(), S = set_.size();
  McPrediction p;
  p.per_sample_scores = Mat::Zero(S, k);
  for (int s = 0; s < S; ++s) {
    Vec acc = Vec::Zero(k);
    for (int j = 0; j < per_param_; ++j) {
      const int m = s * per_param_ + j;
      acc += model_->scores(set_.params[s], member_input(x, m));
    }
    p.per_sample_scores.row(s) = (acc / per_param_).transpose();
  }
  p.mean_scores = Vec::Zero(k);
  for (int s = 0; s < S; ++s) p.mean_scores += p.per_sample_scores.row(s).transpose();
  p.mean_scores /= S;
  p.predicted_class = argmax(p.mean_scores);
  return p;
}

Vec McEstimator::mean(const Vec& x, Stage stage) const {
  if (stage == Stage::output) return predict(x).mean_scores;
  Vec acc = Vec::Zero(num_classes());
  for (int m = 0; m < members(); ++m)
    acc += model_->logits(set_.params[m / per_param_], member_input(x, m));
  return acc / members();
}

Vec McEstimator::pullback(const Vec& x, const Vec& u, Stage stage) const {
  Vec g = Vec::Zero(input_dim());
  for (int m = 0; m < members(); ++m)
    g += model_->pullback(set_.params[m / per_param_], member_input(x, m), u, stage);
  g /= members();
  require_finite(g, "estimator gradient");
  return g;
}

Mat McEstimator::jacobian(const Vec& x) const {
  Mat J = Mat::Zero(num_classes(), input_dim());
  for (int m = 0; m < members(); ++m) J += model_->jacobian(set_.params[m / per_param_], member_input(x, m));
  return J / members();
}

Vec McEstimator::margin_gradient(const Vec& x, int y, int c) const {
  if (c == y) throw std::invalid_argument("margin gradient needs c != y");
  Vec u = Vec::Zero(num_classes());
  u[y] = 1.0;
  u[c] = -1.0;
  return pullback(x, u, Stage::output);
}

McPrediction mc_predict(const StochasticModel& model, const Vec& x, const SampleSet& set) {
  return McEstimator(model, set).predict(x);
}

Vec mc_margin_gradient(const StochasticModel& model, const Vec& x, const SampleSet& set, int y, int c) {
  return McEstimator(model, set).margin_gradient(x, y, c);
}

McPrediction smooth_predict(const SmoothedModel& sm, const Vec& x, const SampleSet& set, Seed noise_seed) {
  return McEstimator(sm, set, noise_seed).predict(x);
}

Dataset Dataset::slice(int begin, int end) const {
  if (begin < 0 || end > size() || begin > end) throw std::out_of_range("dataset slice out of range");
  Dataset d;
  d.X = X.middleRows(begin, end - begin);
  d.y.assign(y.begin() + begin, y.begin() + end);
  d.num_classes = num_classes;
  return d;
}

ParamVector init_params(const Architecture& arch, Seed seed) {
  arch.validate();
  ParamVector theta{Vec::Zero(arch.num_params())};
  Rng rng = make_rng(seed);
  for (int l = 0; l < arch.num_layers(); ++l) {
    const int in = arch.layer_sizes[l], out = arch.layer_sizes[l + 1];
    const double sd = arch.activation == Activation::relu ? std::sqrt(2.0 / in) : std::sqrt(2.0 / (in + out));
    std::normal_distribution<double> n(0.0, sd);
    const int off = arch.weight_offset(l);
    for (int i = 0; i < in * out; ++i) theta.flat[off + i] = n(rng);
  }
  return theta;
}

StochasticModel make_mlp(const Architecture& arch, Seed init_seed, NoiseSpec noise) {
  return StochasticModel(arch, init_params(arch, init_seed), noise);
}

StochasticModel make_linear_gaussian(const Mat& mean_weights, double sigma_w, const Vec& mean_bias) {
  if (!(sigma_w >= 0.0)) throw std::invalid_argument("linear model: sigma_w must be >= 0");
  const int k = static_cast<int>(mean_weights.rows()), d = static_cast<int>(mean_weights.cols());
  Architecture arch{{d, k}, Activation::relu, OutputKind::logits};
  const Vec b = mean_bias.size() == 0 ? Vec(Vec::Zero(k)) : mean_bias;
  return StochasticModel(arch, pack(arch, {mean_weights}, {b}), NoiseSpec::gaussian(sigma_w));
}

StochasticModel make_quadratic(const std::vector<Mat>& Q, const std::vector<Vec>& a, NoiseSpec noise) {
  return StochasticModel::quadratic(Q, a, noise);
}

TrainResult train(const StochasticModel& init, const Dataset& data, const TrainOptions& opts) {
  if (init.family() != ModelFamily::mlp) throw std::invalid_argument("train: only networks are trainable");
  if (data.size() == 0) throw std::invalid_argument("train: empty dataset");
  if (data.dim() != init.input_dim()) throw std::invalid_argument("train: data dimension does not match the model");
  for (int label : data.y)
    if (label < 0 || label >= init.num_classes()) throw std::invalid_argument("train: label out of range");
  if (opts.batch < 1 || opts.epochs < 0 || opts.noisy_copies < 0)
    throw std::invalid_argument("train: invalid options");

  const Architecture& arch = init.arch();
  const int h = arch.num_params();
  Vec theta = init.base_params().flat;
  Vec m1 = Vec::Zero(h), m2 = Vec::Zero(h);
  constexpr double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  long step = 0;

  const int copies = std::max(1, opts.noisy_copies);
  const int n = data.size() * copies;
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng = make_rng(opts.seed);
  std::normal_distribution<double> input_noise(0.0, opts.sigma_train);

  TrainResult result;
  Vec grad(h), g_theta;
  for (int epoch = 0; epoch < opts.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;
    try {
      for (int start = 0; start < n; start += opts.batch) {
        const int end = std::min(n, start + opts.batch);
        grad.setZero();
        const StochasticModel current = init.with_params(ParamVector{theta});
        for (int b = start; b < end; ++b) {
          const int i = order[b] / copies;
          Vec x = data.point(i);
          if (opts.noisy_copies > 0)
            for (Eigen::Index j = 0; j < x.size(); ++j) x[j] += input_noise(rng);
          Realized r = opts.sample_noise ? current.sample(rng) : Realized{current.base_params(), Vec()};
          const ForwardTrace t = forward_trace(arch, r.theta, x);
          const Vec p = softmax(t.pre.back());
          epoch_loss += -std::log(std::max(p[data.y[i]], 1e-300));
          Vec u = p;
          u[data.y[i]] -= 1.0;
          backward(arch, r.theta, t, u, Stage::logits, nullptr, &g_theta);
          if (r.scale.size() > 0) g_theta.array() *= r.scale.array();
          grad += g_theta;
        }
        grad /= (end - start);
        if (opts.weight_decay > 0.0) grad += opts.weight_decay * theta;
        ++step;
        m1 = beta1 * m1 + (1.0 - beta1) * grad;
        m2 = beta2 * m2 + (1.0 - beta2) * grad.cwiseAbs2();
        const double c1 = 1.0 - std::pow(beta1, step), c2 = 1.0 - std::pow(beta2, step);
        theta.array() -= opts.lr * (m1.array() / c1) / ((m2.array() / c2).sqrt() + eps);
      }
    } catch (const NumericalError&) {
      throw NumericalError("training diverged at epoch " + std::to_string(epoch));
    }
    epoch_loss /= n;
    if (!std::isfinite(epoch_loss) || !theta.allFinite())
      throw NumericalError("training diverged at epoch " + std::to_string(epoch));
    result.epoch_loss.push_back(epoch_loss);
  }
  result.model = init.with_params(ParamVector{theta});
  return result;
}

}  // namespace stochrob
