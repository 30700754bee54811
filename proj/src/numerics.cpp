#include "stochrob/numerics.hpp"

#include <cfloat>
#include <cmath>
#include <limits>

namespace stochrob {

std::string to_string(Activation a) { return a == Activation::relu ? "relu" : "tanh"; }
std::string to_string(OutputKind o) { return o == OutputKind::softmax ? "softmax" : "logits"; }

Activation parse_activation(std::string_view s) {
  if (s == "relu") return Activation::relu;
  if (s == "tanh") return Activation::tanh;
  throw std::invalid_argument("unknown activation '" + std::string(s) + "'");
}

OutputKind parse_output(std::string_view s) {
  if (s == "softmax") return OutputKind::softmax;
  if (s == "logits" || s == "identity") return OutputKind::logits;
  throw std::invalid_argument("unknown output kind '" + std::string(s) + "'");
}

std::string to_string(LossKind k) {
  switch (k) {
    case LossKind::cross_entropy: return "cross_entropy";
    case LossKind::neg_margin: return "neg_margin";
    case LossKind::cw_logits: return "cw_logits";
  }
  return "?";
}

LossKind parse_loss(std::string_view s) {
  if (s == "cross_entropy") return LossKind::cross_entropy;
  if (s == "neg_margin") return LossKind::neg_margin;
  if (s == "cw_logits") return LossKind::cw_logits;
  throw std::invalid_argument("unknown loss '" + std::string(s) + "'");
}

int Architecture::weight_offset(int l) const {
  int off = 0;
  for (int i = 0; i < l; ++i) off += layer_sizes[i + 1] * (layer_sizes[i] + 1);
  return off;
}

int Architecture::num_params() const { return weight_offset(num_layers()); }

void Architecture::validate() const {
  if (layer_sizes.size() < 2) throw std::invalid_argument("architecture needs at least input and output sizes");
  for (int s : layer_sizes)
    if (s < 1) throw std::invalid_argument("layer sizes must be positive");
}

ParamVector pack(const Architecture& arch, const std::vector<Mat>& weights,
                 const std::vector<Vec>& biases) {
  arch.validate();
  const int L = arch.num_layers();
  if (static_cast<int>(weights.size()) != L || static_cast<int>(biases.size()) != L)
    throw std::invalid_argument("pack: expected one weight matrix and bias per layer");
  ParamVector theta{Vec(arch.num_params())};
  for (int l = 0; l < L; ++l) {
    const int in = arch.layer_sizes[l], out = arch.layer_sizes[l + 1];
    if (weights[l].rows() != out || weights[l].cols() != in || biases[l].size() != out)
      throw std::invalid_argument("pack: layer " + std::to_string(l) + " has the wrong shape");
    Eigen::Map<RowMat>(theta.flat.data() + arch.weight_offset(l), out, in) = weights[l];
    theta.flat.segment(arch.bias_offset(l), out) = biases[l];
  }
  return theta;
}

void unpack(const Architecture& arch, const ParamVector& theta, std::vector<Mat>& weights,
            std::vector<Vec>& biases) {
  if (theta.size() != arch.num_params()) throw std::invalid_argument("unpack: parameter count mismatch");
  const int L = arch.num_layers();
  weights.resize(L);
  biases.resize(L);
  for (int l = 0; l < L; ++l) {
    const int in = arch.layer_sizes[l], out = arch.layer_sizes[l + 1];
    weights[l] = Eigen::Map<const RowMat>(theta.flat.data() + arch.weight_offset(l), out, in);
    biases[l] = theta.flat.segment(arch.bias_offset(l), out);
  }
}

void require_finite(const Vec& v, const char* what) {
  if (!v.allFinite()) throw NumericalError(std::string("non-finite values in ") + what);
}

Vec softmax(const Vec& z) {
  const double m = z.maxCoeff();
  Vec e = (z.array() - m).exp();
  return e / e.sum();
}

Vec softmax_pullback(const Vec& p, const Vec& u) {
  return p.cwiseProduct((u.array() - u.dot(p)).matrix());
}

namespace {

void check_dims(const Architecture& arch, const ParamVector& theta, const Vec& x) {
  if (theta.size() != arch.num_params())
    throw std::invalid_argument("forward: parameter vector has " + std::to_string(theta.size()) +
                                " entries, architecture needs " + std::to_string(arch.num_params()));
  if (x.size() != arch.input_dim())
    throw std::invalid_argument("forward: input has dimension " + std::to_string(x.size()) +
                                ", expected " + std::to_string(arch.input_dim()));
}

Eigen::Map<const RowMat> weight_view(const Architecture& arch, const ParamVector& theta, int l) {
  return {theta.flat.data() + arch.weight_offset(l), arch.layer_sizes[l + 1], arch.layer_sizes[l]};
}

}  // namespace

ForwardTrace forward_trace(const Architecture& arch, const ParamVector& theta, const Vec& x) {
  check_dims(arch, theta, x);
  require_finite(x, "forward input");
  const int L = arch.num_layers();
  ForwardTrace t;
  t.pre.reserve(L);
  t.post.reserve(L);
  t.post.push_back(x);
  for (int l = 0; l < L; ++l) {
    const int out = arch.layer_sizes[l + 1];
    Vec z = weight_view(arch, theta, l) * t.post.back() + theta.flat.segment(arch.bias_offset(l), out);
    if (l + 1 < L) {
      require_finite(z, "hidden pre-activation");
      Vec a = arch.activation == Activation::relu ? Vec(z.cwiseMax(0.0)) : Vec(z.array().tanh().matrix());
      t.pre.push_back(std::move(z));
      t.post.push_back(std::move(a));
    } else {
      t.pre.push_back(std::move(z));
    }
  }
  require_finite(t.pre.back(), "logits");
  t.output = arch.output == OutputKind::softmax ? softmax(t.pre.back()) : t.pre.back();
  return t;
}

Vec forward(const Architecture& arch, const ParamVector& theta, const Vec& x) {
  return forward_trace(arch, theta, x).output;
}

Vec forward_logits(const Architecture& arch, const ParamVector& theta, const Vec& x) {
  return forward_trace(arch, theta, x).pre.back();
}

void backward(const Architecture& arch, const ParamVector& theta, const ForwardTrace& trace,
              const Vec& upstream, Stage stage, Vec* grad_x, Vec* grad_theta) {
  const int L = arch.num_layers();
  Vec delta = (stage == Stage::output && arch.output == OutputKind::softmax)
                  ? softmax_pullback(trace.output, upstream)
                  : upstream;
  if (grad_theta) grad_theta->setZero(arch.num_params());
  for (int l = L - 1; l >= 0; --l) {
    const auto W = weight_view(arch, theta, l);
    if (grad_theta) {
      const int in = arch.layer_sizes[l], out = arch.layer_sizes[l + 1];
      Eigen::Map<RowMat>(grad_theta->data() + arch.weight_offset(l), out, in) =
          delta * trace.post[l].transpose();
      grad_theta->segment(arch.bias_offset(l), out) = delta;
    }
    if (l == 0 && !grad_x) break;
    Vec back = W.transpose() * delta;
    if (l > 0) {
      const Vec& z = trace.pre[l - 1];
      if (arch.activation == Activation::relu) {
        for (Eigen::Index i = 0; i < back.size(); ++i)
          if (!(z[i] > 0.0)) back[i] = 0.0;
      } else {
        const Vec& a = trace.post[l];
        back.array() *= 1.0 - a.array().square();
      }
    }
    delta = std::move(back);
  }
  if (grad_x) *grad_x = std::move(delta);
}

int argmax(const Vec& v) {
  int best = 0;
  for (Eigen::Index i = 1; i < v.size(); ++i)
    if (v[i] > v[best]) best = static_cast<int>(i);
  return best;
}

int argmax_excluding(const Vec& v, int y) {
  int best = -1;
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    if (i == y) continue;
    if (best < 0 || v[i] > v[best]) best = static_cast<int>(i);
  }
  return best;
}

namespace {

void check_class(const Vec& values, int y) {
  if (values.size() < 2) throw std::invalid_argument("loss: need at least two classes");
  if (y < 0 || y >= values.size()) throw std::invalid_argument("loss: class index out of range");
}

void check_probabilities(const Vec& p) {
  if ((p.array() < 0.0).any() || (p.array() > 1.0).any() || std::abs(p.sum() - 1.0) > 1e-9)
    throw std::invalid_argument("cross_entropy requires a probability vector");
}

}  // namespace

double loss_eval(const Vec& values, int y, LossKind kind) {
  check_class(values, y);
  switch (kind) {
    case LossKind::cross_entropy:
      check_probabilities(values);
      return -std::log(values[y]);
    case LossKind::neg_margin:
      return -(values[y] - values[argmax_excluding(values, y)]);
    case LossKind::cw_logits:
      return std::max(values[argmax_excluding(values, y)] - values[y], 0.0);
  }
  return 0.0;
}

Vec loss_upstream(const Vec& values, int y, LossKind kind) {
  check_class(values, y);
  Vec u = Vec::Zero(values.size());
  switch (kind) {
    case LossKind::cross_entropy:
      check_probabilities(values);
      u[y] = -1.0 / std::max(values[y], DBL_MIN);
      break;
    case LossKind::neg_margin:
      u[y] = -1.0;
      u[argmax_excluding(values, y)] = 1.0;
      break;
    case LossKind::cw_logits: {
      const int c = argmax_excluding(values, y);
      if (values[c] - values[y] > 0.0) {
        u[c] = 1.0;
        u[y] = -1.0;
      }
      break;
    }
  }
  return u;
}

namespace {

Vec head_upstream(const ScalarHead& head, const ForwardTrace& t, Stage& stage) {
  const Eigen::Index k = t.output.size();
  Vec u = Vec::Zero(k);
  switch (head.kind) {
    case ScalarHead::Kind::loss:
      stage = head.loss == LossKind::cw_logits ? Stage::logits : Stage::output;
      return loss_upstream(stage == Stage::logits ? t.pre.back() : t.output, head.y, head.loss);
    case ScalarHead::Kind::margin:
      if (head.c == head.y) throw std::invalid_argument("margin head needs c != y");
      stage = Stage::output;
      u[head.y] = 1.0;
      u[head.c] = -1.0;
      return u;
    case ScalarHead::Kind::output:
      stage = Stage::output;
      u[head.c] = 1.0;
      return u;
  }
  return u;
}

}  // namespace

double eval_head(const Architecture& arch, const ParamVector& theta, const Vec& x,
                 const ScalarHead& head) {
  const ForwardTrace t = forward_trace(arch, theta, x);
  switch (head.kind) {
    case ScalarHead::Kind::loss:
      return loss_eval(head.loss == LossKind::cw_logits ? t.pre.back() : t.output, head.y, head.loss);
    case ScalarHead::Kind::margin:
      return t.output[head.y] - t.output[head.c];
    case ScalarHead::Kind::output:
      return t.output[head.c];
  }
  return 0.0;
}

Vec grad_input(const Architecture& arch, const ParamVector& theta, const Vec& x,
               const ScalarHead& head) {
  const ForwardTrace t = forward_trace(arch, theta, x);
  Stage stage = Stage::output;
  const Vec u = head_upstream(head, t, stage);
  Vec g;
  backward(arch, theta, t, u, stage, &g, nullptr);
  require_finite(g, "input gradient");
  return g;
}

Vec finite_diff(const std::function<double(const Vec&)>& f, const Vec& x, double step) {
  if (!(step > 0.0)) throw std::invalid_argument("finite_diff: step must be positive");
  Vec g(x.size());
  Vec probe = x;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    probe[i] = x[i] + step;
    const double up = f(probe);
    probe[i] = x[i] - step;
    const double down = f(probe);
    probe[i] = x[i];
    g[i] = (up - down) / (2.0 * step);
  }
  return g;
}

Vec finite_diff(const Architecture& arch, const ParamVector& theta, const Vec& x,
                const ScalarHead& head, double step) {
  return finite_diff([&](const Vec& p) { return eval_head(arch, theta, p, head); }, x, step);
}

double relative_error(const Vec& a, const Vec& b) {
  const double scale = std::max(a.norm(), b.norm());
  if (scale == 0.0) return 0.0;
  return (a - b).norm() / scale;
}

std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

Seed split_seed(Seed parent, std::string_view label, std::uint64_t index) {
  // FNV-1a over the label, then two rounds of splitmix finalization keyed by the parent.
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : label) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  std::uint64_t z = mix64(parent.value ^ mix64(h));
  z = mix64(z ^ mix64(index + 0x632be59bd9b4e019ULL));
  return Seed{z};
}

}  // namespace stochrob
