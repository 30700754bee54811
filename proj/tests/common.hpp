#pragma once

#include "stochrob/models.hpp"

#include <random>

namespace testutil {

using namespace stochrob;

inline Vec uniform_vec(Rng& rng, int n, double lo, double hi) {
  std::uniform_real_distribution<double> u(lo, hi);
  Vec v(n);
  for (int i = 0; i < n; ++i) v[i] = u(rng);
  return v;
}

inline Vec normal_vec(Rng& rng, int n, double sd = 1.0) {
  std::normal_distribution<double> g(0.0, sd);
  Vec v(n);
  for (int i = 0; i < n; ++i) v[i] = g(rng);
  return v;
}

inline Mat normal_mat(Rng& rng, int r, int c, double sd = 1.0) {
  std::normal_distribution<double> g(0.0, sd);
  Mat m(r, c);
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) m(i, j) = g(rng);
  return m;
}

inline int uniform_int(Rng& rng, int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); }

inline Architecture random_arch(Rng& rng, int max_hidden_layers = 2, int max_width = 8) {
  Architecture a;
  a.layer_sizes.push_back(uniform_int(rng, 1, 5));
  const int h = uniform_int(rng, 0, max_hidden_layers);
  for (int i = 0; i < h; ++i) a.layer_sizes.push_back(uniform_int(rng, 1, max_width));
  a.layer_sizes.push_back(uniform_int(rng, 2, 4));
  a.activation = uniform_int(rng, 0, 1) ? Activation::tanh : Activation::relu;
  a.output = uniform_int(rng, 0, 1) ? OutputKind::logits : OutputKind::softmax;
  return a;
}

/// Smallest |pre-activation| of any hidden unit; inputs close to a ReLU kink are avoided
/// in gradient checks.
inline double kink_distance(const Architecture& arch, const ParamVector& theta, const Vec& x) {
  const ForwardTrace t = forward_trace(arch, theta, x);
  double best = 1e300;
  for (std::size_t l = 0; l + 1 < t.pre.size(); ++l) best = std::min(best, t.pre[l].cwiseAbs().minCoeff());
  return best;
}

}  // namespace testutil
