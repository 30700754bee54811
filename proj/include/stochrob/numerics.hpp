#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace stochrob {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;
using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Raised when a value that must be finite is not (overflowing logits, diverging training, ...).
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Activation { relu, tanh };
enum class OutputKind { softmax, logits };

std::string to_string(Activation a);
std::string to_string(OutputKind o);
Activation parse_activation(std::string_view s);
OutputKind parse_output(std::string_view s);

/// Shape of a fully connected network. layer_sizes = {d, h_1, ..., h_n, k}; {d, k} is a
/// purely linear map.
struct Architecture {
  std::vector<int> layer_sizes;
  Activation activation = Activation::relu;
  OutputKind output = OutputKind::softmax;

  int input_dim() const { return layer_sizes.front(); }
  int num_classes() const { return layer_sizes.back(); }
  int num_layers() const { return static_cast<int>(layer_sizes.size()) - 1; }
  /// Offset of layer l's weight block inside the flat parameter vector.
  int weight_offset(int l) const;
  int bias_offset(int l) const { return weight_offset(l) + layer_sizes[l + 1] * layer_sizes[l]; }
  int num_params() const;
  void validate() const;

  bool operator==(const Architecture&) const = default;
};

/// All weights and biases of one network realization. Layout is layer-major; within a layer
/// the row-major (out x in) weight matrix precedes the bias vector.
struct ParamVector {
  Vec flat;

  Eigen::Index size() const { return flat.size(); }
  bool operator==(const ParamVector& o) const {
    return flat.size() == o.flat.size() && (flat.array() == o.flat.array()).all();
  }
};

ParamVector pack(const Architecture& arch, const std::vector<Mat>& weights,
                 const std::vector<Vec>& biases);
void unpack(const Architecture& arch, const ParamVector& theta, std::vector<Mat>& weights,
            std::vector<Vec>& biases);

/// Intermediate values cached by a forward pass, consumed by backward().
struct ForwardTrace {
  std::vector<Vec> pre;   // pre-activation of every layer, pre.back() = logits
  std::vector<Vec> post;  // post[0] = x, post[l] = activation(pre[l-1]) for hidden layers
  Vec output;             // softmax(logits) or logits
};

enum class Stage { output, logits };

ForwardTrace forward_trace(const Architecture& arch, const ParamVector& theta, const Vec& x);
Vec forward(const Architecture& arch, const ParamVector& theta, const Vec& x);
Vec forward_logits(const Architecture& arch, const ParamVector& theta, const Vec& x);

/// Reverse pass for the scalar <upstream, stage(x)>. Either gradient pointer may be null.
/// The ReLU derivative at exactly zero pre-activation is taken as 0.
void backward(const Architecture& arch, const ParamVector& theta, const ForwardTrace& trace,
              const Vec& upstream, Stage stage, Vec* grad_x, Vec* grad_theta);

Vec softmax(const Vec& logits);
/// J^T u for the softmax Jacobian J evaluated at probabilities p.
Vec softmax_pullback(const Vec& p, const Vec& u);

enum class LossKind { cross_entropy, neg_margin, cw_logits };

std::string to_string(LossKind k);
LossKind parse_loss(std::string_view s);

/// cross_entropy: -ln f_y on a probability vector.
/// neg_margin: -(f_y - max_{c != y} f_c).
/// cw_logits: max(max_{i != y} z_i - z_y, 0) on (averaged) logits.
double loss_eval(const Vec& values, int y, LossKind kind);

/// d loss / d values. The cw_logits hinge contributes zero gradient where it is clamped.
/// A zero f_y under cross-entropy is floored at DBL_MIN so the derivative stays finite.
Vec loss_upstream(const Vec& values, int y, LossKind kind);

/// Index of the largest entry; the smallest index wins exact ties.
int argmax(const Vec& v);
/// Largest entry excluding index y, and its index.
int argmax_excluding(const Vec& v, int y);

/// The scalar whose input gradient grad_input() returns.
struct ScalarHead {
  enum class Kind { loss, margin, output };
  Kind kind = Kind::output;
  LossKind loss = LossKind::cross_entropy;
  int y = 0;
  int c = 0;

  static ScalarHead of_loss(LossKind k, int y) { return {Kind::loss, k, y, 0}; }
  static ScalarHead of_margin(int y, int c) { return {Kind::margin, LossKind::neg_margin, y, c}; }
  static ScalarHead of_output(int c) { return {Kind::output, LossKind::neg_margin, 0, c}; }
};

double eval_head(const Architecture& arch, const ParamVector& theta, const Vec& x,
                 const ScalarHead& head);
Vec grad_input(const Architecture& arch, const ParamVector& theta, const Vec& x,
               const ScalarHead& head);

/// Central differences, one coordinate at a time.
Vec finite_diff(const std::function<double(const Vec&)>& f, const Vec& x, double step);
Vec finite_diff(const Architecture& arch, const ParamVector& theta, const Vec& x,
                const ScalarHead& head, double step);

void require_finite(const Vec& v, const char* what);
double relative_error(const Vec& a, const Vec& b);

/// 64-bit seed. Children are derived by split_seed, never by arithmetic on the value.
struct Seed {
  std::uint64_t value = 0;
  bool operator==(const Seed&) const = default;
};

Seed split_seed(Seed parent, std::string_view label, std::uint64_t index);
std::uint64_t mix64(std::uint64_t z);

}  // namespace stochrob
