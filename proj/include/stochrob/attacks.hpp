#pragma once

#include "stochrob/models.hpp"

#include <functional>
#include <optional>
#include <vector>

namespace stochrob {

enum class AttackMethod { fgm_l2, fgsm_linf, pgd };
enum class Norm { l2, linf };

std::string to_string(AttackMethod m);
AttackMethod parse_attack_method(std::string_view s);

/// Valid input domain, applied to every coordinate.
struct Box {
  double lo = 0.0;
  double hi = 1.0;
};

struct AttackSpec {
  AttackMethod method = AttackMethod::fgm_l2;
  double eta = 0.5;
  LossKind loss = LossKind::cross_entropy;
  int S_A = 1;
  int pgd_steps = 10;
  double pgd_step = 0.0;  // nu; 0 selects eta / 5
  std::optional<Box> box;
  std::optional<int> target;
  bool resample_per_step = true;

  double step_size() const { return pgd_step > 0.0 ? pgd_step : eta / 5.0; }
  void validate() const;
};

struct AttackResult {
  Vec delta;
  double requested_norm = 0.0;
  double realized_norm = 0.0;
  bool zero_gradient = false;
  std::vector<double> per_step_norms;
  Seed attack_seed;
};

/// Below this L2 norm an attack gradient counts as vanished.
inline constexpr double kZeroGradient = 1e-30;

/// Ascent direction of the attack objective on f^A(x): grad L(f^A(x), y), or
/// -grad L(f^A(x), j) for a target j. The CW objective is differentiated through its
/// unclamped inner term max_{i != t} Z_i - Z_t, so a correctly classified point still gets
/// a direction.
Vec attack_gradient(const McEstimator& est, const Vec& x, int y, LossKind loss,
                    std::optional<int> target = std::nullopt);

Vec project_l2_ball(const Vec& delta, double radius);
/// Clips x + delta into the box and returns the realized perturbation.
Vec clip_perturbation(const Vec& x, const Vec& delta, const std::optional<Box>& box);

AttackResult fgm_l2(const McEstimator& attack_set, const Vec& x, int y, const AttackSpec& spec);
AttackResult fgsm_linf(const McEstimator& attack_set, const Vec& x, int y, const AttackSpec& spec);

/// Builds the estimator an attack is computed on from a seed.
using EstimatorFactory = std::function<McEstimator(Seed)>;

EstimatorFactory attack_sampler(const StochasticModel& model, int S_A);
EstimatorFactory attack_sampler(const SmoothedModel& sm, int S_A);

/// Projected gradient ascent from delta = 0. With resample_per_step the step-t gradient uses
/// a fresh set drawn from split_seed(seed, "pgd-step", t); otherwise every step uses
/// sampler(seed), the set a single-step attack with the same seed would use.
AttackResult pgd(const EstimatorFactory& sampler, const Vec& x, int y, const AttackSpec& spec, Seed seed);
AttackResult pgd(const StochasticModel& model, const Vec& x, int y, const AttackSpec& spec, Seed seed);

/// Dispatches on spec.method; single-step methods use sampler(seed).
AttackResult run_attack(const EstimatorFactory& sampler, const Vec& x, int y, const AttackSpec& spec, Seed seed);
AttackResult run_attack(const StochasticModel& model, const Vec& x, int y, const AttackSpec& spec, Seed seed);

double effective_length(const AttackResult& result, Norm p = Norm::l2);

}  // namespace stochrob
