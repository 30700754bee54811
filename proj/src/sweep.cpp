#include "stochrob/harness.hpp"

#include "stochrob/parallel.hpp"

#include <cmath>
#include <limits>
#include <sstream>

namespace stochrob {

namespace {

bool same(double a, double b) { return (std::isnan(a) && std::isnan(b)) || a == b; }

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

}  // namespace

bool ExperimentRecord::operator==(const ExperimentRecord& o) const {
  return same(eta, o.eta) && s_attack == o.s_attack && s_infer == o.s_infer && repeat == o.repeat &&
         same(clean_acc, o.clean_acc) && same(adv_acc, o.adv_acc) && same(eff_len, o.eff_len) &&
         same(mean_cos, o.mean_cos) && same(mean_grad_norm, o.mean_grad_norm) && same(cert_lin, o.cert_lin) &&
         same(cert_smooth, o.cert_smooth) && skipped == o.skipped;
}

PointSeeds point_seeds(Seed master, int repeat, int point) {
  const Seed p = split_seed(split_seed(master, "repeat", repeat), "point", point);
  return {split_seed(p, "attack", 0), split_seed(p, "infer", 0)};
}

McEstimator inference_estimator(const StochasticModel& model, const std::optional<SmoothedModel>& smoothed,
                                Seed seed, int S_I) {
  SampleSet set = sample_params(model, seed, S_I, SampleRole::inference);
  if (smoothed) return McEstimator(*smoothed, std::move(set), split_seed(seed, "smoothing-noise", 0));
  return McEstimator(model, std::move(set));
}

PointOutcome evaluate_point(const StochasticModel& model, const std::optional<SmoothedModel>& smoothed,
                            const Vec& x, int y, const AttackSpec& spec, int S_I, const PointSeeds& seeds,
                            std::optional<double> L) {
  PointOutcome out;
  const EstimatorFactory sampler = smoothed ? attack_sampler(*smoothed, spec.S_A) : attack_sampler(model, spec.S_A);
  const McEstimator inf = inference_estimator(model, smoothed, seeds.infer, S_I);
  out.clean_correct = inf.classify(x) == y;
  const AttackResult atk = run_attack(sampler, x, y, spec, seeds.attack);
  out.eff_len = effective_length(atk, spec.method == AttackMethod::fgsm_linf ? Norm::linf : Norm::l2);
  out.adv_correct = inf.classify(x + atk.delta) == y;
  if (!out.clean_correct) return out;
  if (!(atk.delta.norm() > 0.0)) {
    out.cert_lin = true;
    out.cert_smooth = L.has_value();
    return out;
  }
  const Certificate lin = linear_certificate(inf, x, y, atk.delta);
  const int j = lin.argmin_class >= 0 ? lin.argmin_class : argmax_excluding(inf.mean_scores(x), y);
  out.counted = true;
  out.cosine = lin.bound(j).cosine;
  out.grad_norm = lin.bound(j).grad_norm;
  out.cert_lin = lin.certified();
  if (L) out.cert_smooth = smooth_certificate(inf, x, y, atk.delta, *L).certified();
  return out;
}

std::vector<ExperimentRecord> run_sweep(const ExperimentConfig& cfg, const StochasticModel& model,
                                        const Dataset& eval) {
  cfg.validate();
  if (eval.size() < 1) throw std::invalid_argument("sweep: no evaluation points");
  const std::optional<SmoothedModel> smoothed = smoothed_model(cfg, model);
  const std::optional<double> L = cfg.smoothness();
  const int n = eval.size();

  std::vector<ExperimentRecord> records;
  records.reserve(cfg.grid.eta.size() * cfg.grid.s_attack.size() * cfg.grid.s_infer.size() * cfg.repeats);
  std::vector<PointOutcome> outcomes(n);
  for (double eta : cfg.grid.eta) {
    for (int S_A : cfg.grid.s_attack) {
      for (int S_I : cfg.grid.s_infer) {
        for (int r = 0; r < cfg.repeats; ++r) {
          AttackSpec spec = cfg.attack;
          spec.eta = eta;
          spec.S_A = S_A;
          try {
            parallel_for(n, cfg.threads, [&](int i) {
              outcomes[i] = evaluate_point(model, smoothed, eval.point(i), eval.y[i], spec, S_I,
                                           point_seeds(cfg.master_seed, r, i), L);
            });
          } catch (const std::exception& e) {
            std::ostringstream msg;
            msg.precision(17);
            msg << "sweep cell (eta=" << eta << ", s_attack=" << S_A << ", s_infer=" << S_I << ", repeat=" << r
                << ") failed: " << e.what();
            throw std::runtime_error(msg.str());
          }
          ExperimentRecord rec;
          rec.eta = eta;
          rec.s_attack = S_A;
          rec.s_infer = S_I;
          rec.repeat = r;
          int clean = 0, adv = 0, counted = 0, lin = 0, smooth = 0;
          double len = 0.0, cos = 0.0, gn = 0.0;
          for (const PointOutcome& o : outcomes) {
            clean += o.clean_correct;
            adv += o.adv_correct;
            len += o.eff_len;
            lin += o.cert_lin;
            smooth += o.cert_smooth;
            if (o.counted) {
              ++counted;
              cos += o.cosine;
              gn += o.grad_norm;
            }
          }
          rec.clean_acc = static_cast<double>(clean) / n;
          rec.adv_acc = static_cast<double>(adv) / n;
          rec.eff_len = len / n;
          rec.mean_cos = counted ? cos / counted : kNaN;
          rec.mean_grad_norm = counted ? gn / counted : kNaN;
          rec.cert_lin = static_cast<double>(lin) / n;
          rec.cert_smooth = L ? static_cast<double>(smooth) / n : kNaN;
          rec.skipped = n - counted;
          records.push_back(rec);
        }
      }
    }
  }
  return records;
}

std::vector<ExperimentRecord> run_sweep(const ExperimentConfig& cfg) {
  cfg.validate();
  const Dataset data = gen_dataset(cfg.dataset);
  const StochasticModel model = prepare_model(cfg, data);
  return run_sweep(cfg, model, eval_split(cfg, data));
}

}  // namespace stochrob
