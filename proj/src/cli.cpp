#include "stochrob/harness.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <filesystem>
#include <iostream>

namespace stochrob {

namespace {

struct Overrides {
  std::string config;
  std::vector<double> eta;
  std::vector<int> s_attack;
  std::vector<int> s_infer;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<int> threads;
  int n_mc = 1000;
  double threshold = 1.0 - 1e-12;
};

void add_common(CLI::App* cmd, Overrides& o) {
  cmd->add_option("-c,--config", o.config, "JSON experiment config file")->required();
  cmd->add_option("--eta", o.eta, "perturbation strengths, replaces grid.eta")->delimiter(',');
  cmd->add_option("--s-attack", o.s_attack, "attack sample sizes, replaces grid.s_attack")->delimiter(',');
  cmd->add_option("--s-infer", o.s_infer, "inference sample sizes, replaces grid.s_infer")->delimiter(',');
  cmd->add_option("--seed", o.seed, "master seed");
  cmd->add_option("--out", o.out, "output directory");
  cmd->add_option("--threads", o.threads, "worker threads (results do not depend on it)");
}

ExperimentConfig resolve(const Overrides& o) {
  ExperimentConfig cfg = load_config(o.config);
  if (!o.eta.empty()) cfg.grid.eta = o.eta;
  if (!o.s_attack.empty()) cfg.grid.s_attack = o.s_attack;
  if (!o.s_infer.empty()) cfg.grid.s_infer = o.s_infer;
  if (o.seed) cfg.master_seed = Seed{*o.seed};
  if (o.out) cfg.output = *o.out;
  if (o.threads) cfg.threads = *o.threads;
  cfg.validate();
  write_text(cfg.output + "/config.json", config_to_json(cfg));
  return cfg;
}

std::string out_path(const ExperimentConfig& cfg, const std::string& name) { return cfg.output + "/" + name; }

AttackSpec first_cell(const ExperimentConfig& cfg) {
  AttackSpec spec = cfg.attack;
  spec.eta = cfg.grid.eta.front();
  spec.S_A = cfg.grid.s_attack.front();
  return spec;
}

int cmd_gen_data(const ExperimentConfig& cfg) {
  const Dataset data = gen_dataset(cfg.dataset);
  write_text(out_path(cfg, "dataset.csv"), dataset_to_csv(data));
  std::cout << "wrote " << data.size() << " points to " << out_path(cfg, "dataset.csv") << "\n";
  return 0;
}

int cmd_train(const ExperimentConfig& cfg) {
  const Dataset data = gen_dataset(cfg.dataset);
  std::vector<double> losses;
  const StochasticModel model = prepare_model(cfg, data, &losses);
  save_checkpoint(model, out_path(cfg, "model.json"));
  std::string csv = "epoch,loss\n";
  for (std::size_t e = 0; e < losses.size(); ++e) csv += std::to_string(e) + ',' + format_real(losses[e]) + '\n';
  write_text(out_path(cfg, "train_loss.csv"), csv);

  const Dataset eval = eval_split(cfg, data);
  const auto smoothed = smoothed_model(cfg, model);
  int correct = 0;
  for (int i = 0; i < eval.size(); ++i) {
    const McEstimator inf =
        inference_estimator(model, smoothed, point_seeds(cfg.master_seed, 0, i).infer, cfg.grid.s_infer.front());
    correct += inf.classify(eval.point(i)) == eval.y[i];
  }
  std::cout << "clean accuracy " << format_real(static_cast<double>(correct) / eval.size()) << " (S_I="
            << cfg.grid.s_infer.front() << ", " << eval.size() << " points)\n";
  return 0;
}

int cmd_attack(const ExperimentConfig& cfg) {
  const Dataset data = gen_dataset(cfg.dataset);
  const StochasticModel model = prepare_model(cfg, data);
  const Dataset eval = eval_split(cfg, data);
  const auto smoothed = smoothed_model(cfg, model);
  const AttackSpec spec = first_cell(cfg);
  const EstimatorFactory sampler = smoothed ? attack_sampler(*smoothed, spec.S_A) : attack_sampler(model, spec.S_A);
  std::string csv = "point,y,zero_gradient,realized_norm,clean_pred,adv_pred";
  for (int j = 0; j < eval.dim(); ++j) csv += ",delta" + std::to_string(j);
  csv += '\n';
  int adv_correct = 0;
  for (int i = 0; i < eval.size(); ++i) {
    const PointSeeds seeds = point_seeds(cfg.master_seed, 0, i);
    const Vec x = eval.point(i);
    const AttackResult r = run_attack(sampler, x, eval.y[i], spec, seeds.attack);
    const McEstimator inf = inference_estimator(model, smoothed, seeds.infer, cfg.grid.s_infer.front());
    const int adv = inf.classify(x + r.delta);
    adv_correct += adv == eval.y[i];
    csv += std::to_string(i) + ',' + std::to_string(eval.y[i]) + ',' + (r.zero_gradient ? "1" : "0") + ',' +
           format_real(r.realized_norm) + ',' + std::to_string(inf.classify(x)) + ',' + std::to_string(adv);
    for (int j = 0; j < eval.dim(); ++j) csv += ',' + format_real(r.delta[j]);
    csv += '\n';
  }
  write_text(out_path(cfg, "attack.csv"), csv);
  std::cout << "adversarial accuracy " << format_real(static_cast<double>(adv_correct) / eval.size()) << "\n";
  return 0;
}

int cmd_certify(const ExperimentConfig& cfg) {
  const Dataset data = gen_dataset(cfg.dataset);
  const StochasticModel model = prepare_model(cfg, data);
  const Dataset eval = eval_split(cfg, data);
  const auto smoothed = smoothed_model(cfg, model);
  const std::optional<double> L = cfg.smoothness();
  const AttackSpec spec = first_cell(cfg);
  const EstimatorFactory sampler = smoothed ? attack_sampler(*smoothed, spec.S_A) : attack_sampler(model, spec.S_A);
  std::string csv = certificate_csv_header() + '\n';
  int certified = 0, evaluated = 0, skipped = 0;
  for (int i = 0; i < eval.size(); ++i) {
    const PointSeeds seeds = point_seeds(cfg.master_seed, 0, i);
    const Vec x = eval.point(i);
    const int y = eval.y[i];
    const McEstimator inf = inference_estimator(model, smoothed, seeds.infer, cfg.grid.s_infer.front());
    const AttackResult r = run_attack(sampler, x, y, spec, seeds.attack);
    if (inf.classify(x) != y || !(r.delta.norm() > 0.0)) {
      ++skipped;
      continue;
    }
    ++evaluated;
    const Certificate lin = linear_certificate(inf, x, y, r.delta);
    csv += certificate_csv_row(i, 0, lin);
    if (L) {
      const Certificate sm = smooth_certificate(inf, x, y, r.delta, *L);
      csv += certificate_csv_row(i, 0, sm);
      certified += sm.certified();
    } else {
      certified += lin.certified();
    }
  }
  write_text(out_path(cfg, "certificates.csv"), csv);
  std::cout << (L ? "smooth" : "linear") << " certificates: " << certified << " of " << evaluated
            << " certified, " << skipped << " skipped\n";
  return 0;
}

int cmd_sweep(const ExperimentConfig& cfg) {
  const auto records = run_sweep(cfg);
  emit(records, EmitFormat::csv, out_path(cfg, "sweep.csv"));
  emit(records, EmitFormat::json, out_path(cfg, "sweep.json"));
  std::cout << "wrote " << records.size() << " records to " << out_path(cfg, "sweep.csv") << "\n";
  return 0;
}

int cmd_analyze(const ExperimentConfig& cfg, const Overrides& o) {
  using nlohmann::json;
  const Dataset data = gen_dataset(cfg.dataset);
  const StochasticModel model = prepare_model(cfg, data);
  const Dataset eval = eval_split(cfg, data);
  const AttackSpec spec = first_cell(cfg);

  const VarianceReport var = prediction_variance(model, eval, o.n_mc, split_seed(cfg.master_seed, "variance", 0),
                                                 cfg.threads);
  const AngleReport ang = angle_distribution(model, eval, spec, spec.S_A, cfg.grid.s_infer.front(),
                                             split_seed(cfg.master_seed, "angles", 0), cfg.threads);
  const ExtremeCount ext = extreme_prediction_count(model, eval, o.threshold, split_seed(cfg.master_seed, "extreme", 0));

  std::string vcsv = "point,variance\n";
  for (std::size_t i = 0; i < var.per_point_variance.size(); ++i)
    vcsv += std::to_string(i) + ',' + format_real(var.per_point_variance[i]) + '\n';
  write_text(out_path(cfg, "variance.csv"), vcsv);
  std::string acsv = "point,class,cosine,grad_norm\n";
  for (std::size_t i = 0; i < ang.cosines.size(); ++i)
    acsv += std::to_string(ang.points[i]) + ',' + std::to_string(ang.classes[i]) + ',' + format_real(ang.cosines[i]) +
            ',' + format_real(ang.grad_norms[i]) + '\n';
  write_text(out_path(cfg, "angles.csv"), acsv);

  json j;
  j["variance"] = json::parse(summary_json(var.summary, 0));
  j["variance"]["n_mc"] = var.n_mc;
  j["angles"] = json::parse(summary_json(ang.summary, ang.skipped_misclassified + ang.skipped_zero_delta));
  j["angles"]["skipped_misclassified"] = ang.skipped_misclassified;
  j["angles"]["skipped_zero_delta"] = ang.skipped_zero_delta;
  j["extreme"] = {{"threshold", o.threshold}, {"count", ext.count}, {"fraction", ext.fraction}};
  write_text(out_path(cfg, "analysis.json"), j.dump(2) + "\n");
  std::cout << "median prediction variance " << format_real(var.summary.median) << ", mean cosine "
            << format_real(ang.summary.mean) << ", extreme predictions " << ext.count << "\n";
  return 0;
}

std::string one_line(std::string s) {
  std::replace(s.begin(), s.end(), '\n', ' ');
  while (!s.empty() && s.back() == ' ') s.pop_back();
  return s;
}

}  // namespace

int run_cli(int argc, char** argv) {
  CLI::App app{"Attacks and robustness certificates for stochastic classifiers", "stochrob"};
  app.require_subcommand(1);
  Overrides o;
  CLI::App* gen = app.add_subcommand("gen-data", "generate the synthetic dataset (dataset.csv)");
  CLI::App* trn = app.add_subcommand("train", "train the model and save a checkpoint (model.json)");
  CLI::App* atk = app.add_subcommand("attack", "attack the evaluation points (attack.csv)");
  CLI::App* cert = app.add_subcommand("certify", "attack and certify the evaluation points (certificates.csv)");
  CLI::App* swp = app.add_subcommand("sweep", "run the full grid (sweep.csv, sweep.json)");
  CLI::App* ana = app.add_subcommand("analyze", "variance, angle and extreme-prediction reports (analysis.json)");
  for (CLI::App* cmd : {gen, trn, atk, cert, swp, ana}) add_common(cmd, o);
  ana->add_option("--n-mc", o.n_mc, "realizations per point for the variance report")->check(CLI::PositiveNumber);
  ana->add_option("--threshold", o.threshold, "extreme-prediction threshold on max_c f_c");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    std::cerr << "stochrob: error: " << one_line(e.what()) << "\n";
    return e.get_exit_code();
  }

  try {
    const ExperimentConfig cfg = resolve(o);
    if (gen->parsed()) return cmd_gen_data(cfg);
    if (trn->parsed()) return cmd_train(cfg);
    if (atk->parsed()) return cmd_attack(cfg);
    if (cert->parsed()) return cmd_certify(cfg);
    if (swp->parsed()) return cmd_sweep(cfg);
    if (ana->parsed()) return cmd_analyze(cfg, o);
  } catch (const std::exception& e) {
    std::cerr << "stochrob: error: " << one_line(e.what()) << "\n";
    return 1;
  }
  return 1;
}

}  // namespace stochrob
