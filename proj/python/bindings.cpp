#include "stochrob/analysis.hpp"
#include "stochrob/harness.hpp"

#include <pybind11/eigen.h>
#include <pybind11/functional.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

namespace py = pybind11;
using namespace stochrob;

namespace {

Seed seed_of(std::uint64_t v) { return Seed{v}; }

NoiseSpec noise_of(const std::string& kind, double sigma, double p) {
  NoiseSpec n;
  n.kind = parse_noise_kind(kind);
  n.sigma = sigma;
  n.p = p;
  n.validate();
  return n;
}

Dataset dataset_of(const Mat& X, const std::vector<int>& y) {
  if (X.rows() != static_cast<Eigen::Index>(y.size())) throw std::invalid_argument("X and y have different lengths");
  Dataset d;
  d.X = X;
  d.y = y;
  d.num_classes = y.empty() ? 2 : std::max(2, *std::max_element(y.begin(), y.end()) + 1);
  return d;
}

// Owns the model (and smoothing wrapper) the estimator points into.
struct Estimator {
  std::shared_ptr<const StochasticModel> model;
  std::shared_ptr<const SmoothedModel> smoothed;
  std::shared_ptr<const McEstimator> est;

  static Estimator plain(const StochasticModel& m, std::uint64_t seed, int S, const std::string& role) {
    Estimator e;
    e.model = std::make_shared<const StochasticModel>(m);
    SampleRole r = SampleRole::generic;
    if (role == "attack") r = SampleRole::attack;
    else if (role == "inference") r = SampleRole::inference;
    else if (role != "generic") throw std::invalid_argument("unknown sample role '" + role + "'");
    e.est = std::make_shared<const McEstimator>(*e.model, sample_params(*e.model, seed_of(seed), S, r));
    return e;
  }

  static Estimator smooth(const StochasticModel& m, double sigma, int m_noise, std::uint64_t seed, int S,
                          std::uint64_t noise_seed) {
    Estimator e;
    e.smoothed = std::make_shared<const SmoothedModel>(SmoothedModel{m, sigma, m_noise});
    e.est = std::make_shared<const McEstimator>(*e.smoothed, sample_params(e.smoothed->inner, seed_of(seed), S),
                                                seed_of(noise_seed));
    return e;
  }
};

py::dict record_dict(const ExperimentRecord& r) {
  py::dict d;
  d["eta"] = r.eta;
  d["s_attack"] = r.s_attack;
  d["s_infer"] = r.s_infer;
  d["repeat"] = r.repeat;
  d["clean_acc"] = r.clean_acc;
  d["adv_acc"] = r.adv_acc;
  d["eff_len"] = r.eff_len;
  d["mean_cos"] = r.mean_cos;
  d["mean_grad_norm"] = r.mean_grad_norm;
  d["cert_lin"] = r.cert_lin;
  d["cert_smooth"] = r.cert_smooth;
  d["skipped"] = r.skipped;
  return d;
}

}  // namespace

PYBIND11_MODULE(_stochrob, m) {
  m.doc() = "Attacks and robustness certificates for stochastic classifiers";

  py::register_exception<NumericalError>(m, "NumericalError", PyExc_ArithmeticError);
  py::register_exception<CertificateError>(m, "CertificateError", PyExc_ValueError);

  m.def("split_seed", [](std::uint64_t parent, const std::string& label, std::uint64_t index) {
    return split_seed(seed_of(parent), label, index).value;
  });

  py::class_<StochasticModel>(m, "Model")
      .def_property_readonly("input_dim", &StochasticModel::input_dim)
      .def_property_readonly("num_classes", &StochasticModel::num_classes)
      .def_property_readonly("deterministic", &StochasticModel::deterministic)
      .def_property_readonly("params", [](const StochasticModel& s) { return s.base_params().flat; })
      .def_property_readonly("layer_sizes", [](const StochasticModel& s) { return s.arch().layer_sizes; })
      .def("scores", [](const StochasticModel& s, const Vec& x) { return s.scores(s.base_params(), x); },
           "Scores of the mean parameters.")
      .def("with_noise", [](const StochasticModel& s, const std::string& kind, double sigma, double p) {
             return s.with_noise(noise_of(kind, sigma, p));
           }, py::arg("kind"), py::arg("sigma") = 0.0, py::arg("p") = 0.0)
      .def("with_params", [](const StochasticModel& s, const Vec& flat) { return s.with_params(ParamVector{flat}); })
      .def("quadratic_smoothness", &StochasticModel::quadratic_smoothness)
      .def("to_json", [](const StochasticModel& s) { return checkpoint_json(s); })
      .def_static("from_json", [](const std::string& text) { return checkpoint_from_json(text); });

  m.def("make_mlp",
        [](const std::vector<int>& layers, const std::string& activation, const std::string& output,
           std::uint64_t seed, const std::string& noise, double sigma, double p) {
          return make_mlp(Architecture{layers, parse_activation(activation), parse_output(output)}, seed_of(seed),
                          noise_of(noise, sigma, p));
        },
        py::arg("layers"), py::arg("activation") = "relu", py::arg("output") = "softmax", py::arg("seed") = 1,
        py::arg("noise") = "none", py::arg("sigma") = 0.0, py::arg("p") = 0.0);
  m.def("make_linear_gaussian", &make_linear_gaussian, py::arg("weights"), py::arg("sigma"),
        py::arg("bias") = Vec());
  m.def("make_quadratic",
        [](const std::vector<Mat>& Q, const std::vector<Vec>& a, double sigma) {
          return make_quadratic(Q, a, sigma > 0.0 ? NoiseSpec::gaussian(sigma) : NoiseSpec::none());
        },
        py::arg("Q"), py::arg("a"), py::arg("sigma") = 0.0);
  m.def("train",
        [](const StochasticModel& model, const Mat& X, const std::vector<int>& y, int epochs, double lr, int batch,
           std::uint64_t seed, int noisy_copies, double sigma_train) {
          TrainOptions o;
          o.epochs = epochs;
          o.lr = lr;
          o.batch = batch;
          o.seed = seed_of(seed);
          o.noisy_copies = noisy_copies;
          o.sigma_train = sigma_train;
          TrainResult r = train(model, dataset_of(X, y), o);
          return py::make_tuple(r.model, r.epoch_loss);
        },
        py::arg("model"), py::arg("X"), py::arg("y"), py::arg("epochs") = 100, py::arg("lr") = 1e-2,
        py::arg("batch") = 32, py::arg("seed") = 1, py::arg("noisy_copies") = 0, py::arg("sigma_train") = 0.0,
        "Returns (trained model, per-epoch loss).");

  py::class_<Estimator>(m, "Estimator")
      .def(py::init(&Estimator::plain), py::arg("model"), py::arg("seed"), py::arg("S"),
           py::arg("role") = "generic")
      .def_static("smoothed", &Estimator::smooth, py::arg("model"), py::arg("sigma"), py::arg("m_noise"),
                  py::arg("seed"), py::arg("S"), py::arg("noise_seed"))
      .def("mean_scores", [](const Estimator& e, const Vec& x) { return e.est->mean_scores(x); })
      .def("per_sample_scores", [](const Estimator& e, const Vec& x) { return e.est->predict(x).per_sample_scores; })
      .def("classify", [](const Estimator& e, const Vec& x) { return e.est->classify(x); })
      .def("jacobian", [](const Estimator& e, const Vec& x) { return e.est->jacobian(x); })
      .def("margin_gradient", [](const Estimator& e, const Vec& x, int y, int c) {
        return e.est->margin_gradient(x, y, c);
      });

  py::class_<AttackSpec>(m, "AttackSpec")
      .def(py::init([](const std::string& method, double eta, const std::string& loss, int S_A, int pgd_steps,
                       double pgd_step, std::optional<std::pair<double, double>> box, std::optional<int> target,
                       bool resample_per_step) {
             AttackSpec s;
             s.method = parse_attack_method(method);
             s.eta = eta;
             s.loss = parse_loss(loss);
             s.S_A = S_A;
             s.pgd_steps = pgd_steps;
             s.pgd_step = pgd_step;
             if (box) s.box = Box{box->first, box->second};
             s.target = target;
             s.resample_per_step = resample_per_step;
             s.validate();
             return s;
           }),
           py::arg("method") = "fgm_l2", py::arg("eta") = 0.5, py::arg("loss") = "cross_entropy", py::arg("S_A") = 1,
           py::arg("pgd_steps") = 10, py::arg("pgd_step") = 0.0, py::arg("box") = py::none(),
           py::arg("target") = py::none(), py::arg("resample_per_step") = true)
      .def_readwrite("eta", &AttackSpec::eta)
      .def_readwrite("S_A", &AttackSpec::S_A)
      .def_property_readonly("method", [](const AttackSpec& s) { return to_string(s.method); })
      .def_property_readonly("loss", [](const AttackSpec& s) { return to_string(s.loss); });

  py::class_<AttackResult>(m, "AttackResult")
      .def_readonly("delta", &AttackResult::delta)
      .def_readonly("requested_norm", &AttackResult::requested_norm)
      .def_readonly("realized_norm", &AttackResult::realized_norm)
      .def_readonly("zero_gradient", &AttackResult::zero_gradient)
      .def_readonly("per_step_norms", &AttackResult::per_step_norms)
      .def_property_readonly("attack_seed", [](const AttackResult& r) { return r.attack_seed.value; })
      .def("effective_length", [](const AttackResult& r, const std::string& norm) {
        if (norm != "l2" && norm != "linf") throw std::invalid_argument("norm must be 'l2' or 'linf'");
        return effective_length(r, norm == "l2" ? Norm::l2 : Norm::linf);
      }, py::arg("norm") = "l2");

  m.def("run_attack",
        [](const StochasticModel& model, const Vec& x, int y, const AttackSpec& spec, std::uint64_t seed) {
          return run_attack(model, x, y, spec, seed_of(seed));
        },
        py::arg("model"), py::arg("x"), py::arg("y"), py::arg("spec"), py::arg("seed"));

  py::class_<ClassBound>(m, "ClassBound")
      .def_readonly("c", &ClassBound::c)
      .def_readonly("margin", &ClassBound::margin)
      .def_readonly("grad_norm", &ClassBound::grad_norm)
      .def_readonly("cosine", &ClassBound::cosine)
      .def_readonly("r_value", &ClassBound::r_value)
      .def_readonly("V", &ClassBound::V)
      .def_readonly("gradient_vanished", &ClassBound::gradient_vanished);

  py::class_<Certificate>(m, "Certificate")
      .def_property_readonly("kind", [](const Certificate& c) {
        return c.kind == CertificateKind::linear ? "linear" : "smooth";
      })
      .def_readonly("L", &Certificate::L)
      .def_readonly("y", &Certificate::y)
      .def_readonly("per_class", &Certificate::per_class)
      .def_readonly("r_min", &Certificate::r_min)
      .def_readonly("argmin_class", &Certificate::argmin_class)
      .def_readonly("delta_norm", &Certificate::delta_norm)
      .def_property_readonly("certified", &Certificate::certified)
      .def("targeted_certified", [](const Certificate& c, int j) {
        return c.targeted_verdict(j) == Verdict::certified_robust;
      });

  m.def("cosine_alignment", &cosine_alignment);
  m.def("linear_certificate", [](const Estimator& e, const Vec& x, int y, const Vec& delta) {
    return linear_certificate(*e.est, x, y, delta);
  });
  m.def("smooth_certificate", [](const Estimator& e, const Vec& x, int y, const Vec& delta, double L) {
    return smooth_certificate(*e.est, x, y, delta, L);
  });
  m.def("deterministic_distance", [](const StochasticModel& model, const Vec& x, int y) {
    return deterministic_distance(model, x, y);
  });
  m.def("boundary_line_search", [](const Estimator& e, const Vec& x, int y, const Vec& direction, double t_max) {
    return boundary_line_search(*e.est, x, y, direction, t_max);
  });
  m.def("robustness_probability",
        [](const StochasticModel& model, const Vec& x, int y, const AttackSpec& spec, int S_A, int S_I, int n_trials,
           std::uint64_t seed, std::optional<double> L, int threads) {
          RobustnessOptions o;
          o.smooth = L.has_value();
          o.L = L.value_or(0.0);
          o.threads = threads;
          const ProbabilityEstimate p = robustness_probability(model, x, y, spec, S_A, S_I, n_trials, seed_of(seed), o);
          return py::make_tuple(p.p_hat, p.ci95);
        },
        py::arg("model"), py::arg("x"), py::arg("y"), py::arg("spec"), py::arg("S_A"), py::arg("S_I"),
        py::arg("n_trials"), py::arg("seed"), py::arg("L") = py::none(), py::arg("threads") = 1,
        "Returns (p_hat, ci95 half-width).");
  m.def("empirical_lipschitz",
        [](const Estimator& e, double lo, double hi, int n_pairs, std::uint64_t seed, double max_distance) {
          LipschitzOptions o;
          o.region = Box{lo, hi};
          o.n_pairs = n_pairs;
          o.seed = seed_of(seed);
          o.max_distance = max_distance;
          return empirical_lipschitz(*e.est, o);
        },
        py::arg("estimator"), py::arg("lo"), py::arg("hi"), py::arg("n_pairs") = 1000, py::arg("seed") = 1,
        py::arg("max_distance") = 0.0);

  m.def("prediction_variance",
        [](const StochasticModel& model, const Mat& X, const std::vector<int>& y, int n_mc, std::uint64_t seed) {
          return prediction_variance(model, dataset_of(X, y), n_mc, seed_of(seed)).per_point_variance;
        },
        py::arg("model"), py::arg("X"), py::arg("y"), py::arg("n_mc") = 1000, py::arg("seed") = 1);
  m.def("gaussian_norm_stats",
        [](const Vec& mu, const Vec& var, long n_draws, std::uint64_t seed) {
          const GradientStats s = gaussian_norm_stats(mu, var, n_draws, seed_of(seed));
          py::dict d;
          d["mean_norm"] = s.mean_norm;
          d["mean_norm_se"] = s.mean_norm_se;
          d["lower"] = s.lower;
          d["upper"] = s.upper;
          return d;
        },
        py::arg("mu"), py::arg("var"), py::arg("n_draws"), py::arg("seed") = 1);
  m.def("clt_scaling_check",
        [](const StochasticModel& model, const Vec& x, int cls, const std::vector<int>& S, int n_repeats,
           std::uint64_t seed) {
          const CltResult r = clt_scaling_check(model, x, cls, S, n_repeats, seed_of(seed));
          return py::make_tuple(r.fit.slope, r.fit.r2);
        },
        py::arg("model"), py::arg("x"), py::arg("cls"), py::arg("S"), py::arg("n_repeats") = 200,
        py::arg("seed") = 1, "Returns (slope, r2) of log Var against log S.");
  m.def("extreme_prediction_count",
        [](const StochasticModel& model, const Mat& X, const std::vector<int>& y, double threshold,
           std::uint64_t seed) { return extreme_prediction_count(model, dataset_of(X, y), threshold, seed_of(seed)).count; },
        py::arg("model"), py::arg("X"), py::arg("y"), py::arg("threshold") = 1.0 - 1e-12, py::arg("seed") = 1);

  m.def("gen_dataset",
        [](const std::string& kind, int n, double noise, std::uint64_t seed, int classes, int dim, bool normalize) {
          DatasetSpec s;
          s.kind = parse_dataset_kind(kind);
          s.n = n;
          s.noise = noise;
          s.seed = seed_of(seed);
          s.classes = classes;
          s.dim = dim;
          s.normalize = normalize;
          const Dataset d = gen_dataset(s);
          return py::make_tuple(d.X, d.y);
        },
        py::arg("kind") = "two_moons", py::arg("n") = 600, py::arg("noise") = 0.1, py::arg("seed") = 1,
        py::arg("classes") = 2, py::arg("dim") = 2, py::arg("normalize") = true, "Returns (X, y).");

  m.def("normalize_config", [](const std::string& text) { return config_to_json(parse_config(text)); },
        "Parses and validates a JSON experiment config; returns it with every default filled in.");
  m.def("run_sweep",
        [](const std::string& config_json) {
          py::list out;
          for (const ExperimentRecord& r : run_sweep(parse_config(config_json))) out.append(record_dict(r));
          return out;
        },
        "Trains (or loads) the configured model and runs the whole grid; one dict per record.");
  m.def("sweep_csv", [](const std::string& config_json) { return records_to_csv(run_sweep(parse_config(config_json))); });
}
