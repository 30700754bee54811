#include "stochrob/harness.hpp"

#include <nlohmann/json.hpp>

#include <fstream>
#include <set>
#include <sstream>

namespace stochrob {

using nlohmann::json;

namespace {

void check_keys(const json& j, const std::string& where, std::initializer_list<const char*> allowed) {
  if (!j.is_object()) throw std::invalid_argument("config: '" + where + "' must be an object");
  const std::set<std::string> ok(allowed.begin(), allowed.end());
  for (const auto& [key, value] : j.items())
    if (!ok.count(key)) throw std::invalid_argument("config: unknown key '" + where + "." + key + "'");
}

template <class T>
void read(const json& j, const char* key, T& out) {
  if (j.contains(key) && !j.at(key).is_null()) out = j.at(key).get<T>();
}

Seed read_seed(const json& j, const char* key, Seed def) {
  if (!j.contains(key)) return def;
  return Seed{j.at(key).get<std::uint64_t>()};
}

Vec to_vec(const std::vector<double>& v) { return Eigen::Map<const Vec>(v.data(), static_cast<Eigen::Index>(v.size())); }

void parse_dataset(const json& j, DatasetSpec& d) {
  check_keys(j, "dataset", {"kind", "n", "noise", "seed", "classes", "dim", "centers", "normalize"});
  if (j.contains("kind")) d.kind = parse_dataset_kind(j.at("kind").get<std::string>());
  read(j, "n", d.n);
  read(j, "noise", d.noise);
  d.seed = read_seed(j, "seed", d.seed);
  read(j, "classes", d.classes);
  read(j, "dim", d.dim);
  read(j, "normalize", d.normalize);
  if (j.contains("centers"))
    for (const auto& c : j.at("centers")) d.centers.push_back(to_vec(c.get<std::vector<double>>()));
}

NoiseSpec parse_noise(const json& j) {
  check_keys(j, "model.noise", {"kind", "sigma", "p"});
  NoiseSpec n;
  if (j.contains("kind")) n.kind = parse_noise_kind(j.at("kind").get<std::string>());
  read(j, "sigma", n.sigma);
  read(j, "p", n.p);
  return n;
}

void parse_model(const json& j, ModelConfig& m) {
  check_keys(j, "model", {"hidden", "activation", "output", "noise", "input_noise", "init_seed", "checkpoint"});
  read(j, "hidden", m.hidden);
  if (j.contains("activation")) m.activation = parse_activation(j.at("activation").get<std::string>());
  if (j.contains("output")) m.output = parse_output(j.at("output").get<std::string>());
  if (j.contains("noise")) m.noise = parse_noise(j.at("noise"));
  read(j, "input_noise", m.input_noise);
  m.init_seed = read_seed(j, "init_seed", m.init_seed);
  if (j.contains("checkpoint") && !j.at("checkpoint").is_null()) m.checkpoint = j.at("checkpoint").get<std::string>();
}

void parse_train(const json& j, TrainOptions& t) {
  check_keys(j, "train",
             {"epochs", "lr", "batch", "noisy_copies", "sigma_train", "sample_noise", "weight_decay", "seed"});
  read(j, "epochs", t.epochs);
  read(j, "lr", t.lr);
  read(j, "batch", t.batch);
  read(j, "noisy_copies", t.noisy_copies);
  read(j, "sigma_train", t.sigma_train);
  read(j, "sample_noise", t.sample_noise);
  read(j, "weight_decay", t.weight_decay);
  t.seed = read_seed(j, "seed", t.seed);
}

void parse_attack(const json& j, AttackSpec& a) {
  check_keys(j, "attack", {"method", "loss", "pgd_steps", "pgd_step", "box", "target", "resample_per_step"});
  if (j.contains("method")) a.method = parse_attack_method(j.at("method").get<std::string>());
  if (j.contains("loss")) a.loss = parse_loss(j.at("loss").get<std::string>());
  read(j, "pgd_steps", a.pgd_steps);
  read(j, "pgd_step", a.pgd_step);
  read(j, "resample_per_step", a.resample_per_step);
  if (j.contains("box") && !j.at("box").is_null()) {
    const auto b = j.at("box").get<std::vector<double>>();
    if (b.size() != 2) throw std::invalid_argument("config: attack.box must be [lo, hi]");
    a.box = Box{b[0], b[1]};
  }
  if (j.contains("target") && !j.at("target").is_null()) a.target = j.at("target").get<int>();
}

}  // namespace

void ExperimentConfig::validate() const {
  if (version != 1) throw std::invalid_argument("config: unsupported version " + std::to_string(version));
  dataset.validate();
  model.noise.validate();
  if (grid.eta.empty() || grid.s_attack.empty() || grid.s_infer.empty())
    throw std::invalid_argument("config: every grid axis needs at least one value");
  for (double e : grid.eta)
    if (!(e > 0.0)) throw std::invalid_argument("config: eta values must be > 0");
  for (int s : grid.s_attack)
    if (s < 1) throw std::invalid_argument("config: s_attack values must be >= 1");
  for (int s : grid.s_infer)
    if (s < 1) throw std::invalid_argument("config: s_infer values must be >= 1");
  if (repeats < 1) throw std::invalid_argument("config: repeats must be >= 1");
  if (threads < 1) throw std::invalid_argument("config: threads must be >= 1");
  if (n_points < 1) throw std::invalid_argument("config: n_points must be >= 1");
  if (model.checkpoint ? n_points > dataset.n : n_points >= dataset.n)
    throw std::invalid_argument("config: n_points leaves no training data");
  if (smoothing && (!(smoothing->sigma > 0.0) || smoothing->m_noise < 1))
    throw std::invalid_argument("config: smoothing needs sigma > 0 and m_noise >= 1");
  if (L && !(*L >= 0.0)) throw std::invalid_argument("config: L must be >= 0");
  AttackSpec a = attack;
  a.eta = grid.eta.front();
  a.S_A = grid.s_attack.front();
  a.validate();
}

std::optional<double> ExperimentConfig::smoothness() const {
  if (L) return L;
  if (smoothing) return 2.0 / (smoothing->sigma * smoothing->sigma);
  return std::nullopt;
}

ExperimentConfig parse_config(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw std::invalid_argument(std::string("config: malformed JSON: ") + e.what());
  }
  ExperimentConfig c;
  try {
    check_keys(j, "config", {"version", "dataset", "model", "train", "attack", "grid", "repeats", "n_points",
                             "master_seed", "threads", "smoothing", "L", "output"});
    if (!j.contains("version")) throw std::invalid_argument("config: missing 'version'");
    read(j, "version", c.version);
    if (j.contains("dataset")) parse_dataset(j.at("dataset"), c.dataset);
    if (j.contains("model")) parse_model(j.at("model"), c.model);
    if (j.contains("train")) parse_train(j.at("train"), c.train);
    if (j.contains("attack")) parse_attack(j.at("attack"), c.attack);
    if (j.contains("grid")) {
      const json& g = j.at("grid");
      check_keys(g, "grid", {"eta", "s_attack", "s_infer"});
      read(g, "eta", c.grid.eta);
      read(g, "s_attack", c.grid.s_attack);
      read(g, "s_infer", c.grid.s_infer);
    }
    read(j, "repeats", c.repeats);
    read(j, "n_points", c.n_points);
    c.master_seed = read_seed(j, "master_seed", c.master_seed);
    read(j, "threads", c.threads);
    if (j.contains("smoothing") && !j.at("smoothing").is_null()) {
      const json& s = j.at("smoothing");
      check_keys(s, "smoothing", {"sigma", "m_noise"});
      SmoothingConfig sc;
      read(s, "sigma", sc.sigma);
      read(s, "m_noise", sc.m_noise);
      c.smoothing = sc;
    }
    if (j.contains("L") && !j.at("L").is_null()) c.L = j.at("L").get<double>();
    read(j, "output", c.output);
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("config: ") + e.what());
  }
  c.validate();
  return c;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config file '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  try {
    return parse_config(ss.str());
  } catch (const std::exception& e) {
    throw std::runtime_error(path + ": " + e.what());
  }
}

std::string config_to_json(const ExperimentConfig& c) {
  json j;
  j["version"] = c.version;
  json d = {{"kind", to_string(c.dataset.kind)}, {"n", c.dataset.n},         {"noise", c.dataset.noise},
            {"seed", c.dataset.seed.value},       {"classes", c.dataset.classes}, {"dim", c.dataset.dim},
            {"normalize", c.dataset.normalize}};
  if (!c.dataset.centers.empty()) {
    json centers = json::array();
    for (const Vec& v : c.dataset.centers) centers.push_back(std::vector<double>(v.data(), v.data() + v.size()));
    d["centers"] = centers;
  }
  j["dataset"] = d;
  j["model"] = {{"hidden", c.model.hidden},
                {"activation", to_string(c.model.activation)},
                {"output", to_string(c.model.output)},
                {"noise", {{"kind", to_string(c.model.noise.kind)}, {"sigma", c.model.noise.sigma}, {"p", c.model.noise.p}}},
                {"input_noise", c.model.input_noise},
                {"init_seed", c.model.init_seed.value},
                {"checkpoint", c.model.checkpoint ? json(*c.model.checkpoint) : json(nullptr)}};
  j["train"] = {{"epochs", c.train.epochs},
                {"lr", c.train.lr},
                {"batch", c.train.batch},
                {"noisy_copies", c.train.noisy_copies},
                {"sigma_train", c.train.sigma_train},
                {"sample_noise", c.train.sample_noise},
                {"weight_decay", c.train.weight_decay},
                {"seed", c.train.seed.value}};
  j["attack"] = {{"method", to_string(c.attack.method)},
                 {"loss", to_string(c.attack.loss)},
                 {"pgd_steps", c.attack.pgd_steps},
                 {"pgd_step", c.attack.pgd_step},
                 {"box", c.attack.box ? json({c.attack.box->lo, c.attack.box->hi}) : json(nullptr)},
                 {"target", c.attack.target ? json(*c.attack.target) : json(nullptr)},
                 {"resample_per_step", c.attack.resample_per_step}};
  j["grid"] = {{"eta", c.grid.eta}, {"s_attack", c.grid.s_attack}, {"s_infer", c.grid.s_infer}};
  j["repeats"] = c.repeats;
  j["n_points"] = c.n_points;
  j["master_seed"] = c.master_seed.value;
  j["threads"] = c.threads;
  j["smoothing"] = c.smoothing ? json({{"sigma", c.smoothing->sigma}, {"m_noise", c.smoothing->m_noise}}) : json(nullptr);
  j["L"] = c.L ? json(*c.L) : json(nullptr);
  j["output"] = c.output;
  return j.dump(2) + "\n";
}

Dataset eval_split(const ExperimentConfig& cfg, const Dataset& data) { return data.slice(0, cfg.n_points); }

Dataset train_split(const ExperimentConfig& cfg, const Dataset& data) {
  return data.slice(cfg.n_points, data.size());
}

StochasticModel prepare_model(const ExperimentConfig& cfg, const Dataset& data, std::vector<double>* epoch_loss) {
  if (cfg.model.checkpoint) {
    StochasticModel m = load_checkpoint(*cfg.model.checkpoint);
    if (m.input_dim() != data.dim() || m.num_classes() != data.num_classes)
      throw std::invalid_argument("checkpoint '" + *cfg.model.checkpoint + "' does not match the dataset shape");
    return m;
  }
  Architecture arch;
  arch.layer_sizes.push_back(data.dim());
  for (int h : cfg.model.hidden) arch.layer_sizes.push_back(h);
  arch.layer_sizes.push_back(data.num_classes);
  arch.activation = cfg.model.activation;
  arch.output = cfg.model.output;
  const StochasticModel init(arch, init_params(arch, cfg.model.init_seed), cfg.model.noise, cfg.model.input_noise);
  TrainResult res = train(init, train_split(cfg, data), cfg.train);
  if (epoch_loss) *epoch_loss = std::move(res.epoch_loss);
  return std::move(res.model);
}

std::optional<SmoothedModel> smoothed_model(const ExperimentConfig& cfg, const StochasticModel& model) {
  if (!cfg.smoothing) return std::nullopt;
  return SmoothedModel{model, cfg.smoothing->sigma, cfg.smoothing->m_noise};
}

}  // namespace stochrob
