#include "stochrob/models.hpp"

#include <nlohmann/json.hpp>

#include <fstream>
#include <sstream>

namespace stochrob {

using nlohmann::json;

namespace {

constexpr int kCheckpointVersion = 1;

}  // namespace

std::string checkpoint_json(const StochasticModel& model) {
  const Architecture& a = model.arch();
  json j;
  j["format"] = "stochrob-model";
  j["version"] = kCheckpointVersion;
  j["family"] = model.family() == ModelFamily::mlp ? "mlp" : "quadratic";
  j["layer_sizes"] = a.layer_sizes;
  j["activation"] = to_string(a.activation);
  j["output"] = to_string(a.output);
  j["noise"] = {{"kind", to_string(model.noise().kind)},
                {"sigma", model.noise().sigma},
                {"p", model.noise().p}};
  j["input_noise"] = model.input_noise();
  const Vec& flat = model.base_params().flat;
  j["params"] = std::vector<double>(flat.data(), flat.data() + flat.size());
  return j.dump();
}

StochasticModel checkpoint_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw std::invalid_argument(std::string("checkpoint: malformed JSON: ") + e.what());
  }
  try {
    if (j.at("format") != "stochrob-model") throw std::invalid_argument("checkpoint: unknown format tag");
    if (j.at("version").get<int>() != kCheckpointVersion)
      throw std::invalid_argument("checkpoint: unsupported version " + j.at("version").dump());
    Architecture arch{j.at("layer_sizes").get<std::vector<int>>(),
                      parse_activation(j.at("activation").get<std::string>()),
                      parse_output(j.at("output").get<std::string>())};
    const json& n = j.at("noise");
    NoiseSpec noise{parse_noise_kind(n.at("kind").get<std::string>()), n.at("sigma").get<double>(),
                    n.at("p").get<double>()};
    const auto params = j.at("params").get<std::vector<double>>();
    ParamVector base{Eigen::Map<const Vec>(params.data(), static_cast<Eigen::Index>(params.size()))};
    const std::string family = j.at("family").get<std::string>();
    if (family != "mlp" && family != "quadratic") throw std::invalid_argument("checkpoint: unknown family " + family);
    return StochasticModel::restore(family == "mlp" ? ModelFamily::mlp : ModelFamily::quadratic,
                                    std::move(arch), std::move(base), noise,
                                    j.at("input_noise").get<double>());
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("checkpoint: ") + e.what());
  }
}

void save_checkpoint(const StochasticModel& model, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write checkpoint '" + path + "'");
  out << checkpoint_json(model) << '\n';
  if (!out) throw std::runtime_error("failed writing checkpoint '" + path + "'");
}

StochasticModel load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return checkpoint_from_json(ss.str());
}

}  // namespace stochrob
