#pragma once

#include "stochrob/analysis.hpp"
#include "stochrob/attacks.hpp"
#include "stochrob/certify.hpp"
#include "stochrob/models.hpp"

#include <optional>
#include <string>
#include <vector>

namespace stochrob {

enum class DatasetKind { blobs, two_moons, rings };
std::string to_string(DatasetKind k);
DatasetKind parse_dataset_kind(std::string_view s);

struct DatasetSpec {
  DatasetKind kind = DatasetKind::two_moons;
  int n = 600;
  double noise = 0.1;
  Seed seed{1};
  int classes = 2;  // blobs and rings; two_moons is always binary
  int dim = 2;      // blobs only
  std::vector<Vec> centers;  // blobs: explicit centers, otherwise drawn uniformly in [0,1]^dim
  bool normalize = true;     // affine min-max map of every coordinate onto [0, 1]

  void validate() const;
};

/// Point i has label i % k, so classes are balanced within one.
Dataset gen_dataset(const DatasetSpec& spec);

struct ModelConfig {
  std::vector<int> hidden{32, 32};
  Activation activation = Activation::relu;
  OutputKind output = OutputKind::softmax;
  NoiseSpec noise;
  double input_noise = 0.0;
  Seed init_seed{1};
  std::optional<std::string> checkpoint;  // load instead of training
};

struct GridConfig {
  std::vector<double> eta{0.1};
  std::vector<int> s_attack{1};
  std::vector<int> s_infer{10};
};

struct SmoothingConfig {
  double sigma = 0.25;
  int m_noise = 10;
};

struct ExperimentConfig {
  int version = 1;
  DatasetSpec dataset;
  ModelConfig model;
  TrainOptions train;
  AttackSpec attack;  // eta and S_A are taken from the grid
  GridConfig grid;
  int repeats = 5;
  int n_points = 200;  // the first n_points of the generated set are evaluated, the rest train
  Seed master_seed{7};
  int threads = 1;
  std::optional<SmoothingConfig> smoothing;
  std::optional<double> L;  // smoothness constant for cert_smooth; defaults to 2/sigma^2 with smoothing
  std::string output = "out";

  void validate() const;
  std::optional<double> smoothness() const;
};

ExperimentConfig parse_config(const std::string& json_text);
/// Throws std::runtime_error naming the path when the file cannot be read or parsed.
ExperimentConfig load_config(const std::string& path);
std::string config_to_json(const ExperimentConfig& cfg);

Dataset eval_split(const ExperimentConfig& cfg, const Dataset& data);
Dataset train_split(const ExperimentConfig& cfg, const Dataset& data);

/// Loads the configured checkpoint, or initializes and trains on the training split.
StochasticModel prepare_model(const ExperimentConfig& cfg, const Dataset& data,
                              std::vector<double>* epoch_loss = nullptr);

std::optional<SmoothedModel> smoothed_model(const ExperimentConfig& cfg, const StochasticModel& model);
/// The inference estimate of one point; smoothing noise comes from split_seed(seed, "smoothing-noise", 0).
/// Both referenced models must outlive the estimator.
McEstimator inference_estimator(const StochasticModel& model, const std::optional<SmoothedModel>& smoothed,
                                Seed seed, int S_I);

struct ExperimentRecord {
  double eta = 0.0;
  int s_attack = 1;
  int s_infer = 1;
  int repeat = 0;
  double clean_acc = 0.0;
  double adv_acc = 0.0;
  double eff_len = 0.0;
  double mean_cos = 0.0;
  double mean_grad_norm = 0.0;
  double cert_lin = 0.0;
  double cert_smooth = 0.0;  // NaN when no smoothness constant is configured
  int skipped = 0;

  bool operator==(const ExperimentRecord&) const;
};

/// Seeds of one evaluated point. They depend on (repeat, point, role) only, so every grid
/// cell of a repeat sees the same draws and smaller sets are prefixes of larger ones.
struct PointSeeds {
  Seed attack;
  Seed infer;
};
PointSeeds point_seeds(Seed master, int repeat, int point);

/// Per-point outcome inside one sweep cell.
struct PointOutcome {
  bool clean_correct = false;
  bool adv_correct = false;
  double eff_len = 0.0;
  bool counted = false;  // contributes cosine and gradient norm
  double cosine = 0.0;
  double grad_norm = 0.0;
  bool cert_lin = false;
  bool cert_smooth = false;
};

PointOutcome evaluate_point(const StochasticModel& model, const std::optional<SmoothedModel>& smoothed,
                            const Vec& x, int y, const AttackSpec& spec, int S_I, const PointSeeds& seeds,
                            std::optional<double> L);

/// One record per (eta, S_A, S_I, repeat), in that nesting order with repeat innermost.
std::vector<ExperimentRecord> run_sweep(const ExperimentConfig& cfg, const StochasticModel& model,
                                        const Dataset& eval);
std::vector<ExperimentRecord> run_sweep(const ExperimentConfig& cfg);

enum class EmitFormat { csv, json };

extern const char* const kSweepCsvHeader;

std::string records_to_csv(const std::vector<ExperimentRecord>& records);
std::string records_to_json(const std::vector<ExperimentRecord>& records);
std::vector<ExperimentRecord> records_from_csv(const std::string& text);
std::vector<ExperimentRecord> records_from_json(const std::string& text);
void emit(const std::vector<ExperimentRecord>& records, EmitFormat format, const std::string& path);

/// "%.17g" with nan / inf / -inf spelled out.
std::string format_real(double v);

std::string dataset_to_csv(const Dataset& data);
std::string certificate_csv_header();
std::string certificate_csv_row(int point, int trial, const Certificate& cert);
std::string summary_json(const Summary& s, int skipped);

/// Writes text to path, creating parent directories. Throws std::runtime_error naming the path.
void write_text(const std::string& path, const std::string& text);

int run_cli(int argc, char** argv);

}  // namespace stochrob
