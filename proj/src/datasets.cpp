#include "stochrob/harness.hpp"

#include <cmath>
#include <numbers>
#include <random>

namespace stochrob {

std::string to_string(DatasetKind k) {
  switch (k) {
    case DatasetKind::blobs: return "blobs";
    case DatasetKind::two_moons: return "two_moons";
    case DatasetKind::rings: return "rings";
  }
  return "?";
}

DatasetKind parse_dataset_kind(std::string_view s) {
  if (s == "blobs") return DatasetKind::blobs;
  if (s == "two_moons" || s == "moons") return DatasetKind::two_moons;
  if (s == "rings" || s == "circles") return DatasetKind::rings;
  throw std::invalid_argument("unknown dataset kind '" + std::string(s) + "'");
}

void DatasetSpec::validate() const {
  if (n < 2) throw std::invalid_argument("dataset: n must be >= 2");
  if (!(noise >= 0.0)) throw std::invalid_argument("dataset: noise must be >= 0");
  if (kind != DatasetKind::two_moons && classes < 2) throw std::invalid_argument("dataset: need >= 2 classes");
  if (kind == DatasetKind::blobs) {
    if (dim < 1) throw std::invalid_argument("dataset: dim must be >= 1");
    if (!centers.empty()) {
      if (static_cast<int>(centers.size()) != classes)
        throw std::invalid_argument("dataset: need one center per class");
      for (const Vec& c : centers)
        if (c.size() != dim) throw std::invalid_argument("dataset: center dimension differs from dim");
    }
  }
}

namespace {

void normalize_columns(Mat& X) {
  for (Eigen::Index j = 0; j < X.cols(); ++j) {
    const double lo = X.col(j).minCoeff();
    const double hi = X.col(j).maxCoeff();
    if (hi > lo) {
      X.col(j) = ((X.col(j).array() - lo) / (hi - lo)).matrix();
      // exact endpoints despite rounding
      X.col(j) = X.col(j).cwiseMax(0.0).cwiseMin(1.0);
    } else {
      X.col(j).setConstant(0.5);
    }
  }
}

}  // namespace

Dataset gen_dataset(const DatasetSpec& spec) {
  spec.validate();
  Rng rng = make_rng(split_seed(spec.seed, "dataset", 0));
  std::normal_distribution<double> n01(0.0, 1.0);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  Dataset d;
  const int k = spec.kind == DatasetKind::two_moons ? 2 : spec.classes;
  const int dim = spec.kind == DatasetKind::blobs ? spec.dim : 2;
  d.num_classes = k;
  d.X.resize(spec.n, dim);
  d.y.resize(spec.n);

  std::vector<Vec> centers = spec.centers;
  if (spec.kind == DatasetKind::blobs && centers.empty()) {
    for (int c = 0; c < k; ++c) {
      Vec v(dim);
      for (int j = 0; j < dim; ++j) v[j] = u01(rng);
      centers.push_back(v);
    }
  }

  for (int i = 0; i < spec.n; ++i) {
    const int label = i % k;
    d.y[i] = label;
    switch (spec.kind) {
      case DatasetKind::blobs:
        for (int j = 0; j < dim; ++j) d.X(i, j) = centers[label][j] + spec.noise * n01(rng);
        break;
      case DatasetKind::two_moons: {
        const double t = std::numbers::pi * u01(rng);
        const double px = label == 0 ? std::cos(t) : 1.0 - std::cos(t);
        const double py = label == 0 ? std::sin(t) : 0.5 - std::sin(t);
        d.X(i, 0) = px + spec.noise * n01(rng);
        d.X(i, 1) = py + spec.noise * n01(rng);
        break;
      }
      case DatasetKind::rings: {
        const double t = 2.0 * std::numbers::pi * u01(rng);
        const double r = 1.0 + label;
        d.X(i, 0) = r * std::cos(t) + spec.noise * n01(rng);
        d.X(i, 1) = r * std::sin(t) + spec.noise * n01(rng);
        break;
      }
    }
  }
  if (spec.normalize) normalize_columns(d.X);
  return d;
}

}  // namespace stochrob
