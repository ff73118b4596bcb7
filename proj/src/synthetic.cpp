#include "rte/synthetic.hpp"

#include <cmath>
#include <stdexcept>

#include <Eigen/QR>

#include "rte/rng.hpp"

namespace rte {

void SyntheticSpec::validate() const {
  if (classes < 2) throw std::invalid_argument("synthetic: classes must be >= 2");
  if (samples < static_cast<std::size_t>(classes)) throw std::invalid_argument("synthetic: samples must be >= classes");
  if (shape.size() < classes)
    throw std::invalid_argument("synthetic: feature dimension " + std::to_string(shape.size()) + " is below class count " +
                                std::to_string(classes));
  if (!(margin >= 0.0) || !std::isfinite(margin)) throw std::invalid_argument("synthetic: margin must be finite and >= 0");
}

nlohmann::json to_json(const SyntheticSpec& s) {
  return {{"classes", s.classes},
          {"samples", s.samples},
          {"shape", {s.shape.channels, s.shape.height, s.shape.width}},
          {"margin", s.margin},
          {"seed", s.seed}};
}

SyntheticSpec synthetic_spec_from_json(const nlohmann::json& j) {
  SyntheticSpec s;
  s.classes = j.at("classes");
  s.samples = j.at("samples");
  const auto& sh = j.at("shape");
  s.shape = {sh.at(0), sh.at(1), sh.at(2)};
  s.margin = j.at("margin");
  s.seed = j.at("seed");
  s.validate();
  return s;
}

MatrixR synthetic_means(const SyntheticSpec& spec) {
  spec.validate();
  const int d = spec.shape.size();
  Eigen::MatrixXd g(d, spec.classes);
  auto rng = Rng::stream(spec.seed, 0x3EA5);
  for (int c = 0; c < spec.classes; ++c)
    for (int k = 0; k < d; ++k) g(k, c) = rng.normal();
  const Eigen::MatrixXd q = Eigen::HouseholderQR<Eigen::MatrixXd>(g).householderQ() * Eigen::MatrixXd::Identity(d, spec.classes);
  return (q.transpose() * (spec.margin * std::sqrt(2.0))).cast<Real>();
}

LabeledDataset generate_synthetic(const SyntheticSpec& spec) {
  const MatrixR means = synthetic_means(spec);
  const int d = spec.shape.size();
  MatrixR x(static_cast<Eigen::Index>(spec.samples), d);
  std::vector<int> labels(spec.samples);
  for (std::size_t i = 0; i < spec.samples; ++i) {
    const int c = static_cast<int>(i % static_cast<std::size_t>(spec.classes));
    labels[i] = c;
    auto rng = Rng::stream(spec.seed, 0x5A3B, i);
    for (int k = 0; k < d; ++k) x(static_cast<Eigen::Index>(i), k) = static_cast<Real>(means(c, k) + rng.normal());
  }
  auto ds = LabeledDataset::clean(spec.shape, spec.classes, std::move(x), std::move(labels));
  ds.seed = spec.seed;
  return ds;
}

double nearest_mean_accuracy(const MatrixR& means, const LabeledDataset& data) {
  if (data.empty()) throw std::invalid_argument("nearest_mean_accuracy: empty dataset");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto row = data.features.row(static_cast<Eigen::Index>(i));
    Eigen::Index best = 0;
    double best_d = (means.row(0) - row).squaredNorm();
    for (Eigen::Index c = 1; c < means.rows(); ++c) {
      const double dist = (means.row(c) - row).squaredNorm();
      if (dist < best_d) best_d = dist, best = c;
    }
    hits += static_cast<int>(best) == data.true_labels[i];
  }
  return static_cast<double>(hits) / static_cast<double>(data.size());
}

}  // namespace rte
