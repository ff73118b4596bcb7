#include "rte/noise.hpp"

#include <cmath>
#include <stdexcept>

#include "rte/rng.hpp"

namespace rte {

void ConfusionMatrix::validate(double tolerance) const {
  if (c.rows() != c.cols() || c.rows() < 2) throw std::invalid_argument("confusion matrix must be square with m >= 2");
  for (Eigen::Index j = 0; j < c.rows(); ++j) {
    if (c(j, j) != 0.0) throw std::invalid_argument("confusion matrix diagonal must be zero (row " + std::to_string(j) + ")");
    if ((c.row(j).array() < 0.0).any() || (c.row(j).array() > 1.0).any())
      throw std::invalid_argument("confusion entries must lie in [0, 1] (row " + std::to_string(j) + ")");
    const double s = c.row(j).sum();
    if (std::abs(s - 1.0) > tolerance && std::abs(s) > tolerance)
      throw std::invalid_argument("confusion row " + std::to_string(j) + " sums to " + std::to_string(s));
  }
}

IntensityVector IntensityVector::uniform(int classes, double ratio) {
  IntensityVector p{Eigen::VectorXd::Constant(classes, ratio)};
  p.validate();
  return p;
}

void IntensityVector::validate() const {
  for (Eigen::Index j = 0; j < p.size(); ++j)
    if (!(p[j] >= 0.0 && p[j] <= 1.0))
      throw std::invalid_argument("noise intensity must lie in [0, 1] (class " + std::to_string(j) + ")");
}

void TransitionMatrix::validate(double tolerance) const {
  if (f.rows() != f.cols()) throw std::invalid_argument("transition matrix must be square");
  for (Eigen::Index j = 0; j < f.rows(); ++j) {
    if ((f.row(j).array() < 0.0).any()) throw std::invalid_argument("transition matrix has a negative entry");
    if (std::abs(f.row(j).sum() - 1.0) > tolerance)
      throw std::invalid_argument("transition row " + std::to_string(j) + " is not stochastic");
  }
}

NoiseStructure parse_noise_structure(const std::string& name) {
  if (name == "symmetric") return NoiseStructure::symmetric;
  if (name == "pairflip") return NoiseStructure::pairflip;
  if (name == "resnet-confusion") return NoiseStructure::resnet_confusion;
  throw std::invalid_argument("unknown noise structure '" + name + "' (symmetric|pairflip|resnet-confusion)");
}

std::string to_string(NoiseStructure s) {
  switch (s) {
    case NoiseStructure::symmetric: return "symmetric";
    case NoiseStructure::pairflip: return "pairflip";
    case NoiseStructure::resnet_confusion: return "resnet-confusion";
  }
  return "?";
}

ConfusionMatrix build_symmetric_confusion(int classes) {
  if (classes < 2) throw std::invalid_argument("symmetric confusion needs at least 2 classes");
  ConfusionMatrix c{Eigen::MatrixXd::Constant(classes, classes, 1.0 / (classes - 1))};
  c.c.diagonal().setZero();
  return c;
}

ConfusionMatrix build_pairflip_confusion() {
  ConfusionMatrix c{Eigen::MatrixXd::Zero(10, 10)};
  c.c(2, 0) = 1.0;  // BIRD -> AIRPLANE
  c.c(3, 5) = 1.0;  // CAT -> DOG
  c.c(4, 7) = 1.0;  // DEER -> HORSE
  c.c(5, 3) = 1.0;  // DOG -> CAT
  c.c(9, 1) = 1.0;  // TRUCK -> AUTOMOBILE
  return c;
}

ConfusionMatrix resnet_confusion_published() {
  Eigen::MatrixXd c(10, 10);
  c << .0000, .0396, .2475, .0594, .0594, .0396, .0495, .0693, .2772, .1584,  //
      .1765, .0000, .0294, .0000, .0000, .0000, .0294, .0000, .1765, .5882,   //
      .1745, .0000, .0000, .1544, .1879, .1074, .2617, .0872, .0268, .0000,   //
      .0388, .0116, .1473, .0000, .1240, .3682, .1899, .0853, .0155, .0194,   //
      .0303, .0000, .2197, .1667, .0000, .0606, .2879, .2121, .0227, .0000,   //
      .0324, .0000, .1435, .4676, .1019, .0000, .1204, .1157, .0093, .0093,   //
      .0536, .0179, .3571, .3036, .1071, .0714, .0000, .0536, .0179, .0179,   //
      .0704, .0000, .0986, .1268, .3803, .1831, .0986, .0000, .0000, .0423,   //
      .4603, .0952, .0794, .0476, .0317, .0000, .0476, .0317, .0000, .2063,   //
      .1711, .5132, .0263, .0526, .0263, .0132, .0658, .0395, .0921, .0000;
  return {c};
}

ConfusionMatrix build_resnet_confusion() {
  ConfusionMatrix c = resnet_confusion_published();
  for (Eigen::Index j = 0; j < c.c.rows(); ++j) c.c.row(j) /= c.c.row(j).sum();
  return c;
}

ConfusionMatrix build_confusion(NoiseStructure s, int classes) {
  switch (s) {
    case NoiseStructure::symmetric: return build_symmetric_confusion(classes);
    case NoiseStructure::pairflip:
    case NoiseStructure::resnet_confusion:
      if (classes != 10)
        throw std::invalid_argument(to_string(s) + " structure is defined for 10 classes, got " + std::to_string(classes));
      return s == NoiseStructure::pairflip ? build_pairflip_confusion() : build_resnet_confusion();
  }
  throw std::invalid_argument("unknown noise structure");
}

TransitionMatrix build_transition(const IntensityVector& p, const ConfusionMatrix& c) {
  c.validate();
  p.validate();
  if (p.p.size() != c.c.rows())
    throw std::invalid_argument("intensity has " + std::to_string(p.p.size()) + " classes, confusion has " +
                                std::to_string(c.c.rows()));
  const auto m = c.c.rows();
  // Classes with an empty confusion row have nowhere to flip to and stay clean.
  Eigen::VectorXd eff = p.p;
  for (Eigen::Index j = 0; j < m; ++j)
    if (std::abs(c.c.row(j).sum()) <= 1e-9) eff[j] = 0.0;
  TransitionMatrix f{eff.asDiagonal() * c.c};
  f.f.diagonal() += (Eigen::VectorXd::Ones(m) - eff);
  f.validate();
  return f;
}

TransitionMatrix build_legacy_inclusive_transition(const IntensityVector& p) {
  p.validate();
  const auto m = p.p.size();
  if (m < 2) throw std::invalid_argument("legacy inclusive sampling needs at least 2 classes");
  TransitionMatrix f{p.p.asDiagonal() * Eigen::MatrixXd::Constant(m, m, 1.0 / static_cast<double>(m))};
  f.f.diagonal() += (Eigen::VectorXd::Ones(m) - p.p);
  f.validate();
  return f;
}

LabeledDataset corrupt_labels(const LabeledDataset& ds, const TransitionMatrix& f, std::uint64_t seed) {
  f.validate();
  if (f.classes() != ds.classes)
    throw std::invalid_argument("transition matrix has " + std::to_string(f.classes()) + " classes, dataset has " +
                                std::to_string(ds.classes));
  LabeledDataset out = ds;
  out.seed = seed;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const int y = ds.true_labels[i];
    if (y < 0 || y >= ds.classes) throw std::invalid_argument("invalid label id " + std::to_string(y) + " at index " + std::to_string(i));
    auto rng = Rng::stream(seed, i);
    const double u = rng.uniform();
    int k = 0;
    double acc = f.f(y, 0);
    while (u >= acc && k + 1 < ds.classes) acc += f.f(y, ++k);
    // Guard against round-off leaving u above the final cumulative sum.
    while (f.f(y, k) == 0.0 && k > 0) --k;
    out.noisy_labels[i] = k;
    out.corrupted[i] = k != y ? 1 : 0;
  }
  return out;
}

ClassStatistics class_statistics(const LabeledDataset& ds) {
  ClassStatistics s;
  s.rows.resize(static_cast<std::size_t>(ds.classes));
  for (int k = 0; k < ds.classes; ++k) s.rows[static_cast<std::size_t>(k)].label = k;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    auto& row = s.rows[static_cast<std::size_t>(ds.noisy_labels[i])];
    ++row.samples;
    if (!ds.corrupted[i]) ++row.correct;
  }
  const double n = static_cast<double>(ds.size());
  s.total.label = -1;
  for (auto& row : s.rows) {
    row.share = n > 0 ? static_cast<double>(row.samples) / n : 0.0;
    row.correct_fraction = row.samples > 0 ? static_cast<double>(row.correct) / static_cast<double>(row.samples) : 0.0;
    s.total.samples += row.samples;
    s.total.correct += row.correct;
  }
  s.total.share = n > 0 ? 1.0 : 0.0;
  s.total.correct_fraction = n > 0 ? static_cast<double>(s.total.correct) / n : 0.0;
  return s;
}

Eigen::MatrixXd expected_label_counts(const TransitionMatrix& f, const std::vector<std::size_t>& class_counts) {
  if (static_cast<int>(class_counts.size()) != f.classes()) throw std::invalid_argument("class count vector size mismatch");
  Eigen::VectorXd n(f.classes());
  for (int j = 0; j < f.classes(); ++j) n[j] = static_cast<double>(class_counts[static_cast<std::size_t>(j)]);
  return n.asDiagonal() * f.f;
}

double effective_noise_ratio(const LabeledDataset& ds) {
  if (ds.empty()) throw std::invalid_argument("effective noise ratio of an empty dataset");
  std::size_t bad = 0;
  for (auto c : ds.corrupted) bad += c ? 1 : 0;
  return static_cast<double>(bad) / static_cast<double>(ds.size());
}

IntensityVector NoiseSpec::intensity(int classes) const {
  if (class_ratios.empty()) return IntensityVector::uniform(classes, ratio);
  if (static_cast<int>(class_ratios.size()) != classes)
    throw std::invalid_argument("class_ratios has " + std::to_string(class_ratios.size()) + " entries for " +
                                std::to_string(classes) + " classes");
  IntensityVector p{Eigen::Map<const Eigen::VectorXd>(class_ratios.data(), classes)};
  p.validate();
  return p;
}

TransitionMatrix NoiseSpec::transition(int classes) const {
  if (legacy_inclusive) {
    if (structure != NoiseStructure::symmetric)
      throw std::invalid_argument("legacy inclusive sampling is only defined for the symmetric structure");
    return build_legacy_inclusive_transition(intensity(classes));
  }
  return build_transition(intensity(classes), build_confusion(structure, classes));
}

namespace {

nlohmann::json matrix_json(const Eigen::MatrixXd& m) {
  auto rows = nlohmann::json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    auto row = nlohmann::json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(row);
  }
  return rows;
}

}  // namespace

nlohmann::json to_json(const NoiseSpec& spec, int classes) {
  nlohmann::json j;
  j["structure"] = to_string(spec.structure);
  j["ratio"] = spec.ratio;
  j["class_ratios"] = spec.class_ratios;
  j["legacy_inclusive"] = spec.legacy_inclusive;
  j["seed"] = spec.seed;
  const Eigen::VectorXd p = spec.intensity(classes).p;
  j["intensity"] = std::vector<double>(p.data(), p.data() + p.size());
  if (!spec.legacy_inclusive) j["confusion"] = matrix_json(build_confusion(spec.structure, classes).c);
  j["transition"] = matrix_json(spec.transition(classes).f);
  return j;
}

NoiseSpec noise_spec_from_json(const nlohmann::json& j) {
  NoiseSpec s;
  s.structure = parse_noise_structure(j.at("structure").get<std::string>());
  s.ratio = j.at("ratio").get<double>();
  if (j.contains("class_ratios")) s.class_ratios = j.at("class_ratios").get<std::vector<double>>();
  s.legacy_inclusive = j.value("legacy_inclusive", false);
  s.seed = j.at("seed").get<std::uint64_t>();
  return s;
}

LabeledDataset apply_noise(const LabeledDataset& ds, const NoiseSpec& spec) {
  return corrupt_labels(ds, spec.transition(ds.classes), spec.seed);
}

}  // namespace rte
