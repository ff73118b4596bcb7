#pragma once

#include <array>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "rte/dataset.hpp"
#include "rte/model.hpp"
#include "rte/rng.hpp"

namespace rte {

enum class WeightSource { teacher, student };

const ParamSet& weights(const ModelState& model, WeightSource source);

/// Eval-mode class probabilities, evaluated in chunks of `chunk` rows.
MatrixR predict_probabilities(const ArchSpec& arch, const ParamSet& params, const MatrixR& features,
                              std::size_t chunk = 512);

/// Row-wise argmax; ties go to the lowest class index.
std::vector<int> argmax_rows(const MatrixR& probs);

double accuracy(const MatrixR& probs, std::span<const int> labels);
/// Accuracy against true labels, teacher weights unless told otherwise.
double accuracy(const ModelState& model, const LabeledDataset& data, WeightSource source = WeightSource::teacher);

// ---------------------------------------------------------------------------
// Corruption suite

inline constexpr int kSeverityLevels = 5;

/// `sample` is modified in place and clipped to [lo, hi].
struct Corruption {
  std::string name;
  std::function<void(std::span<Real> sample, const FeatureShape& shape, int severity, double lo, double hi, Rng& rng)>
      apply;
};

struct CorruptionSuite {
  std::vector<Corruption> corruptions;

  std::vector<std::string> names() const;
  const Corruption& at(const std::string& name) const;
};

/// gaussian_noise, impulse_noise, box_blur, contrast, brightness, pixelate,
/// occlusion, saturate. Flat features are treated as a 1 x d image.
const CorruptionSuite& default_corruption_suite();

/// Corrupted copy of `features`; sample i uses stream (seed, name, severity, i).
MatrixR apply_corruption(const MatrixR& features, const FeatureShape& shape, const Corruption& c, int severity,
                         std::uint64_t seed, double lo, double hi);

struct CorruptionRow {
  std::string name;
  std::array<double, kSeverityLevels> error{};  // percent
  double mean = 0.0;
};

struct McEReport {
  double mce = 0.0;          // percent, unnormalized
  double clean_error = 0.0;  // percent
  std::vector<CorruptionRow> rows;
};

/// Mean over (corruption, severity) of the test error in percent. The
/// admissible range [lo, hi] is the observed range of the clean features.
McEReport mean_corruption_error(const ArchSpec& arch, const ParamSet& params, const LabeledDataset& test,
                                const CorruptionSuite& suite = default_corruption_suite(), std::uint64_t seed = 0);

// ---------------------------------------------------------------------------
// Loss distributions

struct LossHistogram {
  std::vector<std::size_t> counts;
  double median = 0.0;
  std::size_t size = 0;
};

struct LossSplit {
  double q = 0.0;
  double lo = 0.0;
  double hi = 0.0;
  LossHistogram clean;
  LossHistogram corrupt;
};

/// Per-sample GCE against the noisy labels, split by the corrupted flag.
/// Both histograms share `bins` equal-width bins over the observed range.
LossSplit loss_split_histogram(const MatrixR& probs, const LabeledDataset& data, double q, int bins = 64);
LossSplit loss_split_histogram(const ModelState& model, const LabeledDataset& data, double q, int bins = 64,
                               WeightSource source = WeightSource::teacher);

double median(std::vector<double> values);

// ---------------------------------------------------------------------------
// Calibration

struct CalibrationReport {
  std::vector<double> edges;  // bins + 1 values from 0 to 1
  std::vector<double> confidence;
  std::vector<double> accuracy;
  std::vector<std::size_t> count;
  double ece = 0.0;
};

/// Equal-width binning of max-probability; ECE = sum (count/n) |acc - conf|.
CalibrationReport calibration(const MatrixR& probs, std::span<const int> labels, int bins = 15);
CalibrationReport calibration(const ModelState& model, const LabeledDataset& data, int bins = 15,
                              WeightSource source = WeightSource::teacher);

nlohmann::json to_json(const McEReport& r);
nlohmann::json to_json(const LossSplit& s);
nlohmann::json to_json(const CalibrationReport& c);

void write_calibration_csv(std::ostream& os, const CalibrationReport& c);
void write_loss_split_csv(std::ostream& os, const LossSplit& s);
void write_mce_csv(std::ostream& os, const McEReport& r);

}  // namespace rte
