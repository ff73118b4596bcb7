#include "rte/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <ostream>
#include <stdexcept>

#include "rte/loss.hpp"

namespace rte {

const ParamSet& weights(const ModelState& model, WeightSource source) {
  return source == WeightSource::teacher ? model.teacher : model.student;
}

MatrixR predict_probabilities(const ArchSpec& arch, const ParamSet& params, const MatrixR& features, std::size_t chunk) {
  if (chunk == 0) throw std::invalid_argument("predict_probabilities: chunk must be positive");
  MatrixR out(features.rows(), arch.classes);
  for (Eigen::Index start = 0; start < features.rows(); start += static_cast<Eigen::Index>(chunk)) {
    const Eigen::Index len = std::min<Eigen::Index>(static_cast<Eigen::Index>(chunk), features.rows() - start);
    out.middleRows(start, len) = predict(arch, params, features.middleRows(start, len), Mode::eval);
  }
  return out;
}

std::vector<int> argmax_rows(const MatrixR& probs) {
  std::vector<int> out(static_cast<std::size_t>(probs.rows()));
  for (Eigen::Index i = 0; i < probs.rows(); ++i) {
    Eigen::Index best = 0;
    for (Eigen::Index j = 1; j < probs.cols(); ++j)
      if (probs(i, j) > probs(i, best)) best = j;
    out[static_cast<std::size_t>(i)] = static_cast<int>(best);
  }
  return out;
}

double accuracy(const MatrixR& probs, std::span<const int> labels) {
  if (labels.empty()) throw std::invalid_argument("accuracy: empty dataset");
  if (static_cast<std::size_t>(probs.rows()) != labels.size()) throw std::invalid_argument("accuracy: size mismatch");
  const auto pred = argmax_rows(probs);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) hits += pred[i] == labels[i];
  return static_cast<double>(hits) / static_cast<double>(labels.size());
}

double accuracy(const ModelState& model, const LabeledDataset& data, WeightSource source) {
  if (data.empty()) throw std::invalid_argument("accuracy: empty dataset");
  return accuracy(predict_probabilities(model.arch, weights(model, source), data.features), data.true_labels);
}

// ---------------------------------------------------------------------------
// Corruption suite

namespace {

template <typename T, std::size_t N>
T level(const std::array<T, N>& table, int severity) {
  if (severity < 1 || severity > static_cast<int>(N)) throw std::out_of_range("severity must be in 1..5");
  return table[static_cast<std::size_t>(severity - 1)];
}

void clip(std::span<Real> v, double lo, double hi) {
  for (auto& e : v) e = static_cast<Real>(std::clamp(static_cast<double>(e), lo, hi));
}

// Flat vectors are laid out as a single-channel 1 x d image.
FeatureShape planar(const FeatureShape& s) { return s.is_image() ? s : FeatureShape{1, 1, s.size()}; }

void box_blur(std::span<Real> v, const FeatureShape& shape, int radius) {
  const auto s = planar(shape);
  std::vector<Real> src(v.begin(), v.end());
  for (int c = 0; c < s.channels; ++c)
    for (int y = 0; y < s.height; ++y)
      for (int x = 0; x < s.width; ++x) {
        double acc = 0.0;
        int n = 0;
        for (int dy = -radius; dy <= radius; ++dy)
          for (int dx = -radius; dx <= radius; ++dx) {
            const int yy = y + dy, xx = x + dx;
            if (yy < 0 || yy >= s.height || xx < 0 || xx >= s.width) continue;
            acc += src[static_cast<std::size_t>((c * s.height + yy) * s.width + xx)];
            ++n;
          }
        v[static_cast<std::size_t>((c * s.height + y) * s.width + x)] = static_cast<Real>(acc / n);
      }
}

void pixelate(std::span<Real> v, const FeatureShape& shape, int block) {
  const auto s = planar(shape);
  const int by = s.height == 1 ? 1 : block;
  for (int c = 0; c < s.channels; ++c)
    for (int y0 = 0; y0 < s.height; y0 += by)
      for (int x0 = 0; x0 < s.width; x0 += block) {
        const int y1 = std::min(s.height, y0 + by), x1 = std::min(s.width, x0 + block);
        double acc = 0.0;
        for (int y = y0; y < y1; ++y)
          for (int x = x0; x < x1; ++x) acc += v[static_cast<std::size_t>((c * s.height + y) * s.width + x)];
        const auto mean = static_cast<Real>(acc / ((y1 - y0) * (x1 - x0)));
        for (int y = y0; y < y1; ++y)
          for (int x = x0; x < x1; ++x) v[static_cast<std::size_t>((c * s.height + y) * s.width + x)] = mean;
      }
}

void occlude(std::span<Real> v, const FeatureShape& shape, double fraction, Rng& rng) {
  const auto s = planar(shape);
  double mean = 0.0;
  for (auto e : v) mean += e;
  mean /= static_cast<double>(v.size());
  const int ph = s.height == 1 ? 1 : std::max(1, static_cast<int>(std::lround(fraction * s.height)));
  const int pw = std::max(1, static_cast<int>(std::lround(fraction * s.width)));
  const int y0 = static_cast<int>(rng.below(static_cast<std::size_t>(s.height - ph + 1)));
  const int x0 = static_cast<int>(rng.below(static_cast<std::size_t>(s.width - pw + 1)));
  for (int c = 0; c < s.channels; ++c)
    for (int y = y0; y < y0 + ph; ++y)
      for (int x = x0; x < x0 + pw; ++x) v[static_cast<std::size_t>((c * s.height + y) * s.width + x)] = static_cast<Real>(mean);
}

CorruptionSuite make_default_suite() {
  CorruptionSuite suite;
  auto& c = suite.corruptions;
  c.push_back({"gaussian_noise", [](std::span<Real> v, const FeatureShape&, int sev, double lo, double hi, Rng& rng) {
                 const double sigma = level(std::array{0.04, 0.06, 0.08, 0.10, 0.12}, sev) * (hi - lo);
                 for (auto& e : v) e = static_cast<Real>(e + sigma * rng.normal());
                 clip(v, lo, hi);
               }});
  c.push_back({"impulse_noise", [](std::span<Real> v, const FeatureShape&, int sev, double lo, double hi, Rng& rng) {
                 const double rate = level(std::array{0.01, 0.02, 0.04, 0.07, 0.10}, sev);
                 for (auto& e : v)
                   if (rng.bernoulli(rate)) e = static_cast<Real>(rng.bernoulli(0.5) ? hi : lo);
               }});
  c.push_back({"box_blur", [](std::span<Real> v, const FeatureShape& shape, int sev, double lo, double hi, Rng&) {
                 box_blur(v, shape, level(std::array{1, 2, 3, 4, 5}, sev));
                 clip(v, lo, hi);
               }});
  c.push_back({"contrast", [](std::span<Real> v, const FeatureShape&, int sev, double lo, double hi, Rng&) {
                 const double keep = level(std::array{0.75, 0.6, 0.45, 0.3, 0.15}, sev);
                 double mean = 0.0;
                 for (auto e : v) mean += e;
                 mean /= static_cast<double>(v.size());
                 for (auto& e : v) e = static_cast<Real>(mean + keep * (e - mean));
                 clip(v, lo, hi);
               }});
  c.push_back({"brightness", [](std::span<Real> v, const FeatureShape&, int sev, double lo, double hi, Rng&) {
                 const double shift = level(std::array{0.1, 0.2, 0.3, 0.4, 0.5}, sev) * (hi - lo);
                 for (auto& e : v) e = static_cast<Real>(e + shift);
                 clip(v, lo, hi);
               }});
  c.push_back({"pixelate", [](std::span<Real> v, const FeatureShape& shape, int sev, double lo, double hi, Rng&) {
                 pixelate(v, shape, level(std::array{2, 3, 4, 5, 6}, sev));
                 clip(v, lo, hi);
               }});
  c.push_back({"occlusion", [](std::span<Real> v, const FeatureShape& shape, int sev, double lo, double hi, Rng& rng) {
                 occlude(v, shape, level(std::array{0.1, 0.2, 0.3, 0.4, 0.5}, sev), rng);
                 clip(v, lo, hi);
               }});
  c.push_back({"saturate", [](std::span<Real> v, const FeatureShape&, int sev, double lo, double hi, Rng&) {
                 const double keep = level(std::array{0.9, 0.75, 0.6, 0.45, 0.3}, sev);
                 const double mid = 0.5 * (lo + hi), half = 0.5 * (hi - lo) * keep;
                 clip(v, mid - half, mid + half);
               }});
  return suite;
}

std::uint64_t name_key(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : s) h = (h ^ ch) * 0x100000001b3ULL;
  return h;
}

}  // namespace

std::vector<std::string> CorruptionSuite::names() const {
  std::vector<std::string> out;
  for (const auto& c : corruptions) out.push_back(c.name);
  return out;
}

const Corruption& CorruptionSuite::at(const std::string& name) const {
  for (const auto& c : corruptions)
    if (c.name == name) return c;
  throw std::invalid_argument("unknown corruption '" + name + "'");
}

const CorruptionSuite& default_corruption_suite() {
  static const CorruptionSuite suite = make_default_suite();
  return suite;
}

MatrixR apply_corruption(const MatrixR& features, const FeatureShape& shape, const Corruption& c, int severity,
                         std::uint64_t seed, double lo, double hi) {
  if (severity < 1 || severity > kSeverityLevels) throw std::out_of_range("severity must be in 1..5");
  MatrixR out = features;
  const auto key = name_key(c.name);
  for (Eigen::Index i = 0; i < out.rows(); ++i) {
    auto rng = Rng::stream(seed, key, severity, i);
    c.apply(std::span<Real>(out.row(i).data(), static_cast<std::size_t>(out.cols())), shape, severity, lo, hi, rng);
  }
  return out;
}

McEReport mean_corruption_error(const ArchSpec& arch, const ParamSet& params, const LabeledDataset& test,
                                const CorruptionSuite& suite, std::uint64_t seed) {
  if (test.empty()) throw std::invalid_argument("mean_corruption_error: empty test set");
  const double lo = test.features.minCoeff(), hi = test.features.maxCoeff();
  McEReport r;
  r.clean_error = 100.0 * (1.0 - accuracy(predict_probabilities(arch, params, test.features), test.true_labels));
  double total = 0.0;
  for (const auto& c : suite.corruptions) {
    CorruptionRow row{c.name, {}, 0.0};
    for (int s = 1; s <= kSeverityLevels; ++s) {
      const MatrixR x = apply_corruption(test.features, test.shape, c, s, seed, lo, hi);
      row.error[static_cast<std::size_t>(s - 1)] =
          100.0 * (1.0 - accuracy(predict_probabilities(arch, params, x), test.true_labels));
      row.mean += row.error[static_cast<std::size_t>(s - 1)] / kSeverityLevels;
    }
    total += row.mean;
    r.rows.push_back(row);
  }
  r.mce = suite.corruptions.empty() ? 0.0 : total / static_cast<double>(suite.corruptions.size());
  return r;
}

// ---------------------------------------------------------------------------
// Loss distributions

double median(std::vector<double> values) {
  if (values.empty()) return 0.0;
  const auto mid = values.size() / 2;
  std::nth_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(mid), values.end());
  const double upper = values[mid];
  if (values.size() % 2 == 1) return upper;
  const double lower = *std::max_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(mid));
  return 0.5 * (lower + upper);
}

LossSplit loss_split_histogram(const MatrixR& probs, const LabeledDataset& data, double q, int bins) {
  if (bins < 1) throw std::invalid_argument("loss_split_histogram: bins must be positive");
  if (static_cast<std::size_t>(probs.rows()) != data.size()) throw std::invalid_argument("loss_split_histogram: size mismatch");
  std::vector<double> clean, corrupt, all;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const VectorR p = probs.row(static_cast<Eigen::Index>(i)).transpose();
    const double l = gce_loss(p, data.noisy_labels[i], q);
    (data.corrupted[i] ? corrupt : clean).push_back(l);
    all.push_back(l);
  }
  LossSplit s;
  s.q = q;
  if (!all.empty()) {
    s.lo = *std::min_element(all.begin(), all.end());
    s.hi = *std::max_element(all.begin(), all.end());
  }
  const auto fill = [&](const std::vector<double>& v, LossHistogram& h) {
    h.counts.assign(static_cast<std::size_t>(bins), 0);
    h.size = v.size();
    h.median = median(v);
    const double width = (s.hi - s.lo) / bins;
    for (double l : v) {
      int b = width > 0.0 ? static_cast<int>((l - s.lo) / width) : 0;
      ++h.counts[static_cast<std::size_t>(std::clamp(b, 0, bins - 1))];
    }
  };
  fill(clean, s.clean);
  fill(corrupt, s.corrupt);
  return s;
}

LossSplit loss_split_histogram(const ModelState& model, const LabeledDataset& data, double q, int bins,
                               WeightSource source) {
  return loss_split_histogram(predict_probabilities(model.arch, weights(model, source), data.features), data, q, bins);
}

// ---------------------------------------------------------------------------
// Calibration

CalibrationReport calibration(const MatrixR& probs, std::span<const int> labels, int bins) {
  if (bins < 2) throw std::invalid_argument("calibration: needs at least 2 bins");
  if (static_cast<std::size_t>(probs.rows()) != labels.size()) throw std::invalid_argument("calibration: size mismatch");
  CalibrationReport r;
  const auto nb = static_cast<std::size_t>(bins);
  for (int b = 0; b <= bins; ++b) r.edges.push_back(static_cast<double>(b) / bins);
  r.confidence.assign(nb, 0.0);
  r.accuracy.assign(nb, 0.0);
  r.count.assign(nb, 0);
  const auto pred = argmax_rows(probs);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const double conf = probs(static_cast<Eigen::Index>(i), pred[i]);
    const auto b = static_cast<std::size_t>(std::clamp(static_cast<int>(conf * bins), 0, bins - 1));
    r.confidence[b] += conf;
    r.accuracy[b] += pred[i] == labels[i] ? 1.0 : 0.0;
    ++r.count[b];
  }
  const double n = static_cast<double>(labels.size());
  for (std::size_t b = 0; b < nb; ++b) {
    if (r.count[b] == 0) continue;
    r.confidence[b] /= static_cast<double>(r.count[b]);
    r.accuracy[b] /= static_cast<double>(r.count[b]);
    r.ece += static_cast<double>(r.count[b]) / n * std::abs(r.accuracy[b] - r.confidence[b]);
  }
  return r;
}

CalibrationReport calibration(const ModelState& model, const LabeledDataset& data, int bins, WeightSource source) {
  return calibration(predict_probabilities(model.arch, weights(model, source), data.features), data.true_labels, bins);
}

// ---------------------------------------------------------------------------
// Serialization

nlohmann::json to_json(const McEReport& r) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& row : r.rows) rows.push_back({{"corruption", row.name}, {"error", row.error}, {"mean", row.mean}});
  return {{"mce", r.mce}, {"clean_error", r.clean_error}, {"corruptions", rows}};
}

nlohmann::json to_json(const LossSplit& s) {
  const auto h = [](const LossHistogram& x) {
    return nlohmann::json{{"size", x.size}, {"median", x.median}, {"counts", x.counts}};
  };
  return {{"q", s.q}, {"lo", s.lo}, {"hi", s.hi}, {"clean", h(s.clean)}, {"corrupt", h(s.corrupt)}};
}

nlohmann::json to_json(const CalibrationReport& c) {
  return {{"ece", c.ece}, {"edges", c.edges}, {"confidence", c.confidence}, {"accuracy", c.accuracy}, {"count", c.count}};
}

namespace {

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

void write_calibration_csv(std::ostream& os, const CalibrationReport& c) {
  os << "bin,lo,hi,count,confidence,accuracy\n";
  for (std::size_t b = 0; b < c.count.size(); ++b)
    os << b << ',' << fmt(c.edges[b]) << ',' << fmt(c.edges[b + 1]) << ',' << c.count[b] << ',' << fmt(c.confidence[b])
       << ',' << fmt(c.accuracy[b]) << '\n';
}

void write_loss_split_csv(std::ostream& os, const LossSplit& s) {
  os << "bin,lo,hi,clean,corrupt\n";
  const std::size_t bins = s.clean.counts.size();
  const double width = bins ? (s.hi - s.lo) / static_cast<double>(bins) : 0.0;
  for (std::size_t b = 0; b < bins; ++b)
    os << b << ',' << fmt(s.lo + width * static_cast<double>(b)) << ',' << fmt(s.lo + width * static_cast<double>(b + 1))
       << ',' << s.clean.counts[b] << ',' << s.corrupt.counts[b] << '\n';
}

void write_mce_csv(std::ostream& os, const McEReport& r) {
  os << "corruption,s1,s2,s3,s4,s5,mean\n";
  for (const auto& row : r.rows) {
    os << row.name;
    for (double e : row.error) os << ',' << fmt(e);
    os << ',' << fmt(row.mean) << '\n';
  }
}

}  // namespace rte
