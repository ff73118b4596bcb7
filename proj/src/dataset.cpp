#include "rte/dataset.hpp"

#include <algorithm>
#include <array>
#include <cstring>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include "rte/rng.hpp"

namespace rte {

namespace {

constexpr std::array<char, 8> kMagic{'R', 'T', 'E', 'D', 'S', 'E', 'T', '\0'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void put(std::ostream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw std::runtime_error("dataset file truncated");
  return v;
}

}  // namespace

void LabeledDataset::validate() const {
  const std::size_t n = true_labels.size();
  if (classes < 1) throw std::invalid_argument("dataset: class count must be positive");
  if (noisy_labels.size() != n || corrupted.size() != n)
    throw std::invalid_argument("dataset: label arrays differ in length");
  if (static_cast<std::size_t>(features.rows()) != n)
    throw std::invalid_argument("dataset: feature rows differ from label count");
  if (features.cols() != shape.size()) throw std::invalid_argument("dataset: feature width differs from shape");
  for (std::size_t i = 0; i < n; ++i) {
    if (true_labels[i] < 0 || true_labels[i] >= classes || noisy_labels[i] < 0 || noisy_labels[i] >= classes)
      throw std::invalid_argument("dataset: label out of range at index " + std::to_string(i));
    if ((corrupted[i] != 0) != (noisy_labels[i] != true_labels[i]))
      throw std::invalid_argument("dataset: corrupted flag inconsistent at index " + std::to_string(i));
  }
}

LabeledDataset LabeledDataset::clean(FeatureShape shape, int classes, MatrixR features, std::vector<int> labels) {
  LabeledDataset ds;
  ds.shape = shape;
  ds.classes = classes;
  ds.features = std::move(features);
  ds.noisy_labels = labels;
  ds.true_labels = std::move(labels);
  ds.corrupted.assign(ds.true_labels.size(), 0);
  return ds;
}

LabeledDataset LabeledDataset::subset(std::span<const std::size_t> indices) const {
  LabeledDataset out;
  out.shape = shape;
  out.classes = classes;
  out.seed = seed;
  out.features = rows(indices);
  for (std::size_t i : indices) {
    out.true_labels.push_back(true_labels.at(i));
    out.noisy_labels.push_back(noisy_labels.at(i));
    out.corrupted.push_back(corrupted.at(i));
  }
  return out;
}

MatrixR LabeledDataset::rows(std::span<const std::size_t> indices) const {
  MatrixR out(static_cast<Eigen::Index>(indices.size()), features.cols());
  for (std::size_t r = 0; r < indices.size(); ++r) out.row(static_cast<Eigen::Index>(r)) = features.row(static_cast<Eigen::Index>(indices[r]));
  return out;
}

void save_dataset(const std::filesystem::path& path, const LabeledDataset& ds) {
  ds.validate();
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os.write(kMagic.data(), kMagic.size());
  put(os, kVersion);
  put(os, static_cast<std::uint64_t>(ds.size()));
  put(os, static_cast<std::uint32_t>(ds.classes));
  put(os, static_cast<std::uint32_t>(ds.shape.channels));
  put(os, static_cast<std::uint32_t>(ds.shape.height));
  put(os, static_cast<std::uint32_t>(ds.shape.width));
  put(os, ds.seed);
  for (Eigen::Index i = 0; i < ds.features.size(); ++i) put(os, static_cast<double>(ds.features.data()[i]));
  for (int v : ds.true_labels) put(os, static_cast<std::int32_t>(v));
  for (int v : ds.noisy_labels) put(os, static_cast<std::int32_t>(v));
  for (auto v : ds.corrupted) put(os, v);
  if (!os) throw std::runtime_error("failed writing " + path.string());
}

LabeledDataset load_dataset(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path.string());
  std::array<char, 8> magic{};
  is.read(magic.data(), magic.size());
  if (!is || magic != kMagic) throw std::runtime_error(path.string() + " is not a dataset container");
  if (const auto version = get<std::uint32_t>(is); version != kVersion)
    throw std::runtime_error("unsupported dataset version " + std::to_string(version));
  LabeledDataset ds;
  const auto n = get<std::uint64_t>(is);
  ds.classes = static_cast<int>(get<std::uint32_t>(is));
  ds.shape.channels = static_cast<int>(get<std::uint32_t>(is));
  ds.shape.height = static_cast<int>(get<std::uint32_t>(is));
  ds.shape.width = static_cast<int>(get<std::uint32_t>(is));
  ds.seed = get<std::uint64_t>(is);
  ds.features.resize(static_cast<Eigen::Index>(n), ds.shape.size());
  for (Eigen::Index i = 0; i < ds.features.size(); ++i) ds.features.data()[i] = static_cast<Real>(get<double>(is));
  ds.true_labels.resize(n);
  ds.noisy_labels.resize(n);
  ds.corrupted.resize(n);
  for (auto& v : ds.true_labels) v = get<std::int32_t>(is);
  for (auto& v : ds.noisy_labels) v = get<std::int32_t>(is);
  for (auto& v : ds.corrupted) v = get<std::uint8_t>(is);
  ds.validate();
  return ds;
}

TrainTestSplit split_dataset(const LabeledDataset& ds, double fraction, std::uint64_t seed) {
  if (fraction < 0.0 || fraction > 1.0) throw std::invalid_argument("split fraction must be in [0, 1]");
  std::vector<std::size_t> order(ds.size());
  std::iota(order.begin(), order.end(), 0);
  auto rng = Rng::stream(seed, 0x5D117);
  rng.shuffle(std::span<std::size_t>(order));
  const auto cut = static_cast<std::size_t>(fraction * static_cast<double>(ds.size()) + 0.5);
  std::vector<std::size_t> test(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(cut));
  std::vector<std::size_t> train(order.begin() + static_cast<std::ptrdiff_t>(cut), order.end());
  std::sort(test.begin(), test.end());
  std::sort(train.begin(), train.end());
  return {ds.subset(train), ds.subset(test)};
}

}  // namespace rte
