#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "rte/autodiff.hpp"

namespace rte {

enum class ArchKind { mlp, convnet };

/// Layer sizes of a small classifier. The convnet has four 3x3 conv blocks
/// (ReLU, then 2x2 max-pooling while the feature map is still poolable)
/// followed by one dense layer.
struct ArchSpec {
  ArchKind kind = ArchKind::mlp;
  FeatureShape input = flat_shape(32);
  std::vector<int> hidden{64};
  std::vector<int> conv_channels{8, 16, 16, 32};
  int classes = 10;
  double dropout = 0.01;

  void validate() const;
};

nlohmann::json to_json(const ArchSpec& a);
ArchSpec arch_from_json(const nlohmann::json& j);
ArchKind parse_arch_kind(const std::string& name);

struct ParamInfo {
  std::string name;
  Eigen::Index rows = 0;
  Eigen::Index cols = 0;
  Eigen::Index fan_in = 0;
  bool is_bias = false;
};

std::vector<ParamInfo> param_layout(const ArchSpec& arch);

using ParamSet = std::vector<MatrixR>;

std::size_t parameter_count(const ParamSet& params);

/// Student parameters plus their exponential moving average (the teacher).
struct ModelState {
  ArchSpec arch;
  ParamSet student;
  ParamSet teacher;
  double ema_decay = 0.99;
  std::uint64_t step = 0;
};

/// He (fan-in) normal weights, zero biases; the teacher starts as an exact copy.
ModelState init_model(const ArchSpec& arch, std::uint64_t seed, double ema_decay = 0.99);

/// teacher <- a * teacher + (1 - a) * student, elementwise; step += 1.
void ema_update(ModelState& state);

std::vector<Var<Real>> add_parameters(Graph<Real>& g, const ParamSet& params, bool trainable, const std::string& prefix);

/// Logits for a batch of rows. Dropout masks come from `rng` in train mode.
Var<Real> build_logits(Graph<Real>& g, const ArchSpec& arch, std::span<const Var<Real>> params, Var<Real> x, Mode mode,
                       Rng& rng);

/// Class-probability matrix, one row per sample.
MatrixR predict(const ArchSpec& arch, const ParamSet& params, const MatrixR& batch, Mode mode = Mode::eval,
                std::uint64_t dropout_seed = 0);

}  // namespace rte
