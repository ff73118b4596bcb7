#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "rte/rng.hpp"
#include "rte/types.hpp"

namespace rte {

/// Parameters of the weak (flip/shift or jitter) and strong (mixed-chain)
/// augmenters.
struct AugmentSpec {
  int mixture_width = 3;
  int severity = 3;  // 1..5
  int chain_depth_min = 1;
  int chain_depth_max = 3;
  double dirichlet_alpha = 1.0;
  double beta_alpha = 1.0;

  double weak_flip_probability = 0.5;
  int weak_shift = 4;         // pixels, images only
  double weak_jitter = 0.05;  // stddev, flat features only

  double jitter_scale = 0.5;  // flat strong jitter stddev at severity 5
  double mask_scale = 0.3;    // flat masking probability at severity 5

  void validate() const;
};

nlohmann::json to_json(const AugmentSpec& s);
AugmentSpec augment_spec_from_json(const nlohmann::json& j);

/// One parametric transform. `sample` is modified in place; `lo`/`hi`
/// bound the admissible value range.
struct AugmentPrimitive {
  std::string name;
  std::function<void(std::span<Real> sample, const FeatureShape& shape, const AugmentSpec& spec, double lo, double hi,
                     Rng& rng)>
      apply;
};

/// translate, flip, rotate, shear, autocontrast, posterize, solarize.
const std::vector<AugmentPrimitive>& image_primitives();
/// jitter (additive Gaussian), feature_mask.
const std::vector<AugmentPrimitive>& flat_primitives();
/// Names of every primitive the training augmenters can apply.
std::vector<std::string> augmentation_primitive_names();

/// Convex combination: blend * original + (1 - blend) * sum_i weights[i] * chains[i].
VectorR mix_chains(const VectorR& original, std::span<const VectorR> chains, std::span<const double> weights, double blend);

struct StrongAugmentTrace {
  std::vector<double> chain_weights;
  double blend = 0.0;
  std::vector<std::vector<std::string>> chains;
};

class Augmenter {
 public:
  Augmenter(AugmentSpec spec, FeatureShape shape);

  const AugmentSpec& spec() const { return spec_; }
  const FeatureShape& shape() const { return shape_; }

  /// Images: horizontal flip with the configured probability, then a shift
  /// of up to weak_shift pixels with reflection padding. Flat features:
  /// additive Gaussian jitter.
  VectorR weak(const VectorR& x, Rng& rng) const;

  /// Mixed-chain augmentation: mixture_width chains of 1..3 primitives,
  /// Dirichlet-weighted, then blended with the original by a Beta draw.
  VectorR strong(const VectorR& x, Rng& rng, StrongAugmentTrace* trace = nullptr) const;

 private:
  AugmentSpec spec_;
  FeatureShape shape_;
};

}  // namespace rte
