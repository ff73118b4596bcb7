#include "rte/augment.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace rte {

namespace {

int index(const FeatureShape& s, int c, int y, int x) { return (c * s.height + y) * s.width + x; }

int reflect(int i, int n) {
  if (n == 1) return 0;
  while (i < 0 || i >= n) i = i < 0 ? -i : 2 * n - 2 - i;
  return i;
}

double magnitude(int severity) { return static_cast<double>(severity) / 5.0; }

void clamp_range(std::span<Real> v, double lo, double hi) {
  for (auto& x : v) x = static_cast<Real>(std::clamp(static_cast<double>(x), lo, hi));
}

// Resamples every channel through an inverse map (output pixel -> source
// coordinate). Out-of-image sources take `fill`.
template <typename Map>
void remap(std::span<Real> v, const FeatureShape& s, double fill, Map&& source) {
  std::vector<Real> src(v.begin(), v.end());
  for (int c = 0; c < s.channels; ++c)
    for (int y = 0; y < s.height; ++y)
      for (int x = 0; x < s.width; ++x) {
        const auto [sy, sx] = source(y, x);
        const int iy = static_cast<int>(std::lround(sy));
        const int ix = static_cast<int>(std::lround(sx));
        v[static_cast<std::size_t>(index(s, c, y, x))] =
            (iy < 0 || iy >= s.height || ix < 0 || ix >= s.width)
                ? static_cast<Real>(fill)
                : src[static_cast<std::size_t>(index(s, c, iy, ix))];
      }
}

void flip_horizontal(std::span<Real> v, const FeatureShape& s) {
  for (int c = 0; c < s.channels; ++c)
    for (int y = 0; y < s.height; ++y)
      for (int x = 0; x < s.width / 2; ++x)
        std::swap(v[static_cast<std::size_t>(index(s, c, y, x))], v[static_cast<std::size_t>(index(s, c, y, s.width - 1 - x))]);
}

void shift_reflect(std::span<Real> v, const FeatureShape& s, int dy, int dx) {
  std::vector<Real> src(v.begin(), v.end());
  for (int c = 0; c < s.channels; ++c)
    for (int y = 0; y < s.height; ++y)
      for (int x = 0; x < s.width; ++x)
        v[static_cast<std::size_t>(index(s, c, y, x))] =
            src[static_cast<std::size_t>(index(s, c, reflect(y - dy, s.height), reflect(x - dx, s.width)))];
}

std::vector<AugmentPrimitive> make_image_primitives() {
  std::vector<AugmentPrimitive> p;
  p.push_back({"translate", [](std::span<Real> v, const FeatureShape& s, const AugmentSpec& spec, double lo, double, Rng& rng) {
                 const int reach = std::max(1, static_cast<int>(std::lround(magnitude(spec.severity) * s.width / 3.0)));
                 const int dy = rng.integer(-reach, reach);
                 const int dx = rng.integer(-reach, reach);
                 remap(v, s, lo, [&](int y, int x) { return std::pair<double, double>(y - dy, x - dx); });
               }});
  p.push_back({"flip", [](std::span<Real> v, const FeatureShape& s, const AugmentSpec&, double, double, Rng&) { flip_horizontal(v, s); }});
  p.push_back({"rotate", [](std::span<Real> v, const FeatureShape& s, const AugmentSpec& spec, double lo, double, Rng& rng) {
                 const double angle = rng.uniform(-1.0, 1.0) * magnitude(spec.severity) * std::numbers::pi / 6.0;
                 const double cy = (s.height - 1) / 2.0, cx = (s.width - 1) / 2.0;
                 const double cs = std::cos(angle), sn = std::sin(angle);
                 remap(v, s, lo, [&](int y, int x) {
                   const double ry = y - cy, rx = x - cx;
                   return std::pair<double, double>(cy + cs * ry - sn * rx, cx + sn * ry + cs * rx);
                 });
               }});
  p.push_back({"shear", [](std::span<Real> v, const FeatureShape& s, const AugmentSpec& spec, double lo, double, Rng& rng) {
                 const double k = rng.uniform(-1.0, 1.0) * 0.3 * magnitude(spec.severity);
                 const double cy = (s.height - 1) / 2.0;
                 remap(v, s, lo, [&](int y, int x) { return std::pair<double, double>(y, x - k * (y - cy)); });
               }});
  p.push_back({"autocontrast", [](std::span<Real> v, const FeatureShape& s, const AugmentSpec&, double lo, double hi, Rng&) {
                 const int plane = s.height * s.width;
                 for (int c = 0; c < s.channels; ++c) {
                   auto ch = v.subspan(static_cast<std::size_t>(c * plane), static_cast<std::size_t>(plane));
                   const auto [mn, mx] = std::minmax_element(ch.begin(), ch.end());
                   const double a = *mn, b = *mx;
                   if (b - a <= 1e-12) continue;
                   for (auto& x : ch) x = static_cast<Real>(lo + (x - a) * (hi - lo) / (b - a));
                 }
               }});
  p.push_back({"posterize", [](std::span<Real> v, const FeatureShape&, const AugmentSpec& spec, double lo, double hi, Rng&) {
                 if (hi - lo <= 1e-12) return;
                 const double levels = std::exp2(6 - spec.severity);  // 32 levels at severity 1, 2 at severity 5
                 for (auto& x : v) {
                   const double t = std::floor((x - lo) / (hi - lo) * levels) / levels;
                   x = static_cast<Real>(lo + std::min(t, 1.0) * (hi - lo));
                 }
               }});
  p.push_back({"solarize", [](std::span<Real> v, const FeatureShape&, const AugmentSpec& spec, double lo, double hi, Rng&) {
                 const double threshold = hi - (hi - lo) * magnitude(spec.severity);
                 for (auto& x : v)
                   if (x > threshold) x = static_cast<Real>(hi + lo - x);
               }});
  return p;
}

std::vector<AugmentPrimitive> make_flat_primitives() {
  std::vector<AugmentPrimitive> p;
  p.push_back({"jitter", [](std::span<Real> v, const FeatureShape&, const AugmentSpec& spec, double, double, Rng& rng) {
                 const double sigma = spec.jitter_scale * magnitude(spec.severity);
                 for (auto& x : v) x = static_cast<Real>(x + sigma * rng.normal());
               }});
  p.push_back({"feature_mask", [](std::span<Real> v, const FeatureShape&, const AugmentSpec& spec, double, double, Rng& rng) {
                 const double prob = spec.mask_scale * magnitude(spec.severity);
                 for (auto& x : v)
                   if (rng.bernoulli(prob)) x = 0;
               }});
  return p;
}

}  // namespace

void AugmentSpec::validate() const {
  if (mixture_width < 1) throw std::invalid_argument("augment: mixture_width must be >= 1");
  if (severity < 1 || severity > 5) throw std::invalid_argument("augment: severity must be in [1, 5]");
  if (chain_depth_min < 1 || chain_depth_max < chain_depth_min)
    throw std::invalid_argument("augment: chain depth range must satisfy 1 <= min <= max");
  if (!(dirichlet_alpha > 0.0) || !(beta_alpha > 0.0)) throw std::invalid_argument("augment: mixing parameters must be positive");
  if (weak_flip_probability < 0.0 || weak_flip_probability > 1.0) throw std::invalid_argument("augment: flip probability must be in [0, 1]");
  if (weak_shift < 0 || weak_jitter < 0.0 || jitter_scale < 0.0 || mask_scale < 0.0 || mask_scale > 1.0)
    throw std::invalid_argument("augment: weak/flat scales must be nonnegative (mask_scale <= 1)");
}

nlohmann::json to_json(const AugmentSpec& s) {
  return {{"mixture_width", s.mixture_width}, {"severity", s.severity},
          {"chain_depth_min", s.chain_depth_min}, {"chain_depth_max", s.chain_depth_max},
          {"dirichlet_alpha", s.dirichlet_alpha}, {"beta_alpha", s.beta_alpha},
          {"weak_flip_probability", s.weak_flip_probability}, {"weak_shift", s.weak_shift},
          {"weak_jitter", s.weak_jitter}, {"jitter_scale", s.jitter_scale}, {"mask_scale", s.mask_scale}};
}

AugmentSpec augment_spec_from_json(const nlohmann::json& j) {
  AugmentSpec s;
  s.mixture_width = j.value("mixture_width", s.mixture_width);
  s.severity = j.value("severity", s.severity);
  s.chain_depth_min = j.value("chain_depth_min", s.chain_depth_min);
  s.chain_depth_max = j.value("chain_depth_max", s.chain_depth_max);
  s.dirichlet_alpha = j.value("dirichlet_alpha", s.dirichlet_alpha);
  s.beta_alpha = j.value("beta_alpha", s.beta_alpha);
  s.weak_flip_probability = j.value("weak_flip_probability", s.weak_flip_probability);
  s.weak_shift = j.value("weak_shift", s.weak_shift);
  s.weak_jitter = j.value("weak_jitter", s.weak_jitter);
  s.jitter_scale = j.value("jitter_scale", s.jitter_scale);
  s.mask_scale = j.value("mask_scale", s.mask_scale);
  s.validate();
  return s;
}

const std::vector<AugmentPrimitive>& image_primitives() {
  static const auto p = make_image_primitives();
  return p;
}

const std::vector<AugmentPrimitive>& flat_primitives() {
  static const auto p = make_flat_primitives();
  return p;
}

std::vector<std::string> augmentation_primitive_names() {
  std::vector<std::string> names;
  for (const auto& p : image_primitives()) names.push_back(p.name);
  for (const auto& p : flat_primitives()) names.push_back(p.name);
  return names;
}

VectorR mix_chains(const VectorR& original, std::span<const VectorR> chains, std::span<const double> weights, double blend) {
  if (chains.size() != weights.size() || chains.empty()) throw std::invalid_argument("mix_chains: one weight per chain required");
  VectorR mix = VectorR::Zero(original.size());
  for (std::size_t i = 0; i < chains.size(); ++i) mix += static_cast<Real>(weights[i]) * chains[i];
  return static_cast<Real>(blend) * original + static_cast<Real>(1.0 - blend) * mix;
}

Augmenter::Augmenter(AugmentSpec spec, FeatureShape shape) : spec_(spec), shape_(shape) { spec_.validate(); }

VectorR Augmenter::weak(const VectorR& x, Rng& rng) const {
  VectorR out = x;
  std::span<Real> v(out.data(), static_cast<std::size_t>(out.size()));
  if (shape_.is_image()) {
    if (rng.bernoulli(spec_.weak_flip_probability)) flip_horizontal(v, shape_);
    const int reach = std::min(spec_.weak_shift, std::min(shape_.height, shape_.width) - 1);
    if (reach > 0) {
      const int dy = rng.integer(-reach, reach);
      const int dx = rng.integer(-reach, reach);
      shift_reflect(v, shape_, dy, dx);
    }
  } else if (spec_.weak_jitter > 0.0) {
    for (auto& e : v) e = static_cast<Real>(e + spec_.weak_jitter * rng.normal());
  }
  return out;
}

VectorR Augmenter::strong(const VectorR& x, Rng& rng, StrongAugmentTrace* trace) const {
  const double lo = x.size() ? static_cast<double>(x.minCoeff()) : 0.0;
  const double hi = x.size() ? static_cast<double>(x.maxCoeff()) : 0.0;
  const bool image = shape_.is_image();
  const auto& prims = image ? image_primitives() : flat_primitives();

  std::vector<VectorR> chains;
  std::vector<std::vector<std::string>> names;
  for (int k = 0; k < spec_.mixture_width; ++k) {
    VectorR c = x;
    std::span<Real> v(c.data(), static_cast<std::size_t>(c.size()));
    const int depth = rng.integer(spec_.chain_depth_min, spec_.chain_depth_max);
    std::vector<std::string> applied;
    for (int d = 0; d < depth; ++d) {
      const auto& prim = prims[rng.below(prims.size())];
      prim.apply(v, shape_, spec_, lo, hi, rng);
      clamp_range(v, lo, hi);
      applied.push_back(prim.name);
    }
    chains.push_back(std::move(c));
    names.push_back(std::move(applied));
  }
  const auto weights = rng.dirichlet(chains.size(), spec_.dirichlet_alpha);
  const double blend = rng.beta(spec_.beta_alpha, spec_.beta_alpha);
  if (trace) *trace = {weights, blend, names};
  return mix_chains(x, chains, weights, blend);
}

}  // namespace rte
