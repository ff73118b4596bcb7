#pragma once

#include <cmath>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "rte/autodiff.hpp"
#include "rte/types.hpp"

namespace rte {

/// f_j is clamped to this floor before the q-power (and before log in the
/// cross-entropy branch).
inline constexpr double kProbabilityFloor = 1e-8;
/// Below this q the generalized cross-entropy is evaluated as its exact
/// q -> 0 limit, categorical cross-entropy.
inline constexpr double kCrossEntropyThreshold = 1e-3;
/// Additive smoothing inside the KL logarithms.
inline constexpr double kKlSmoothing = 1e-12;
/// Below this temperature sharpening is a hard argmax.
inline constexpr double kHardSharpenThreshold = 1e-3;

enum class EcrNorm { squared, l2 };

inline void validate_q(double q) {
  if (!(q >= 0.0) || q > 1.0)
    throw std::invalid_argument("q must lie in (0, 1] (or 0 for cross-entropy), got " + std::to_string(q));
}

// ---------------------------------------------------------------------------
// Scalar forms on single probability vectors

/// Generalized cross-entropy (1 - f_j^q) / q.
inline double gce_loss(const VectorR& probs, int label, double q) {
  validate_q(q);
  if (label < 0 || label >= probs.size()) throw std::out_of_range("gce_loss: label out of range");
  const double f = std::max(static_cast<double>(probs[label]), kProbabilityFloor);
  if (q < kCrossEntropyThreshold) return -std::log(f);
  return (1.0 - std::pow(f, q)) / q;
}

inline double cross_entropy(const VectorR& probs, int label) { return gce_loss(probs, label, 0.0); }

/// Mean over terms and classes of the per-class squared error between the
/// teacher distribution and each augmented student distribution.
inline double ecr_loss(const VectorR& teacher, std::span<const VectorR> students, EcrNorm norm = EcrNorm::squared) {
  if (students.empty()) throw std::invalid_argument("ecr_loss: needs at least one augmented prediction");
  double total = 0.0;
  for (const auto& s : students) {
    if (s.size() != teacher.size()) throw std::invalid_argument("ecr_loss: class count mismatch");
    const double sq = (teacher - s).squaredNorm();
    total += norm == EcrNorm::squared ? sq : std::sqrt(sq);
  }
  return total / (static_cast<double>(teacher.size()) * static_cast<double>(students.size()));
}

/// D_KL(p || q) with epsilon smoothing of both arguments inside the log.
inline double kl_divergence(const VectorR& p, const VectorR& q) {
  if (p.size() != q.size()) throw std::invalid_argument("kl_divergence: size mismatch");
  double d = 0.0;
  for (Eigen::Index i = 0; i < p.size(); ++i)
    d += p[i] * (std::log(p[i] + kKlSmoothing) - std::log(q[i] + kKlSmoothing));
  return d;
}

struct DistributionTriple {
  VectorR orig;
  VectorR aug1;
  VectorR aug2;
};

inline double jsd_loss(const DistributionTriple& t) {
  const VectorR m = (t.orig + t.aug1 + t.aug2) / 3.0;
  return (kl_divergence(t.orig, m) + kl_divergence(t.aug1, m) + kl_divergence(t.aug2, m)) / 3.0;
}

inline VectorR sharpen(const VectorR& p, double temperature) {
  if (!(temperature > 0.0)) throw std::invalid_argument("sharpen: temperature must be positive");
  if (temperature < kHardSharpenThreshold) {
    Eigen::Index best = 0;
    for (Eigen::Index i = 1; i < p.size(); ++i)
      if (p[i] > p[best]) best = i;
    VectorR out = VectorR::Zero(p.size());
    out[best] = 1.0;
    return out;
  }
  VectorR out = p.array().pow(1.0 / temperature).matrix();
  return out / out.sum();
}

// ---------------------------------------------------------------------------
// Graph forms on batches (rows are samples). Per-sample results are n x 1.

template <typename Scalar>
Var<Scalar> gce_loss(Var<Scalar> probs, std::vector<int> labels, double q) {
  validate_q(q);
  Var<Scalar> f = clamp_min(pick(probs, std::move(labels)), static_cast<Scalar>(kProbabilityFloor));
  if (q < kCrossEntropyThreshold) return affine(log(f), Scalar(-1));
  const auto qs = static_cast<Scalar>(q);
  return affine(pow(f, qs), Scalar(-1) / qs, Scalar(1) / qs);
}

template <typename Scalar>
Var<Scalar> ecr_loss(Var<Scalar> target, std::span<const Var<Scalar>> students, EcrNorm norm = EcrNorm::squared) {
  if (students.empty()) throw std::invalid_argument("ecr_loss: needs at least one augmented prediction");
  const double scale = 1.0 / (static_cast<double>(target.rows()) * static_cast<double>(target.cols()) *
                              static_cast<double>(students.size()));
  Var<Scalar> total{};
  for (std::size_t i = 0; i < students.size(); ++i) {
    Var<Scalar> sq = square(students[i] - target);
    Var<Scalar> term = norm == EcrNorm::squared ? sum(sq) : sum(sqrt(affine(row_sum(sq), Scalar(1), Scalar(1e-24))));
    total = i == 0 ? term : total + term;
  }
  return affine(total, static_cast<Scalar>(scale));
}

/// Row-wise KL divergence, n x 1.
template <typename Scalar>
Var<Scalar> kl_divergence(Var<Scalar> p, Var<Scalar> q) {
  const auto eps = static_cast<Scalar>(kKlSmoothing);
  return row_sum(p * (log(affine(p, Scalar(1), eps)) - log(affine(q, Scalar(1), eps))));
}

/// Row-wise Jensen-Shannon divergence of three distributions, n x 1.
template <typename Scalar>
Var<Scalar> jsd_loss(Var<Scalar> orig, Var<Scalar> aug1, Var<Scalar> aug2) {
  const Scalar third = Scalar(1) / Scalar(3);
  Var<Scalar> m = affine(orig + aug1 + aug2, third);
  return affine(kl_divergence(orig, m) + kl_divergence(aug1, m) + kl_divergence(aug2, m), third);
}

template <typename Scalar>
Var<Scalar> one_hot_argmax(Var<Scalar> x) {
  using G = Graph<Scalar>;
  Var<Scalar> out = x.graph->emit(
      "one_hot_argmax", {x.id},
      [](G& g, typename G::Node& n) {
        const auto& X = g.node(n.parents[0]).value;
        n.value = Matrix<Scalar>::Zero(X.rows(), X.cols());
        for (Eigen::Index i = 0; i < X.rows(); ++i) {
          Eigen::Index best = 0;
          for (Eigen::Index j = 1; j < X.cols(); ++j)
            if (X(i, j) > X(i, best)) best = j;
          n.value(i, best) = Scalar(1);
        }
      },
      nullptr);
  x.graph->node(out.id).requires_grad = false;
  return out;
}

template <typename Scalar>
Var<Scalar> sharpen(Var<Scalar> p, double temperature) {
  if (!(temperature > 0.0)) throw std::invalid_argument("sharpen: temperature must be positive");
  if (temperature < kHardSharpenThreshold) return one_hot_argmax(p);
  return normalize_rows(pow(p, static_cast<Scalar>(1.0 / temperature)));
}

}  // namespace rte
