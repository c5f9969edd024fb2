#pragma once

/**
 * Entropy decomposition and correlation.
 *
 * Mutual information of a template is estimated from the per-instance label
 * distributions as
 *
 *   I = H(mean of the distributions) - mean(H of each distribution)
 *
 * i.e. marginal entropy minus conditional entropy, in nats. Jensen's
 * inequality guarantees the difference is non-negative; tiny negative
 * rounding residue (within 1e-12) is reported as 0 and anything more
 * negative is an internal error.
 */

#include <cmath>
#include <limits>
#include <span>
#include <stdexcept>
#include <vector>

#include "core.hpp"

namespace miprompt {

/// Rounding slack allowed below zero before MI is considered broken.
inline constexpr double kNegativeMiTolerance = 1e-12;

namespace detail {

/// Pairwise (cascade) summation; error grows O(log n) instead of O(n).
inline double pairwise_sum(std::span<const double> xs) {
  if (xs.size() <= 32) {
    double s = 0.0;
    for (double x : xs) s += x;
    return s;
  }
  const std::size_t half = xs.size() / 2;
  return pairwise_sum(xs.first(half)) + pairwise_sum(xs.subspan(half));
}

/// -sum p ln p with the 0 ln 0 := 0 convention, as an explicit branch so
/// one-hot distributions come out exactly 0.
inline double entropy_of(std::span<const double> probs) {
  double h = 0.0;
  for (double p : probs) {
    if (p > 0.0) h -= p * std::log(p);
  }
  return h < 0.0 ? 0.0 : h;
}

inline void require_shared_space(std::span<const LabelDistribution> dists) {
  if (dists.empty()) {
    throw ConfigError("entropy: distribution list is empty");
  }
  const auto& first = dists.front().space_ptr();
  for (const auto& d : dists) {
    if (!same_space(first, d.space_ptr())) throw MismatchedSpacesError();
  }
}

}  // namespace detail

/// Shannon entropy of one distribution, in nats.
inline double entropy(const LabelDistribution& dist) {
  return detail::entropy_of(dist.probs());
}

/// Elementwise mean of distributions over one shared space. The exact mean
/// of normalized distributions already sums to 1; it is renormalized anyway
/// to keep the invariant bit-tight.
inline LabelDistribution mean_distribution(
    std::span<const LabelDistribution> dists) {
  detail::require_shared_space(dists);
  const std::size_t n = dists.size();
  const std::size_t width = dists.front().size();
  std::vector<double> mean(width, 0.0);
  std::vector<double> column(n);
  for (std::size_t j = 0; j < width; ++j) {
    for (std::size_t i = 0; i < n; ++i) column[i] = dists[i].prob(j);
    mean[j] = detail::pairwise_sum(column) / static_cast<double>(n);
  }
  return LabelDistribution::normalized(dists.front().space_ptr(),
                                       std::move(mean));
}

/// H(Y): entropy of the mean of the conditional distributions.
inline double marginal_entropy(std::span<const LabelDistribution> dists) {
  return entropy(mean_distribution(dists));
}

/// H(Y | f_theta(X)): mean of the entropies of the conditional distributions.
inline double conditional_entropy(std::span<const LabelDistribution> dists) {
  detail::require_shared_space(dists);
  std::vector<double> entropies(dists.size());
  for (std::size_t i = 0; i < dists.size(); ++i) {
    entropies[i] = entropy(dists[i]);
  }
  return detail::pairwise_sum(entropies) / static_cast<double>(dists.size());
}

struct EntropyDecomposition {
  double marginal = 0.0;
  double conditional = 0.0;
  double mi = 0.0;
};

/// Both entropy terms and their difference in one pass over the batch.
inline EntropyDecomposition decompose_entropy(
    std::span<const LabelDistribution> dists) {
  EntropyDecomposition out;
  out.marginal = marginal_entropy(dists);
  out.conditional = conditional_entropy(dists);
  double mi = out.marginal - out.conditional;
  if (mi < -kNegativeMiTolerance) {
    throw std::logic_error("mutual_information: negative value " +
                           std::to_string(mi) +
                           " exceeds rounding tolerance");
  }
  out.mi = mi < 0.0 ? 0.0 : mi;
  return out;
}

inline double mutual_information(std::span<const LabelDistribution> dists) {
  return decompose_entropy(dists).mi;
}

/// Sample Pearson correlation coefficient, clamped to [-1, 1].
inline double pearson_r(std::span<const double> xs,
                        std::span<const double> ys) {
  if (xs.size() != ys.size()) throw LengthMismatchError(xs.size(), ys.size());
  if (xs.size() < 2) {
    throw LengthMismatchError(xs.size(), 2);
  }
  const auto n = static_cast<double>(xs.size());
  const double mean_x = detail::pairwise_sum(xs) / n;
  const double mean_y = detail::pairwise_sum(ys) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double dx = xs[i] - mean_x;
    const double dy = ys[i] - mean_y;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx == 0.0 || syy == 0.0) throw DegenerateVarianceError();
  const double r = sxy / std::sqrt(sxx * syy);
  return std::clamp(r, -1.0, 1.0);
}

}  // namespace miprompt
