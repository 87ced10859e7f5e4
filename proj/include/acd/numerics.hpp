// SPDX-License-Identifier: Apache-2.0
#pragma once

/**
 * @file numerics.hpp
 * @brief Distribution kernel shared by every decoding strategy.
 *
 * All math is carried out in double precision. Backends that deliver 32-bit
 * logits are widened on ingestion (see LogitVector::from_floats).
 *
 * Reductions over the vocabulary are summed in ascending order of magnitude,
 * so softmax normalizers and entropies do not depend on the order of the
 * vocabulary: two distributions that are permutations of each other produce
 * bit-identical entropies.
 */

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "acd/error.hpp"

namespace acd {

using TokenId = std::int32_t;

/// Raw next-token scores over a vocabulary.
struct LogitVector {
  std::vector<double> values;

  LogitVector() = default;
  explicit LogitVector(std::vector<double> v) : values(std::move(v)) {}

  static LogitVector from_floats(std::span<const float> v) {
    return LogitVector(std::vector<double>(v.begin(), v.end()));
  }

  std::size_t size() const noexcept { return values.size(); }
  double operator[](std::size_t i) const { return values[i]; }
  bool operator==(const LogitVector&) const = default;
};

/// Normalized distribution over a vocabulary.
struct ProbDist {
  std::vector<double> probs;

  std::size_t size() const noexcept { return probs.size(); }
  double operator[](std::size_t i) const { return probs[i]; }
};

namespace numerics {

inline constexpr double kNormalizationTolerance = 1e-9;

namespace detail {

/// Sum of non-negative terms, smallest first.
inline double ascending_sum(std::vector<double> terms) {
  std::sort(terms.begin(), terms.end());
  double s = 0.0;
  for (double t : terms) s += t;
  return s;
}

inline void require_finite(std::span<const double> v, const char* what) {
  if (v.empty()) throw InvalidInput(std::string(what) + ": empty vector");
  for (double x : v) {
    if (!std::isfinite(x)) throw InvalidInput(std::string(what) + ": non-finite entry");
  }
}

}  // namespace detail

// ============================================================================
// Distributions
// ============================================================================

/**
 * Numerically stable softmax: logits are shifted by their maximum before
 * exponentiation, so arbitrarily large scores never overflow.
 */
inline ProbDist softmax(const LogitVector& logits) {
  detail::require_finite(logits.values, "softmax");
  const double shift = *std::max_element(logits.values.begin(), logits.values.end());
  std::vector<double> e(logits.size());
  for (std::size_t i = 0; i < e.size(); ++i) e[i] = std::exp(logits.values[i] - shift);
  const double z = detail::ascending_sum(e);
  for (double& x : e) x /= z;
  return ProbDist{std::move(e)};
}

/// Shannon entropy in nats. Zero-probability entries contribute exactly 0.
inline double entropy(const ProbDist& dist) {
  if (dist.probs.empty()) throw InvalidInput("entropy: empty distribution");
  for (double p : dist.probs) {
    if (!(p >= 0.0) || !std::isfinite(p)) throw InvalidInput("entropy: negative or non-finite probability");
  }
  const double total = detail::ascending_sum(dist.probs);
  if (std::abs(total - 1.0) > kNormalizationTolerance) {
    throw InvalidInput("entropy: distribution is not normalized (sum = " + std::to_string(total) + ")");
  }
  std::vector<double> terms(dist.size());
  for (std::size_t i = 0; i < terms.size(); ++i) {
    const double p = dist.probs[i];
    terms[i] = p > 0.0 ? -p * std::log(p) : 0.0;
  }
  const double h = detail::ascending_sum(std::move(terms));
  return std::clamp(h, 0.0, std::log(static_cast<double>(dist.size())));
}

// ============================================================================
// Contrastive weighting
// ============================================================================

/**
 * Adaptive contextual weight: the share of total uncertainty contributed by
 * the closed-book entropy, H / (H + H^c).
 *
 * A low-entropy context (it resolved the question) pushes the weight toward 1;
 * a context that raises uncertainty pushes it toward 0. Equal entropies give
 * 0.5, and the degenerate 0/0 case is defined as 0.5 as well.
 */
inline double adaptive_alpha(double h_closed, double h_open) {
  if (!(h_closed >= 0.0) || !(h_open >= 0.0) || !std::isfinite(h_closed) || !std::isfinite(h_open)) {
    throw InvalidInput("adaptive_alpha: entropies must be finite and non-negative");
  }
  const double total = h_closed + h_open;
  if (total == 0.0) return 0.5;
  return h_closed / total;
}

/**
 * Interpolating contrast z + alpha (z_ctx - z), returned before softmax.
 *
 * Evaluated as (1 - alpha) z + alpha z_ctx so that alpha = 0 and alpha = 1
 * reproduce the inputs bit-for-bit and alpha = 0.5 is symmetric in its
 * arguments.
 */
inline LogitVector combine_contrastive(const LogitVector& z, const LogitVector& z_ctx, double alpha) {
  if (z.size() != z_ctx.size()) throw InvalidInput("combine_contrastive: vocabulary size mismatch");
  if (!std::isfinite(alpha)) throw InvalidInput("combine_contrastive: alpha must be finite");
  std::vector<double> out(z.size());
  const double keep = 1.0 - alpha;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = keep * z.values[i] + alpha * z_ctx.values[i];
  return LogitVector(std::move(out));
}

/// Amplifying contrast z_ctx + alpha (z_ctx - z_ref), as used by CAD and MICD.
inline LogitVector amplify_contrast(const LogitVector& z_ctx, const LogitVector& z_ref, double alpha) {
  if (z_ctx.size() != z_ref.size()) throw InvalidInput("amplify_contrast: vocabulary size mismatch");
  if (!std::isfinite(alpha)) throw InvalidInput("amplify_contrast: alpha must be finite");
  std::vector<double> out(z_ctx.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = z_ctx.values[i] + alpha * (z_ctx.values[i] - z_ref.values[i]);
  }
  return LogitVector(std::move(out));
}

// ============================================================================
// Selection helpers
// ============================================================================

/// Greedy choice; the lowest index wins ties.
inline TokenId argmax(std::span<const double> v) {
  if (v.empty()) throw InvalidInput("argmax: empty vector");
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i) {
    if (v[i] > v[best]) best = i;
  }
  return static_cast<TokenId>(best);
}

inline double max_prob(const ProbDist& d) {
  if (d.probs.empty()) throw InvalidInput("max_prob: empty distribution");
  return *std::max_element(d.probs.begin(), d.probs.end());
}

/// Highest-probability entries, ordered by probability then by id.
inline std::vector<std::pair<TokenId, double>> top_k(const ProbDist& d, std::size_t k) {
  std::vector<std::pair<TokenId, double>> all;
  all.reserve(d.size());
  for (std::size_t i = 0; i < d.size(); ++i) all.emplace_back(static_cast<TokenId>(i), d.probs[i]);
  k = std::min(k, all.size());
  std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(k), all.end(),
                    [](const auto& a, const auto& b) {
                      return a.second != b.second ? a.second > b.second : a.first < b.first;
                    });
  all.resize(k);
  return all;
}

}  // namespace numerics
}  // namespace acd
