// SPDX-License-Identifier: Apache-2.0
#pragma once

/**
 * @file decoding.hpp
 * @brief Greedy decoding with regular, contrastive, and adaptive strategies.
 *
 * Every strategy shares one loop: per step it submits all the prefixes it
 * needs in a single next_logits request, folds the returned logits into one
 * combined vector, takes the argmax (lowest id on ties) and appends the
 * chosen token to every prefix, so all prompts share the same y_<t.
 *
 *   strategy   prefixes/step   combined logits
 *   reg-cls    1               z
 *   reg-opn    1               z^c
 *   acd        2               z + a (z^c - z),   a = H / (H + H^c)
 *   fixed      2               z + a (z^c - z),   a fixed (alpha sweeps)
 *   cad        2               z^c + a (z^c - z)
 *   micd-f     3               z^c + a (z^c - z^adv)
 *   micd-d     3               z^c + a (z^c - z^adv), a from max-prob rule
 */

#include <cmath>
#include <cstddef>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "acd/backend.hpp"
#include "acd/error.hpp"
#include "acd/numerics.hpp"

namespace acd {

enum class Strategy { RegCls, RegOpn, Cad, MicdF, MicdD, Acd, Fixed };

inline std::string_view to_string(Strategy s) {
  switch (s) {
    case Strategy::RegCls: return "reg-cls";
    case Strategy::RegOpn: return "reg-opn";
    case Strategy::Cad: return "cad";
    case Strategy::MicdF: return "micd-f";
    case Strategy::MicdD: return "micd-d";
    case Strategy::Acd: return "acd";
    case Strategy::Fixed: return "fixed";
  }
  return "?";
}

inline Strategy parse_strategy(std::string_view name) {
  for (Strategy s : {Strategy::RegCls, Strategy::RegOpn, Strategy::Cad, Strategy::MicdF, Strategy::MicdD,
                     Strategy::Acd, Strategy::Fixed}) {
    if (to_string(s) == name) return s;
  }
  throw InvalidInput("unknown method: " + std::string(name));
}

/// Strategies whose weight is recomputed at every step.
inline bool has_dynamic_alpha(Strategy s) { return s == Strategy::Acd || s == Strategy::MicdD; }

inline bool needs_context(Strategy s) { return s != Strategy::RegCls; }

inline bool needs_adversarial(Strategy s) { return s == Strategy::MicdF || s == Strategy::MicdD; }

/// Number of prefixes a strategy submits per decoding step.
inline std::size_t prompts_per_step(Strategy s) {
  switch (s) {
    case Strategy::RegCls:
    case Strategy::RegOpn: return 1;
    case Strategy::MicdF:
    case Strategy::MicdD: return 3;
    default: return 2;
  }
}

/// Weights used by the fixed-weight baselines.
inline constexpr double kCadAlpha = 0.5;
inline constexpr double kMicdFixedAlpha = 1.0;

struct PromptSet {
  TokenSequence closed;  // question only
  TokenSequence open;    // context + question
  std::optional<TokenSequence> adversarial;  // fixed irrelevant passage + question (MICD)
};

struct DecodeLimits {
  std::size_t max_tokens = 32;
  bool stop_on_newline = true;
  std::size_t top_k = 5;  // diagnostics kept per step
};

using TokenProb = std::pair<TokenId, double>;

struct AlphaTraceStep {
  std::size_t step = 0;
  std::optional<double> h_closed;
  std::optional<double> h_open;
  std::optional<double> alpha;
  TokenId chosen = 0;
  std::vector<TokenProb> top_closed;
  std::vector<TokenProb> top_open;
  std::vector<TokenProb> top_combined;
};

enum class StopReason { Eos, Newline, MaxTokens };

inline std::string_view to_string(StopReason r) {
  switch (r) {
    case StopReason::Eos: return "eos";
    case StopReason::Newline: return "newline";
    case StopReason::MaxTokens: return "max_tokens";
  }
  return "?";
}

struct DecodeResult {
  std::string text;
  TokenSequence token_ids;  // every generated token, including a terminal eos/newline
  std::vector<AlphaTraceStep> trace;
  Strategy strategy = Strategy::RegCls;
  std::optional<double> fixed_alpha;
  StopReason stop_reason = StopReason::MaxTokens;
};

/// Maps (H closed, H open) to the interpolation weight for one step.
using AlphaRule = std::function<double(double h_closed, double h_open)>;

/**
 * MICD_D weight: the context's top probability if it beats the closed-book
 * top probability, otherwise 1 minus the closed-book top probability.
 */
inline double micd_dynamic_alpha(double max_p_with_ctx, double max_p_without_ctx) {
  const auto in_unit = [](double p) { return p >= 0.0 && p <= 1.0; };
  if (!in_unit(max_p_with_ctx) || !in_unit(max_p_without_ctx)) {
    throw InvalidInput("micd_dynamic_alpha: probabilities must lie in [0, 1]");
  }
  return max_p_with_ctx > max_p_without_ctx ? max_p_with_ctx : 1.0 - max_p_without_ctx;
}

namespace detail {

struct StepOutput {
  LogitVector combined;
  AlphaTraceStep record;
};

template <typename Fold>
DecodeResult greedy_loop(const LogitBackend& backend, std::vector<TokenSequence> prefixes, const DecodeLimits& limits,
                         Strategy strategy, Fold fold) {
  if (limits.max_tokens < 1) throw InvalidInput("max_tokens must be at least 1");
  for (const auto& p : prefixes) {
    if (p.empty()) throw InvalidInput("decode: empty prompt");
  }
  const Vocabulary vocab = backend.model_info();

  DecodeResult result;
  result.strategy = strategy;
  for (std::size_t t = 0; t < limits.max_tokens; ++t) {
    auto logits = backend.next_logits(prefixes);
    if (logits.size() != prefixes.size()) throw BackendError("backend returned the wrong number of logit vectors");
    for (const auto& l : logits) {
      if (l.size() != vocab.size) throw BackendError("backend returned logits of the wrong length");
    }
    StepOutput out = fold(logits);
    const TokenId chosen = numerics::argmax(out.combined.values);
    out.record.step = t;
    out.record.chosen = chosen;
    if (limits.top_k > 0) out.record.top_combined = numerics::top_k(numerics::softmax(out.combined), limits.top_k);
    result.trace.push_back(std::move(out.record));
    result.token_ids.push_back(chosen);
    for (auto& p : prefixes) p.push_back(chosen);

    if (chosen == vocab.eos_id) {
      result.stop_reason = StopReason::Eos;
      break;
    }
    if (limits.stop_on_newline && vocab.newline_id && chosen == *vocab.newline_id) {
      result.stop_reason = StopReason::Newline;
      break;
    }
  }
  TokenSequence answer = result.token_ids;
  if (result.stop_reason != StopReason::MaxTokens) answer.pop_back();
  result.text = backend.detokenize(answer);
  return result;
}

inline std::vector<TokenProb> maybe_top(const ProbDist& d, const DecodeLimits& limits) {
  return limits.top_k > 0 ? numerics::top_k(d, limits.top_k) : std::vector<TokenProb>{};
}

inline const TokenSequence& require_adversarial(const PromptSet& prompts) {
  if (!prompts.adversarial) throw InvalidInput("MICD requires an adversarial prompt (fixed negative context)");
  return *prompts.adversarial;
}

}  // namespace detail

/// Plain greedy decoding of one prompt. `as` labels the trace side (closed or open).
inline DecodeResult decode_regular(const LogitBackend& backend, const TokenSequence& prompt,
                                   const DecodeLimits& limits, Strategy as = Strategy::RegCls) {
  if (as != Strategy::RegCls && as != Strategy::RegOpn) throw InvalidInput("decode_regular: strategy must be reg-cls or reg-opn");
  return detail::greedy_loop(backend, {prompt}, limits, as, [&](std::vector<LogitVector>& l) {
    detail::StepOutput out{std::move(l[0]), {}};
    const auto dist = numerics::softmax(out.combined);
    const double h = numerics::entropy(dist);
    if (as == Strategy::RegCls) {
      out.record.h_closed = h;
      out.record.top_closed = detail::maybe_top(dist, limits);
    } else {
      out.record.h_open = h;
      out.record.top_open = detail::maybe_top(dist, limits);
    }
    return out;
  });
}

/**
 * Interpolating contrastive decode z + a (z^c - z) with a per-step weight
 * produced by `rule` from the two entropies.
 */
inline DecodeResult decode_interpolated(const LogitBackend& backend, const PromptSet& prompts,
                                        const DecodeLimits& limits, const AlphaRule& rule, Strategy tag) {
  return detail::greedy_loop(backend, {prompts.closed, prompts.open}, limits, tag, [&](std::vector<LogitVector>& l) {
    const auto closed = numerics::softmax(l[0]);
    const auto open = numerics::softmax(l[1]);
    const double h_closed = numerics::entropy(closed);
    const double h_open = numerics::entropy(open);
    const double alpha = rule(h_closed, h_open);
    detail::StepOutput out{numerics::combine_contrastive(l[0], l[1], alpha), {}};
    out.record.h_closed = h_closed;
    out.record.h_open = h_open;
    out.record.alpha = alpha;
    out.record.top_closed = detail::maybe_top(closed, limits);
    out.record.top_open = detail::maybe_top(open, limits);
    return out;
  });
}

/// Adaptive contrastive decoding.
inline DecodeResult decode_acd(const LogitBackend& backend, const PromptSet& prompts, const DecodeLimits& limits) {
  return decode_interpolated(backend, prompts, limits, numerics::adaptive_alpha, Strategy::Acd);
}

enum class ContrastForm {
  Interpolate,         // z + a (z^c - z)
  AmplifyContext,      // z^c + a (z^c - z)       (CAD)
  AmplifyAdversarial,  // z^c + a (z^c - z^adv)   (MICD_F)
};

inline DecodeResult decode_fixed_contrast(const LogitBackend& backend, const PromptSet& prompts, double alpha,
                                          ContrastForm form, const DecodeLimits& limits) {
  if (!(alpha >= 0.0) || !std::isfinite(alpha)) throw InvalidInput("fixed alpha must be finite and non-negative");
  DecodeResult r;
  switch (form) {
    case ContrastForm::Interpolate:
      r = decode_interpolated(backend, prompts, limits, [alpha](double, double) { return alpha; }, Strategy::Fixed);
      break;
    case ContrastForm::AmplifyContext:
      r = detail::greedy_loop(backend, {prompts.closed, prompts.open}, limits, Strategy::Cad,
                              [&](std::vector<LogitVector>& l) {
                                const auto closed = numerics::softmax(l[0]);
                                const auto open = numerics::softmax(l[1]);
                                detail::StepOutput out{numerics::amplify_contrast(l[1], l[0], alpha), {}};
                                out.record.h_closed = numerics::entropy(closed);
                                out.record.h_open = numerics::entropy(open);
                                out.record.alpha = alpha;
                                out.record.top_closed = detail::maybe_top(closed, limits);
                                out.record.top_open = detail::maybe_top(open, limits);
                                return out;
                              });
      break;
    case ContrastForm::AmplifyAdversarial: {
      const auto& adversarial = detail::require_adversarial(prompts);
      r = detail::greedy_loop(backend, {prompts.closed, prompts.open, adversarial}, limits, Strategy::MicdF,
                              [&](std::vector<LogitVector>& l) {
                                const auto closed = numerics::softmax(l[0]);
                                const auto open = numerics::softmax(l[1]);
                                detail::StepOutput out{numerics::amplify_contrast(l[1], l[2], alpha), {}};
                                out.record.h_closed = numerics::entropy(closed);
                                out.record.h_open = numerics::entropy(open);
                                out.record.alpha = alpha;
                                out.record.top_closed = detail::maybe_top(closed, limits);
                                out.record.top_open = detail::maybe_top(open, limits);
                                return out;
                              });
      break;
    }
  }
  r.fixed_alpha = alpha;
  return r;
}

/// MICD with the dynamic max-probability weight, recomputed every step.
inline DecodeResult decode_micd_dynamic(const LogitBackend& backend, const PromptSet& prompts,
                                        const DecodeLimits& limits) {
  const auto& adversarial = detail::require_adversarial(prompts);
  return detail::greedy_loop(backend, {prompts.closed, prompts.open, adversarial}, limits, Strategy::MicdD,
                             [&](std::vector<LogitVector>& l) {
                               const auto closed = numerics::softmax(l[0]);
                               const auto open = numerics::softmax(l[1]);
                               const double alpha =
                                   micd_dynamic_alpha(numerics::max_prob(open), numerics::max_prob(closed));
                               detail::StepOutput out{numerics::amplify_contrast(l[1], l[2], alpha), {}};
                               out.record.h_closed = numerics::entropy(closed);
                               out.record.h_open = numerics::entropy(open);
                               out.record.alpha = alpha;
                               out.record.top_closed = detail::maybe_top(closed, limits);
                               out.record.top_open = detail::maybe_top(open, limits);
                               return out;
                             });
}

/**
 * Strategy dispatch. `alpha` is required for fixed, and overrides the default
 * weight of cad (0.5) and micd-f (1.0); it is rejected for the dynamic
 * strategies and the regular ones.
 */
inline DecodeResult decode(const LogitBackend& backend, const PromptSet& prompts, Strategy strategy,
                           std::optional<double> alpha, const DecodeLimits& limits) {
  const bool takes_alpha = strategy == Strategy::Fixed || strategy == Strategy::Cad || strategy == Strategy::MicdF;
  if (alpha && !takes_alpha) throw InvalidInput(std::string(to_string(strategy)) + " does not take a fixed alpha");
  switch (strategy) {
    case Strategy::RegCls: return decode_regular(backend, prompts.closed, limits, Strategy::RegCls);
    case Strategy::RegOpn: return decode_regular(backend, prompts.open, limits, Strategy::RegOpn);
    case Strategy::Acd: return decode_acd(backend, prompts, limits);
    case Strategy::MicdD: return decode_micd_dynamic(backend, prompts, limits);
    case Strategy::Cad:
      return decode_fixed_contrast(backend, prompts, alpha.value_or(kCadAlpha), ContrastForm::AmplifyContext, limits);
    case Strategy::MicdF:
      return decode_fixed_contrast(backend, prompts, alpha.value_or(kMicdFixedAlpha), ContrastForm::AmplifyAdversarial,
                                   limits);
    case Strategy::Fixed:
      if (!alpha) throw InvalidInput("fixed strategy requires alpha");
      return decode_fixed_contrast(backend, prompts, *alpha, ContrastForm::Interpolate, limits);
  }
  throw InvalidInput("unhandled strategy");
}

}  // namespace acd
