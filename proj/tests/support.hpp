// SPDX-License-Identifier: Apache-2.0
#pragma once

// Shared fixtures for the test suites.

#include <algorithm>
#include <functional>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "acd/backend.hpp"
#include "acd/numerics.hpp"
#include "acd/toy_backend.hpp"

namespace acd::fixtures {

/// Small hand-written world: two questions, a 64-token vocabulary.
inline ToyWorldConfig small_world(double kappa_known = 0.95, double kappa_unknown = 0.05, double rho_gold = 0.95,
                                  double rho_noisy = 0.05) {
  ToyWorldConfig c;
  c.tokens = {"</s>", "\n", "Answer", "the", "following", "questions:", "Question:", "Answer:", "Context:",
              "who", "is", "of", "?", ".", "mayor", "author", "Lorne", "Keld", "Moira", "Kelly", "Whoopi",
              "Goldberg", "paris", "voiced", "by", "in"};
  while (c.tokens.size() < 64) c.tokens.push_back("filler" + std::to_string(c.tokens.size()));
  c.eos_id = 0;
  c.newline_id = 1;
  c.questions = {{"q1", "who is the mayor of Lorne ?", "Moira Kelly"},
                 {"q2", "who is the author of Keld ?", "Whoopi Goldberg"}};
  c.knowledge = {{"q1", "Moira Kelly", kappa_known}, {"q2", "Moira Goldberg", kappa_unknown}};
  c.contexts = {{"c-noisy", "Whoopi Goldberg is the author of Lorne .", std::string("Whoopi Goldberg"), rho_noisy},
                {"c-gold", "Whoopi Goldberg is the author of Keld .", std::string("Whoopi Goldberg"), rho_gold},
                {"c-blank", "paris is the author of Keld .", std::nullopt, 0.0}};
  return c;
}

inline std::string closed_prompt(const std::string& question) {
  return "Answer the following questions:\n\nQuestion: " + question + "\nAnswer:";
}

inline std::string open_prompt(const std::string& context, const std::string& question) {
  return "Answer the following questions:\n\nContext: " + context + "\nQuestion: " + question + "\nAnswer:";
}

/// Backend returning logits from a function of the prefix (for engine tests).
class ScriptedBackend final : public LogitBackend {
 public:
  using Fn = std::function<LogitVector(const TokenSequence&)>;
  ScriptedBackend(std::size_t vocab, Fn fn, std::optional<TokenId> newline = std::nullopt) : fn_(std::move(fn)) {
    info_.size = vocab;
    info_.eos_id = 0;
    info_.newline_id = newline;
    info_.model_name = "scripted";
  }
  Vocabulary model_info() const override { return info_; }
  TokenSequence tokenize(std::string_view) const override { return {1}; }
  std::string detokenize(const TokenSequence& ids) const override {
    std::string s;
    for (auto id : ids) s += (s.empty() ? "" : " ") + std::to_string(id);
    return s;
  }
  std::vector<LogitVector> next_logits(const std::vector<TokenSequence>& prefixes) const override {
    std::vector<LogitVector> out;
    for (const auto& p : prefixes) out.push_back(fn_(p));
    return out;
  }

 private:
  Vocabulary info_;
  Fn fn_;
};

/// Adds a constant to every logit of the wrapped backend.
class ShiftedBackend final : public LogitBackend {
 public:
  ShiftedBackend(const LogitBackend& inner, double shift) : inner_(inner), shift_(shift) {}
  Vocabulary model_info() const override { return inner_.model_info(); }
  TokenSequence tokenize(std::string_view t) const override { return inner_.tokenize(t); }
  std::string detokenize(const TokenSequence& ids) const override { return inner_.detokenize(ids); }
  std::vector<LogitVector> next_logits(const std::vector<TokenSequence>& prefixes) const override {
    auto out = inner_.next_logits(prefixes);
    for (auto& l : out) {
      for (auto& v : l.values) v += shift_;
    }
    return out;
  }

 private:
  const LogitBackend& inner_;
  double shift_;
};

/// Hash of a prefix, used to derive reproducible pseudo-random logits.
inline std::uint64_t prefix_seed(const TokenSequence& p, std::uint64_t salt) {
  std::uint64_t h = 1469598103934665603ull ^ salt;
  for (auto id : p) h = (h ^ static_cast<std::uint64_t>(id + 1)) * 1099511628211ull;
  return h;
}

inline std::vector<double> random_logits(std::mt19937_64& rng, std::size_t n, double scale = 5.0) {
  std::normal_distribution<double> d(0.0, scale);
  std::vector<double> v(n);
  for (auto& x : v) x = d(rng);
  return v;
}

}  // namespace acd::fixtures
