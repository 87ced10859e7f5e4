// SPDX-License-Identifier: Apache-2.0
#pragma once

/**
 * @file toy_backend.hpp
 * @brief Deterministic in-process language model used as a test oracle.
 *
 * The toy model reads the last "Question: ... \n Answer:" block of a prompt,
 * and optionally the "Context: ..." line right before it. It then puts mass
 * p on one "intended" token and spreads 1 - p uniformly over the rest:
 *
 *  - no context: intended = next token of the believed answer, p = kappa
 *    (uniform if the question has no knowledge entry);
 *  - context that asserts an answer: intended = next token of that answer,
 *    p = rho (the context's relevance);
 *  - context that asserts nothing, or that the world does not know: uniform.
 *
 * "Next token" is the first answer token not yet generated after "Answer:".
 * Once the answer is exhausted, or generation diverged from it, the intended
 * token is eos. Every entry receives an extra epsilon before renormalizing.
 */

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "acd/backend.hpp"
#include "acd/error.hpp"

namespace acd {

struct ToyQuestion {
  std::string id;
  std::string text;
  std::string answer;  // gold answer
};

struct ToyBelief {
  std::string question_id;
  std::string answer;       // believed answer, right or wrong
  double confidence = 0.0;  // kappa in (0, 1)
};

struct ToyContext {
  std::string id;
  std::string text;
  std::optional<std::string> answer;  // asserted answer, if any
  double relevance = 0.0;             // rho in [0, 1]
};

struct ToyWorldConfig {
  std::vector<std::string> tokens;
  TokenId eos_id = 0;
  std::optional<TokenId> newline_id;
  double epsilon = 1e-6;
  std::vector<ToyQuestion> questions;
  std::vector<ToyBelief> knowledge;
  std::vector<ToyContext> contexts;
};

// Reserved prompt-structure tokens the toy model looks for.
inline constexpr std::string_view kToyEos = "</s>";
inline constexpr std::string_view kToyNewline = "\n";
inline constexpr std::string_view kQuestionMarker = "Question:";
inline constexpr std::string_view kAnswerMarker = "Answer:";
inline constexpr std::string_view kContextMarker = "Context:";

// ----------------------------------------------------------------------------
// JSON
// ----------------------------------------------------------------------------

inline void to_json(nlohmann::json& j, const ToyWorldConfig& c) {
  using nlohmann::json;
  json vocab = {{"tokens", c.tokens}, {"eos_id", c.eos_id}};
  vocab["newline_id"] = c.newline_id ? json(*c.newline_id) : json(nullptr);
  json questions = json::array();
  for (const auto& q : c.questions) questions.push_back({{"id", q.id}, {"text", q.text}, {"answer", q.answer}});
  json knowledge = json::array();
  for (const auto& k : c.knowledge) {
    knowledge.push_back({{"question_id", k.question_id}, {"answer", k.answer}, {"confidence", k.confidence}});
  }
  json contexts = json::array();
  for (const auto& x : c.contexts) {
    contexts.push_back({{"id", x.id},
                        {"text", x.text},
                        {"answer", x.answer ? json(*x.answer) : json(nullptr)},
                        {"relevance", x.relevance}});
  }
  j = json{{"vocabulary", vocab},
           {"epsilon", c.epsilon},
           {"questions", questions},
           {"knowledge", knowledge},
           {"contexts", contexts}};
}

inline void from_json(const nlohmann::json& j, ToyWorldConfig& c) {
  try {
    const auto& vocab = j.at("vocabulary");
    c.tokens = vocab.at("tokens").get<std::vector<std::string>>();
    c.eos_id = vocab.at("eos_id").get<TokenId>();
    c.newline_id.reset();
    if (vocab.contains("newline_id") && !vocab["newline_id"].is_null()) c.newline_id = vocab["newline_id"].get<TokenId>();
    c.epsilon = j.value("epsilon", 1e-6);
    c.questions.clear();
    for (const auto& q : j.value("questions", nlohmann::json::array())) {
      c.questions.push_back({q.at("id").get<std::string>(), q.at("text").get<std::string>(),
                             q.at("answer").get<std::string>()});
    }
    c.knowledge.clear();
    for (const auto& k : j.value("knowledge", nlohmann::json::array())) {
      c.knowledge.push_back({k.at("question_id").get<std::string>(), k.at("answer").get<std::string>(),
                             k.at("confidence").get<double>()});
    }
    c.contexts.clear();
    for (const auto& x : j.value("contexts", nlohmann::json::array())) {
      ToyContext ctx;
      ctx.id = x.at("id").get<std::string>();
      ctx.text = x.at("text").get<std::string>();
      if (x.contains("answer") && !x["answer"].is_null()) ctx.answer = x["answer"].get<std::string>();
      ctx.relevance = x.at("relevance").get<double>();
      c.contexts.push_back(std::move(ctx));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("toy_config", std::string("malformed toy world config: ") + e.what());
  }
}

inline ToyWorldConfig load_toy_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InvalidInput("cannot open toy config: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(0, std::string("toy config is not valid JSON: ") + e.what());
  }
  return j.get<ToyWorldConfig>();
}

// ----------------------------------------------------------------------------
// Backend
// ----------------------------------------------------------------------------

class ToyBackend final : public LogitBackend {
 public:
  explicit ToyBackend(ToyWorldConfig config) : config_(std::move(config)) { compile(); }

  const ToyWorldConfig& config() const noexcept { return config_; }

  Vocabulary model_info() const override { return vocab_; }

  /// Whitespace-separated words; each '\n' is its own token.
  TokenSequence tokenize(std::string_view text) const override {
    TokenSequence out;
    std::size_t i = 0;
    while (i < text.size()) {
      const char ch = text[i];
      if (ch == '\n') {
        if (!vocab_.newline_id) throw TokenizationError("toy vocabulary has no newline token");
        out.push_back(*vocab_.newline_id);
        ++i;
      } else if (ch == ' ' || ch == '\t' || ch == '\r') {
        ++i;
      } else {
        std::size_t j = i;
        while (j < text.size() && text[j] != ' ' && text[j] != '\t' && text[j] != '\r' && text[j] != '\n') ++j;
        const std::string word(text.substr(i, j - i));
        auto it = word_ids_.find(word);
        if (it == word_ids_.end()) throw TokenizationError("out-of-vocabulary word: '" + word + "'");
        out.push_back(it->second);
        i = j;
      }
    }
    return out;
  }

  std::string detokenize(const TokenSequence& ids) const override {
    std::string out;
    bool after_word = false;
    for (TokenId id : ids) {
      check_id(id);
      if (vocab_.newline_id && id == *vocab_.newline_id) {
        out += '\n';
        after_word = false;
        continue;
      }
      if (after_word) out += ' ';
      out += config_.tokens[static_cast<std::size_t>(id)];
      after_word = true;
    }
    return out;
  }

  std::vector<LogitVector> next_logits(const std::vector<TokenSequence>& prefixes) const override {
    std::vector<LogitVector> out;
    out.reserve(prefixes.size());
    for (const auto& p : prefixes) out.push_back(logits_for(p));
    return out;
  }

 private:
  struct Target {
    TokenSequence answer;
    double confidence;
  };

  void compile() {
    const auto& c = config_;
    if (c.tokens.size() < 2) throw ValidationError("tokens", "toy vocabulary needs at least two tokens");
    vocab_.size = c.tokens.size();
    vocab_.eos_id = c.eos_id;
    vocab_.newline_id = c.newline_id;
    vocab_.model_name = "toy-world";
    vocab_.token_texts = c.tokens;
    vocab_.validate();
    if (!(c.epsilon > 0.0) || !std::isfinite(c.epsilon)) throw ValidationError("epsilon", "epsilon must be positive");

    for (std::size_t i = 0; i < c.tokens.size(); ++i) {
      const auto& t = c.tokens[i];
      const bool is_newline = c.newline_id && static_cast<std::size_t>(*c.newline_id) == i;
      if (t.empty()) throw ValidationError("tokens", "empty token text at id " + std::to_string(i));
      if (!is_newline && t.find_first_of(" \t\r\n") != std::string::npos) {
        throw ValidationError("tokens", "token contains whitespace: '" + t + "'");
      }
      if (is_newline) continue;
      if (!word_ids_.emplace(t, static_cast<TokenId>(i)).second) {
        throw ValidationError("tokens", "duplicate token: '" + t + "'");
      }
    }
    question_marker_ = lookup(kQuestionMarker);
    answer_marker_ = lookup(kAnswerMarker);
    context_marker_ = lookup(kContextMarker);

    std::unordered_map<std::string, TokenSequence> question_text;
    for (const auto& q : c.questions) {
      auto seq = tokenize_field(q.text, "questions.text");
      if (seq.empty()) throw ValidationError("questions.text", "empty question " + q.id);
      tokenize_field(q.answer, "questions.answer");
      if (!question_text.emplace(q.id, std::move(seq)).second) {
        throw ValidationError("questions.id", "duplicate question id " + q.id);
      }
    }
    for (const auto& k : c.knowledge) {
      auto q = question_text.find(k.question_id);
      if (q == question_text.end()) throw ValidationError("knowledge.question_id", "unknown question " + k.question_id);
      if (!(k.confidence > 0.0 && k.confidence < 1.0)) {
        throw ValidationError("knowledge.confidence", "confidence must lie in (0, 1)");
      }
      beliefs_[q->second] = Target{tokenize_field(k.answer, "knowledge.answer"), k.confidence};
    }
    for (const auto& x : c.contexts) {
      if (!(x.relevance >= 0.0 && x.relevance <= 1.0)) {
        throw ValidationError("contexts.relevance", "relevance must lie in [0, 1]");
      }
      auto seq = tokenize_field(x.text, "contexts.text");
      std::optional<Target> t;
      if (x.answer) t = Target{tokenize_field(*x.answer, "contexts.answer"), x.relevance};
      contexts_[std::move(seq)] = std::move(t);
    }
  }

  TokenSequence tokenize_field(const std::string& text, const char* field) const {
    try {
      return tokenize(text);
    } catch (const TokenizationError& e) {
      throw ValidationError(field, e.what());
    }
  }

  std::optional<TokenId> lookup(std::string_view word) const {
    auto it = word_ids_.find(std::string(word));
    if (it == word_ids_.end()) return std::nullopt;
    return it->second;
  }

  void check_id(TokenId id) const {
    if (!vocab_.contains(id)) throw InvalidInput("token id out of range: " + std::to_string(id));
  }

  bool is_newline(TokenId id) const { return vocab_.newline_id && id == *vocab_.newline_id; }

  /// Intended answer and its confidence, or nullopt for a uniform step.
  std::optional<Target> intent_for(const TokenSequence& p, TokenSequence& generated) const {
    if (!question_marker_ || !answer_marker_ || !vocab_.newline_id) return std::nullopt;
    std::size_t q = p.size();
    for (std::size_t i = p.size(); i-- > 0;) {
      if (p[i] == *question_marker_) {
        q = i;
        break;
      }
    }
    if (q == p.size()) return std::nullopt;
    std::size_t nl = q + 1;
    while (nl < p.size() && !is_newline(p[nl])) ++nl;
    if (nl + 1 >= p.size() || p[nl + 1] != *answer_marker_) return std::nullopt;
    const TokenSequence question(p.begin() + static_cast<std::ptrdiff_t>(q + 1), p.begin() + static_cast<std::ptrdiff_t>(nl));
    generated.assign(p.begin() + static_cast<std::ptrdiff_t>(nl + 2), p.end());

    // Context line immediately above the question line.
    if (context_marker_ && q >= 1 && is_newline(p[q - 1])) {
      std::size_t start = q - 1;
      while (start > 0 && !is_newline(p[start - 1])) --start;
      if (start < q - 1 && p[start] == *context_marker_) {
        const TokenSequence ctx(p.begin() + static_cast<std::ptrdiff_t>(start + 1), p.begin() + static_cast<std::ptrdiff_t>(q - 1));
        auto it = contexts_.find(ctx);
        if (it == contexts_.end()) return std::nullopt;
        return it->second;
      }
    }
    auto it = beliefs_.find(question);
    if (it == beliefs_.end()) return std::nullopt;
    return it->second;
  }

  LogitVector logits_for(const TokenSequence& prefix) const {
    if (prefix.empty()) throw InvalidInput("next_logits: empty prefix");
    for (TokenId id : prefix) check_id(id);

    const std::size_t n = vocab_.size;
    TokenSequence generated;
    const auto target = intent_for(prefix, generated);
    std::vector<double> mass(n, 1.0 / static_cast<double>(n));
    if (target) {
      TokenId intended = vocab_.eos_id;
      const auto& ans = target->answer;
      if (generated.size() < ans.size() && std::equal(generated.begin(), generated.end(), ans.begin())) {
        intended = ans[generated.size()];
      }
      const double p = target->confidence;
      const double rest = (1.0 - p) / static_cast<double>(n - 1);
      for (std::size_t i = 0; i < n; ++i) mass[i] = static_cast<TokenId>(i) == intended ? p : rest;
    }
    double total = 0.0;
    for (double& m : mass) {
      m += config_.epsilon;
      total += m;
    }
    std::vector<double> logits(n);
    for (std::size_t i = 0; i < n; ++i) logits[i] = std::log(mass[i] / total);
    return LogitVector(std::move(logits));
  }

  ToyWorldConfig config_;
  Vocabulary vocab_;
  std::unordered_map<std::string, TokenId> word_ids_;
  std::optional<TokenId> question_marker_, answer_marker_, context_marker_;
  std::map<TokenSequence, Target> beliefs_;
  std::map<TokenSequence, std::optional<Target>> contexts_;
};

}  // namespace acd
