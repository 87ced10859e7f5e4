// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <atomic>
#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "acd/error.hpp"
#include "acd/numerics.hpp"

namespace acd {

using TokenSequence = std::vector<TokenId>;

struct Vocabulary {
  std::size_t size = 0;
  TokenId eos_id = 0;
  std::optional<TokenId> newline_id;
  std::string model_name;
  /// Surface text per id. May be empty for remote backends, which do not
  /// publish their token table.
  std::vector<std::string> token_texts;

  bool contains(TokenId id) const noexcept { return id >= 0 && static_cast<std::size_t>(id) < size; }

  void validate() const {
    if (size == 0) throw ValidationError("vocab_size", "vocabulary must be non-empty");
    if (!contains(eos_id)) throw ValidationError("eos_id", "eos_id out of range");
    if (newline_id && !contains(*newline_id)) throw ValidationError("newline_id", "newline_id out of range");
    if (!token_texts.empty() && token_texts.size() != size) {
      throw ValidationError("token_texts", "token table length differs from vocab_size");
    }
  }

  bool operator==(const Vocabulary&) const = default;
};

/**
 * Next-token logit provider.
 *
 * Implementations must be safe to share across threads: either reentrant
 * (the toy backend) or internally serialized (the remote client).
 * next_logits is stateless with respect to earlier calls.
 */
class LogitBackend {
 public:
  virtual ~LogitBackend() = default;

  virtual Vocabulary model_info() const = 0;
  virtual TokenSequence tokenize(std::string_view text) const = 0;
  virtual std::string detokenize(const TokenSequence& ids) const = 0;
  /// Last-position logits for each prefix, in request order.
  virtual std::vector<LogitVector> next_logits(const std::vector<TokenSequence>& prefixes) const = 0;
};

/// Pass-through wrapper that counts requests and submitted prefixes.
class CountingBackend final : public LogitBackend {
 public:
  explicit CountingBackend(const LogitBackend& inner) : inner_(inner) {}

  Vocabulary model_info() const override { return inner_.model_info(); }
  TokenSequence tokenize(std::string_view text) const override { return inner_.tokenize(text); }
  std::string detokenize(const TokenSequence& ids) const override { return inner_.detokenize(ids); }

  std::vector<LogitVector> next_logits(const std::vector<TokenSequence>& prefixes) const override {
    requests_.fetch_add(1, std::memory_order_relaxed);
    prefixes_.fetch_add(prefixes.size(), std::memory_order_relaxed);
    return inner_.next_logits(prefixes);
  }

  std::size_t requests() const noexcept { return requests_.load(); }
  std::size_t prefixes() const noexcept { return prefixes_.load(); }
  void reset() noexcept {
    requests_ = 0;
    prefixes_ = 0;
  }

 private:
  const LogitBackend& inner_;
  mutable std::atomic<std::size_t> requests_{0};
  mutable std::atomic<std::size_t> prefixes_{0};
};

}  // namespace acd
