// SPDX-License-Identifier: Apache-2.0
#pragma once

/**
 * @file dataio.hpp
 * @brief QA datasets (JSON Lines), prompt templates, and entity swapping.
 *
 * Dataset line schema:
 *
 *   {"id": str, "question": str, "answers": [str, ...],
 *    "context": {"text": str, "gold": bool|null} | null,
 *    "swapped_context": str|null, "meta": {...}}
 *
 * "id" may be omitted, in which case "line-<n>" (1-based) is used.
 */

#include <cstddef>
#include <cstdint>
#include <fstream>
#include <istream>
#include <optional>
#include <ostream>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "acd/error.hpp"
#include "acd/text.hpp"

namespace acd {

struct ContextPassage {
  std::string text;
  std::optional<bool> gold;  // explicit label; derived from the answers when absent

  bool operator==(const ContextPassage&) const = default;
};

struct QAExample {
  std::string id;
  std::string question;
  std::vector<std::string> answers;
  std::optional<ContextPassage> context;
  std::optional<std::string> swapped_context;
  nlohmann::json meta = nlohmann::json::object();

  bool operator==(const QAExample&) const = default;
};

// ============================================================================
// JSON Lines
// ============================================================================

inline nlohmann::json to_json_value(const QAExample& e) {
  using nlohmann::json;
  json j = {{"id", e.id}, {"question", e.question}, {"answers", e.answers}};
  if (e.context) {
    j["context"] = {{"text", e.context->text}, {"gold", e.context->gold ? json(*e.context->gold) : json(nullptr)}};
  } else {
    j["context"] = nullptr;
  }
  j["swapped_context"] = e.swapped_context ? json(*e.swapped_context) : json(nullptr);
  if (!e.meta.empty()) j["meta"] = e.meta;
  return j;
}

/// Validates one decoded line. `line` is 1-based and only used for messages.
inline QAExample example_from_json(const nlohmann::json& j, std::size_t line) {
  const auto fail = [line](const std::string& field, const std::string& what) {
    return ValidationError(field, "line " + std::to_string(line) + ": field '" + field + "' " + what);
  };
  if (!j.is_object()) throw fail("<root>", "must be a JSON object");
  QAExample e;
  if (j.contains("id") && !j["id"].is_null()) {
    if (!j["id"].is_string()) throw fail("id", "must be a string");
    e.id = j["id"].get<std::string>();
  } else {
    e.id = "line-" + std::to_string(line);
  }
  if (!j.contains("question") || !j["question"].is_string()) throw fail("question", "is missing or not a string");
  e.question = j["question"].get<std::string>();
  if (e.question.empty()) throw fail("question", "must be non-empty");
  if (!j.contains("answers") || !j["answers"].is_array()) throw fail("answers", "is missing or not an array");
  for (const auto& a : j["answers"]) {
    if (!a.is_string()) throw fail("answers", "must contain only strings");
    e.answers.push_back(a.get<std::string>());
  }
  if (e.answers.empty()) throw fail("answers", "must be non-empty");
  if (j.contains("context") && !j["context"].is_null()) {
    const auto& c = j["context"];
    if (!c.is_object() || !c.contains("text") || !c["text"].is_string()) throw fail("context", "must be {\"text\": str, \"gold\": bool|null}");
    ContextPassage p{c["text"].get<std::string>(), std::nullopt};
    if (c.contains("gold") && !c["gold"].is_null()) {
      if (!c["gold"].is_boolean()) throw fail("context.gold", "must be a boolean or null");
      p.gold = c["gold"].get<bool>();
    }
    e.context = std::move(p);
  }
  if (j.contains("swapped_context") && !j["swapped_context"].is_null()) {
    if (!j["swapped_context"].is_string()) throw fail("swapped_context", "must be a string or null");
    e.swapped_context = j["swapped_context"].get<std::string>();
  }
  if (j.contains("meta") && !j["meta"].is_null()) {
    if (!j["meta"].is_object()) throw fail("meta", "must be an object");
    e.meta = j["meta"];
  }
  return e;
}

inline std::vector<QAExample> parse_dataset(std::istream& in) {
  std::vector<QAExample> out;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded()) throw ParseError(n, "malformed JSON");
    out.push_back(example_from_json(j, n));
  }
  return out;
}

inline std::vector<QAExample> load_dataset(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InvalidInput("cannot open dataset: " + path);
  return parse_dataset(in);
}

inline void write_dataset(std::ostream& out, std::span<const QAExample> examples) {
  for (const auto& e : examples) out << to_json_value(e).dump() << '\n';
}

inline void save_dataset(const std::string& path, std::span<const QAExample> examples) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InvalidInput("cannot write dataset: " + path);
  write_dataset(out, examples);
}

// ============================================================================
// Prompt templates
// ============================================================================

inline constexpr std::string_view kFewShotsSlot = "<few-shots>";
inline constexpr std::string_view kContextSlot = "<context>";
inline constexpr std::string_view kQuestionSlot = "<question>";

struct FewShot {
  std::string question;
  std::string answer;
};

/// Uses the first candidate answer of each example.
inline std::vector<FewShot> fewshots_from(std::span<const QAExample> examples) {
  std::vector<FewShot> out;
  for (const auto& e : examples) out.push_back({e.question, e.answers.front()});
  return out;
}

/// Closed-book and open-book template texts with literal slots.
struct PromptTemplate {
  std::string closed;
  std::string open;

  void validate() const {
    if (closed.find(kQuestionSlot) == std::string::npos) throw ValidationError("template_closed", "closed template lacks <question>");
    if (closed.find(kContextSlot) != std::string::npos) throw ValidationError("template_closed", "closed template must not contain <context>");
    if (open.find(kQuestionSlot) == std::string::npos) throw ValidationError("template_open", "open template lacks <question>");
    if (open.find(kContextSlot) == std::string::npos) throw ValidationError("template_open", "open template lacks <context>");
  }
};

inline PromptTemplate default_prompt_template() {
  return {
      "Answer the following questions:\n\n<few-shots>\n\nQuestion: <question>\nAnswer:",
      "Answer the following questions:\n\n<few-shots>\n\nContext: <context>\nQuestion: <question>\nAnswer:",
  };
}

namespace detail {

inline std::string read_template_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InvalidInput("cannot open template: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  std::string s = ss.str();
  if (!s.empty() && s.back() == '\n') s.pop_back();  // editors add a final newline
  if (!s.empty() && s.back() == '\r') s.pop_back();
  return s;
}

/// Single pass so that slot-like text inside substituted values stays literal.
inline std::string fill_slots(std::string_view tmpl, std::string_view fewshots, std::string_view context,
                              std::string_view question) {
  std::string out;
  std::size_t i = 0;
  while (i < tmpl.size()) {
    if (tmpl.compare(i, kFewShotsSlot.size(), kFewShotsSlot) == 0) {
      i += kFewShotsSlot.size();
      if (fewshots.empty()) {
        // drop the blank-line separator that follows an empty block
        std::size_t dropped = 0;
        while (i < tmpl.size() && tmpl[i] == '\n' && dropped < 2) ++i, ++dropped;
      } else {
        out += fewshots;
      }
    } else if (tmpl.compare(i, kContextSlot.size(), kContextSlot) == 0) {
      out += context;
      i += kContextSlot.size();
    } else if (tmpl.compare(i, kQuestionSlot.size(), kQuestionSlot) == 0) {
      out += question;
      i += kQuestionSlot.size();
    } else {
      out += tmpl[i++];
    }
  }
  return out;
}

}  // namespace detail

inline PromptTemplate load_prompt_template(const std::string& closed_path, const std::string& open_path) {
  PromptTemplate t{detail::read_template_file(closed_path), detail::read_template_file(open_path)};
  t.validate();
  return t;
}

enum class PromptMode { Closed, Open, Adversarial };

/**
 * Renders one prompt. Exemplars never carry contexts; only the test item in
 * open/adversarial mode does. Adversarial mode renders the open template with
 * `adversarial_text` in place of the example's own context.
 */
inline std::string render_prompt(const PromptTemplate& tmpl, std::span<const FewShot> fewshots,
                                 const QAExample& example, PromptMode mode, std::string_view adversarial_text = {}) {
  std::string block;
  for (const auto& s : fewshots) {
    if (!block.empty()) block += "\n\n";
    block += "Question: " + s.question + "\nAnswer: " + s.answer;
  }
  switch (mode) {
    case PromptMode::Closed:
      return detail::fill_slots(tmpl.closed, block, {}, example.question);
    case PromptMode::Open:
      if (!example.context || example.context->text.empty()) {
        throw InvalidInput("example " + example.id + " has no context for an open-book prompt");
      }
      return detail::fill_slots(tmpl.open, block, example.context->text, example.question);
    case PromptMode::Adversarial:
      if (adversarial_text.empty()) throw InvalidInput("adversarial prompt requires a non-empty passage");
      return detail::fill_slots(tmpl.open, block, adversarial_text, example.question);
  }
  throw InvalidInput("unknown prompt mode");
}

// ============================================================================
// Entity swapping (knowledge-conflict datasets)
// ============================================================================

/**
 * Replaces every occurrence of `gold_answer` in `context` (ASCII
 * case-insensitive) with `replacement`.
 */
inline std::string swap_answer_entity(std::string_view context, std::string_view gold_answer,
                                      std::string_view replacement) {
  if (gold_answer.empty()) throw NotApplicable("empty gold answer");
  if (normalize_answer(replacement) == normalize_answer(gold_answer)) {
    throw NotApplicable("replacement entity equals the gold answer");
  }
  const std::string lower_ctx = ascii_lower(context);
  const std::string lower_ans = ascii_lower(gold_answer);
  std::string out;
  std::size_t from = 0;
  bool found = false;
  for (std::size_t pos = lower_ctx.find(lower_ans); pos != std::string::npos; pos = lower_ctx.find(lower_ans, from)) {
    out.append(context.substr(from, pos - from));
    out.append(replacement);
    from = pos + lower_ans.size();
    found = true;
  }
  if (!found) throw NotApplicable("answer '" + std::string(gold_answer) + "' does not occur in the context");
  out.append(context.substr(from));
  if (ascii_lower(out).find(lower_ans) != std::string::npos) {
    throw NotApplicable("replacement re-introduces the gold answer");
  }
  return out;
}

/**
 * Builds an entity-swapped evaluation set: for each example whose context
 * mentions one of its answers, that span is replaced by an answer drawn from
 * another example. The swapped passage becomes the context and the
 * substituted entity the only accepted answer; the originals go to meta.
 * Examples that cannot be swapped are skipped.
 */
inline std::vector<QAExample> make_swapped_dataset(std::span<const QAExample> examples, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<QAExample> out;
  if (examples.size() < 2) return out;
  for (const auto& e : examples) {
    if (!e.context) continue;
    const std::string* present = nullptr;
    for (const auto& a : e.answers) {
      if (ascii_lower(e.context->text).find(ascii_lower(a)) != std::string::npos) {
        present = &a;
        break;
      }
    }
    if (!present) continue;
    std::optional<std::string> replacement;
    for (int attempt = 0; attempt < 64 && !replacement; ++attempt) {
      const auto& other = examples[rng() % examples.size()];
      const std::string& cand = other.answers.front();
      bool clash = false;
      for (const auto& a : e.answers) {
        const auto na = normalize_answer(a), nc = normalize_answer(cand);
        clash = clash || na == nc || contains_normalized(cand, a) || contains_normalized(a, cand);
      }
      if (!clash && !cand.empty()) replacement = cand;
    }
    if (!replacement) continue;
    std::string swapped;
    try {
      swapped = swap_answer_entity(e.context->text, *present, *replacement);
    } catch (const NotApplicable&) {
      continue;
    }
    QAExample s = e;
    s.answers = {*replacement};
    s.context = ContextPassage{swapped, true};
    s.swapped_context = swapped;
    s.meta["original_answers"] = e.answers;
    s.meta["original_context"] = e.context->text;
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace acd
