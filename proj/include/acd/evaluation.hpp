// SPDX-License-Identifier: Apache-2.0
#pragma once

/**
 * @file evaluation.hpp
 * @brief Exact match, subset labeling, alpha statistics, AUROC, summaries.
 *
 * Subsets:
 *  - context label: gold if the retrieved passage contains a candidate
 *    answer (an explicit dataset flag wins), noisy otherwise.
 *  - knowledge label: known iff closed-book greedy decoding is correct.
 *  - Known-noisy / Unknown-gold combine the two.
 *
 * AUROC treats Unknown-gold as the positive class and scores each example
 * by an alpha statistic, over Known-noisy and Unknown-gold only.
 */

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <fstream>
#include <iomanip>
#include <map>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "acd/dataio.hpp"
#include "acd/decoding.hpp"
#include "acd/error.hpp"
#include "acd/text.hpp"

namespace acd {

// ============================================================================
// Exact match and labels
// ============================================================================

inline bool exact_match(std::string_view prediction, std::span<const std::string> answers) {
  if (answers.empty()) throw InvalidInput("exact_match: empty candidate list");
  const std::string p = normalize_answer(prediction);
  return std::any_of(answers.begin(), answers.end(), [&](const std::string& a) { return normalize_answer(a) == p; });
}

enum class ContextLabel { Gold, Noisy, None };
enum class KnowledgeLabel { Known, Unknown };

inline std::string_view to_string(ContextLabel l) {
  switch (l) {
    case ContextLabel::Gold: return "gold";
    case ContextLabel::Noisy: return "noisy";
    case ContextLabel::None: return "none";
  }
  return "?";
}

inline std::string_view to_string(KnowledgeLabel l) { return l == KnowledgeLabel::Known ? "known" : "unknown"; }

inline ContextLabel label_context(const QAExample& e) {
  if (!e.context) return ContextLabel::None;
  if (e.context->gold) return *e.context->gold ? ContextLabel::Gold : ContextLabel::Noisy;
  for (const auto& a : e.answers) {
    if (contains_normalized(e.context->text, a)) return ContextLabel::Gold;
  }
  return ContextLabel::Noisy;
}

// ============================================================================
// Records
// ============================================================================

struct AlphaStats {
  double max = 0.0;
  double avg = 0.0;
  double first = 0.0;
};

struct RunRecord {
  std::string example_id;
  Strategy strategy = Strategy::RegCls;
  std::optional<double> fixed_alpha;
  std::string prediction;
  bool em_correct = false;
  ContextLabel context_label = ContextLabel::None;
  std::optional<KnowledgeLabel> knowledge_label;
  std::optional<AlphaStats> alpha_stats;
  StopReason stop_reason = StopReason::MaxTokens;
  TokenSequence token_ids;
  std::vector<AlphaTraceStep> trace;
};

inline KnowledgeLabel label_knowledge(const RunRecord& closed_book) {
  if (closed_book.strategy != Strategy::RegCls) {
    throw InvalidInput("label_knowledge needs a reg-cls record, got " + std::string(to_string(closed_book.strategy)));
  }
  return closed_book.em_correct ? KnowledgeLabel::Known : KnowledgeLabel::Unknown;
}

/// Max, mean and first value of the per-step weight.
inline AlphaStats alpha_statistics(std::span<const AlphaTraceStep> trace) {
  if (trace.empty()) throw InvalidInput("alpha_statistics: empty trace");
  AlphaStats s{};
  double sum = 0.0;
  for (std::size_t i = 0; i < trace.size(); ++i) {
    if (!trace[i].alpha) throw InvalidInput("alpha_statistics: step " + std::to_string(i) + " has no alpha");
    const double a = *trace[i].alpha;
    s.max = i == 0 ? a : std::max(s.max, a);
    sum += a;
  }
  s.first = *trace.front().alpha;
  s.avg = sum / static_cast<double>(trace.size());
  return s;
}

inline RunRecord make_record(const QAExample& example, const DecodeResult& result) {
  RunRecord r;
  r.example_id = example.id;
  r.strategy = result.strategy;
  r.fixed_alpha = result.fixed_alpha;
  r.prediction = result.text;
  r.em_correct = exact_match(result.text, example.answers);
  r.context_label = label_context(example);
  if (has_dynamic_alpha(result.strategy) && !result.trace.empty()) r.alpha_stats = alpha_statistics(result.trace);
  r.stop_reason = result.stop_reason;
  r.token_ids = result.token_ids;
  r.trace = result.trace;
  return r;
}

// ============================================================================
// AUROC
// ============================================================================

/**
 * Mann-Whitney AUROC: probability that a random positive outscores a random
 * negative, ties counting one half. Computed from mid-ranks in O(n log n).
 */
inline double auroc(const std::vector<double>& scores, const std::vector<bool>& positive) {
  if (scores.size() != positive.size()) throw InvalidInput("auroc: scores and labels differ in length");
  const auto n = scores.size();
  const auto n_pos = static_cast<std::size_t>(std::count(positive.begin(), positive.end(), true));
  const auto n_neg = n - n_pos;
  if (n_pos == 0 || n_neg == 0) throw UndefinedMetric("auroc is undefined unless both classes are present");

  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double pos_rank_sum = 0.0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    const double mid_rank = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2.0;
    for (std::size_t k = i; k < j; ++k) {
      if (positive[order[k]]) pos_rank_sum += mid_rank;
    }
    i = j;
  }
  const double np = static_cast<double>(n_pos), nn = static_cast<double>(n_neg);
  return (pos_rank_sum - np * (np + 1.0) / 2.0) / (np * nn);
}

// ============================================================================
// Summaries
// ============================================================================

struct SubsetScore {
  std::size_t count = 0;
  std::size_t correct = 0;

  std::optional<double> em() const {
    if (count == 0) return std::nullopt;
    return 100.0 * static_cast<double>(correct) / static_cast<double>(count);
  }
  void add(bool ok) {
    ++count;
    correct += ok ? 1 : 0;
  }
};

struct AurocTriple {
  double max = 0.0;
  double avg = 0.0;
  double first = 0.0;
};

struct RunSummary {
  Strategy strategy = Strategy::RegCls;
  std::optional<double> fixed_alpha;
  SubsetScore all, gold, noisy;
  SubsetScore known_noisy, unknown_gold, known_gold, unknown_noisy;
  /// False for closed-book runs, which never saw the context.
  bool context_subsets = true;
  std::optional<AurocTriple> auroc;

  std::optional<double> em_all() const { return all.em(); }
  std::optional<double> em_gold() const { return context_subsets ? gold.em() : std::nullopt; }
  std::optional<double> em_noisy() const { return context_subsets ? noisy.em() : std::nullopt; }
  std::optional<double> em_known_noisy() const { return known_noisy.em(); }
  std::optional<double> em_unknown_gold() const { return unknown_gold.em(); }
};

inline bool in_filtered_quadrants(const RunRecord& r) {
  if (!r.knowledge_label) return false;
  return (*r.knowledge_label == KnowledgeLabel::Known && r.context_label == ContextLabel::Noisy) ||
         (*r.knowledge_label == KnowledgeLabel::Unknown && r.context_label == ContextLabel::Gold);
}

/// AUROC of each alpha statistic for gold (positive) vs noisy contexts, over Known-noisy and Unknown-gold.
inline AurocTriple alpha_auroc(std::span<const RunRecord> records) {
  std::vector<double> mx, av, fi;
  std::vector<bool> labels;
  for (const auto& r : records) {
    if (!in_filtered_quadrants(r)) continue;
    if (!r.alpha_stats) throw InvalidInput("record " + r.example_id + " has no alpha statistics");
    mx.push_back(r.alpha_stats->max);
    av.push_back(r.alpha_stats->avg);
    fi.push_back(r.alpha_stats->first);
    labels.push_back(r.context_label == ContextLabel::Gold);
  }
  return {auroc(mx, labels), auroc(av, labels), auroc(fi, labels)};
}

inline RunSummary summarize(std::span<const RunRecord> records) {
  if (records.empty()) throw InvalidInput("summarize: no records");
  RunSummary s;
  s.strategy = records.front().strategy;
  s.fixed_alpha = records.front().fixed_alpha;
  s.context_subsets = s.strategy != Strategy::RegCls;
  for (const auto& r : records) {
    if (r.strategy != s.strategy || r.fixed_alpha != s.fixed_alpha) {
      throw InvalidInput("summarize: records mix several strategies");
    }
    s.all.add(r.em_correct);
    if (r.context_label == ContextLabel::Gold) s.gold.add(r.em_correct);
    if (r.context_label == ContextLabel::Noisy) s.noisy.add(r.em_correct);
    if (r.knowledge_label && r.context_label != ContextLabel::None) {
      const bool known = *r.knowledge_label == KnowledgeLabel::Known;
      const bool gold = r.context_label == ContextLabel::Gold;
      (known ? (gold ? s.known_gold : s.known_noisy) : (gold ? s.unknown_gold : s.unknown_noisy)).add(r.em_correct);
    }
  }
  if (has_dynamic_alpha(s.strategy) && s.known_noisy.count > 0 && s.unknown_gold.count > 0) {
    s.auroc = alpha_auroc(records);
  }
  return s;
}

// ============================================================================
// Serialization
// ============================================================================

inline double round2(double x) { return std::round(x * 100.0) / 100.0; }

inline nlohmann::json optional_json(const std::optional<double>& v, bool round = false) {
  if (!v) return nullptr;
  return round ? round2(*v) : *v;
}

inline nlohmann::json to_json_value(const AlphaTraceStep& s) {
  using nlohmann::json;
  const auto tops = [](const std::vector<TokenProb>& v) {
    json a = json::array();
    for (const auto& [id, p] : v) a.push_back({id, p});
    return a;
  };
  json j = {{"t", s.step}, {"chosen", s.chosen}};
  if (s.h_closed) j["h_closed"] = *s.h_closed;
  if (s.h_open) j["h_open"] = *s.h_open;
  if (s.alpha) j["alpha"] = *s.alpha;
  if (!s.top_closed.empty()) j["top_closed"] = tops(s.top_closed);
  if (!s.top_open.empty()) j["top_open"] = tops(s.top_open);
  if (!s.top_combined.empty()) j["top_combined"] = tops(s.top_combined);
  return j;
}

inline AlphaTraceStep trace_step_from_json(const nlohmann::json& j) {
  const auto tops = [&](const char* key) {
    std::vector<TokenProb> v;
    if (j.contains(key)) {
      for (const auto& e : j[key]) v.emplace_back(e.at(0).get<TokenId>(), e.at(1).get<double>());
    }
    return v;
  };
  AlphaTraceStep s;
  s.step = j.at("t").get<std::size_t>();
  s.chosen = j.at("chosen").get<TokenId>();
  if (j.contains("h_closed")) s.h_closed = j["h_closed"].get<double>();
  if (j.contains("h_open")) s.h_open = j["h_open"].get<double>();
  if (j.contains("alpha")) s.alpha = j["alpha"].get<double>();
  s.top_closed = tops("top_closed");
  s.top_open = tops("top_open");
  s.top_combined = tops("top_combined");
  return s;
}

inline nlohmann::json to_json_value(const RunRecord& r) {
  using nlohmann::json;
  json j = {{"example_id", r.example_id},
            {"strategy", std::string(to_string(r.strategy))},
            {"alpha", optional_json(r.fixed_alpha)},
            {"prediction", r.prediction},
            {"em_correct", r.em_correct},
            {"context_label", std::string(to_string(r.context_label))},
            {"knowledge_label", r.knowledge_label ? json(std::string(to_string(*r.knowledge_label))) : json(nullptr)}};
  if (r.alpha_stats) {
    j["alpha_stats"] = {{"max", r.alpha_stats->max}, {"avg", r.alpha_stats->avg}, {"first", r.alpha_stats->first}};
  } else {
    j["alpha_stats"] = nullptr;
  }
  j["stop_reason"] = std::string(to_string(r.stop_reason));
  j["token_ids"] = r.token_ids;
  json trace = json::array();
  for (const auto& s : r.trace) trace.push_back(to_json_value(s));
  j["trace"] = std::move(trace);
  return j;
}

inline RunRecord record_from_json(const nlohmann::json& j) {
  try {
    RunRecord r;
    r.example_id = j.at("example_id").get<std::string>();
    r.strategy = parse_strategy(j.at("strategy").get<std::string>());
    if (j.contains("alpha") && !j["alpha"].is_null()) r.fixed_alpha = j["alpha"].get<double>();
    r.prediction = j.at("prediction").get<std::string>();
    r.em_correct = j.at("em_correct").get<bool>();
    const auto ctx = j.at("context_label").get<std::string>();
    r.context_label = ctx == "gold" ? ContextLabel::Gold : ctx == "noisy" ? ContextLabel::Noisy : ContextLabel::None;
    if (j.contains("knowledge_label") && !j["knowledge_label"].is_null()) {
      r.knowledge_label = j["knowledge_label"].get<std::string>() == "known" ? KnowledgeLabel::Known : KnowledgeLabel::Unknown;
    }
    if (j.contains("alpha_stats") && !j["alpha_stats"].is_null()) {
      const auto& a = j["alpha_stats"];
      r.alpha_stats = AlphaStats{a.at("max").get<double>(), a.at("avg").get<double>(), a.at("first").get<double>()};
    }
    const auto stop = j.value("stop_reason", std::string("max_tokens"));
    r.stop_reason = stop == "eos" ? StopReason::Eos : stop == "newline" ? StopReason::Newline : StopReason::MaxTokens;
    if (j.contains("token_ids")) r.token_ids = j["token_ids"].get<TokenSequence>();
    if (j.contains("trace")) {
      for (const auto& s : j["trace"]) r.trace.push_back(trace_step_from_json(s));
    }
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("record", std::string("malformed run record: ") + e.what());
  }
}

inline std::vector<RunRecord> load_records(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InvalidInput("cannot open records: " + path);
  std::vector<RunRecord> out;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    auto j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded()) throw ParseError(n, "malformed JSON in records");
    out.push_back(record_from_json(j));
  }
  return out;
}

inline nlohmann::json to_json_value(const RunSummary& s) {
  using nlohmann::json;
  const auto count = [](const SubsetScore& x) { return json{{"count", x.count}, {"correct", x.correct}}; };
  json j = {{"strategy", std::string(to_string(s.strategy))},
            {"alpha", optional_json(s.fixed_alpha)},
            {"em_all", optional_json(s.em_all(), true)},
            {"em_gold_subset", optional_json(s.em_gold(), true)},
            {"em_noisy_subset", optional_json(s.em_noisy(), true)},
            {"em_known_noisy", optional_json(s.em_known_noisy(), true)},
            {"em_unknown_gold", optional_json(s.em_unknown_gold(), true)},
            {"em_known_gold", optional_json(s.known_gold.em(), true)},
            {"em_unknown_noisy", optional_json(s.unknown_noisy.em(), true)}};
  j["auroc_max"] = s.auroc ? json(s.auroc->max) : json(nullptr);
  j["auroc_avg"] = s.auroc ? json(s.auroc->avg) : json(nullptr);
  j["auroc_first"] = s.auroc ? json(s.auroc->first) : json(nullptr);
  j["counts"] = {{"all", count(s.all)},
                 {"gold", count(s.gold)},
                 {"noisy", count(s.noisy)},
                 {"known_noisy", count(s.known_noisy)},
                 {"unknown_gold", count(s.unknown_gold)},
                 {"known_gold", count(s.known_gold)},
                 {"unknown_noisy", count(s.unknown_noisy)}};
  return j;
}

namespace detail {

inline std::string cell(const std::optional<double>& v) {
  if (!v) return "-";
  std::ostringstream ss;
  ss << std::fixed << std::setprecision(2) << *v;
  return ss.str();
}

inline std::string render_table(const std::vector<std::vector<std::string>>& rows) {
  std::vector<std::size_t> width;
  for (const auto& r : rows) {
    width.resize(std::max(width.size(), r.size()), 0);
    for (std::size_t c = 0; c < r.size(); ++c) width[c] = std::max(width[c], r[c].size());
  }
  std::ostringstream out;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t c = 0; c < rows[i].size(); ++c) {
      if (c == 0) {
        out << std::left << std::setw(static_cast<int>(width[c])) << rows[i][c];
      } else {
        out << "  " << std::right << std::setw(static_cast<int>(width[c])) << rows[i][c];
      }
    }
    out << '\n';
    if (i == 0) {
      std::size_t total = 0;
      for (auto w : width) total += w + 2;
      out << std::string(total - 2, '-') << '\n';
    }
  }
  return out.str();
}

}  // namespace detail

inline std::string method_label(Strategy s, std::optional<double> alpha) {
  std::string m(to_string(s));
  if (alpha && s == Strategy::Fixed) {
    std::ostringstream ss;
    ss << "fixed(" << std::setprecision(4) << *alpha << ")";
    m = ss.str();
  }
  return m;
}

/// EM table in the All / Gold / Noisy / Known-noisy / Unknown-gold layout ("-" when absent).
inline std::string format_summary_table(std::span<const RunSummary> summaries) {
  std::vector<std::vector<std::string>> rows = {
      {"Method", "All", "Gold", "Noisy", "Known-noisy", "Unknown-gold", "N"}};
  for (const auto& s : summaries) {
    rows.push_back({method_label(s.strategy, s.fixed_alpha), detail::cell(s.em_all()), detail::cell(s.em_gold()),
                    detail::cell(s.em_noisy()), detail::cell(s.em_known_noisy()), detail::cell(s.em_unknown_gold()),
                    std::to_string(s.all.count)});
  }
  return detail::render_table(rows);
}

/// AUROC (percent) per statistic and method, statistics as row groups.
inline std::string format_auroc_table(const std::vector<std::pair<Strategy, AurocTriple>>& rows_in) {
  std::vector<std::vector<std::string>> rows = {{"Statistic", "Method", "AUROC"}};
  const auto pct = [](double v) { return detail::cell(100.0 * v); };
  for (const char* stat : {"Max", "Avg.", "First"}) {
    for (const auto& [s, a] : rows_in) {
      const double v = stat[0] == 'M' ? a.max : stat[0] == 'A' ? a.avg : a.first;
      rows.push_back({stat, std::string(to_string(s)), pct(v)});
    }
  }
  return detail::render_table(rows);
}

}  // namespace acd
