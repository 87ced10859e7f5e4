// SPDX-License-Identifier: Apache-2.0
#pragma once

/**
 * @file harness.hpp
 * @brief Dataset-level evaluation: prompts, parallel decoding, records, sweeps.
 */

#include <algorithm>
#include <atomic>
#include <exception>
#include <mutex>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <thread>
#include <unordered_map>
#include <vector>

#include "acd/backend.hpp"
#include "acd/dataio.hpp"
#include "acd/decoding.hpp"
#include "acd/error.hpp"
#include "acd/evaluation.hpp"

namespace acd::harness {

struct EvalSetup {
  const LogitBackend* backend = nullptr;
  PromptTemplate tmpl = default_prompt_template();
  std::vector<FewShot> fewshots;
  std::optional<std::string> adversarial_context;
  DecodeLimits limits;
  std::size_t workers = 1;
};

inline PromptSet build_prompts(const EvalSetup& setup, const QAExample& example, Strategy strategy) {
  if (!setup.backend) throw InvalidInput("no backend configured");
  const auto& be = *setup.backend;
  PromptSet p;
  p.closed = be.tokenize(render_prompt(setup.tmpl, setup.fewshots, example, PromptMode::Closed));
  if (needs_context(strategy)) {
    p.open = be.tokenize(render_prompt(setup.tmpl, setup.fewshots, example, PromptMode::Open));
  }
  if (needs_adversarial(strategy)) {
    if (!setup.adversarial_context) {
      throw InvalidInput(std::string(to_string(strategy)) + " requires an adversarial context (--adversarial-context)");
    }
    p.adversarial = be.tokenize(
        render_prompt(setup.tmpl, setup.fewshots, example, PromptMode::Adversarial, *setup.adversarial_context));
  }
  return p;
}

inline DecodeResult decode_example(const EvalSetup& setup, const QAExample& example, Strategy strategy,
                                   std::optional<double> alpha = std::nullopt) {
  return decode(*setup.backend, build_prompts(setup, example, strategy), strategy, alpha, setup.limits);
}

/// Applies `fn(i)` for i in [0, n) on up to `workers` threads; rethrows the first failure.
template <typename Fn>
void parallel_for(std::size_t n, std::size_t workers, Fn fn) {
  workers = std::max<std::size_t>(1, std::min(workers, n));
  if (workers == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::atomic<bool> failed{false};
  std::exception_ptr error;
  std::mutex error_mu;
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n && !failed; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(error_mu);
          if (!error) error = std::current_exception();
          failed = true;
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

/// One record per example, ordered by example id.
inline std::vector<RunRecord> run_method(const EvalSetup& setup, std::span<const QAExample> examples,
                                         Strategy strategy, std::optional<double> alpha = std::nullopt) {
  std::vector<RunRecord> records(examples.size());
  parallel_for(examples.size(), setup.workers, [&](std::size_t i) {
    records[i] = make_record(examples[i], decode_example(setup, examples[i], strategy, alpha));
  });
  std::stable_sort(records.begin(), records.end(),
                   [](const RunRecord& a, const RunRecord& b) { return a.example_id < b.example_id; });
  return records;
}

/// Labels each record known/unknown from the closed-book record with the same id.
inline void attach_knowledge(std::vector<RunRecord>& records, std::span<const RunRecord> closed_book) {
  std::unordered_map<std::string, KnowledgeLabel> by_id;
  for (const auto& c : closed_book) by_id[c.example_id] = label_knowledge(c);
  for (auto& r : records) {
    auto it = by_id.find(r.example_id);
    if (it != by_id.end()) r.knowledge_label = it->second;
  }
}

struct MethodRun {
  std::vector<RunRecord> records;
  std::vector<RunRecord> closed_book;
  RunSummary summary;
};

/**
 * Runs one method over a dataset. Knowledge labels come from `closed_book`
 * when given, otherwise from a paired reg-cls run over the same examples.
 */
inline MethodRun evaluate(const EvalSetup& setup, std::span<const QAExample> examples, Strategy strategy,
                          std::optional<double> alpha = std::nullopt,
                          const std::vector<RunRecord>* closed_book = nullptr) {
  MethodRun run;
  if (closed_book) {
    run.closed_book = *closed_book;
  } else {
    run.closed_book = run_method(setup, examples, Strategy::RegCls);
  }
  run.records = strategy == Strategy::RegCls && !closed_book ? run.closed_book : run_method(setup, examples, strategy, alpha);
  attach_knowledge(run.records, run.closed_book);
  attach_knowledge(run.closed_book, run.closed_book);
  run.summary = summarize(run.records);
  return run;
}

struct SweepRow {
  std::optional<double> alpha;  // empty for the adaptive reference row
  RunSummary summary;
};

/// Fixed-weight interpolation over `grid`, plus one adaptive reference row last.
inline std::vector<SweepRow> sweep(const EvalSetup& setup, std::span<const QAExample> examples,
                                   std::span<const double> grid, std::vector<std::vector<RunRecord>>* records = nullptr) {
  if (grid.empty()) throw InvalidInput("sweep: empty alpha grid");
  for (double a : grid) {
    if (!(a >= 0.0 && a <= 1.0)) throw InvalidInput("sweep: alpha grid must lie in [0, 1]");
  }
  const auto closed = run_method(setup, examples, Strategy::RegCls);
  std::vector<SweepRow> rows;
  for (double a : grid) {
    auto run = evaluate(setup, examples, Strategy::Fixed, a, &closed);
    rows.push_back({a, run.summary});
    if (records) records->push_back(std::move(run.records));
  }
  auto reference = evaluate(setup, examples, Strategy::Acd, std::nullopt, &closed);
  rows.push_back({std::nullopt, reference.summary});
  if (records) records->push_back(std::move(reference.records));
  return rows;
}

inline std::string sweep_csv(std::span<const SweepRow> rows) {
  std::ostringstream out;
  const auto num = [](std::optional<double> v) {
    if (!v) return std::string{};
    std::ostringstream ss;
    ss << std::fixed << std::setprecision(2) << *v;
    return ss.str();
  };
  out << "method,alpha,em_all,em_gold,em_noisy\n";
  for (const auto& r : rows) {
    out << (r.alpha ? "fixed" : "acd") << ',';
    if (r.alpha) {
      std::ostringstream a;
      a << *r.alpha;
      out << a.str();
    }
    out << ',' << num(r.summary.em_all()) << ',' << num(r.summary.em_gold()) << ',' << num(r.summary.em_noisy())
        << '\n';
  }
  return out.str();
}

}  // namespace acd::harness
