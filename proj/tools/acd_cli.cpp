// SPDX-License-Identifier: Apache-2.0
//
// acd: command-line driver for contrastive decoding experiments.
//
//   acd run      --method acd --data d.jsonl --backend toy --toy-config w.json --out out/
//   acd sweep    --alphas 0,0.25,0.5,0.75,1 ...
//   acd auroc    --records out/records.jsonl [--records ...]
//   acd trace    --method acd --example-id toy-0003 ...
//   acd gen-toy  --out data/toy --n 400 --seed 7
//   acd swap     --data in.jsonl --out swapped.jsonl
//   acd serve-toy --toy-config w.json --port 8080

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "acd/dataio.hpp"
#include "acd/decoding.hpp"
#include "acd/evaluation.hpp"
#include "acd/harness.hpp"
#include "acd/logit_server.hpp"
#include "acd/remote_backend.hpp"
#include "acd/toy_backend.hpp"
#include "acd/toy_dataset.hpp"

namespace fs = std::filesystem;

namespace {

struct CommonOptions {
  std::string data;
  std::string fewshots;
  std::string template_closed;
  std::string template_open;
  std::string backend = "toy";
  std::string toy_config;
  std::string remote_url;
  std::string adversarial_context;
  std::size_t max_tokens = 32;
  std::size_t workers = 1;
  std::uint64_t seed = 7;
  std::string out = "out";
};

void add_common(CLI::App* cmd, CommonOptions& o) {
  cmd->add_option("--data", o.data, "Dataset (JSON Lines)")->required();
  cmd->add_option("--fewshots", o.fewshots, "Few-shot exemplars (dataset JSON Lines; first answer is used)");
  cmd->add_option("--template-closed", o.template_closed, "Closed-book template file");
  cmd->add_option("--template-open", o.template_open, "Open-book template file");
  cmd->add_option("--backend", o.backend, "Logit backend")->check(CLI::IsMember({"toy", "remote"}));
  cmd->add_option("--toy-config", o.toy_config, "Toy world config (JSON)");
  cmd->add_option("--remote-url", o.remote_url, "Logit server base URL (fallback: $ACD_REMOTE_URL)");
  cmd->add_option("--adversarial-context", o.adversarial_context, "File holding the fixed negative passage (MICD)");
  cmd->add_option("--max-tokens", o.max_tokens, "Generation limit per answer")->check(CLI::PositiveNumber);
  cmd->add_option("--workers", o.workers, "Concurrent examples")->check(CLI::PositiveNumber);
  cmd->add_option("--seed", o.seed, "Seed (fixture generation and ordering only; decoding is deterministic)");
  cmd->add_option("--out", o.out, "Output directory");
}

std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw acd::InvalidInput("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  std::string s = ss.str();
  while (!s.empty() && (s.back() == '\n' || s.back() == '\r')) s.pop_back();
  return s;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw acd::InvalidInput("cannot write " + path.string());
  out << text;
  if (!out) throw acd::InvalidInput("failed writing " + path.string());
}

void write_records(const fs::path& path, const std::vector<acd::RunRecord>& records) {
  std::ostringstream ss;
  for (const auto& r : records) ss << acd::to_json_value(r).dump() << '\n';
  write_text(path, ss.str());
}

std::unique_ptr<acd::LogitBackend> make_backend(const CommonOptions& o) {
  if (o.backend == "toy") {
    if (o.toy_config.empty()) throw acd::InvalidInput("--backend toy requires --toy-config");
    return std::make_unique<acd::ToyBackend>(acd::load_toy_config(o.toy_config));
  }
  std::string url = o.remote_url;
  if (url.empty()) {
    if (const char* env = std::getenv("ACD_REMOTE_URL")) url = env;
  }
  if (url.empty()) throw acd::InvalidInput("--backend remote requires --remote-url or ACD_REMOTE_URL");
  return std::make_unique<acd::RemoteBackend>(url);
}

struct Session {
  std::unique_ptr<acd::LogitBackend> backend;
  acd::harness::EvalSetup setup;
  std::vector<acd::QAExample> examples;
};

Session open_session(const CommonOptions& o) {
  Session s;
  s.backend = make_backend(o);
  s.backend->model_info();  // fail fast when unreachable
  s.setup.backend = s.backend.get();
  if (!o.template_closed.empty() || !o.template_open.empty()) {
    if (o.template_closed.empty() || o.template_open.empty()) {
      throw acd::InvalidInput("--template-closed and --template-open must be given together");
    }
    s.setup.tmpl = acd::load_prompt_template(o.template_closed, o.template_open);
  }
  if (!o.fewshots.empty()) s.setup.fewshots = acd::fewshots_from(acd::load_dataset(o.fewshots));
  if (!o.adversarial_context.empty()) s.setup.adversarial_context = read_text(o.adversarial_context);
  s.setup.limits.max_tokens = o.max_tokens;
  s.setup.workers = o.workers;
  s.examples = acd::load_dataset(o.data);
  return s;
}

void validate_method_alpha(acd::Strategy m, const std::optional<double>& alpha) {
  if (m == acd::Strategy::Fixed && !alpha) throw acd::InvalidInput("--method fixed requires --alpha");
  if ((acd::has_dynamic_alpha(m) || m == acd::Strategy::RegCls || m == acd::Strategy::RegOpn) && alpha) {
    throw acd::InvalidInput("--alpha is not accepted for " + std::string(acd::to_string(m)) + " (its weight is not fixed)");
  }
  if (alpha && !(*alpha >= 0.0)) throw acd::InvalidInput("--alpha must be non-negative");
}

void require_adversarial(acd::Strategy m, const CommonOptions& o) {
  if (acd::needs_adversarial(m) && o.adversarial_context.empty()) {
    throw acd::InvalidInput("method " + std::string(acd::to_string(m)) +
                            " requires --adversarial-context (file with the fixed negative passage)");
  }
}

// ---------------------------------------------------------------------------

int cmd_run(const CommonOptions& o, const std::string& method, const std::optional<double>& alpha,
            const std::string& closed_records) {
  const auto m = acd::parse_strategy(method);
  validate_method_alpha(m, alpha);
  require_adversarial(m, o);
  auto s = open_session(o);
  std::optional<std::vector<acd::RunRecord>> closed;
  if (!closed_records.empty()) closed = acd::load_records(closed_records);
  auto run = acd::harness::evaluate(s.setup, s.examples, m, alpha, closed ? &*closed : nullptr);

  fs::create_directories(o.out);
  write_records(fs::path(o.out) / "records.jsonl", run.records);
  if (m != acd::Strategy::RegCls) write_records(fs::path(o.out) / "closed_records.jsonl", run.closed_book);
  write_text(fs::path(o.out) / "summary.json", acd::to_json_value(run.summary).dump(2) + "\n");
  const std::vector<acd::RunSummary> table = {run.summary};
  const auto text = acd::format_summary_table(table);
  write_text(fs::path(o.out) / "summary.txt", text);
  std::cout << text;
  return 0;
}

std::vector<double> parse_grid(const std::string& spec) {
  std::vector<double> grid;
  std::stringstream ss(spec);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.find_first_not_of(" \t") == std::string::npos) continue;
    std::size_t used = 0;
    const double v = std::stod(item, &used);
    grid.push_back(v);
  }
  return grid;
}

int cmd_sweep(const CommonOptions& o, const std::string& alphas) {
  const auto grid = parse_grid(alphas);
  if (grid.empty()) throw acd::InvalidInput("--alphas must list at least one value");
  auto s = open_session(o);
  const auto rows = acd::harness::sweep(s.setup, s.examples, grid);

  fs::create_directories(o.out);
  std::vector<acd::RunSummary> summaries;
  for (const auto& r : rows) {
    std::string name = "summary_acd.json";
    if (r.alpha) {
      std::ostringstream n;
      n << "summary_alpha_" << std::fixed << std::setprecision(2) << *r.alpha << ".json";
      name = n.str();
    }
    write_text(fs::path(o.out) / name, acd::to_json_value(r.summary).dump(2) + "\n");
    summaries.push_back(r.summary);
  }
  write_text(fs::path(o.out) / "sweep.csv", acd::harness::sweep_csv(rows));
  const auto text = acd::format_summary_table(summaries);
  write_text(fs::path(o.out) / "sweep.txt", text);
  std::cout << text;
  return 0;
}

int cmd_auroc(const std::vector<std::string>& paths) {
  std::vector<std::pair<acd::Strategy, acd::AurocTriple>> rows;
  for (const auto& p : paths) {
    const auto records = acd::load_records(p);
    if (records.empty()) throw acd::InvalidInput(p + " holds no records");
    const auto strategy = records.front().strategy;
    if (!acd::has_dynamic_alpha(strategy)) {
      throw acd::InvalidInput(p + ": AUROC needs acd or micd-d records, got " + std::string(acd::to_string(strategy)));
    }
    try {
      rows.emplace_back(strategy, acd::alpha_auroc(records));
    } catch (const acd::UndefinedMetric& e) {
      std::cerr << "acd: AUROC undefined for " << p
                << ": Known-noisy and Unknown-gold must both be non-empty after filtering (" << e.what() << ")\n";
      return 2;
    }
  }
  std::cout << acd::format_auroc_table(rows);
  return 0;
}

std::string token_text(const acd::LogitBackend& be, const acd::Vocabulary& v, acd::TokenId id) {
  std::string t = !v.token_texts.empty() ? v.token_texts[static_cast<std::size_t>(id)] : be.detokenize({id});
  if (t == "\n") t = "\\n";
  return t;
}

std::string format_tops(const acd::LogitBackend& be, const acd::Vocabulary& v, const std::vector<acd::TokenProb>& tops) {
  std::ostringstream ss;
  for (std::size_t i = 0; i < tops.size(); ++i) {
    if (i) ss << ' ';
    ss << token_text(be, v, tops[i].first) << ':' << std::fixed << std::setprecision(3) << tops[i].second;
  }
  return ss.str();
}

int cmd_trace(const CommonOptions& o, const std::string& method, const std::optional<double>& alpha,
              const std::string& example_id) {
  const auto m = acd::parse_strategy(method);
  validate_method_alpha(m, alpha);
  require_adversarial(m, o);
  auto s = open_session(o);
  const auto it = std::find_if(s.examples.begin(), s.examples.end(),
                               [&](const acd::QAExample& e) { return e.id == example_id; });
  if (it == s.examples.end()) throw acd::InvalidInput("no example with id '" + example_id + "'");
  const auto result = acd::harness::decode_example(s.setup, *it, m, alpha);
  const auto vocab = s.backend->model_info();

  const bool closed_side = m != acd::Strategy::RegOpn;
  const bool open_side = m != acd::Strategy::RegCls;
  const bool weighted = m != acd::Strategy::RegCls && m != acd::Strategy::RegOpn;
  std::vector<std::string> header = {"t"};
  if (closed_side) header.push_back("H(Y_t)");
  if (open_side) header.push_back("H(Y_t^c)");
  if (weighted) header.push_back("alpha");
  header.push_back("chosen");
  if (closed_side) header.push_back("top-5 closed");
  if (open_side) header.push_back("top-5 open");

  std::vector<std::vector<std::string>> rows = {header};
  const auto num = [](const std::optional<double>& v) {
    if (!v) return std::string("-");
    std::ostringstream ss;
    ss << std::fixed << std::setprecision(4) << *v;
    return ss.str();
  };
  for (const auto& step : result.trace) {
    std::vector<std::string> row = {std::to_string(step.step)};
    if (closed_side) row.push_back(num(step.h_closed));
    if (open_side) row.push_back(num(step.h_open));
    if (weighted) row.push_back(num(step.alpha));
    row.push_back(token_text(*s.backend, vocab, step.chosen));
    if (closed_side) row.push_back(format_tops(*s.backend, vocab, step.top_closed));
    if (open_side) row.push_back(format_tops(*s.backend, vocab, step.top_open));
    rows.push_back(std::move(row));
  }
  std::cout << "example: " << it->id << "\nquestion: " << it->question << "\nanswers:";
  for (const auto& a : it->answers) std::cout << " [" << a << "]";
  std::cout << "\nmethod: " << acd::method_label(m, result.fixed_alpha) << "\nprediction: " << result.text
            << "\nem: " << (acd::exact_match(result.text, it->answers) ? "correct" : "wrong")
            << "\nstop: " << acd::to_string(result.stop_reason) << "\n\n"
            << acd::detail::render_table(rows);
  return 0;
}

int cmd_gen_toy(const std::string& out, acd::ToyDatasetOptions opt) {
  const auto ds = acd::generate_toy_dataset(opt);
  fs::create_directories(out);
  acd::save_dataset((fs::path(out) / "dataset.jsonl").string(), ds.examples);
  acd::save_dataset((fs::path(out) / "fewshots.jsonl").string(), ds.fewshots);
  write_text(fs::path(out) / "toy_config.json", nlohmann::json(ds.world).dump(2) + "\n");
  write_text(fs::path(out) / "adversarial_context.txt", "Garth is the curator of Keld .\n");
  std::map<std::string, int> quadrants;
  for (const auto& e : ds.examples) ++quadrants[e.meta["quadrant"].get<std::string>()];
  std::cout << "wrote " << ds.examples.size() << " examples to " << out << "\n";
  for (const auto& [q, n] : quadrants) std::cout << "  " << q << ": " << n << "\n";
  return 0;
}

int cmd_swap(const std::string& data, const std::string& out, std::uint64_t seed) {
  const auto examples = acd::load_dataset(data);
  const auto swapped = acd::make_swapped_dataset(examples, seed);
  acd::save_dataset(out, swapped);
  std::cout << "swapped " << swapped.size() << " of " << examples.size() << " examples into " << out << "\n";
  return 0;
}

int cmd_serve_toy(const std::string& config, const std::string& host, int port) {
  acd::ToyBackend backend(acd::load_toy_config(config));
  acd::LogitServer server(backend);
  std::cout << "serving toy world on http://" << host << ":" << port << std::endl;
  return server.listen(host, port) ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Adaptive contrastive decoding: decoding engine and QA evaluation harness"};
  app.require_subcommand(1);

  CommonOptions run_opts, sweep_opts, trace_opts;
  std::string run_method = "acd", trace_method = "acd", closed_records, alphas = "0,0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9,1";
  std::optional<double> run_alpha, trace_alpha;
  std::string example_id;

  auto* run = app.add_subcommand("run", "Decode a dataset with one method and write records/summary");
  add_common(run, run_opts);
  run->add_option("--method", run_method, "reg-cls | reg-opn | cad | micd-f | micd-d | acd | fixed")
      ->check(CLI::IsMember({"reg-cls", "reg-opn", "cad", "micd-f", "micd-d", "acd", "fixed"}));
  run->add_option("--alpha", run_alpha, "Fixed weight (cad, micd-f, fixed)");
  run->add_option("--closed-records", closed_records, "Existing reg-cls records for knowledge labels");

  auto* sw = app.add_subcommand("sweep", "Fixed-alpha interpolation sweep with an adaptive reference row");
  add_common(sw, sweep_opts);
  sw->add_option("--alphas", alphas, "Comma-separated grid in [0, 1]");

  std::vector<std::string> record_paths;
  auto* au = app.add_subcommand("auroc", "AUROC between alpha statistics and context noisiness");
  au->add_option("--records", record_paths, "records.jsonl from acd or micd-d runs")->required();

  auto* tr = app.add_subcommand("trace", "Per-step entropy/alpha table for one example");
  add_common(tr, trace_opts);
  tr->add_option("--method", trace_method, "Decoding method")
      ->check(CLI::IsMember({"reg-cls", "reg-opn", "cad", "micd-f", "micd-d", "acd", "fixed"}));
  tr->add_option("--alpha", trace_alpha, "Fixed weight (cad, micd-f, fixed)");
  tr->add_option("--example-id", example_id, "Example id")->required();

  acd::ToyDatasetOptions toy;
  std::string toy_out = "data/toy";
  auto* gen = app.add_subcommand("gen-toy", "Generate the synthetic toy-world fixture");
  gen->add_option("--out", toy_out, "Output directory");
  gen->add_option("--n", toy.n_examples, "Number of examples");
  gen->add_option("--known", toy.fraction_known, "Fraction of questions the model knows");
  gen->add_option("--gold", toy.fraction_gold, "Fraction of gold contexts");
  gen->add_option("--confident-wrong", toy.confident_wrong_fraction, "Fraction of unknown questions held with confidence");
  gen->add_option("--seed", toy.seed, "Seed");

  std::string swap_in, swap_out;
  std::uint64_t swap_seed = 7;
  auto* swp = app.add_subcommand("swap", "Build an entity-swapped (knowledge-conflict) dataset");
  swp->add_option("--data", swap_in, "Input dataset")->required();
  swp->add_option("--out", swap_out, "Output dataset")->required();
  swp->add_option("--seed", swap_seed, "Seed for replacement entities");

  std::string serve_config, serve_host = "127.0.0.1";
  int serve_port = 8080;
  auto* serve = app.add_subcommand("serve-toy", "Serve the toy world over the HTTP logit protocol");
  serve->add_option("--toy-config", serve_config, "Toy world config")->required();
  serve->add_option("--host", serve_host, "Bind address");
  serve->add_option("--port", serve_port, "Port");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run) return cmd_run(run_opts, run_method, run_alpha, closed_records);
    if (*sw) return cmd_sweep(sweep_opts, alphas);
    if (*au) return cmd_auroc(record_paths);
    if (*tr) return cmd_trace(trace_opts, trace_method, trace_alpha, example_id);
    if (*gen) return cmd_gen_toy(toy_out, toy);
    if (*swp) return cmd_swap(swap_in, swap_out, swap_seed);
    if (*serve) return cmd_serve_toy(serve_config, serve_host, serve_port);
  } catch (const std::exception& e) {
    std::cerr << "acd: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
