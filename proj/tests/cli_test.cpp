// SPDX-License-Identifier: Apache-2.0
//
// End-to-end checks of the acd binary and the dataset harness behind it.

#include <array>
#include <atomic>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <sys/wait.h>

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include "acd/harness.hpp"
#include "acd/toy_backend.hpp"
#include "acd/toy_dataset.hpp"

namespace fs = std::filesystem;
using namespace acd;

namespace {

const fs::path kData = ACD_DATA_DIR;

struct Outcome {
  int status;
  std::string output;
};

Outcome run(const std::string& args) {
  const std::string cmd = std::string(ACD_CLI) + " " + args + " 2>&1";
  Outcome o{-1, {}};
  FILE* pipe = popen(cmd.c_str(), "r");
  if (!pipe) return o;
  std::array<char, 4096> buf{};
  while (auto n = fread(buf.data(), 1, buf.size(), pipe)) o.output.append(buf.data(), n);
  const int raw = pclose(pipe);
  o.status = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
  return o;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

nlohmann::json read_json(const fs::path& p) { return nlohmann::json::parse(slurp(p)); }

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() / ("acd_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  std::string common() const {
    return "--data " + (kData / "toy/dataset.jsonl").string() + " --fewshots " + (kData / "toy/fewshots.jsonl").string() +
           " --backend toy --toy-config " + (kData / "toy/toy_config.json").string();
  }
  std::string adversarial() const { return " --adversarial-context " + (kData / "toy/adversarial_context.txt").string(); }
  std::string out(const std::string& name) const { return (dir_ / name).string(); }

  fs::path dir_;
};

}  // namespace

TEST_F(Cli, RunAcdPopulatesSummary) {
  const auto o = run("run --method acd " + common() + " --out " + out("acd"));
  ASSERT_EQ(o.status, 0) << o.output;
  const auto s = read_json(dir_ / "acd/summary.json");
  for (const char* k : {"em_all", "em_gold_subset", "em_noisy_subset", "em_known_noisy", "em_unknown_gold"}) {
    EXPECT_TRUE(s[k].is_number()) << k;
  }
  EXPECT_TRUE(s["auroc_first"].is_number());
  EXPECT_TRUE(fs::exists(dir_ / "acd/records.jsonl"));
  EXPECT_TRUE(fs::exists(dir_ / "acd/summary.txt"));
  EXPECT_NE(o.output.find("Known-noisy"), std::string::npos);
}

TEST_F(Cli, RunRegClsHasNoContextSubsets) {
  const auto o = run("run --method reg-cls " + common() + " --out " + out("cls"));
  ASSERT_EQ(o.status, 0) << o.output;
  const auto s = read_json(dir_ / "cls/summary.json");
  EXPECT_TRUE(s["em_gold_subset"].is_null());
  EXPECT_TRUE(s["em_noisy_subset"].is_null());
}

TEST_F(Cli, MicdWithoutAdversarialContextNamesInput) {
  for (const char* m : {"micd-f", "micd-d"}) {
    const auto o = run(std::string("run --method ") + m + " " + common() + " --out " + out("m"));
    EXPECT_NE(o.status, 0);
    EXPECT_NE(o.output.find("--adversarial-context"), std::string::npos) << o.output;
  }
  const auto ok = run("run --method micd-d " + common() + adversarial() + " --out " + out("m"));
  EXPECT_EQ(ok.status, 0) << ok.output;
}

TEST_F(Cli, AlphaValidation) {
  EXPECT_NE(run("run --method acd --alpha 0.5 " + common() + " --out " + out("x")).status, 0);
  EXPECT_NE(run("run --method micd-d --alpha 0.5 " + common() + adversarial() + " --out " + out("x")).status, 0);
  EXPECT_NE(run("run --method fixed " + common() + " --out " + out("x")).status, 0);
  EXPECT_EQ(run("run --method fixed --alpha 0.3 " + common() + " --out " + out("x")).status, 0);
  EXPECT_EQ(run("run --method cad --alpha 0.5 " + common() + " --out " + out("x")).status, 0);
  EXPECT_NE(run("run --method beam " + common()).status, 0);
}

TEST_F(Cli, BackendErrors) {
  EXPECT_NE(run("run --method acd --data " + (kData / "toy/dataset.jsonl").string() + " --backend toy --out " + out("x")).status, 0);
  const auto o = run("run --method acd --data " + (kData / "toy/dataset.jsonl").string() +
                     " --backend remote --remote-url http://127.0.0.1:1 --out " + out("x"));
  EXPECT_NE(o.status, 0);
  EXPECT_NE(o.output.find("unreachable"), std::string::npos) << o.output;
  EXPECT_FALSE(fs::exists(dir_ / "x/summary.json"));
}

TEST_F(Cli, SweepShapeAndIdentities) {
  const auto o = run("sweep " + common() + " --alphas 0,0.5,1 --out " + out("sw"));
  ASSERT_EQ(o.status, 0) << o.output;
  std::istringstream csv(slurp(dir_ / "sw/sweep.csv"));
  std::vector<std::string> lines;
  for (std::string l; std::getline(csv, l);) lines.push_back(l);
  ASSERT_EQ(lines.size(), 5u);
  EXPECT_EQ(lines[0], "method,alpha,em_all,em_gold,em_noisy");
  EXPECT_EQ(lines[4].rfind("acd,,", 0), 0u);
  ASSERT_EQ(run("run --method reg-cls " + common() + " --out " + out("cls")).status, 0);
  ASSERT_EQ(run("run --method reg-opn " + common() + " --out " + out("opn")).status, 0);
  EXPECT_EQ(read_json(dir_ / "sw/summary_alpha_0.00.json")["em_all"], read_json(dir_ / "cls/summary.json")["em_all"]);
  EXPECT_EQ(read_json(dir_ / "sw/summary_alpha_1.00.json")["em_all"], read_json(dir_ / "opn/summary.json")["em_all"]);
  EXPECT_NE(run("sweep " + common() + " --alphas , --out " + out("sw2")).status, 0);
  EXPECT_NE(run("sweep " + common() + " --alphas 0,1.5 --out " + out("sw3")).status, 0);
}

TEST_F(Cli, AurocTable) {
  ASSERT_EQ(run("run --method acd " + common() + " --out " + out("acd")).status, 0);
  ASSERT_EQ(run("run --method micd-d " + common() + adversarial() + " --out " + out("micd")).status, 0);
  const auto o = run("auroc --records " + out("acd") + "/records.jsonl --records " + out("micd") + "/records.jsonl");
  ASSERT_EQ(o.status, 0) << o.output;
  for (const char* s : {"Max", "Avg.", "First", "acd", "micd-d"}) EXPECT_NE(o.output.find(s), std::string::npos) << s;
}

TEST_F(Cli, AurocSingleClassIsUndefined) {
  // Only Known-noisy examples survive filtering.
  ASSERT_EQ(run("gen-toy --n 30 --known 1 --gold 0 --out " + out("kn")).status, 0);
  const std::string c = "--data " + out("kn") + "/dataset.jsonl --toy-config " + out("kn") + "/toy_config.json";
  ASSERT_EQ(run("run --method acd " + c + " --out " + out("r")).status, 0);
  const auto o = run("auroc --records " + out("r") + "/records.jsonl");
  EXPECT_NE(o.status, 0);
  EXPECT_NE(o.output.find("undefined"), std::string::npos) << o.output;
}

TEST_F(Cli, TraceColumns) {
  const auto acd = run("trace --method acd " + common() + " --example-id toy-0001");
  ASSERT_EQ(acd.status, 0) << acd.output;
  EXPECT_NE(acd.output.find("alpha"), std::string::npos);
  EXPECT_NE(acd.output.find("H(Y_t^c)"), std::string::npos);
  EXPECT_NE(acd.output.find("top-5 closed"), std::string::npos);
  const auto cls = run("trace --method reg-cls " + common() + " --example-id toy-0001");
  ASSERT_EQ(cls.status, 0) << cls.output;
  EXPECT_EQ(cls.output.find("alpha"), std::string::npos);
  EXPECT_EQ(cls.output.find("H(Y_t^c)"), std::string::npos);
  EXPECT_NE(run("trace --method acd " + common() + " --example-id missing").status, 0);
}

TEST_F(Cli, TraceKnownNoisyFavorsClosedBook) {
  // toy-0003 is a known question paired with an irrelevant passage.
  const auto o = run("trace --method acd " + common() + " --example-id toy-0003");
  ASSERT_EQ(o.status, 0) << o.output;
  std::istringstream in(o.output);
  std::string line;
  while (std::getline(in, line) && line.rfind("---", 0) != 0) {
  }
  ASSERT_TRUE(std::getline(in, line));
  std::istringstream row(line);
  int t = -1;
  double h_closed = 0, h_open = 0, alpha = 1;
  row >> t >> h_closed >> h_open >> alpha;
  EXPECT_EQ(t, 0);
  EXPECT_LT(alpha, 0.5);
  EXPECT_LT(h_closed, h_open);
  EXPECT_NE(o.output.find("em: correct"), std::string::npos);
}

TEST_F(Cli, RecordsByteIdenticalAcrossRunsAndWorkers) {
  ASSERT_EQ(run("run --method acd " + common() + " --workers 1 --out " + out("a")).status, 0);
  ASSERT_EQ(run("run --method acd " + common() + " --workers 4 --out " + out("b")).status, 0);
  ASSERT_EQ(run("run --method acd " + common() + " --workers 4 --out " + out("c")).status, 0);
  const auto a = slurp(dir_ / "a/records.jsonl");
  EXPECT_FALSE(a.empty());
  EXPECT_EQ(a, slurp(dir_ / "b/records.jsonl"));
  EXPECT_EQ(a, slurp(dir_ / "c/records.jsonl"));
}

TEST_F(Cli, ClosedRecordsReuse) {
  ASSERT_EQ(run("run --method reg-cls " + common() + " --out " + out("cls")).status, 0);
  ASSERT_EQ(run("run --method acd " + common() + " --out " + out("a")).status, 0);
  ASSERT_EQ(run("run --method acd " + common() + " --closed-records " + out("cls") + "/records.jsonl --out " + out("b")).status, 0);
  EXPECT_EQ(slurp(dir_ / "a/summary.json"), slurp(dir_ / "b/summary.json"));
}

TEST_F(Cli, GenToyDeterministic) {
  ASSERT_EQ(run("gen-toy --out " + out("g1")).status, 0);
  ASSERT_EQ(run("gen-toy --out " + out("g2")).status, 0);
  for (const char* f : {"dataset.jsonl", "fewshots.jsonl", "toy_config.json", "adversarial_context.txt"}) {
    EXPECT_EQ(slurp(dir_ / "g1" / f), slurp(dir_ / "g2" / f)) << f;
    EXPECT_EQ(slurp(dir_ / "g1" / f), slurp(kData / "toy" / f)) << f;
  }
}

TEST_F(Cli, SwapCommand) {
  const auto o = run("swap --data " + (kData / "toy/dataset.jsonl").string() + " --out " + out("swapped.jsonl"));
  ASSERT_EQ(o.status, 0) << o.output;
  const auto ex = load_dataset(out("swapped.jsonl"));
  EXPECT_GT(ex.size(), 100u);
  for (const auto& e : ex) EXPECT_TRUE(e.swapped_context);
}

TEST_F(Cli, UsageErrors) {
  EXPECT_NE(run("").status, 0);
  EXPECT_NE(run("run").status, 0);
  EXPECT_NE(run("run --method acd --data /nonexistent.jsonl --toy-config " + (kData / "toy/toy_config.json").string()).status, 0);
}

// ---------------------------------------------------------------------------
// Harness
// ---------------------------------------------------------------------------

TEST(Harness, SweepEndpointsMatchRegularRuns) {
  ToyDatasetOptions opt;
  opt.n_examples = 60;
  const auto ds = generate_toy_dataset(opt);
  ToyBackend be(ds.world);
  harness::EvalSetup setup;
  setup.backend = &be;
  setup.fewshots = fewshots_from(ds.fewshots);
  std::vector<std::vector<RunRecord>> records;
  const std::vector<double> grid = {0.0, 1.0};
  const auto rows = harness::sweep(setup, ds.examples, grid, &records);
  ASSERT_EQ(rows.size(), 3u);
  EXPECT_FALSE(rows[2].alpha);
  const auto cls = harness::run_method(setup, ds.examples, Strategy::RegCls);
  const auto opn = harness::run_method(setup, ds.examples, Strategy::RegOpn);
  for (std::size_t i = 0; i < ds.examples.size(); ++i) {
    EXPECT_EQ(records[0][i].token_ids, cls[i].token_ids);
    EXPECT_EQ(records[1][i].token_ids, opn[i].token_ids);
  }
  EXPECT_THROW(harness::sweep(setup, ds.examples, std::vector<double>{}), InvalidInput);
}

TEST(Harness, ParallelForPropagatesErrors) {
  std::atomic<int> n{0};
  harness::parallel_for(100, 8, [&](std::size_t) { ++n; });
  EXPECT_EQ(n, 100);
  EXPECT_THROW(harness::parallel_for(100, 8,
                                     [](std::size_t i) {
                                       if (i == 37) throw BackendError("boom");
                                     }),
               BackendError);
}

TEST(Harness, KnowledgeLabelsFromClosedBook) {
  const auto ds = generate_toy_dataset({});
  ToyBackend be(ds.world);
  harness::EvalSetup setup;
  setup.backend = &be;
  setup.fewshots = fewshots_from(ds.fewshots);
  const auto run = harness::evaluate(setup, ds.examples, Strategy::Acd);
  ASSERT_EQ(run.records.size(), ds.examples.size());
  for (std::size_t i = 0; i < ds.examples.size(); ++i) {
    ASSERT_TRUE(run.records[i].knowledge_label);
    const bool known = ds.examples[i].meta["known"].get<bool>();
    EXPECT_EQ(*run.records[i].knowledge_label == KnowledgeLabel::Known, known) << ds.examples[i].id;
  }
  // mean first-step alpha is higher on Unknown-gold than on Known-noisy
  double kn = 0, ug = 0;
  int nkn = 0, nug = 0;
  for (const auto& r : run.records) {
    const bool known = *r.knowledge_label == KnowledgeLabel::Known;
    if (known && r.context_label == ContextLabel::Noisy) kn += r.alpha_stats->first, ++nkn;
    if (!known && r.context_label == ContextLabel::Gold) ug += r.alpha_stats->first, ++nug;
  }
  EXPECT_GT(ug / nug, kn / nkn);
}
