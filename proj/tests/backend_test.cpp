// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <memory>
#include <thread>

#include <gtest/gtest.h>
#include <httplib.h>
#include <nlohmann/json.hpp>

#include "acd/logit_server.hpp"
#include "acd/remote_backend.hpp"
#include "acd/toy_backend.hpp"
#include "support.hpp"

using namespace acd;
using acd::fixtures::closed_prompt;
using acd::fixtures::open_prompt;
using acd::fixtures::small_world;

namespace {

double entropy_of(const LogitVector& l) { return numerics::entropy(numerics::softmax(l)); }

TokenId id_of(const LogitBackend& be, const std::string& word) { return be.tokenize(word).at(0); }

}  // namespace

// ---------------------------------------------------------------------------
// Toy model semantics
// ---------------------------------------------------------------------------

TEST(ToyBackend, ModelInfo) {
  ToyBackend be(small_world());
  const auto v = be.model_info();
  EXPECT_EQ(v.size, 64u);
  EXPECT_EQ(v.eos_id, 0);
  EXPECT_EQ(v.newline_id, 1);
  EXPECT_EQ(v, be.model_info());
}

TEST(ToyBackend, TokenizeRoundTrip) {
  ToyBackend be(small_world());
  const auto ids = be.tokenize("paris");
  ASSERT_EQ(ids.size(), 1u);
  EXPECT_EQ(be.detokenize(ids), "paris");
  EXPECT_TRUE(be.tokenize("").empty());
  EXPECT_EQ(be.detokenize(be.tokenize("Moira Kelly")), "Moira Kelly");
  const std::string prompt = closed_prompt("who is the mayor of Lorne ?");
  EXPECT_EQ(be.detokenize(be.tokenize(prompt)), prompt);
  EXPECT_THROW(be.tokenize("paris london"), TokenizationError);
}

TEST(ToyBackend, RejectsBadPrefixes) {
  ToyBackend be(small_world());
  EXPECT_THROW(be.next_logits({{}}), InvalidInput);
  EXPECT_THROW(be.next_logits({{3, 64}}), InvalidInput);
  EXPECT_THROW(be.next_logits({{-1}}), InvalidInput);
  EXPECT_THROW(be.detokenize({99}), InvalidInput);
}

TEST(ToyBackend, KnownQuestionClosedBook) {
  ToyBackend be(small_world());
  const auto prompt = be.tokenize(closed_prompt("who is the mayor of Lorne ?"));
  const auto l = be.next_logits({prompt}).at(0);
  EXPECT_EQ(numerics::argmax(l.values), id_of(be, "Moira"));
  const auto d = numerics::softmax(l);
  // Intended token carries (kappa + eps) / (1 + V eps).
  EXPECT_NEAR(d[static_cast<std::size_t>(id_of(be, "Moira"))], (0.95 + 1e-6) / (1.0 + 64e-6), 1e-12);

  auto next = prompt;
  next.push_back(id_of(be, "Moira"));
  EXPECT_EQ(numerics::argmax(be.next_logits({next})[0].values), id_of(be, "Kelly"));
  next.push_back(id_of(be, "Kelly"));
  EXPECT_EQ(numerics::argmax(be.next_logits({next})[0].values), 0);  // answer exhausted: eos
}

TEST(ToyBackend, DivergedGenerationTargetsEos) {
  ToyBackend be(small_world());
  auto prompt = be.tokenize(closed_prompt("who is the mayor of Lorne ?"));
  prompt.push_back(id_of(be, "Whoopi"));
  EXPECT_EQ(numerics::argmax(be.next_logits({prompt})[0].values), 0);
}

TEST(ToyBackend, ContextEntropyBehavior) {
  ToyBackend be(small_world());
  // Known question, irrelevant context: the context raises uncertainty.
  const auto closed_known = be.next_logits({be.tokenize(closed_prompt("who is the mayor of Lorne ?"))})[0];
  const auto open_noisy = be.next_logits(
      {be.tokenize(open_prompt("Whoopi Goldberg is the author of Lorne .", "who is the mayor of Lorne ?"))})[0];
  EXPECT_GT(entropy_of(open_noisy), entropy_of(closed_known));
  EXPECT_EQ(numerics::argmax(open_noisy.values), id_of(be, "Whoopi"));

  // Unknown question, relevant context: the context lowers uncertainty.
  const auto closed_unknown = be.next_logits({be.tokenize(closed_prompt("who is the author of Keld ?"))})[0];
  const auto open_gold = be.next_logits(
      {be.tokenize(open_prompt("Whoopi Goldberg is the author of Keld .", "who is the author of Keld ?"))})[0];
  EXPECT_LT(entropy_of(open_gold), entropy_of(closed_unknown));
}

TEST(ToyBackend, UnrecognizedOrSilentContextIsUniform) {
  ToyBackend be(small_world());
  const double ln_v = std::log(64.0);
  const auto silent = be.next_logits(
      {be.tokenize(open_prompt("paris is the author of Keld .", "who is the author of Keld ?"))})[0];
  EXPECT_NEAR(entropy_of(silent), ln_v, 1e-12);
  const auto unknown_ctx =
      be.next_logits({be.tokenize(open_prompt("Moira is the mayor of Keld .", "who is the author of Keld ?"))})[0];
  EXPECT_NEAR(entropy_of(unknown_ctx), ln_v, 1e-12);
  const auto no_question = be.next_logits({be.tokenize("paris is")})[0];
  EXPECT_NEAR(entropy_of(no_question), ln_v, 1e-12);
}

TEST(ToyBackend, UsesLastQuestionBlock) {
  ToyBackend be(small_world());
  const std::string prompt =
      "Answer the following questions:\n\nQuestion: who is the author of Keld ?\nAnswer: Whoopi Goldberg\n\n"
      "Question: who is the mayor of Lorne ?\nAnswer:";
  EXPECT_EQ(numerics::argmax(be.next_logits({be.tokenize(prompt)})[0].values), id_of(be, "Moira"));
}

TEST(ToyBackend, ConfigValidation) {
  auto c = small_world();
  c.knowledge[0].confidence = 1.0;
  EXPECT_THROW(ToyBackend{c}, ValidationError);
  c = small_world();
  c.contexts[0].relevance = 1.5;
  EXPECT_THROW(ToyBackend{c}, ValidationError);
  c = small_world();
  c.epsilon = 0.0;
  EXPECT_THROW(ToyBackend{c}, ValidationError);
  c = small_world();
  c.tokens.push_back("paris");
  EXPECT_THROW(ToyBackend{c}, ValidationError);
  c = small_world();
  c.questions[0].answer = "Zorro";
  EXPECT_THROW(ToyBackend{c}, ValidationError);
  c = small_world();
  c.eos_id = 64;
  EXPECT_THROW(ToyBackend{c}, ValidationError);
  c = small_world();
  c.tokens = {"</s>"};
  EXPECT_THROW(ToyBackend{c}, ValidationError);
}

TEST(ToyBackend, ConfigJsonRoundTrip) {
  const auto c = small_world();
  const nlohmann::json j = c;
  const auto back = j.get<ToyWorldConfig>();
  ToyBackend a(c), b(back);
  const auto prompt = a.tokenize(closed_prompt("who is the mayor of Lorne ?"));
  EXPECT_EQ(a.next_logits({prompt}), b.next_logits({prompt}));
  EXPECT_EQ(a.model_info(), b.model_info());
}

// ---------------------------------------------------------------------------
// Conformance suite shared by the in-process toy backend and the HTTP client
// ---------------------------------------------------------------------------

class Fixture {
 public:
  virtual ~Fixture() = default;
  virtual const LogitBackend& backend() = 0;
};

class ToyFixture final : public Fixture {
 public:
  ToyFixture() : toy_(small_world()) {}
  const LogitBackend& backend() override { return toy_; }

 private:
  ToyBackend toy_;
};

class RemoteFixture final : public Fixture {
 public:
  RemoteFixture() : toy_(small_world()), server_(toy_) {
    const int port = server_.start_background();
    remote_ = std::make_unique<RemoteBackend>("http://127.0.0.1:" + std::to_string(port));
  }
  const LogitBackend& backend() override { return *remote_; }

 private:
  ToyBackend toy_;
  LogitServer server_;
  std::unique_ptr<RemoteBackend> remote_;
};

class Conformance : public ::testing::TestWithParam<std::string> {
 protected:
  void SetUp() override {
    if (GetParam() == "toy") {
      fixture_ = std::make_unique<ToyFixture>();
    } else {
      fixture_ = std::make_unique<RemoteFixture>();
    }
  }
  const LogitBackend& be() { return fixture_->backend(); }
  std::unique_ptr<Fixture> fixture_;
};

TEST_P(Conformance, ModelInfoStable) {
  const auto a = be().model_info();
  const auto b = be().model_info();
  EXPECT_EQ(a.size, 64u);
  EXPECT_EQ(a.eos_id, 0);
  EXPECT_EQ(a.newline_id, 1);
  EXPECT_EQ(a.size, b.size);
  EXPECT_EQ(a.eos_id, b.eos_id);
  EXPECT_EQ(a.newline_id, b.newline_id);
  EXPECT_EQ(a.model_name, b.model_name);
}

TEST_P(Conformance, TokenizeDetokenize) {
  const auto ids = be().tokenize("paris");
  ASSERT_EQ(ids.size(), 1u);
  EXPECT_EQ(be().detokenize(ids), "paris");
  EXPECT_TRUE(be().tokenize("").empty());
  const std::string prompt = open_prompt("Whoopi Goldberg is the author of Keld .", "who is the author of Keld ?");
  EXPECT_EQ(be().detokenize(be().tokenize(prompt)), prompt);
}

TEST_P(Conformance, UnknownWordFails) {
  if (GetParam() == "toy") {
    EXPECT_THROW(be().tokenize("zebra"), TokenizationError);
  } else {
    EXPECT_THROW(be().tokenize("zebra"), BackendError);
  }
}

TEST_P(Conformance, LogitsShapeOrderAndDeterminism) {
  const auto known = be().tokenize(closed_prompt("who is the mayor of Lorne ?"));
  const auto unknown = be().tokenize(closed_prompt("who is the author of Keld ?"));
  const auto batch = be().next_logits({known, unknown});
  ASSERT_EQ(batch.size(), 2u);
  for (const auto& l : batch) EXPECT_EQ(l.size(), 64u);
  EXPECT_EQ(batch[0], be().next_logits({known})[0]);
  EXPECT_EQ(batch[1], be().next_logits({unknown})[0]);
  EXPECT_EQ(be().next_logits({unknown, known})[1], batch[0]);
  EXPECT_EQ(be().next_logits({known}), be().next_logits({known}));
  EXPECT_EQ(numerics::argmax(batch[0].values), be().tokenize("Moira")[0]);
}

TEST_P(Conformance, InvalidPrefix) {
  EXPECT_THROW(be().next_logits({{}}), InvalidInput);
  EXPECT_THROW(be().next_logits({{2, 1000}}), InvalidInput);
}

INSTANTIATE_TEST_SUITE_P(Backends, Conformance, ::testing::Values("toy", "remote"),
                         [](const auto& info) { return info.param; });

TEST(Remote, MatchesToyBitForBit) {
  ToyBackend toy(small_world());
  LogitServer server(toy);
  const int port = server.start_background();
  RemoteBackend remote("http://127.0.0.1:" + std::to_string(port));
  const auto prompt = toy.tokenize(open_prompt("Whoopi Goldberg is the author of Lorne .", "who is the mayor of Lorne ?"));
  EXPECT_EQ(remote.next_logits({prompt}), toy.next_logits({prompt}));
}

TEST(Remote, UnreachableServer) {
  RemoteBackend remote("http://127.0.0.1:1", 2);
  EXPECT_THROW(remote.model_info(), ConnectionError);
  EXPECT_THROW(remote.tokenize("paris"), ConnectionError);
}

TEST(Server, StatusCodes) {
  ToyBackend toy(small_world());
  LogitServer server(toy);
  const int port = server.start_background();
  httplib::Client client("127.0.0.1", port);

  auto res = client.Post("/v1/logits", "not json", "application/json");
  ASSERT_TRUE(res);
  EXPECT_EQ(res->status, 400);
  res = client.Post("/v1/logits", R"({"wrong": 1})", "application/json");
  EXPECT_EQ(res->status, 400);
  res = client.Post("/v1/logits", R"({"prefixes": [[3, 999]]})", "application/json");
  EXPECT_EQ(res->status, 422);
  res = client.Post("/v1/tokenize", R"({"text": "zebra"})", "application/json");
  EXPECT_EQ(res->status, 422);
  EXPECT_NE(nlohmann::json::parse(res->body)["error"].get<std::string>().find("zebra"), std::string::npos);

  res = client.Get("/v1/model_info");
  ASSERT_EQ(res->status, 200);
  const auto info = nlohmann::json::parse(res->body);
  EXPECT_EQ(info["vocab_size"], 64);
  EXPECT_EQ(info["eos_id"], 0);
  EXPECT_EQ(info["newline_id"], 1);
  EXPECT_EQ(info["model_name"], "toy-world");
}

TEST(Remote, ServerErrorCarriesMessage) {
  ToyBackend toy(small_world());
  LogitServer server(toy);
  const int port = server.start_background();
  RemoteBackend remote("http://127.0.0.1:" + std::to_string(port));
  try {
    remote.tokenize("zebra");
    FAIL() << "expected BackendError";
  } catch (const BackendError& e) {
    EXPECT_NE(std::string(e.what()).find("zebra"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("422"), std::string::npos);
  }
}

TEST(Remote, RejectsMalformedResponses) {
  httplib::Server fake;
  fake.Get("/v1/model_info", [](const httplib::Request&, httplib::Response& res) {
    res.set_content(R"({"vocab_size": 4, "eos_id": 0, "newline_id": null, "model_name": "fake"})", "application/json");
  });
  fake.Post("/v1/logits", [](const httplib::Request&, httplib::Response& res) {
    res.set_content(R"({"logits": [[0.0, 1.0, 2.0]]})", "application/json");
  });
  const int port = fake.bind_to_any_port("127.0.0.1");
  std::thread t([&] { fake.listen_after_bind(); });
  fake.wait_until_ready();
  {
    RemoteBackend remote("http://127.0.0.1:" + std::to_string(port));
    EXPECT_EQ(remote.model_info().size, 4u);
    EXPECT_FALSE(remote.model_info().newline_id.has_value());
    EXPECT_THROW(remote.next_logits({{1}}), BackendError);       // wrong row length
    EXPECT_THROW(remote.next_logits({{1}, {2}}), BackendError);  // wrong row count
  }
  fake.stop();
  t.join();
}

TEST(CountingBackend, CountsRequestsAndPrefixes) {
  ToyBackend toy(small_world());
  CountingBackend counter(toy);
  counter.next_logits({{2}, {3}, {4}});
  counter.next_logits({{2}});
  EXPECT_EQ(counter.requests(), 2u);
  EXPECT_EQ(counter.prefixes(), 4u);
  counter.reset();
  EXPECT_EQ(counter.requests(), 0u);
}
