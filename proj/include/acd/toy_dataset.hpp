// SPDX-License-Identifier: Apache-2.0
#pragma once

/**
 * @file toy_dataset.hpp
 * @brief Synthetic QA fixture over the toy world, labeled by quadrant.
 *
 * Each question asks "who is the <role> of <place> ?" and has a two-word
 * person as its gold answer. Every example draws two independent coins:
 *
 *  - known (p = fraction_known): the model believes the gold answer with
 *    confidence kappa_known. Otherwise it believes a wrong person, usually
 *    with diffuse confidence kappa_unknown, but with probability
 *    confident_wrong_fraction with a confident kappa_confident_wrong.
 *  - gold (p = fraction_gold): the context states the gold answer with
 *    relevance rho_gold. Otherwise it states an unrelated fact about a
 *    distractor person with relevance rho_noisy.
 *
 * The generated ToyWorldConfig realizes exactly these labels, so closed-book
 * decoding is correct iff the example is "known".
 */

#include <cstdint>
#include <cstdio>
#include <random>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "acd/dataio.hpp"
#include "acd/error.hpp"
#include "acd/toy_backend.hpp"

namespace acd {

struct ToyDatasetOptions {
  std::size_t n_examples = 400;
  double fraction_known = 0.5;
  double fraction_gold = 0.5;
  std::uint64_t seed = 7;
  std::size_t n_fewshots = 5;

  double kappa_known = 0.95;
  double kappa_unknown = 0.05;
  double kappa_confident_wrong = 0.97;
  double confident_wrong_fraction = 0.25;
  double rho_gold = 0.95;
  double rho_noisy = 0.05;
  double epsilon = 1e-6;

  std::vector<std::string> roles = {"mayor",   "governor", "founder", "captain",  "architect",
                                    "coach",   "director", "author",  "inventor", "curator"};
  std::vector<std::string> places = {
      "Avalon",   "Brindle",  "Corvath", "Dunmore",  "Eldham",   "Farrow",   "Glenrock", "Harlow",  "Islay",
      "Jarrow",   "Kestrel",  "Lorne",   "Marrow",   "Norwick",  "Oakham",   "Pellam",   "Quarry",  "Ravenna",
      "Selkirk",  "Tamsin",   "Ulverby", "Vesper",   "Wexley",   "Yarrow",   "Zennor",   "Ashby",   "Bexmoor",
      "Calder",   "Denholm",  "Eskdale", "Fenwick",  "Garth",    "Hexham",   "Ilkley",   "Keld",    "Lindow",
      "Morland",  "Nethery",  "Orrin",   "Penrith",  "Rydal"};
  std::vector<std::string> first_names = {"Moira", "Whoopi", "Michael", "Ada",   "Bruno", "Clara", "Dmitri",
                                          "Elena", "Farid",  "Greta",   "Hiro",  "Ines",  "Jonas", "Kira",
                                          "Lucas", "Mina",   "Nadia",   "Oscar", "Priya", "Quinn"};
  std::vector<std::string> last_names = {"Kelly",  "Goldberg", "Moriarty", "Tucker", "Abbott", "Brennan", "Castillo",
                                         "Dumont", "Eriksen",  "Fontaine", "Garza",  "Haddad", "Ivanova", "Jensen",
                                         "Kowal",  "Lindqvist", "Marsh",   "Novak",  "Okafor", "Petrov"};
};

struct ToyDataset {
  std::vector<QAExample> examples;
  std::vector<QAExample> fewshots;
  ToyWorldConfig world;
};

namespace detail {

/// Portable uniform draws on top of mt19937_64 (whose output is standardized).
class PortableRng {
 public:
  explicit PortableRng(std::uint64_t seed) : engine_(seed) {}
  double unit() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  std::size_t index(std::size_t n) { return static_cast<std::size_t>(unit() * static_cast<double>(n)); }
  bool coin(double p) { return unit() < p; }

 private:
  std::mt19937_64 engine_;
};

}  // namespace detail

inline ToyDataset generate_toy_dataset(const ToyDatasetOptions& opt) {
  const auto in_unit = [](double x) { return x >= 0.0 && x <= 1.0; };
  if (!in_unit(opt.fraction_known)) throw ValidationError("fraction_known", "fraction_known must lie in [0, 1]");
  if (!in_unit(opt.fraction_gold)) throw ValidationError("fraction_gold", "fraction_gold must lie in [0, 1]");
  if (!in_unit(opt.confident_wrong_fraction)) throw ValidationError("confident_wrong_fraction", "must lie in [0, 1]");
  if (opt.n_examples == 0) throw ValidationError("n_examples", "toy dataset needs at least one question");
  if (opt.roles.empty() || opt.places.empty()) throw ValidationError("roles/places", "empty question vocabulary");
  if (opt.first_names.size() * opt.last_names.size() < 3) throw ValidationError("names", "need at least three distinct people");
  const std::size_t combos = opt.roles.size() * opt.places.size();
  if (opt.n_examples + opt.n_fewshots > combos) {
    throw ValidationError("n_examples", "only " + std::to_string(combos) + " distinct questions available");
  }

  ToyWorldConfig world;
  world.epsilon = opt.epsilon;
  world.tokens = {std::string(kToyEos), std::string(kToyNewline), "Answer", "the", "following", "questions:",
                  std::string(kQuestionMarker), std::string(kAnswerMarker), std::string(kContextMarker),
                  "who", "is", "of", "?", "."};
  world.eos_id = 0;
  world.newline_id = 1;
  for (const auto* pool : {&opt.roles, &opt.places, &opt.first_names, &opt.last_names}) {
    world.tokens.insert(world.tokens.end(), pool->begin(), pool->end());
  }

  detail::PortableRng rng(opt.seed);
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  for (std::size_t r = 0; r < opt.roles.size(); ++r) {
    for (std::size_t p = 0; p < opt.places.size(); ++p) pairs.emplace_back(r, p);
  }
  for (std::size_t i = pairs.size(); i > 1; --i) std::swap(pairs[i - 1], pairs[rng.index(i)]);

  const auto question_text = [&](std::pair<std::size_t, std::size_t> rp) {
    return "who is the " + opt.roles[rp.first] + " of " + opt.places[rp.second] + " ?";
  };
  const auto fact = [&](const std::string& person, std::pair<std::size_t, std::size_t> rp) {
    return person + " is the " + opt.roles[rp.first] + " of " + opt.places[rp.second] + " .";
  };
  const auto person = [&] {
    return opt.first_names[rng.index(opt.first_names.size())] + " " + opt.last_names[rng.index(opt.last_names.size())];
  };
  const auto other_person = [&](const std::string& avoid) {
    std::string p = person();
    while (p == avoid) p = person();
    return p;
  };

  ToyDataset out;
  for (std::size_t i = 0; i < opt.n_fewshots; ++i) {
    QAExample s;
    s.id = "fewshot-" + std::to_string(i);
    s.question = question_text(pairs[i]);
    s.answers = {person()};
    out.fewshots.push_back(std::move(s));
  }

  struct Draw {
    std::pair<std::size_t, std::size_t> rp;
    std::string gold;
    bool known;
    bool gold_context;
    bool confident_wrong;
  };
  std::vector<Draw> draws;
  std::set<std::string> used_contexts;
  for (std::size_t i = 0; i < opt.n_examples; ++i) {
    Draw d{pairs[opt.n_fewshots + i], person(), rng.coin(opt.fraction_known), rng.coin(opt.fraction_gold), false};
    if (d.gold_context) used_contexts.insert(fact(d.gold, d.rp));
    draws.push_back(std::move(d));
  }

  char id[32];
  for (std::size_t i = 0; i < draws.size(); ++i) {
    auto& d = draws[i];
    std::snprintf(id, sizeof id, "toy-%04zu", i);
    const std::string qid = id;
    std::snprintf(id, sizeof id, "ctx-%04zu", i);
    const std::string cid = id;

    const std::string qtext = question_text(d.rp);
    world.questions.push_back({qid, qtext, d.gold});

    ToyBelief belief{qid, d.gold, opt.kappa_known};
    if (!d.known) {
      belief.answer = other_person(d.gold);
      d.confident_wrong = rng.coin(opt.confident_wrong_fraction);
      belief.confidence = d.confident_wrong ? opt.kappa_confident_wrong : opt.kappa_unknown;
    }
    world.knowledge.push_back(belief);

    ToyContext ctx{cid, {}, std::nullopt, 0.0};
    if (d.gold_context) {
      ctx.text = fact(d.gold, d.rp);
      ctx.answer = d.gold;
      ctx.relevance = opt.rho_gold;
    } else {
      std::string distractor;
      do {
        distractor = other_person(d.gold);
        auto rp = pairs[rng.index(pairs.size())];
        while (rp == d.rp) rp = pairs[rng.index(pairs.size())];
        ctx.text = fact(distractor, rp);
      } while (used_contexts.count(ctx.text) != 0);
      used_contexts.insert(ctx.text);
      ctx.answer = distractor;
      ctx.relevance = opt.rho_noisy;
    }
    world.contexts.push_back(ctx);

    QAExample e;
    e.id = qid;
    e.question = qtext;
    e.answers = {d.gold};
    e.context = ContextPassage{ctx.text, std::nullopt};
    const std::string quadrant = std::string(d.known ? "known" : "unknown") + "-" + (d.gold_context ? "gold" : "noisy");
    e.meta = {{"quadrant", quadrant},
              {"known", d.known},
              {"gold_context", d.gold_context},
              {"confident_wrong", d.confident_wrong},
              {"confidence", belief.confidence},
              {"relevance", ctx.relevance}};
    out.examples.push_back(std::move(e));
  }
  out.world = std::move(world);
  ToyBackend validate(out.world);  // throws on any inconsistency
  (void)validate;
  return out;
}

}  // namespace acd
