#include <doctest.h>

#include <set>

#include "dkaf/core/error.hpp"
#include "dkaf/core/rng.hpp"
#include "metric_fixtures.hpp"

using namespace dkaf;
using namespace dkaf::testing;

namespace {

std::set<std::string> entity_values() {
  std::set<std::string> out;
  for (const auto& e : desk_world().ontology.entities()) out.insert(e.value);
  return out;
}

}  // namespace

TEST_CASE("entity F1 of the hand fixture is 4/7") {
  const auto s = eval::entity_f1(entity_f1_four_sevenths(), entity_values());
  CHECK(s.entity.tp == 2);
  CHECK(s.entity.fp == 1);
  CHECK(s.entity.fn == 2);
  CHECK(s.entity.f1() == doctest::Approx(kFourSevenths).epsilon(1e-12));
}

TEST_CASE("KB entity F1 ignores context and non-KB entities") {
  eval::EntityTurn t;
  t.prediction = "resto_02 resto_03 paris";
  t.gold_entities = {"resto_02", "resto_04", "paris"};
  t.context = {"paris"};
  t.kb_values = {"resto_02", "resto_03", "paris"};
  const auto s = eval::entity_f1({t}, entity_values());
  // KB side: predicted {resto_02, resto_03}, gold {resto_02}.
  CHECK(s.kb_entity.tp == 1);
  CHECK(s.kb_entity.fp == 1);
  CHECK(s.kb_entity.fn == 0);
  CHECK(s.entity.tp == 2);
}

TEST_CASE("BLEU matches hand counts") {
  CHECK(eval::bleu(bleu_predictions(), bleu_references()) == doctest::Approx(bleu_hand_count()).epsilon(1e-12));
  CHECK(eval::bleu({"the cat"}, bleu_references()) == doctest::Approx(bleu_short_hand_count()).epsilon(1e-12));
  CHECK(eval::bleu({"the cat is on the mat"}, bleu_references()) == doctest::Approx(100.0));
  CHECK(eval::bleu({"dog"}, bleu_references()) == 0.0);
  CHECK_THROWS_AS(eval::bleu({"a"}, {"a", "b"}), InvalidInput);
}

TEST_CASE("completion order check accepts values between the suggested neighbours") {
  std::vector<CorpusRecord> recs(1);
  recs[0].dialog = rc_order_dialog();
  const auto& w = desk_world();
  for (int v = 1; v <= 8; ++v) {
    const auto acc = eval::rc_accuracy({rc_order_trace(std::to_string(v) + "stars")}, recs, w.ontology, w.profile);
    CHECK(acc.total == 1);
    CHECK(acc.correct == (v >= 4 && v <= 8 ? 1u : 0u));
  }
  CHECK(eval::RCAccuracy{}.accuracy() == 1.0);
}

TEST_CASE("response and dialog accuracy") {
  eval::DialogResponses gold{{"a", "b"}, {"c"}}, pred{{"a", "x"}, {"c"}};
  CHECK(eval::response_accuracy(pred, gold) == doctest::Approx(2.0 / 3.0));
  CHECK(eval::dialog_accuracy(pred, gold) == doctest::Approx(0.5));
  CHECK_THROWS_AS(eval::response_accuracy({{"a"}}, gold), InvalidInput);
}

TEST_CASE("set macro F1 agrees with a direct per-dialog computation") {
  Rng rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<std::set<std::string>> p(6), g(6);
    for (int i = 0; i < 6; ++i)
      for (int k = 0; k < 5; ++k) {
        if (rng.bernoulli(0.3)) p[i].insert("r" + std::to_string(k));
        if (rng.bernoulli(0.3)) g[i].insert("r" + std::to_string(k));
      }
    double f = 0;
    for (int i = 0; i < 6; ++i) {
      double inter = 0;
      for (const auto& x : p[i]) inter += g[i].count(x);
      if (p[i].empty() && g[i].empty()) f += 1;
      else if (!p[i].empty() && !g[i].empty() && inter > 0) {
        const double pr = inter / p[i].size(), rc = inter / g[i].size();
        f += 2 * pr * rc / (pr + rc);
      }
    }
    CHECK(eval::set_macro_f1(p, g).macro_f1 == doctest::Approx(f / 6));
    // Invariant under reordering the dialogs.
    std::reverse(p.begin(), p.end());
    std::reverse(g.begin(), g.end());
    CHECK(eval::set_macro_f1(p, g).macro_f1 == doctest::Approx(f / 6));
  }
}

TEST_CASE("metric reports round-trip and omit absent fields") {
  eval::MetricReport r;
  r.split = "test";
  r.dialog_accuracy = 0.5;
  r.rd = eval::SetF1{0.5, 0.4, 0.6, 3, 4, 2};
  const auto j = r.to_json();
  CHECK_FALSE(j.contains("bleu"));
  CHECK(eval::MetricReport::from_json(j).to_json() == j);
}
