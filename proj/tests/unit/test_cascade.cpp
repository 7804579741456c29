#include <doctest.h>

#include "dkaf/cascade/cascade.hpp"
#include "dkaf/core/error.hpp"
#include "world.hpp"

using namespace dkaf;
using namespace dkaf::testing;
using cascade::Stage;

namespace {

const Ontology& onto() { return desk_world().ontology; }
const DomainProfile& profile() { return desk_world().profile; }

Dialog three_suggestions() {
  return make_dialog("d1",
                     {{Speaker::user, "i want thai food in paris in a cheap price range"},
                      {Speaker::agent, "api_call thai paris cheap"},
                      {Speaker::user, "<silence>"},
                      {Speaker::agent, "what do you think of this option: resto_02"},
                      {Speaker::user, "no"},
                      {Speaker::agent, "what do you think of this option: resto_09"},
                      {Speaker::user, "no"},
                      {Speaker::agent, "what do you think of this option: resto_03"},
                      {Speaker::user, "let's do it"},
                      {Speaker::agent, "great"}},
                     onto());
}

}  // namespace

TEST_CASE("orders parse, print and enforce completion after insertion") {
  CHECK(cascade::parse_order("ri,rd,rc") == cascade::Order{Stage::ri, Stage::rd, Stage::rc});
  CHECK(cascade::to_string(cascade::parse_order("rd,ri,rc")) == "rd,ri,rc");
  CHECK_THROWS_AS(cascade::parse_order("rc,ri,rd"), InvalidInput);
  CHECK_THROWS_AS(cascade::parse_order("ri,ri,rc"), InvalidInput);
  CHECK_THROWS_AS(cascade::parse_order("ri,rd"), InvalidInput);
  CHECK_THROWS_AS(cascade::parse_order("ri,rd,xx"), InvalidInput);
  REQUIRE(cascade::supported_orders().size() == 3);
  CHECK(cascade::to_string(cascade::supported_orders()[0]) == "ri,rd,rc");
  for (const auto& o : cascade::supported_orders()) CHECK(cascade::parse_order(cascade::to_string(o)) == o);
}

TEST_CASE("rule completion picks the largest value between its suggested neighbours") {
  KnowledgeBase kb;
  kb.insert(restaurant("resto_02", "thai", "paris", "cheap", "8stars"));
  kb.insert(restaurant("resto_03", "thai", "paris", "cheap", "4stars"));
  Row r = restaurant("resto_09", "thai", "paris", "cheap", "1stars");
  r.fields.erase("rating");
  kb.insert(r);
  const auto out = cascade::rule_completions(three_suggestions(), kb, {"resto_09"}, onto(), profile());
  REQUIRE(out.size() == 1);
  CHECK(out[0].head.value == "resto_09");
  CHECK(out[0].relation == "rating");
  CHECK(out[0].tail.value == "7stars");
  // Rows outside the requested list are left alone.
  CHECK(cascade::rule_completions(three_suggestions(), kb, {}, onto(), profile()).empty());
}

TEST_CASE("rule deletion drops view rows with no mentioned unique entity") {
  KnowledgeBase kb;
  kb.insert(restaurant("resto_02", "thai", "paris", "cheap", "8stars"));
  kb.insert(restaurant("resto_03", "thai", "paris", "cheap", "4stars"));
  kb.insert(restaurant("resto_05", "thai", "paris", "cheap", "6stars"));
  kb.insert(restaurant("resto_06", "italian", "rome", "cheap", "6stars"));
  const auto del = cascade::rule_deletions(three_suggestions(), kb, onto(), profile());
  CHECK(del == std::vector<std::string>{"resto_05"});
}

TEST_CASE("rule insertion builds the mentioned row from nearby entities") {
  KnowledgeBase kb;
  kb.insert(restaurant("resto_02", "thai", "paris", "cheap", "8stars"));
  kb.insert(restaurant("resto_03", "italian", "paris", "cheap", "4stars"));
  const auto ins = cascade::rule_insertions(three_suggestions(), kb, onto(), profile());
  REQUIRE_FALSE(ins.empty());
  for (const auto& t : ins) {
    CHECK(t.head.value == "resto_09");
    CHECK_FALSE(onto().require_relation(t.relation).latent);
  }
}

TEST_CASE("rule arbitration removes every inconsistency and traces replay") {
  const auto& w = desk_world();
  auto s = simulate_desk(80, 1, 4);
  const auto traces = cascade::rule_arbitrate(s.train.records, w.ontology, w.profile);
  REQUIRE(traces.size() == s.train.records.size());
  std::vector<KnowledgeBase> kbs;
  const auto order = cascade::parse_order("ri,rd,rc");
  for (std::size_t i = 0; i < traces.size(); ++i) {
    CHECK(cascade::replay(traces[i], *s.train.records[i].train_kb, order) == traces[i].result_kb);
    CHECK(cascade::ArbitrationTrace::from_json(traces[i].to_json()).result_kb == traces[i].result_kb);
    kbs.push_back(traces[i].result_kb);
  }
  CHECK(inconsistency_rate(s.train.records, w.ontology, w.profile) > 0.0);
  CHECK(inconsistency_rate(s.train.records, kbs, w.ontology, w.profile) == 0.0);
}

TEST_CASE("edit counts sum over traces") {
  cascade::ArbitrationTrace a, b;
  a.inserted = {{{"resto_09", "restaurant"}, "cuisine", {"thai", "cuisine"}},
                {{"resto_09", "restaurant"}, "location", {"paris", "location"}}};
  a.deleted = {restaurant("resto_02", "thai", "paris", "cheap", "8stars")};
  b.deleted = {restaurant("resto_03", "thai", "paris", "cheap", "8stars")};
  b.completed = {{{"resto_09", "restaurant"}, "rating", {"3stars", "rating"}}};
  const auto c = cascade::count_edits({a, b});
  CHECK(c.insertions == 1);
  CHECK(c.deletions == 2);
  CHECK(c.completions == 1);
}

TEST_CASE("null models make arbitration the identity") {
  const auto& w = desk_world();
  auto s = simulate_desk(10, 1, 2);
  for (const auto& order : cascade::supported_orders()) {
    const auto traces = cascade::arbitrate(s.train.records, {}, order, w.ontology, w.profile);
    for (std::size_t i = 0; i < traces.size(); ++i) {
      CHECK(traces[i].result_kb.rows() == s.train.records[i].train_kb->rows());
      CHECK(traces[i].inserted.empty());
      CHECK(traces[i].deleted.empty());
    }
  }
}
