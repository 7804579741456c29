#include <doctest.h>

#include <set>

#include "dkaf/core/error.hpp"
#include "dkaf/core/judge.hpp"
#include "dkaf/supervision/distant.hpp"
#include "world.hpp"

using namespace dkaf;
using namespace dkaf::testing;

namespace {

std::set<std::string> inconsistent_ids(const SimOutput& s) {
  const auto& w = desk_world();
  std::set<std::string> out;
  for (const auto& r : s.train.records)
    if (!consistency_judge(r, *r.train_kb, w.ontology, w.profile)) out.insert(r.dialog.id);
  return out;
}

// Independent label oracle: membership in the triple set and the head set of K_T.
Label oracle_label(const Triple& t, const std::set<Triple>& triples, const std::set<std::string>& heads) {
  if (triples.count(t)) return Label::positive;
  return heads.count(t.head.value) ? Label::negative : Label::infer;
}

}  // namespace

TEST_CASE("simulation is deterministic under a fixed seed") {
  auto a = simulate_desk(30, 10, 11), b = simulate_desk(30, 10, 11);
  REQUIRE(a.train.records.size() == b.train.records.size());
  for (std::size_t i = 0; i < a.train.records.size(); ++i) {
    CHECK(a.train.records[i].dialog == b.train.records[i].dialog);
    CHECK(*a.train.records[i].gold_kb == *b.train.records[i].gold_kb);
  }
  CHECK(*a.kb_train == *b.kb_train);
}

TEST_CASE("every dialog is consistent with its own snapshot") {
  const auto& w = desk_world();
  auto s = simulate_desk(60, 20, 5);
  for (const auto& r : s.train.records) CHECK(consistency_judge(r.dialog, *r.gold_kb, *r.gold_kb, w.ontology, w.profile));
  CHECK(inconsistency_rate(s.test.records, w.ontology, w.profile) == 0.0);
}

TEST_CASE("train dialogs share K_T, the last snapshot") {
  auto s = simulate_desk(20, 5, 2);
  CHECK(s.kb_train->id() == KBTimeline::snapshot_id(s.timeline.last_tick()));
  for (const auto& r : s.train.records) {
    CHECK(r.train_kb == s.kb_train);
    CHECK(r.dialog.timestamp >= 0);
    CHECK(r.dialog.timestamp < s.timeline.horizon());
    CHECK(r.gold_kb_id == KBTimeline::snapshot_id(r.dialog.timestamp));
  }
}

TEST_CASE("default desk corpus lands near the target inconsistency level") {
  const auto& w = desk_world();
  auto s = simulate_desk(200, 10, 4);
  const double rate = inconsistency_rate(s.train.records, w.ontology, w.profile);
  CHECK(rate >= 0.25);
  CHECK(rate <= 0.45);
}

TEST_CASE("inconsistent dialogs grow monotonically with the stale fraction") {
  std::set<std::string> prev;
  std::size_t prev_n = 0;
  for (double level : {0.0, 0.25, 0.5, 0.75, 1.0}) {
    auto ids = inconsistent_ids(simulate_desk(80, 5, 4, level));
    for (const auto& id : prev) CHECK(ids.count(id) == 1);
    CHECK(ids.size() >= prev_n);
    prev_n = ids.size();
    prev = ids;
  }
  CHECK(prev_n > inconsistent_ids(simulate_desk(80, 5, 4, 0.0)).size());
}

TEST_CASE("stale fraction outside [0, 1] is rejected") {
  CHECK_THROWS_AS(simulate_desk(5, 1, 4, 1.5), InvalidInput);
}

TEST_CASE("record truth sets are disjoint from the right knowledge bases") {
  const auto& w = desk_world();
  auto s = simulate_desk(100, 5, 4);
  for (const auto& r : s.train.records) {
    auto t = record_truth(r, w.ontology, w.profile);
    const auto view = dialog_kb(*r.train_kb, r.dialog, w.ontology, w.profile);
    const auto mentioned = r.dialog.mentioned_values();
    for (const auto& h : t.insert_rows) {
      CHECK_FALSE(r.train_kb->contains(h));
      CHECK(r.gold_kb->contains(h));
      CHECK(mentioned.count(h) == 1);
    }
    for (const auto& h : t.delete_rows) {
      CHECK(view.contains(h));
      CHECK_FALSE(r.gold_kb->contains(h));
    }
    CHECK(t.consistent == consistency_judge(r, *r.train_kb, w.ontology, w.profile));
  }
}

TEST_CASE("availability processes validate their parameters") {
  AvailabilityProcess p;
  p.kind = AvailabilityKind::bernoulli;
  p.p = 1.5;
  CHECK_THROWS_AS(p.validate(), InvalidInput);
}

TEST_CASE("candidate triples are typed, distinct and ordered") {
  const auto& w = desk_world();
  auto s = simulate_desk(20, 1, 3);
  for (const auto& r : s.train.records) {
    const auto ents = r.dialog.mentioned_entities();
    auto pos = [&](const Entity& e) { return std::find(ents.begin(), ents.end(), e) - ents.begin(); };
    const auto c = candidate_triples(r.dialog, w.ontology);
    for (std::size_t i = 0; i < c.size(); ++i) {
      const auto& rel = w.ontology.require_relation(c[i].relation);
      CHECK(rel.head_type == c[i].head.etype);
      CHECK(rel.tail_type == c[i].tail.etype);
      CHECK(c[i].head != c[i].tail);
      if (i > 0) {
        auto key = [&](const Triple& t) { return std::make_tuple(pos(t.head), pos(t.tail), t.relation); };
        CHECK(key(c[i - 1]) < key(c[i]));
      }
    }
  }
}

TEST_CASE("distant-supervision labels match the set-membership oracle") {
  const auto& w = desk_world();
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    auto s = simulate_desk(20, 1, seed);
    const auto triples = kb_to_triples(*s.kb_train);
    std::set<std::string> heads;
    for (const auto& [h, _] : s.kb_train->rows()) heads.insert(h);
    auto ds = build_ri_dataset(s.train.records, w.ontology);
    std::size_t total = 0;
    for (const auto& c : ds.train) {
      CHECK(c.label == oracle_label(c.triple, triples, heads));
      ++total;
    }
    for (const auto& [id, cs] : ds.infer)
      for (const auto& c : cs) {
        CHECK(oracle_label(c.triple, triples, heads) == Label::infer);
        ++total;
      }
    CHECK(total == ds.positives + ds.negatives + ds.infers);
  }
}

TEST_CASE("labeled candidates round-trip through json") {
  LabeledCandidate c{"d", {{"resto_01", "restaurant"}, "rating", {"7stars", "rating"}}, Label::negative};
  CHECK(candidate_from_json(to_json(c)) == c);
  CHECK(label_from_string(to_string(Label::infer)) == Label::infer);
  CHECK_THROWS_AS(label_from_string("maybe"), InvalidInput);
}
