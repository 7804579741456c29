#include <doctest.h>

#include <filesystem>
#include <numeric>

#include "dkaf/arb/mapo.hpp"
#include "dkaf/arb/rc.hpp"
#include "dkaf/arb/rd.hpp"
#include "dkaf/arb/ri.hpp"
#include "dkaf/core/error.hpp"
#include "world.hpp"

using namespace dkaf;
using namespace dkaf::testing;

namespace {

struct Fixture {
  SimOutput sim = simulate_desk(10, 1, 6);
  std::vector<Dialog> dialogs;
  nn::Vocab vocab;
  std::optional<mem::MemModel> mem;

  Fixture() {
    const auto& w = desk_world();
    for (const auto& r : sim.train.records) dialogs.push_back(r.dialog);
    vocab = nn::Vocab::build(w.ontology, dialogs);
    mem::MemConfig cfg;
    cfg.blocks = tiny_blocks();
    cfg.adam.lr = 1e-2;
    mem.emplace(w.ontology, w.profile, vocab, cfg, 2);
    std::vector<mem::MemExample> data;
    for (const auto& r : sim.train.records) data.push_back({&r.dialog, r.train_kb.get()});
    mem->train(data, 2, 3);
  }

  arb::PolicyConfig policy(int epochs) const {
    arb::PolicyConfig c;
    c.blocks = tiny_blocks();
    c.adam.lr = 1e-2;
    c.epochs = epochs;
    c.batch = 4;
    return c;
  }
};

std::string tmp(const std::string& name) { return (std::filesystem::temp_directory_path() / name).string(); }

}  // namespace

TEST_CASE("sign with tolerance has a closed dead zone") {
  CHECK(arb::sign_with_tolerance(0.06, 0.05) == 1);
  CHECK(arb::sign_with_tolerance(-0.06, 0.05) == -1);
  CHECK(arb::sign_with_tolerance(0.05, 0.05) == 0);
  CHECK(arb::sign_with_tolerance(-0.05, 0.05) == 0);
  CHECK(arb::sign_with_tolerance(0.0, 0.0) == 0);
}

TEST_CASE("mapo weights mix the buffer and the on-policy expectation") {
  // pi(buffer) = 0.7 exceeds the floor, so w = 0.7.
  auto c = arb::mapo_weights({0.2, 0.3, 0.5}, {1, -1, 1}, {{0, 1.0}, {2, 1.0}}, 0.1);
  CHECK(c[0] == doctest::Approx(0.26));
  CHECK(c[1] == doctest::Approx(-0.09));
  CHECK(c[2] == doctest::Approx(0.65));
  // pi(buffer) = 0.05 is clipped up to the floor.
  c = arb::mapo_weights({0.05, 0.95}, {1, -1}, {{0, 1.0}}, 0.1);
  CHECK(c[0] == doctest::Approx(0.145));
  CHECK(c[1] == doctest::Approx(-0.855));
  // An empty buffer leaves plain expected-reward weights.
  c = arb::mapo_weights({0.4, 0.6}, {-1, 1}, {}, 0.1);
  CHECK(c[0] == doctest::Approx(-0.4));
  CHECK(c[1] == doctest::Approx(0.6));
  CHECK_THROWS_AS(arb::mapo_weights({0.5, 0.5}, {1}, {}, 0.1), InvalidInput);
  CHECK(arb::expected_reward({0.25, 0.75}, {1, -1}) == doctest::Approx(-0.5));
}

TEST_CASE("mapo buffer keeps only positive-reward actions") {
  arb::MapoBuffer b;
  b.record("s", {1, -1, 0, 1});
  b.record("s", {1, -1, 0, 1});
  CHECK(b.actions("s").size() == 2);
  CHECK(b.actions("s").count(3) == 1);
  CHECK(b.actions("t").empty());
  CHECK_FALSE(b.contains("t"));
}

TEST_CASE("deletion rewards match an exhaustive recomputation") {
  Fixture f;
  const auto& w = desk_world();
  for (const auto& r : f.sim.train.records) {
    const auto view = dialog_kb(*r.train_kb, r.dialog, w.ontology, w.profile);
    const double base = f.mem->log_likelihood(r.dialog, view);
    for (bool keep_neutral : {true, false}) {
      const auto got = arb::rd_rewards(*f.mem, r.dialog, *r.train_kb, 0.05, keep_neutral);
      REQUIRE(got.rows.size() == view.size());
      std::size_t i = 0;
      for (const auto& [head, _] : view.rows()) {
        KnowledgeBase k = view;
        k.erase(head);
        const double delta = f.mem->log_likelihood(r.dialog, k) - base;
        int expect = delta > 0.05 ? 1 : delta < -0.05 ? -1 : (keep_neutral ? -1 : 0);
        CHECK(got.rows[i] == head);
        CHECK(got.delta[i] == doctest::Approx(delta).epsilon(1e-9));
        CHECK(got.r0[i] == expect);
        ++i;
      }
    }
  }
}

TEST_CASE("completion rewards match an exhaustive recomputation") {
  Fixture f;
  const auto& w = desk_world();
  std::size_t checked = 0;
  for (const auto& r : f.sim.train.records) {
    for (const auto& s : arb::build_rc_states(r.dialog, *r.train_kb, w.ontology, w.profile)) {
      CHECK_FALSE(s.kb.find(s.head.value)->field(s.relation));
      const auto got = arb::rc_rewards(*f.mem, s, 0.05);
      const auto& targets = w.ontology.target_set(s.relation);
      REQUIRE(got.size() == targets.size());
      std::vector<double> ll;
      for (const auto& t : targets) {
        KnowledgeBase k = s.kb;
        k.set_field(s.head.value, s.relation, t);
        ll.push_back(f.mem->log_likelihood(r.dialog, k));
      }
      const double best = *std::max_element(ll.begin(), ll.end());
      for (std::size_t i = 0; i < ll.size(); ++i) CHECK(got[i] == (ll[i] >= best - 0.05 ? 1.0 : 0.0));
      CHECK(std::accumulate(got.begin(), got.end(), 0.0) >= 1.0);
      if (++checked >= 6) return;
    }
  }
}

TEST_CASE("deletion policy respects the keep list and round-trips") {
  Fixture f;
  const auto& w = desk_world();
  arb::RDModel rd(w.ontology, w.profile, f.vocab, f.policy(1), 4);
  const auto& r = f.sim.train.records[0];
  // Force every view row over the deletion threshold.
  rd.params().get("rd.out.b").value(0) = 50.0;
  rd.params().get("rd.out.b").value(1) = -50.0;
  const auto probs = rd.delete_probs(r.dialog, *r.train_kb);
  REQUIRE_FALSE(probs.empty());
  for (const auto& [_, p] : probs) CHECK(p > 0.5);
  std::vector<Row> deleted;
  const std::string kept = probs.front().first;
  const auto out = rd.apply(r.dialog, *r.train_kb, &deleted, {kept});
  CHECK(out.contains(kept));
  CHECK(deleted.size() == probs.size() - 1);
  for (const auto& row : deleted) CHECK_FALSE(out.contains(row.head.value));
  CHECK(out.size() == r.train_kb->size() - deleted.size());

  const auto path = tmp("dkaf_rd_test.ckpt");
  rd.save(path);
  const auto back = arb::RDModel::load(path);
  CHECK(back.delete_probs(r.dialog, *r.train_kb) == probs);
}

TEST_CASE("deletion policy training raises the average reward") {
  Fixture f;
  const auto& w = desk_world();
  std::vector<arb::RDExample> data;
  for (const auto& r : f.sim.train.records)
    data.push_back({&r.dialog, *r.train_kb, arb::rd_rewards(*f.mem, r.dialog, *r.train_kb, 0.05)});
  arb::RDModel rd(w.ontology, w.profile, f.vocab, f.policy(15), 4);
  rd.init_from(*f.mem);
  const auto curve = rd.train(data, 5);
  REQUIRE(curve.size() == 15);
  CHECK(curve.back().avg_reward_all > curve.front().avg_reward_all);
}

TEST_CASE("completion policy is a distribution over the target set") {
  Fixture f;
  const auto& w = desk_world();
  arb::RCModel rc(w.ontology, w.profile, f.vocab, f.policy(1), 4);
  std::vector<arb::RCState> states;
  for (const auto& r : f.sim.train.records)
    for (auto& s : arb::build_rc_states(r.dialog, *r.train_kb, w.ontology, w.profile)) states.push_back(std::move(s));
  REQUIRE_FALSE(states.empty());
  std::vector<const arb::RCState*> ptrs;
  for (const auto& s : states) ptrs.push_back(&s);
  const auto pol = rc.policy(ptrs);
  for (std::size_t i = 0; i < states.size(); ++i) {
    CHECK(pol[i].size() == w.ontology.target_set(states[i].relation).size());
    CHECK(std::accumulate(pol[i].begin(), pol[i].end(), 0.0) == doctest::Approx(1.0).epsilon(1e-9));
    const auto best = std::max_element(pol[i].begin(), pol[i].end()) - pol[i].begin();
    CHECK(rc.predict(states[i]) == w.ontology.target_set(states[i].relation)[static_cast<std::size_t>(best)]);
  }
  const auto path = tmp("dkaf_rc_test.ckpt");
  rc.save(path);
  CHECK(arb::RCModel::load(path).policy(ptrs) == pol);
  CHECK_THROWS_AS(rc.train(states, 1), InvalidInput);  // rewards not computed
}

TEST_CASE("insertions add new rows only") {
  KnowledgeBase kb;
  kb.insert(restaurant("resto_02", "thai", "paris", "cheap", "5stars"));
  std::vector<Triple> acc{{{"resto_09", "restaurant"}, "cuisine", {"thai", "cuisine"}},
                          {{"resto_09", "restaurant"}, "location", {"paris", "location"}},
                          {{"resto_02", "restaurant"}, "cuisine", {"french", "cuisine"}}};
  const auto out = arb::apply_insertions(kb, acc);
  CHECK(out.size() == 2);
  CHECK(out.find("resto_02")->field("cuisine")->value == "thai");
  CHECK(out.find("resto_09")->fields.size() == 2);
}

TEST_CASE("dialog split is a deterministic partition") {
  std::vector<std::string> ids;
  for (int i = 0; i < 50; ++i) ids.push_back("d" + std::to_string(i % 25));
  auto [a, b] = arb::split_dialogs(ids, 0.2, 9);
  auto [a2, b2] = arb::split_dialogs(ids, 0.2, 9);
  CHECK(a == a2);
  CHECK(b == b2);
  CHECK(b.size() == 5);
  CHECK(a.size() + b.size() == 25);
  for (const auto& id : b) CHECK(std::find(a.begin(), a.end(), id) == a.end());
}

TEST_CASE("relation inference keeps one tail per head and relation above the threshold") {
  Fixture f;
  const auto& w = desk_world();
  arb::RIConfig cfg;
  cfg.blocks = tiny_blocks();
  arb::RIModel ri(w.ontology, f.vocab, cfg, 3);
  const auto ds = build_ri_dataset(f.sim.train.records, w.ontology);
  for (const auto& r : f.sim.train.records) {
    auto it = ds.infer.find(r.dialog.id);
    if (it == ds.infer.end()) continue;
    for (double threshold : {0.0, 0.5}) {
      const auto out = arb::infer_ri(ri, r.dialog, it->second, *r.train_kb, threshold);
      std::set<std::pair<std::string, std::string>> keys;
      for (const auto& st : out) {
        CHECK(st.score > threshold);
        CHECK(keys.insert({st.triple.head.value, st.triple.relation}).second);
      }
    }
  }
}

TEST_CASE("policy config round-trips and rejects a floor above one") {
  auto j = arb::PolicyConfig{}.to_json();
  CHECK(arb::PolicyConfig::from_json(j).keep_neutral);
  CHECK(arb::PolicyConfig::from_json(j).to_json() == j);
  j["w_floor"] = 1.5;
  CHECK_THROWS_AS(arb::PolicyConfig::from_json(j), InvalidInput);
}
