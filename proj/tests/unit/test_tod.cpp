#include <doctest.h>

#include <filesystem>

#include "dkaf/core/error.hpp"
#include "dkaf/tod/responder.hpp"
#include "world.hpp"

using namespace dkaf;
using namespace dkaf::testing;

namespace {

struct Fixture {
  SimOutput sim = simulate_desk(6, 1, 3);
  std::vector<Dialog> dialogs;
  std::vector<tod::TodExample> data;
  tod::TodConfig cfg;

  Fixture() {
    for (const auto& r : sim.train.records) {
      dialogs.push_back(r.dialog);
      data.push_back({&r.dialog, r.gold_kb.get()});
    }
    cfg.blocks = tiny_blocks();
    cfg.blocks.emb = cfg.blocks.hidden = 16;
    cfg.key_dim = 8;
    cfg.adam.lr = 1e-2;
    cfg.batch = 2;
  }

  tod::Responder model() const {
    const auto& w = desk_world();
    return tod::Responder(w.ontology, w.profile, tod::responder_vocab(w.ontology, dialogs), cfg, 7);
  }
};

Dialog prefix(const Dialog& d, std::size_t n) {
  Dialog p = d;
  p.utterances.resize(n);
  return p;
}

}  // namespace

TEST_CASE("first decoding step is a distribution") {
  Fixture f;
  const auto m = f.model();
  const auto& r = f.sim.train.records[0];
  const auto dist = m.first_step(prefix(r.dialog, 1), *r.gold_kb);
  double s = 0;
  for (const auto& [_, p] : dist) {
    CHECK(p >= 0.0);
    s += p;
  }
  CHECK(s == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("an entity absent from the KB and the history gets no copy mass") {
  Fixture f;
  const auto m = f.model();
  const auto& r = f.sim.train.records[0];
  const Dialog h = prefix(r.dialog, 1);
  std::set<std::string> seen;
  for (const auto& u : h.utterances)
    for (const auto& t : u.tokens) seen.insert(t);
  KnowledgeBase empty("empty");
  for (const auto& [value, p] : m.first_step(h, empty)) {
    if (!desk_world().ontology.find_entity(value) || seen.count(value)) continue;
    CHECK(p == 0.0);
  }
}

TEST_CASE("responding requires a history that ends with the user") {
  Fixture f;
  const auto m = f.model();
  const auto& r = f.sim.train.records[0];
  CHECK_THROWS_AS(m.respond(prefix(r.dialog, 2), *r.gold_kb), InvalidInput);
  CHECK_NOTHROW(m.respond(prefix(r.dialog, 1), *r.gold_kb));
}

TEST_CASE("the responder fits a handful of dialogs and is reproducible") {
  Fixture f;
  f.cfg.epochs = 25;
  auto a = f.model(), b = f.model();
  const auto ca = a.train(f.data, 1);
  const auto cb = b.train(f.data, 1);
  REQUIRE(ca.size() == 25);
  CHECK(ca.back().loss < 0.5 * ca.front().loss);
  CHECK(ca.back().token_accuracy > ca.front().token_accuracy);
  for (std::size_t i = 0; i < ca.size(); ++i) CHECK(ca[i].loss == cb[i].loss);
  const auto& r = f.sim.train.records[0];
  const auto preds = a.predict_dialog(r.dialog, *r.gold_kb);
  std::size_t agent = 0;
  for (const auto& u : r.dialog.utterances) agent += u.speaker == Speaker::agent;
  CHECK(preds.size() == agent);

  const auto path = (std::filesystem::temp_directory_path() / "dkaf_tod_test.ckpt").string();
  a.save(path);
  CHECK(tod::Responder::load(path).predict_dialog(r.dialog, *r.gold_kb) == preds);
}

TEST_CASE("tod config round-trips") {
  const tod::TodConfig c;
  CHECK(tod::TodConfig::from_json(c.to_json()).to_json() == c.to_json());
}
