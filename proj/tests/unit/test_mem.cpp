#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <numeric>

#include "dkaf/core/error.hpp"
#include "dkaf/core/judge.hpp"
#include "dkaf/mem/mem.hpp"
#include "world.hpp"

using namespace dkaf;
using namespace dkaf::testing;

namespace {

struct Fixture {
  SimOutput sim = simulate_desk(12, 2, 8);
  std::vector<Dialog> dialogs;
  std::vector<mem::MemExample> data;
  mem::MemConfig cfg;

  Fixture() {
    for (const auto& r : sim.train.records) {
      dialogs.push_back(r.dialog);
      data.push_back({&r.dialog, r.train_kb.get()});
    }
    cfg.blocks = tiny_blocks();
    cfg.adam.lr = 1e-2;
    cfg.batch = 8;
  }

  mem::MemModel model(std::uint64_t seed = 1) const {
    const auto& w = desk_world();
    return mem::MemModel(w.ontology, w.profile, nn::Vocab::build(w.ontology, dialogs), cfg, seed);
  }
};

double sum_second(const std::vector<std::pair<std::string, double>>& xs) {
  double s = 0;
  for (const auto& [_, p] : xs) s += p;
  return s;
}

}  // namespace

TEST_CASE("masked instances cover every agent-utterance entity") {
  Fixture f;
  for (const auto& d : f.dialogs) {
    std::size_t n = 0;
    for (std::size_t u = 0; u < d.utterances.size(); ++u)
      if (d.utterances[u].speaker == Speaker::agent) n += d.utterances[u].mentions.size();
    const auto inst = mem::mask_instances(d);
    CHECK(inst.size() == n);
    for (const auto& i : inst) CHECK(d.utterances[i.utterance].mentions[i.mention].entity == i.gold);
  }
}

TEST_CASE("pointer distributions normalize and mix by the gate") {
  Fixture f;
  const auto m = f.model();
  const auto& rec = f.sim.train.records[0];
  for (const auto& inst : mem::mask_instances(rec.dialog)) {
    const auto t = m.inspect(rec.dialog, *rec.train_kb, inst);
    CHECK(t.lambda >= 0.0);
    CHECK(t.lambda <= 1.0);
    if (!t.kb_dist.empty()) CHECK(sum_second(t.kb_dist) == doctest::Approx(1.0).epsilon(1e-9));
    if (!t.ctx_dist.empty()) CHECK(sum_second(t.ctx_dist) == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(t.prob == doctest::Approx(t.lambda * t.p_kb + (1 - t.lambda) * t.p_ctx).epsilon(1e-9));
    CHECK(m.mem_prob(rec.dialog, *rec.train_kb, inst) == doctest::Approx(t.prob).epsilon(1e-12));
  }
}

TEST_CASE("log-likelihood is the floored sum of instance log-probabilities") {
  Fixture f;
  const auto m = f.model();
  for (std::size_t k = 0; k < 3; ++k) {
    const auto& rec = f.sim.train.records[k];
    double expect = 0;
    for (const auto& inst : mem::mask_instances(rec.dialog))
      expect += std::log(std::max(m.mem_prob(rec.dialog, *rec.train_kb, inst), f.cfg.floor));
    CHECK(m.log_likelihood(rec.dialog, *rec.train_kb) == doctest::Approx(expect).epsilon(1e-9));
  }
}

TEST_CASE("batched likelihoods equal one-at-a-time likelihoods") {
  Fixture f;
  const auto m = f.model();
  const auto& rec = f.sim.train.records[1];
  const auto view = dialog_kb(*rec.train_kb, rec.dialog, desk_world().ontology, desk_world().profile);
  std::vector<KnowledgeBase> kbs{*rec.train_kb};
  for (const auto& [head, _] : view.rows()) {
    KnowledgeBase k = *rec.train_kb;
    k.erase(head);
    kbs.push_back(k);
  }
  const auto batched = m.log_likelihoods(rec.dialog, kbs);
  for (std::size_t i = 0; i < kbs.size(); ++i)
    CHECK(batched[i] == doctest::Approx(m.log_likelihood(rec.dialog, kbs[i])).epsilon(1e-9));
}

TEST_CASE("with the gate pinned to the KB, an entity outside the view has zero KB mass") {
  Fixture f;
  auto m = f.model();
  m.gate_bias().value.setConstant(50.0);
  const auto& rec = f.sim.train.records[0];
  for (const auto& inst : mem::mask_instances(rec.dialog)) {
    KnowledgeBase k = *rec.train_kb;
    std::vector<std::string> holders;
    for (const auto& [head, row] : k.rows()) {
      bool has = head == inst.gold.value;
      for (const auto& [_, e] : row.fields) has |= e.value == inst.gold.value;
      if (has) holders.push_back(head);
    }
    for (const auto& h : holders) k.erase(h);
    const auto t = m.inspect(rec.dialog, k, inst);
    for (const auto& [value, p] : t.kb_dist) CHECK(value != inst.gold.value);
    CHECK(t.p_kb == 0.0);
  }
}

TEST_CASE("training reduces the loss and is reproducible") {
  Fixture f;
  auto a = f.model(), b = f.model();
  const auto ca = a.train(f.data, 6, 3);
  const auto cb = b.train(f.data, 6, 3);
  REQUIRE(ca.size() == 6);
  CHECK(ca.back().loss < ca.front().loss);
  for (std::size_t i = 0; i < ca.size(); ++i) CHECK(ca[i].loss == cb[i].loss);
}

TEST_CASE("checkpoints round-trip") {
  Fixture f;
  auto m = f.model();
  m.train(f.data, 1, 2);
  const auto path = (std::filesystem::temp_directory_path() / "dkaf_mem_test.ckpt").string();
  m.save(path, {{"config_hash", "abc"}});
  const auto back = mem::MemModel::load(path);
  const auto& rec = f.sim.train.records[2];
  CHECK(back.log_likelihood(rec.dialog, *rec.train_kb) == m.log_likelihood(rec.dialog, *rec.train_kb));
  CHECK_THROWS_AS(mem::MemModel::load(path + ".missing"), Error);
}

TEST_CASE("mem config rejects a zero floor") {
  nlohmann::json j = mem::MemConfig{}.to_json();
  j["floor"] = 0.0;
  CHECK_THROWS_AS(mem::MemConfig::from_json(j), InvalidInput);
}
