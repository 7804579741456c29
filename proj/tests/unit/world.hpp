#pragma once

#include <string>
#include <utility>
#include <vector>

#include "dkaf/core/json_io.hpp"
#include "dkaf/nn/blocks.hpp"
#include "dkaf/sim/simulator.hpp"

namespace dkaf::testing {

struct World {
  Ontology ontology;
  KnowledgeBase base;
  Templates templates;
  CheckinProfile checkin;
  DomainProfile profile;
};

inline const World& desk_world() {
  static const World w{load_ontology("data/ontology.json"), load_kb("data/base_kb.json"),
                       Templates::from_json(read_json("data/templates.json")),
                       CheckinProfile::from_json(read_json("data/checkin_profile.json")), DomainProfile{}};
  return w;
}

inline SimOutput simulate_desk(int train, int test, std::uint64_t seed, double stale_fraction = 1.0) {
  const auto& w = desk_world();
  SimConfig c;
  c.train = train;
  c.test = test;
  c.seed = seed;
  c.stale_fraction = stale_fraction;
  return run_simulation(w.ontology, w.base, w.templates, w.checkin, c, w.profile);
}

// Dialog from (speaker, text) turns; every token that is an ontology entity value is marked.
inline Dialog make_dialog(const std::string& id, const std::vector<std::pair<Speaker, std::string>>& turns,
                          const Ontology& ontology) {
  Dialog d;
  d.id = id;
  for (const auto& [speaker, text] : turns) {
    Utterance u;
    u.speaker = speaker;
    u.tokens = tokenize(text);
    for (int i = 0; i < static_cast<int>(u.tokens.size()); ++i)
      if (auto e = ontology.find_entity(u.tokens[i])) u.mentions.push_back({i, i + 1, *e});
    d.utterances.push_back(std::move(u));
  }
  d.validate();
  return d;
}

inline nn::BlockConfig tiny_blocks() {
  nn::BlockConfig c;
  c.emb = 8;
  c.hidden = 8;
  c.pos_dim = 4;
  c.pos_clip = 3;
  c.rgcn_layers = 1;
  c.hops = 2;
  c.scorer = 8;
  return c;
}

inline Row restaurant(const std::string& name, const std::string& cuisine, const std::string& location,
                      const std::string& price, const std::string& rating) {
  Row r;
  r.head = {name, "restaurant"};
  r.fields["cuisine"] = {cuisine, "cuisine"};
  r.fields["location"] = {location, "location"};
  r.fields["price"] = {price, "price"};
  r.fields["rating"] = {rating, "rating"};
  r.fields["phone"] = {name + "_phone", "phone"};
  r.fields["address"] = {name + "_address", "address"};
  return r;
}

}  // namespace dkaf::testing
