#include "dkaf/supervision/distant.hpp"

#include <algorithm>

#include "dkaf/core/error.hpp"
#include "dkaf/core/json_io.hpp"

namespace dkaf {

const char* to_string(Label l) {
  switch (l) {
    case Label::positive:
      return "positive";
    case Label::negative:
      return "negative";
    case Label::infer:
      return "infer";
  }
  return "infer";
}

Label label_from_string(const std::string& s) {
  if (s == "positive") return Label::positive;
  if (s == "negative") return Label::negative;
  if (s == "infer") return Label::infer;
  throw InvalidInput("unknown label " + s);
}

std::vector<Triple> candidate_triples(const Dialog& dialog, const Ontology& ontology) {
  std::vector<const RelationType*> rels;
  for (const auto& r : ontology.relations()) rels.push_back(&r);
  std::sort(rels.begin(), rels.end(),
            [](const RelationType* a, const RelationType* b) { return a->name < b->name; });

  const auto ents = dialog.mentioned_entities();
  std::vector<Triple> out;
  for (const auto& e1 : ents)
    for (const auto& e2 : ents) {
      if (e1.value == e2.value) continue;
      for (const auto* r : rels)
        if (r->head_type == e1.etype && r->tail_type == e2.etype)
          out.push_back(Triple{e1, r->name, e2});
    }
  return out;
}

Label label_triple(const Triple& t, const KnowledgeBase& kb_t) {
  const Row* row = kb_t.find(t.head.value);
  if (!row) return Label::infer;
  const Entity* f = row->field(t.relation);
  return (f && *f == t.tail) ? Label::positive : Label::negative;
}

std::vector<LabeledCandidate> label_candidates(const std::string& dialog_id,
                                               const std::vector<Triple>& candidates,
                                               const KnowledgeBase& kb_t) {
  std::vector<LabeledCandidate> out;
  out.reserve(candidates.size());
  for (const auto& t : candidates) out.push_back({dialog_id, t, label_triple(t, kb_t)});
  return out;
}

RIDataset build_ri_dataset(const std::vector<CorpusRecord>& records, const Ontology& ontology) {
  RIDataset ds;
  for (const auto& rec : records) {
    if (!rec.train_kb) throw InvalidInput("record " + rec.dialog.id + " has no train KB");
    auto labeled =
        label_candidates(rec.dialog.id, candidate_triples(rec.dialog, ontology), *rec.train_kb);
    auto& inf = ds.infer[rec.dialog.id];
    for (auto& c : labeled) {
      switch (c.label) {
        case Label::positive:
          ++ds.positives;
          ds.train.push_back(std::move(c));
          break;
        case Label::negative:
          ++ds.negatives;
          ds.train.push_back(std::move(c));
          break;
        case Label::infer:
          ++ds.infers;
          inf.push_back(std::move(c));
          break;
      }
    }
  }
  return ds;
}

nlohmann::json to_json(const LabeledCandidate& c) {
  auto j = to_json(c.triple);
  j["dialog_id"] = c.dialog_id;
  j["label"] = to_string(c.label);
  return j;
}

LabeledCandidate candidate_from_json(const nlohmann::json& j) {
  return LabeledCandidate{j.at("dialog_id").get<std::string>(), triple_from_json(j),
                          label_from_string(j.at("label").get<std::string>())};
}

}  // namespace dkaf
