#pragma once

#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "dkaf/core/dialog.hpp"

namespace dkaf {

enum class Label { positive, negative, infer };

const char* to_string(Label l);
Label label_from_string(const std::string& s);

struct LabeledCandidate {
  std::string dialog_id;
  Triple triple;
  Label label = Label::infer;

  bool operator==(const LabeledCandidate&) const = default;
};

// Type-consistent (e1, r, e2) over distinct mentioned entities; first-mention
// order of e1, then of e2, then relation name.
std::vector<Triple> candidate_triples(const Dialog& dialog, const Ontology& ontology);

// positive: triple in K_T; negative: head row in K_T but triple absent; infer otherwise.
Label label_triple(const Triple& t, const KnowledgeBase& kb_t);
std::vector<LabeledCandidate> label_candidates(const std::string& dialog_id,
                                               const std::vector<Triple>& candidates,
                                               const KnowledgeBase& kb_t);

struct RIDataset {
  std::vector<LabeledCandidate> train;  // positive and negative
  std::map<std::string, std::vector<LabeledCandidate>> infer;  // by dialog id
  std::size_t positives = 0;
  std::size_t negatives = 0;
  std::size_t infers = 0;
};

RIDataset build_ri_dataset(const std::vector<CorpusRecord>& records, const Ontology& ontology);

nlohmann::json to_json(const LabeledCandidate& c);
LabeledCandidate candidate_from_json(const nlohmann::json& j);

}  // namespace dkaf
