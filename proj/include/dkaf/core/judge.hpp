#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "dkaf/core/dialog.hpp"

namespace dkaf {

// What a dialog asks of the KB: the constraints of its (last) query and the
// agent's suggestions in order.
struct DialogQuery {
  bool has_query = false;
  std::map<std::string, Entity> constraints;  // relation -> required tail
  std::vector<Entity> suggestions;            // head-type entities from agent turns, in order
};

DialogQuery extract_query(const Dialog& dialog, const Ontology& ontology,
                          const DomainProfile& profile);

bool row_matches(const Row& row, const std::map<std::string, Entity>& constraints);

// The KB a dialog is paired with: rows of the head type satisfying its query
// constraints plus rows whose head the dialog mentions (every row when the dialog
// has no query).
KnowledgeBase dialog_kb(const KnowledgeBase& kb, const Dialog& dialog, const Ontology& ontology,
                        const DomainProfile& profile);

// Whether `kb` agrees with `gold` on everything the dialog depends on:
//  (a) every gold row whose head the dialog mentions exists in kb and agrees on every
//      field whose value (on either side) the dialog mentions;
//  (b) the agent's suggestions respect the ordering key against kb: keys are
//      non-increasing along the suggestions and no other matching row outranks the
//      last suggestion.
bool consistency_judge(const Dialog& dialog, const KnowledgeBase& kb, const KnowledgeBase& gold,
                       const Ontology& ontology, const DomainProfile& profile);

// Record-level form; throws JudgeUnavailable when the record has no gold KB.
bool consistency_judge(const CorpusRecord& record, const KnowledgeBase& kb,
                       const Ontology& ontology, const DomainProfile& profile);

// Fraction of records whose train KB is judged inconsistent with their dialog.
double inconsistency_rate(const std::vector<CorpusRecord>& records, const Ontology& ontology,
                          const DomainProfile& profile);

// Same, against caller-supplied per-record KBs (e.g. arbitrated snapshots).
double inconsistency_rate(const std::vector<CorpusRecord>& records,
                          const std::vector<KnowledgeBase>& kbs, const Ontology& ontology,
                          const DomainProfile& profile);

}  // namespace dkaf
