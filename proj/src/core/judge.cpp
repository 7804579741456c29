#include "dkaf/core/judge.hpp"

#include "dkaf/core/error.hpp"

namespace dkaf {

DialogQuery extract_query(const Dialog& dialog, const Ontology& ontology,
                          const DomainProfile& profile) {
  DialogQuery q;
  const Utterance* last_query = nullptr;
  for (const auto& u : dialog.utterances)
    if (u.speaker == Speaker::agent && !u.tokens.empty() && u.tokens.front() == profile.query_marker)
      last_query = &u;
  if (last_query) {
    q.has_query = true;
    for (const auto& m : last_query->mentions) {
      auto rels = ontology.relations_between(profile.head_type, m.entity.etype);
      if (rels.size() == 1) q.constraints[rels.front()->name] = m.entity;
    }
  }
  std::set<std::string> seen;
  for (const auto& u : dialog.utterances) {
    if (u.speaker != Speaker::agent) continue;
    for (const auto& m : u.mentions)
      if (m.entity.etype == profile.head_type && seen.insert(m.entity.value).second)
        q.suggestions.push_back(m.entity);
  }
  return q;
}

bool row_matches(const Row& row, const std::map<std::string, Entity>& constraints) {
  for (const auto& [rel, value] : constraints) {
    const Entity* f = row.field(rel);
    if (!f || f->value != value.value) return false;
  }
  return true;
}

KnowledgeBase dialog_kb(const KnowledgeBase& kb, const Dialog& dialog, const Ontology& ontology,
                        const DomainProfile& profile) {
  auto q = extract_query(dialog, ontology, profile);
  if (!q.has_query) return kb;
  const auto mentioned = dialog.mentioned_values();
  KnowledgeBase out(kb.id());
  for (const auto& [head, row] : kb.rows())
    if (mentioned.count(head) ||
        (row.head.etype == profile.head_type && row_matches(row, q.constraints)))
      out.insert(row);
  return out;
}

namespace {

std::optional<int> row_key(const Row* row, const DomainProfile& profile) {
  if (!row) return std::nullopt;
  const Entity* k = row->field(profile.ordering_key);
  if (!k) return std::nullopt;
  return ordering_value(k->value);
}

}  // namespace

bool consistency_judge(const Dialog& dialog, const KnowledgeBase& kb, const KnowledgeBase& gold,
                       const Ontology& ontology, const DomainProfile& profile) {
  const auto mentioned = dialog.mentioned_values();

  // (a) participating rows agree on dialog-evidenced fields.
  for (const auto& [head, grow] : gold.rows()) {
    if (!mentioned.count(head)) continue;
    const Row* krow = kb.find(head);
    if (!krow) return false;
    std::set<std::string> rels;
    for (const auto& [r, _] : grow.fields) rels.insert(r);
    for (const auto& [r, _] : krow->fields) rels.insert(r);
    for (const auto& r : rels) {
      const Entity* gv = grow.field(r);
      const Entity* kv = krow->field(r);
      bool evidenced = (gv && mentioned.count(gv->value)) || (kv && mentioned.count(kv->value));
      if (!evidenced) continue;
      if (!gv || !kv || gv->value != kv->value) return false;
    }
  }

  // (b) suggestion order against the ordering key.
  auto q = extract_query(dialog, ontology, profile);
  if (!q.has_query) return true;
  std::set<std::string> suggested;
  std::optional<int> previous;
  for (const auto& s : q.suggestions) {
    suggested.insert(s.value);
    auto key = row_key(kb.find(s.value), profile);
    if (!key) return false;
    if (previous && *key > *previous) return false;
    previous = key;
  }
  for (const auto& [head, row] : kb.rows()) {
    if (row.head.etype != profile.head_type || suggested.count(head)) continue;
    if (!row_matches(row, q.constraints)) continue;
    if (!previous) return false;  // a matching row exists but nothing was suggested
    auto key = row_key(&row, profile);
    if (key && *key > *previous) return false;
  }
  return true;
}

bool consistency_judge(const CorpusRecord& record, const KnowledgeBase& kb,
                       const Ontology& ontology, const DomainProfile& profile) {
  if (!record.gold_kb)
    throw JudgeUnavailable("record " + record.dialog.id + " has no gold KB");
  return consistency_judge(record.dialog, kb, *record.gold_kb, ontology, profile);
}

double inconsistency_rate(const std::vector<CorpusRecord>& records, const Ontology& ontology,
                          const DomainProfile& profile) {
  if (records.empty()) return 0.0;
  std::size_t bad = 0;
  for (const auto& r : records) {
    if (!r.train_kb) throw InvalidInput("record " + r.dialog.id + " has no train KB");
    if (!consistency_judge(r, *r.train_kb, ontology, profile)) ++bad;
  }
  return static_cast<double>(bad) / static_cast<double>(records.size());
}

double inconsistency_rate(const std::vector<CorpusRecord>& records,
                          const std::vector<KnowledgeBase>& kbs, const Ontology& ontology,
                          const DomainProfile& profile) {
  if (records.size() != kbs.size()) throw InvalidInput("inconsistency_rate: size mismatch");
  if (records.empty()) return 0.0;
  std::size_t bad = 0;
  for (std::size_t i = 0; i < records.size(); ++i)
    if (!consistency_judge(records[i], kbs[i], ontology, profile)) ++bad;
  return static_cast<double>(bad) / static_cast<double>(records.size());
}

}  // namespace dkaf
