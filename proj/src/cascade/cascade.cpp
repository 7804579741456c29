#include "dkaf/cascade/cascade.hpp"

#include <algorithm>
#include <limits>
#include <map>
#include <set>
#include <sstream>

#include "dkaf/core/error.hpp"
#include "dkaf/core/json_io.hpp"
#include "dkaf/core/judge.hpp"
#include "dkaf/supervision/distant.hpp"

namespace dkaf::cascade {

namespace {

const char* stage_name(Stage s) {
  switch (s) {
    case Stage::ri: return "ri";
    case Stage::rd: return "rd";
    case Stage::rc: return "rc";
  }
  return "?";
}

std::vector<std::string> inserted_heads(const ArbitrationTrace& t) {
  std::vector<std::string> out;
  for (const auto& tr : t.inserted)
    if (std::find(out.begin(), out.end(), tr.head.value) == out.end()) out.push_back(tr.head.value);
  return out;
}

void ri_stage(const arb::RIModel& ri, double threshold, const Dialog& d, KnowledgeBase& kb,
              ArbitrationTrace& trace, const Ontology& onto) {
  std::vector<LabeledCandidate> infer;
  for (auto& c : label_candidates(d.id, candidate_triples(d, onto), kb))
    if (c.label == Label::infer) infer.push_back(std::move(c));
  if (infer.empty()) return;
  std::vector<Triple> applied;
  for (const auto& s : arb::infer_ri(ri, d, infer, kb, threshold))
    if (!kb.contains(s.triple.head.value)) applied.push_back(s.triple);
  kb = arb::apply_insertions(kb, applied);
  trace.inserted.insert(trace.inserted.end(), applied.begin(), applied.end());
}

// Rows inserted earlier in the cascade come from this dialog and are kept.
void rd_stage(const arb::RDModel& rd, const Dialog& d, KnowledgeBase& kb, ArbitrationTrace& trace) {
  kb = rd.apply(d, kb, &trace.deleted, inserted_heads(trace));
}

void rc_stage(const arb::RCModel& rc, const Dialog& d, KnowledgeBase& kb, ArbitrationTrace& trace,
              const Ontology& onto, const DomainProfile& profile) {
  auto done = arb::apply_rc(rc, d, kb, inserted_heads(trace), onto, profile);
  trace.completed.insert(trace.completed.end(), done.begin(), done.end());
}

}  // namespace

Order parse_order(const std::string& s) {
  std::vector<Stage> stages;
  std::stringstream ss(s);
  std::string part;
  while (std::getline(ss, part, ',')) {
    if (part == "ri") stages.push_back(Stage::ri);
    else if (part == "rd") stages.push_back(Stage::rd);
    else if (part == "rc") stages.push_back(Stage::rc);
    else throw InvalidInput("order: unknown stage '" + part + "'");
  }
  if (stages.size() != 3) throw InvalidInput("order: need exactly three stages");
  std::set<Stage> uniq(stages.begin(), stages.end());
  if (uniq.size() != 3) throw InvalidInput("order: stages must be distinct");
  const auto pos = [&](Stage x) { return std::find(stages.begin(), stages.end(), x) - stages.begin(); };
  if (pos(Stage::rc) < pos(Stage::ri)) throw InvalidInput("order: RC must follow RI");
  return {stages[0], stages[1], stages[2]};
}

std::string to_string(const Order& order) {
  return std::string(stage_name(order[0])) + "," + stage_name(order[1]) + "," + stage_name(order[2]);
}

const std::vector<Order>& supported_orders() {
  static const std::vector<Order> orders{{Stage::ri, Stage::rd, Stage::rc},
                                         {Stage::ri, Stage::rc, Stage::rd},
                                         {Stage::rd, Stage::ri, Stage::rc}};
  return orders;
}

nlohmann::json ArbitrationTrace::to_json() const {
  nlohmann::json j;
  j["dialog_id"] = dialog_id;
  j["inserted"] = nlohmann::json::array();
  for (const auto& t : inserted) j["inserted"].push_back(dkaf::to_json(t));
  j["deleted"] = nlohmann::json::array();
  for (const auto& r : deleted) j["deleted"].push_back(dkaf::to_json(r));
  j["completed"] = nlohmann::json::array();
  for (const auto& t : completed) j["completed"].push_back(dkaf::to_json(t));
  j["result_kb"] = dkaf::to_json(result_kb);
  return j;
}

ArbitrationTrace ArbitrationTrace::from_json(const nlohmann::json& j) {
  ArbitrationTrace t;
  t.dialog_id = j.at("dialog_id").get<std::string>();
  for (const auto& x : j.at("inserted")) t.inserted.push_back(triple_from_json(x));
  for (const auto& x : j.at("deleted")) t.deleted.push_back(row_from_json(x));
  for (const auto& x : j.at("completed")) t.completed.push_back(triple_from_json(x));
  t.result_kb = kb_from_json(j.at("result_kb"));
  return t;
}

KnowledgeBase replay(const ArbitrationTrace& trace, const KnowledgeBase& kb_t, const Order& order) {
  KnowledgeBase kb = kb_t;
  for (Stage s : order) {
    switch (s) {
      case Stage::ri: kb = arb::apply_insertions(kb, trace.inserted); break;
      case Stage::rd:
        for (const auto& r : trace.deleted) kb.erase(r.head.value);
        break;
      case Stage::rc:
        for (const auto& t : trace.completed) kb.set_field(t.head.value, t.relation, t.tail);
        break;
    }
  }
  kb.set_id(trace.result_kb.id());
  return kb;
}

std::vector<ArbitrationTrace> arbitrate(const std::vector<CorpusRecord>& records, const Models& models,
                                        const Order& order, const Ontology& ontology,
                                        const DomainProfile& profile) {
  std::vector<ArbitrationTrace> out;
  for (const auto& rec : records) {
    if (!rec.train_kb) throw InvalidInput("arbitrate: record " + rec.dialog.id + " has no KB");
    ArbitrationTrace t;
    t.dialog_id = rec.dialog.id;
    KnowledgeBase kb = *rec.train_kb;
    for (Stage s : order) {
      if (s == Stage::ri && models.ri) ri_stage(*models.ri, models.ri_threshold, rec.dialog, kb, t, ontology);
      if (s == Stage::rd && models.rd) rd_stage(*models.rd, rec.dialog, kb, t);
      if (s == Stage::rc && models.rc) rc_stage(*models.rc, rec.dialog, kb, t, ontology, profile);
    }
    kb.set_id("khat/" + rec.dialog.id);
    t.result_kb = std::move(kb);
    out.push_back(std::move(t));
  }
  return out;
}

LearnResult learn_cascade(const std::vector<CorpusRecord>& records, const mem::MemModel& mem,
                          const arb::RIModel& ri, const Order& order, const LearnConfig& cfg,
                          std::uint64_t seed, const Logger& log) {
  const auto& onto = mem.ontology();
  const auto& profile = mem.profile();
  const std::string tag = to_string(order);
  LearnResult res;
  std::vector<KnowledgeBase> kbs;
  for (const auto& rec : records) {
    if (!rec.train_kb) throw InvalidInput("cascade: record " + rec.dialog.id + " has no KB");
    kbs.push_back(*rec.train_kb);
    res.traces.push_back({rec.dialog.id, {}, {}, {}, {}});
  }
  for (Stage s : order) {
    if (s == Stage::ri) {
      for (std::size_t j = 0; j < records.size(); ++j)
        ri_stage(ri, cfg.ri_threshold, records[j].dialog, kbs[j], res.traces[j], onto);
    } else if (s == Stage::rd) {
      std::vector<arb::RDExample> data;
      for (std::size_t j = 0; j < records.size(); ++j)
        data.push_back({&records[j].dialog, kbs[j], arb::rd_rewards(mem, records[j].dialog, kbs[j], cfg.rd.reward_tolerance, cfg.rd.keep_neutral)});
      res.rd.emplace(onto, profile, mem.vocab(), cfg.rd, derive_seed(seed, "cascade/rd/" + tag));
      if (cfg.warm_start) res.rd->init_from(mem);
      res.rd_curve = res.rd->train(data, derive_seed(seed, "cascade/rd-train/" + tag), [&](const arb::PolicyEpoch& e) {
        if (log) log("rd epoch " + std::to_string(e.epoch) + " avg_reward " + std::to_string(e.avg_reward));
      });
      for (std::size_t j = 0; j < records.size(); ++j) rd_stage(*res.rd, records[j].dialog, kbs[j], res.traces[j]);
    } else {
      std::vector<arb::RCState> states;
      for (std::size_t j = 0; j < records.size(); ++j)
        for (auto& st : arb::build_rc_states(records[j].dialog, kbs[j], onto, profile)) {
          st.rewards = arb::rc_rewards(mem, st, cfg.rc.reward_tolerance);
          states.push_back(std::move(st));
        }
      if (states.empty()) continue;
      res.rc.emplace(onto, profile, mem.vocab(), cfg.rc, derive_seed(seed, "cascade/rc/" + tag));
      if (cfg.warm_start) res.rc->init_from(mem);
      res.rc_curve = res.rc->train(states, derive_seed(seed, "cascade/rc-train/" + tag), [&](const arb::PolicyEpoch& e) {
        if (log) log("rc epoch " + std::to_string(e.epoch) + " avg_reward " + std::to_string(e.avg_reward));
      });
      for (std::size_t j = 0; j < records.size(); ++j)
        rc_stage(*res.rc, records[j].dialog, kbs[j], res.traces[j], onto, profile);
    }
  }
  for (std::size_t j = 0; j < records.size(); ++j) {
    kbs[j].set_id("khat/" + records[j].dialog.id);
    res.traces[j].result_kb = std::move(kbs[j]);
  }
  return res;
}

namespace {

struct Span {
  int start, end;  // global token offsets
};

std::map<std::string, std::vector<Span>> mention_spans(const Dialog& d) {
  std::map<std::string, std::vector<Span>> out;
  int offset = 0;
  for (const auto& u : d.utterances) {
    for (const auto& m : u.mentions) out[m.entity.value].push_back({offset + m.start, offset + m.end});
    offset += static_cast<int>(u.tokens.size());
  }
  return out;
}

int span_distance(const Span& a, const Span& b) {
  if (a.end <= b.start) return b.start - a.end + 1;
  if (b.end <= a.start) return a.start - b.end + 1;
  return 0;
}

// Number of rows containing each entity value (as head or tail).
std::map<std::string, int> row_counts(const KnowledgeBase& kb) {
  std::map<std::string, int> out;
  for (const auto& [head, row] : kb.rows()) {
    std::set<std::string> vals{head};
    for (const auto& [_, t] : row.fields) vals.insert(t.value);
    for (const auto& v : vals) ++out[v];
  }
  return out;
}

// Whether every tail of `relation` in kb belongs to exactly one row (phone-like).
bool row_unique_relation(const KnowledgeBase& kb, const std::string& relation,
                         const std::map<std::string, int>& counts) {
  bool any = false;
  for (const auto& [_, row] : kb.rows())
    if (const Entity* t = row.field(relation)) {
      if (counts.at(t->value) != 1) return false;
      any = true;
    }
  return any;
}

// The mentioned entity of `etype` absent from kb that is nearest to `target`.
std::string nearest_of_type(const std::map<std::string, std::vector<Span>>& spans,
                            const std::vector<Entity>& mentioned, const Entity& target,
                            const std::string& etype, const KnowledgeBase& kb) {
  std::string best;
  int best_d = std::numeric_limits<int>::max(), best_pos = std::numeric_limits<int>::max();
  for (const auto& e : mentioned) {
    if (e.etype != etype || kb.contains(e.value)) continue;
    for (const auto& a : spans.at(target.value))
      for (const auto& b : spans.at(e.value)) {
        const int dist = span_distance(a, b);
        if (dist < best_d || (dist == best_d && b.start < best_pos)) {
          best = e.value;
          best_d = dist;
          best_pos = b.start;
        }
      }
  }
  return best;
}

}  // namespace

std::vector<Triple> rule_insertions(const Dialog& dialog, const KnowledgeBase& kb, const Ontology& ontology,
                                    const DomainProfile& profile) {
  const auto spans = mention_spans(dialog);
  const auto counts = row_counts(kb);
  const auto mentioned = dialog.mentioned_entities();
  std::vector<Triple> out;
  for (const auto& head : mentioned) {
    if (head.etype != profile.head_type || kb.contains(head.value)) continue;
    for (const auto& rel : ontology.relations()) {
      if (rel.head_type != head.etype || rel.latent) continue;
      // Closest type-consistent mention; ties go to the earlier mention.
      const Entity* best = nullptr;
      int best_d = std::numeric_limits<int>::max(), best_pos = std::numeric_limits<int>::max();
      for (const auto& e : mentioned) {
        if (e.etype != rel.tail_type || e.value == head.value) continue;
        for (const auto& a : spans.at(head.value))
          for (const auto& b : spans.at(e.value)) {
            const int dist = span_distance(a, b);
            if (dist < best_d || (dist == best_d && b.start < best_pos)) {
              best = &e;
              best_d = dist;
              best_pos = b.start;
            }
          }
      }
      if (!best) continue;
      auto it = counts.find(best->value);
      if (it != counts.end() && it->second == 1) continue;
      if (row_unique_relation(kb, rel.name, counts) &&
          nearest_of_type(spans, mentioned, *best, head.etype, kb) != head.value)
        continue;
      out.push_back({head, rel.name, *best});
    }
  }
  return out;
}

std::vector<std::string> rule_deletions(const Dialog& dialog, const KnowledgeBase& kb,
                                        const Ontology& ontology, const DomainProfile& profile) {
  const auto counts = row_counts(kb);
  const auto mentioned = dialog.mentioned_values();
  std::vector<std::string> out;
  const KnowledgeBase view = dialog_kb(kb, dialog, ontology, profile);
  for (const auto& [head, _] : view.rows()) {
    const Row& row = *kb.find(head);
    std::vector<std::string> vals{head};
    for (const auto& [__, t] : row.fields) vals.push_back(t.value);
    bool keep = false;
    for (const auto& v : vals)
      if (counts.at(v) == 1 && mentioned.count(v)) keep = true;
    if (!keep) out.push_back(head);
  }
  return out;
}

std::vector<Triple> rule_completions(const Dialog& dialog, const KnowledgeBase& kb,
                                     const std::vector<std::string>& rows, const Ontology& ontology,
                                     const DomainProfile& profile) {
  const auto* key_rel = ontology.relation(profile.ordering_key);
  if (!key_rel) throw InvalidInput("rule completion: unknown ordering key " + profile.ordering_key);
  std::map<int, Entity> scale;
  for (const auto& e : ontology.target_set(profile.ordering_key))
    if (auto v = ordering_value(e.value)) scale.emplace(*v, e);
  if (scale.empty()) throw InvalidInput("rule completion: ordering key has no integer values");
  const std::set<std::string> todo(rows.begin(), rows.end());
  const auto suggestions = extract_query(dialog, ontology, profile).suggestions;
  std::map<std::string, int> known;
  for (const auto& s : suggestions)
    if (const Row* r = kb.find(s.value))
      if (const Entity* k = r->field(profile.ordering_key))
        if (auto v = ordering_value(k->value)) known[s.value] = *v;
  std::vector<Triple> out;
  for (std::size_t i = 0; i < suggestions.size(); ++i) {
    const auto& s = suggestions[i];
    if (!todo.count(s.value) || known.count(s.value)) continue;
    const Row* row = kb.find(s.value);
    if (!row) continue;
    std::optional<int> hi, lo;
    for (std::size_t k = i; k-- > 0;)
      if (known.count(suggestions[k].value)) {
        hi = known.at(suggestions[k].value);
        break;
      }
    for (std::size_t k = i + 1; k < suggestions.size(); ++k)
      if (known.count(suggestions[k].value)) {
        lo = known.at(suggestions[k].value);
        break;
      }
    // Largest scale value strictly inside (lo, hi); otherwise the upper boundary.
    std::optional<int> pick;
    for (auto it = scale.rbegin(); it != scale.rend(); ++it)
      if ((!hi || it->first < *hi) && (!lo || it->first > *lo)) {
        pick = it->first;
        break;
      }
    if (!pick) pick = hi ? *hi : (lo ? *lo : scale.rbegin()->first);
    if (!scale.count(*pick)) {
      auto it = scale.lower_bound(*pick);
      pick = it == scale.end() ? scale.rbegin()->first : it->first;
    }
    known[s.value] = *pick;
    out.push_back({row->head, key_rel->name, scale.at(*pick)});
  }
  return out;
}

std::vector<ArbitrationTrace> rule_arbitrate(const std::vector<CorpusRecord>& records,
                                             const Ontology& ontology, const DomainProfile& profile) {
  std::vector<ArbitrationTrace> out;
  for (const auto& rec : records) {
    if (!rec.train_kb) throw InvalidInput("rule_arbitrate: record " + rec.dialog.id + " has no KB");
    ArbitrationTrace t;
    t.dialog_id = rec.dialog.id;
    KnowledgeBase kb = *rec.train_kb;
    t.inserted = rule_insertions(rec.dialog, kb, ontology, profile);
    kb = arb::apply_insertions(kb, t.inserted);
    for (const auto& h : rule_deletions(rec.dialog, kb, ontology, profile)) {
      t.deleted.push_back(*kb.find(h));
      kb.erase(h);
    }
    t.completed = rule_completions(rec.dialog, kb, inserted_heads(t), ontology, profile);
    for (const auto& c : t.completed) kb.set_field(c.head.value, c.relation, c.tail);
    kb.set_id("khat/" + rec.dialog.id);
    t.result_kb = std::move(kb);
    out.push_back(std::move(t));
  }
  return out;
}

CascadeCounts count_edits(const std::vector<ArbitrationTrace>& traces) {
  CascadeCounts c;
  for (const auto& t : traces) {
    c.insertions += inserted_heads(t).size();
    c.deletions += t.deleted.size();
    c.completions += t.completed.size();
  }
  return c;
}

}  // namespace dkaf::cascade
