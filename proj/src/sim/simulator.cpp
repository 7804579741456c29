#include "dkaf/sim/simulator.hpp"

#include <algorithm>
#include <iostream>
#include <set>

#include "dkaf/core/error.hpp"

namespace dkaf {

using nlohmann::json;

double CheckinProfile::at(std::int64_t tick) const {
  auto day = static_cast<std::size_t>((tick / 24) % 7);
  auto hour = static_cast<std::size_t>(tick % 24);
  return intensity[day][hour];
}

double CheckinProfile::min_intensity() const {
  double m = intensity[0][0];
  for (const auto& d : intensity)
    for (double v : d) m = std::min(m, v);
  return m;
}

CheckinProfile CheckinProfile::from_json(const json& j) {
  CheckinProfile p;
  const auto& rows = j.at("intensity");
  if (rows.size() != 7) throw InvalidInput("check-in profile needs 7 days");
  for (std::size_t d = 0; d < 7; ++d) {
    if (rows[d].size() != 24) throw InvalidInput("check-in profile needs 24 hours per day");
    for (std::size_t h = 0; h < 24; ++h) {
      double v = rows[d][h].get<double>();
      if (!(v > 0.0)) throw InvalidInput("check-in intensity must be positive");
      p.intensity[d][h] = v;
    }
  }
  return p;
}

double AvailabilityProcess::availability(std::int64_t tick) const {
  switch (kind) {
    case AvailabilityKind::always_on:
      return 1.0;
    case AvailabilityKind::bernoulli:
      return p;
    case AvailabilityKind::checkin_weighted:
      return profile.min_intensity() / profile.at(tick);
  }
  return 1.0;
}

void AvailabilityProcess::validate() const {
  auto prob = [](double x) { return x >= 0.0 && x <= 1.0; };
  if (!prob(p) || !prob(maintenance_prob) || !prob(closure_prob))
    throw InvalidInput("availability probabilities must lie in [0, 1]");
  if (kind == AvailabilityKind::checkin_weighted)
    for (const auto& d : profile.intensity)
      for (double v : d)
        if (!(v > 0.0)) throw InvalidInput("check-in intensity must be positive");
}

KBTimeline::KBTimeline(KnowledgeBase base, std::int64_t horizon,
                       std::vector<std::vector<std::uint8_t>> avail)
    : base_(std::move(base)), horizon_(horizon), avail_(std::move(avail)) {
  for (const auto& [head, _] : base_.rows()) heads_.push_back(head);
}

std::string KBTimeline::snapshot_id(std::int64_t tick) { return "snap_" + std::to_string(tick); }

KnowledgeBase KBTimeline::snapshot(std::int64_t tick) const {
  if (tick < 0 || tick >= horizon_) throw InvalidInput("tick out of range");
  KnowledgeBase kb(snapshot_id(tick));
  std::size_t i = 0;
  for (const auto& [_, row] : base_.rows()) {
    if (avail_[tick][i]) kb.insert(row);
    ++i;
  }
  return kb;
}

KBTimeline simulate_timeline(const KnowledgeBase& base,
                             const std::map<std::string, AvailabilityProcess>& process_by_domain,
                             std::int64_t horizon, std::uint64_t seed) {
  if (base.empty()) throw InvalidInput("simulate_timeline: empty base KB");
  if (horizon < 1) throw InvalidInput("simulate_timeline: horizon must be >= 1");
  for (const auto& [_, p] : process_by_domain) p.validate();

  const std::size_t n = base.size();
  std::vector<std::vector<std::uint8_t>> avail(horizon, std::vector<std::uint8_t>(n, 0));
  Rng rng(seed);
  std::size_t i = 0;
  for (const auto& [head, row] : base.rows()) {
    auto it = process_by_domain.find(row.head.etype);
    if (it == process_by_domain.end())
      throw InvalidInput("no availability process for domain " + row.head.etype);
    const auto& proc = it->second;
    bool closed = false;
    bool maintenance = false;
    for (std::int64_t t = 0; t < horizon; ++t) {
      if (t % 24 == 0) maintenance = rng.bernoulli(proc.maintenance_prob);
      if (rng.bernoulli(proc.closure_prob)) closed = true;
      bool up = rng.bernoulli(proc.availability(t));
      avail[t][i] = (!closed && !maintenance && up) ? 1 : 0;
    }
    ++i;
  }
  return KBTimeline(base, horizon, std::move(avail));
}

Templates Templates::from_json(const json& j) {
  Templates t;
  t.raw = j;
  for (const char* key : {"slots", "suggest", "searching", "query", "give_info", "probabilities"})
    if (!j.contains(key)) throw InvalidInput(std::string("templates: missing ") + key);
  return t;
}

std::vector<std::string> Templates::slot_relations() const {
  std::vector<std::string> out;
  for (const auto& s : raw.at("slots")) out.push_back(s.at("relation").get<std::string>());
  return out;
}

double Templates::update_prob() const { return raw.at("probabilities").value("update", 0.0); }
int Templates::max_rejections() const { return raw.at("probabilities").value("max_rejections", 0); }
double Templates::info_prob() const { return raw.at("probabilities").value("info", 0.0); }

std::vector<DialogSkeleton> sample_skeletons(const Ontology& ontology, const KnowledgeBase& base,
                                             const Templates& templates, int count,
                                             const std::string& prefix, std::uint64_t seed) {
  Rng rng(seed);
  const auto slots = templates.slot_relations();
  // Candidate values per slot: those used by the base KB, in sorted order.
  std::map<std::string, std::vector<Entity>> values;
  for (const auto& s : slots) {
    ontology.require_relation(s);
    std::set<Entity> seen;
    for (const auto& [_, row] : base.rows())
      if (const Entity* f = row.field(s)) seen.insert(*f);
    values[s].assign(seen.begin(), seen.end());
    if (values[s].empty()) throw InvalidInput("templates: slot " + s + " has no values in the KB");
  }
  std::vector<std::string> info;
  if (templates.raw.contains("ask_info"))
    for (const auto& [rel, _] : templates.raw.at("ask_info").items()) info.push_back(rel);

  std::vector<DialogSkeleton> out;
  for (int k = 0; k < count; ++k) {
    DialogSkeleton sk;
    char buf[32];
    std::snprintf(buf, sizeof buf, "%s%04d", prefix.c_str(), k);
    sk.id = buf;
    for (const auto& s : slots) sk.constraints[s] = rng.pick(values[s]);
    for (const auto& s : slots)
      if (rng.bernoulli(0.5)) sk.informed_first.push_back(s);
    if (rng.bernoulli(templates.update_prob())) {
      sk.updated_slot = slots[rng.index(slots.size())];
      const auto& vals = values[sk.updated_slot];
      if (vals.size() > 1) {
        Entity v;
        do v = rng.pick(vals);
        while (v == sk.constraints[sk.updated_slot]);
        sk.initial_value = v;
      } else {
        sk.updated_slot.clear();
        rng.next();
      }
    } else {
      rng.next();
    }
    sk.rejections = static_cast<int>(rng.index(static_cast<std::size_t>(templates.max_rejections()) + 1));
    for (const auto& rel : info)
      if (rng.bernoulli(templates.info_prob())) sk.info_requests.push_back(rel);
    sk.phrasing_seed = rng.next();
    out.push_back(std::move(sk));
  }
  return out;
}

namespace {

// Appends text with "{}" placeholders filled by entities, recording mention spans.
class UttBuilder {
 public:
  explicit UttBuilder(Speaker s) { u_.speaker = s; }

  UttBuilder& text(const std::string& pattern, const std::vector<Entity>& ents = {}) {
    std::size_t pos = 0;
    std::size_t next_ent = 0;
    while (true) {
      auto hole = pattern.find("{}", pos);
      add_words(pattern.substr(pos, hole == std::string::npos ? std::string::npos : hole - pos));
      if (hole == std::string::npos) break;
      if (next_ent >= ents.size()) throw InvalidInput("template has more holes than entities");
      entity(ents[next_ent++]);
      pos = hole + 2;
    }
    return *this;
  }

  UttBuilder& entity(const Entity& e) {
    int start = static_cast<int>(u_.tokens.size());
    auto toks = tokenize(e.value);
    u_.tokens.insert(u_.tokens.end(), toks.begin(), toks.end());
    u_.mentions.push_back(Mention{start, static_cast<int>(u_.tokens.size()), e});
    return *this;
  }

  Utterance done() { return std::move(u_); }

 private:
  void add_words(const std::string& s) {
    for (auto& t : tokenize(s)) u_.tokens.push_back(std::move(t));
  }
  Utterance u_;
};

std::string pick_str(Rng& rng, const json& j) {
  if (j.is_string()) return j.get<std::string>();
  return j.at(rng.index(j.size())).get<std::string>();
}

std::vector<const Row*> ranked_matches(const KnowledgeBase& kb,
                                       const std::map<std::string, Entity>& constraints,
                                       const DomainProfile& profile) {
  std::vector<const Row*> rows;
  for (const auto& [_, row] : kb.rows())
    if (row.head.etype == profile.head_type && row_matches(row, constraints)) rows.push_back(&row);
  auto key = [&](const Row* r) {
    const Entity* k = r->field(profile.ordering_key);
    auto v = k ? ordering_value(k->value) : std::nullopt;
    return v ? *v : -1;
  };
  std::stable_sort(rows.begin(), rows.end(),
                   [&](const Row* a, const Row* b) { return key(a) > key(b); });
  return rows;
}

}  // namespace

bool realize_dialog(const DialogSkeleton& sk, const KnowledgeBase& kb, const Ontology& ontology,
                    const Templates& templates, const DomainProfile& profile, Dialog& out) {
  auto ranked = ranked_matches(kb, sk.constraints, profile);
  if (static_cast<int>(ranked.size()) < sk.rejections + 1) return false;
  (void)ontology;

  const json& T = templates.raw;
  Rng rng(sk.phrasing_seed);
  const std::string silence = T.value("silence", "<silence>");
  const auto slots = templates.slot_relations();
  auto slot_json = [&](const std::string& rel) -> const json& {
    for (const auto& s : T.at("slots"))
      if (s.at("relation") == rel) return s;
    throw InvalidInput("templates: unknown slot " + rel);
  };

  auto initial = sk.constraints;
  if (!sk.updated_slot.empty()) initial[sk.updated_slot] = sk.initial_value;

  std::vector<Utterance> us;
  auto user = [&](const std::string& p, std::vector<Entity> e = {}) {
    us.push_back(UttBuilder(Speaker::user).text(p, e).done());
  };
  auto agent = [&](const std::string& p, std::vector<Entity> e = {}) {
    us.push_back(UttBuilder(Speaker::agent).text(p, e).done());
  };
  auto api_call = [&](const std::map<std::string, Entity>& c) {
    UttBuilder b(Speaker::agent);
    b.text(T.at("query").get<std::string>());
    for (const auto& s : slots) b.entity(c.at(s));
    us.push_back(b.done());
  };

  user(pick_str(rng, T.at("greeting").at("user")));
  agent(T.at("greeting").at("agent").get<std::string>());

  std::vector<std::string> missing;
  if (sk.informed_first.empty()) {
    user(pick_str(rng, T.at("request_bare")));
    missing = slots;
  } else {
    std::string pattern = pick_str(rng, T.at("request_prefix"));
    std::vector<Entity> ents;
    for (const auto& s : slots) {
      if (std::find(sk.informed_first.begin(), sk.informed_first.end(), s) != sk.informed_first.end()) {
        pattern += " " + slot_json(s).at("request").get<std::string>();
        ents.push_back(initial.at(s));
      } else {
        missing.push_back(s);
      }
    }
    user(pattern, ents);
  }
  for (const auto& s : missing) {
    agent(slot_json(s).at("ask").get<std::string>());
    user(pick_str(rng, slot_json(s).at("inform")), {initial.at(s)});
  }
  agent(T.at("searching").get<std::string>());
  user(silence);
  api_call(initial);

  if (!sk.updated_slot.empty()) {
    user(slot_json(sk.updated_slot).at("update").get<std::string>(),
         {sk.constraints.at(sk.updated_slot)});
    agent(T.at("update_ack").get<std::string>());
    user(pick_str(rng, T.at("update_done")));
    agent(T.at("searching").get<std::string>());
    user(silence);
    api_call(sk.constraints);
  }

  user(silence);
  agent(T.at("suggest").get<std::string>(), {ranked[0]->head});
  for (int k = 1; k <= sk.rejections; ++k) {
    user(pick_str(rng, T.at("reject")));
    agent(T.at("next_option").get<std::string>());
    user(silence);
    agent(T.at("suggest").get<std::string>(), {ranked[k]->head});
  }
  const Row* booked = ranked[sk.rejections];
  user(pick_str(rng, T.at("accept")));
  agent(T.at("reserve").get<std::string>());
  for (const auto& rel : sk.info_requests) {
    const Entity* v = booked->field(rel);
    if (!v) continue;
    user(pick_str(rng, T.at("ask_info").at(rel)));
    agent(T.at("give_info").get<std::string>(), {*v});
  }
  user(pick_str(rng, T.at("thanks")));
  agent(T.at("welcome").get<std::string>());

  out.id = sk.id;
  out.utterances = std::move(us);
  out.validate();
  return true;
}

GroundingResult assign_and_ground(const std::vector<DialogSkeleton>& skeletons,
                                  const KBTimeline& timeline, const Ontology& ontology,
                                  const Templates& templates, const DomainProfile& profile,
                                  std::uint64_t seed, double stale_fraction) {
  if (stale_fraction < 0.0 || stale_fraction > 1.0) throw InvalidInput("grounding: stale_fraction outside [0, 1]");
  GroundingResult res;
  auto kb_t = std::make_shared<const KnowledgeBase>(timeline.snapshot(timeline.last_tick()));
  res.snapshots[timeline.last_tick()] = kb_t;

  // Row indices per slot combination, to count satisfiable ticks quickly.
  const auto& base = timeline.base();
  for (const auto& sk : skeletons) {
    std::vector<std::size_t> match;
    std::size_t i = 0;
    for (const auto& [_, row] : base.rows()) {
      if (row.head.etype == profile.head_type && row_matches(row, sk.constraints)) match.push_back(i);
      ++i;
    }
    std::vector<std::int64_t> ticks;
    for (std::int64_t t = 0; t < timeline.horizon(); ++t) {
      int n = 0;
      for (auto r : match) n += timeline.available(t, r) ? 1 : 0;
      if (n >= sk.rejections + 1) ticks.push_back(t);
    }
    if (ticks.empty()) {
      std::cerr << "warning: skeleton " << sk.id << " unsatisfiable at every tick, dropped\n";
      res.dropped.push_back(sk.id);
      continue;
    }
    Rng rng(derive_seed(seed, sk.id));
    std::int64_t tick = ticks[rng.index(ticks.size())];
    if (stale_fraction < 1.0 && ticks.back() == timeline.last_tick()) {
      Rng stale(derive_seed(seed, sk.id + "/stale"));
      if (!stale.bernoulli(stale_fraction)) tick = timeline.last_tick();
    }
    auto& snap = res.snapshots[tick];
    if (!snap) snap = std::make_shared<const KnowledgeBase>(timeline.snapshot(tick));
    CorpusRecord rec;
    if (!realize_dialog(sk, *snap, ontology, templates, profile, rec.dialog))
      throw Error("grounding: satisfiable tick failed to realize " + sk.id);
    rec.dialog.timestamp = tick;
    rec.train_kb = kb_t;
    rec.gold_kb = snap;
    rec.gold_kb_id = snap->id();
    res.records.push_back(std::move(rec));
  }
  return res;
}

GroundingResult ground_on_final(const std::vector<DialogSkeleton>& skeletons,
                                const KBTimeline& timeline, const Ontology& ontology,
                                const Templates& templates, const DomainProfile& profile) {
  GroundingResult res;
  auto kb_t = std::make_shared<const KnowledgeBase>(timeline.snapshot(timeline.last_tick()));
  res.snapshots[timeline.last_tick()] = kb_t;
  for (const auto& sk : skeletons) {
    CorpusRecord rec;
    if (!realize_dialog(sk, *kb_t, ontology, templates, profile, rec.dialog)) {
      std::cerr << "warning: test skeleton " << sk.id << " unsatisfiable on K_T, dropped\n";
      res.dropped.push_back(sk.id);
      continue;
    }
    rec.dialog.timestamp = timeline.last_tick();
    rec.train_kb = kb_t;
    rec.gold_kb = kb_t;
    rec.gold_kb_id = kb_t->id();
    res.records.push_back(std::move(rec));
  }
  return res;
}

RecordTruth record_truth(const CorpusRecord& rec, const Ontology& ontology,
                         const DomainProfile& profile) {
  if (!rec.gold_kb || !rec.train_kb) throw JudgeUnavailable("record " + rec.dialog.id + " lacks KBs");
  RecordTruth t;
  const auto& kd = *rec.gold_kb;
  const auto& kt = *rec.train_kb;
  for (const auto& e : rec.dialog.mentioned_entities())
    if (kd.contains(e.value) && !kt.contains(e.value)) t.insert_rows.push_back(e.value);
  const auto view = dialog_kb(kt, rec.dialog, ontology, profile);
  for (const auto& [head, _] : view.rows())
    if (!kd.contains(head)) t.delete_rows.push_back(head);
  t.consistent = consistency_judge(rec, kt, ontology, profile);
  return t;
}

SimOutput run_simulation(const Ontology& ontology, const KnowledgeBase& base,
                         const Templates& templates, const CheckinProfile& profile,
                         const SimConfig& cfg, const DomainProfile& domain) {
  base.validate(ontology);
  std::map<std::string, AvailabilityProcess> procs;
  AvailabilityProcess p;
  p.kind = AvailabilityKind::checkin_weighted;
  p.profile = profile;
  p.maintenance_prob = cfg.maintenance_prob;
  p.closure_prob = cfg.closure_prob;
  procs[domain.head_type] = p;
  for (const auto& t : ontology.entity_types())
    if (!procs.count(t)) procs[t] = AvailabilityProcess{};

  SimOutput out;
  out.timeline = simulate_timeline(base, procs, cfg.horizon, derive_seed(cfg.seed, "timeline"));
  auto train_sk = sample_skeletons(ontology, base, templates, cfg.train, "train_",
                                   derive_seed(cfg.seed, "skeletons/train"));
  auto test_sk = sample_skeletons(ontology, base, templates, cfg.test, "test_",
                                  derive_seed(cfg.seed, "skeletons/test"));
  out.train = assign_and_ground(train_sk, out.timeline, ontology, templates, domain,
                                derive_seed(cfg.seed, "grounding"), cfg.stale_fraction);
  out.test = ground_on_final(test_sk, out.timeline, ontology, templates, domain);
  out.kb_train = out.train.snapshots.at(out.timeline.last_tick());
  return out;
}

}  // namespace dkaf
