#include "dkaf/mem/mem.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>

#include "dkaf/core/error.hpp"
#include "dkaf/core/json_io.hpp"

namespace dkaf::mem {

using nn::Graph;
using nn::Mat;
using nn::Segments;
using nn::Var;

std::vector<MaskedInstance> mask_instances(const Dialog& dialog) {
  std::vector<MaskedInstance> out;
  for (int u = 0; u < static_cast<int>(dialog.utterances.size()); ++u) {
    const auto& utt = dialog.utterances[u];
    if (utt.speaker != Speaker::agent) continue;
    for (int m = 0; m < static_cast<int>(utt.mentions.size()); ++m)
      out.push_back({dialog.id, u, m, utt.mentions[m].entity});
  }
  return out;
}

nlohmann::json MemConfig::to_json() const {
  return {{"blocks", blocks.to_json()}, {"adam", nn::to_json(adam)}, {"epochs", epochs},
          {"batch", batch},          {"floor", floor},              {"ctx_max", ctx_max}};
}

MemConfig MemConfig::from_json(const nlohmann::json& j) {
  MemConfig c;
  if (j.contains("blocks")) c.blocks = nn::BlockConfig::from_json(j.at("blocks"));
  if (j.contains("adam")) c.adam = nn::adam_from_json(j.at("adam"));
  c.epochs = j.value("epochs", c.epochs);
  c.batch = j.value("batch", c.batch);
  c.floor = j.value("floor", c.floor);
  c.ctx_max = j.value("ctx_max", c.ctx_max);
  if (c.epochs < 0 || c.batch <= 0 || !(c.floor > 0 && c.floor < 1))
    throw InvalidInput("mem config: bad epochs, batch or floor");
  return c;
}

namespace {

// Masked history of one instance.
struct History {
  nn::DialogInput input;
  int mask_token = 0;
  std::vector<int> ctx_utt, ctx_tok;      // every non-mask token
  std::vector<std::string> ctx_value;     // entity value starting at that token, else empty
  std::vector<std::string> ctx_surface;
  std::vector<Entity> visible;            // mentions other than the masked one, in order
};

History build_history(const Dialog& d, const MaskedInstance& inst, const nn::Vocab& vocab) {
  History h;
  for (int u = 0; u <= inst.utterance; ++u) {
    const auto& utt = d.utterances[u];
    std::vector<int> tok, tag;
    for (int k = 0; k < static_cast<int>(utt.tokens.size()); ++k) {
      const Mention* m = utt.mention_at(k);
      const bool masked = u == inst.utterance && m == &utt.mentions[inst.mention];
      if (masked) {
        h.mask_token = static_cast<int>(tok.size());
        tok.push_back(nn::Vocab::mask);
        tag.push_back(vocab.tag(inst.gold.etype));
        k = m->end - 1;
        continue;
      }
      h.ctx_utt.push_back(u);
      h.ctx_tok.push_back(static_cast<int>(tok.size()));
      h.ctx_value.push_back(m && m->start == k ? m->entity.value : std::string());
      h.ctx_surface.push_back(utt.tokens[k]);
      tok.push_back(vocab.id(utt.tokens[k]));
      tag.push_back(m ? vocab.tag(m->entity.etype) : 0);
    }
    for (int m = 0; m < static_cast<int>(utt.mentions.size()); ++m)
      if (!(u == inst.utterance && m == inst.mention)) h.visible.push_back(utt.mentions[m].entity);
    h.input.tokens.push_back(std::move(tok));
    h.input.tags.push_back(std::move(tag));
  }
  return h;
}

std::vector<int> zeros(std::size_t n) { return std::vector<int>(n, 0); }

}  // namespace

struct MemModel::Result {
  Var logp;                     // 1 x (instance, variant) slots, -inf when unsupported
  std::vector<int> supported;   // slots with a finite support
  // For inspection only.
  Var lambda_logit, kb_ls, ctx_ls;
  Segments kb_seg, ctx_seg;
  std::vector<std::vector<std::string>> kb_values;  // per slot
  std::vector<std::vector<std::string>> ctx_surface;  // per instance
  std::vector<int> slot_instance;
  std::vector<double> kb_gold, ctx_gold;  // per slot, NaN when absent
};

MemModel::MemModel(Ontology ontology, DomainProfile profile, nn::Vocab vocab, MemConfig cfg,
                   std::uint64_t seed)
    : ontology_(std::move(ontology)),
      profile_(std::move(profile)),
      vocab_(std::move(vocab)),
      cfg_(cfg),
      seed_(seed) {
  Rng rng(derive_seed(seed, "mem/init"));
  const auto& b = cfg_.blocks;
  enc_ = nn::DialogEncoder(ps_, "mem.dialog", vocab_, b, rng);
  kb_enc_ = nn::KBEncoder(ps_, "mem.kb", vocab_, static_cast<int>(ontology_.relations().size()), b, rng);
  memory_ = nn::MemoryNetwork(ps_, "mem.memory", b.emb, b.hops, b.scorer, rng);
  q0_ = nn::Linear(ps_, "mem.q0", 2 * b.hidden, b.emb, rng);
  kb_head_ = nn::Linear(ps_, "mem.kb_head", b.emb + b.hidden, b.emb, rng, false);
  ctx_head_ = nn::Linear(ps_, "mem.ctx_head", b.emb + b.hidden, 2 * b.hidden, rng, false);
  gate_ = nn::Linear(ps_, "mem.gate", b.emb + b.hidden, 1, rng);
}

KnowledgeBase MemModel::view(const Dialog& dialog, const KnowledgeBase& kb) const {
  return dialog_kb(kb, dialog, ontology_, profile_);
}

MemModel::Result MemModel::forward(Graph& g, const std::vector<Job>& jobs, bool keep_terms) const {
  Result res;
  // Dialog side: one encoder input per instance.
  std::vector<History> hist;
  std::vector<nn::DialogInput> inputs;
  std::vector<int> job_first;  // first instance of each job
  for (const auto& job : jobs) {
    job_first.push_back(static_cast<int>(hist.size()));
    for (const auto& inst : job.instances) {
      hist.push_back(build_history(*job.dialog, inst, vocab_));
      inputs.push_back(hist.back().input);
    }
  }
  const int n_inst = static_cast<int>(hist.size());
  nn::DialogEncoding enc = enc_.encode(g, inputs);
  std::vector<int> mask_cols;
  for (int i = 0; i < n_inst; ++i)
    mask_cols.push_back(enc.token_col(i, static_cast<int>(hist[i].input.tokens.size()) - 1, hist[i].mask_token));
  Var hm = g.gather_cols(enc.tokens, mask_cols);
  Var q0 = g.tanh(q0_(g, g.concat_rows({enc.c, hm})));

  // Context pointer: Luong scores over [h_ik; g_i], independent of the KB.
  std::vector<int> ctx_tok_cols, ctx_state_cols, ctx_owner, ctx_sizes;
  for (int i = 0; i < n_inst; ++i) {
    const auto& h = hist[i];
    for (std::size_t p = 0; p < h.ctx_tok.size(); ++p) {
      ctx_tok_cols.push_back(enc.token_col(i, h.ctx_utt[p], h.ctx_tok[p]));
      ctx_state_cols.push_back(enc.state_col(i, h.ctx_utt[p]));
      ctx_owner.push_back(i);
    }
    ctx_sizes.push_back(static_cast<int>(h.ctx_tok.size()));
  }
  Segments ctx_seg = Segments::from_sizes(ctx_sizes);
  Var ctx_ls;
  if (ctx_seg.total() > 0) {
    Var feats = g.concat_rows({g.gather_cols(enc.tokens, ctx_tok_cols), g.gather_cols(enc.states, ctx_state_cols)});
    Var u = ctx_head_(g, g.concat_rows({q0, hm}));
    Var score = g.sum_rows(g.cmul(feats, g.gather_cols(u, ctx_owner)));
    ctx_ls = g.segment_log_softmax(score, ctx_seg);
  }

  // KB side: one graph per distinct (view, recency tags).
  std::vector<nn::KBGraphInput> graphs;
  std::map<std::pair<std::pair<int, int>, std::vector<int>>, int> graph_of;
  std::vector<int> slot_graph, slot_inst;
  std::vector<std::string> slot_gold;
  for (std::size_t j = 0; j < jobs.size(); ++j) {
    const auto& job = jobs[j];
    std::vector<nn::KBGraphInput> base;
    for (const auto& v : job.views) base.push_back(nn::kb_graph(v, ontology_, vocab_));
    for (std::size_t v = 0; v < job.views.size(); ++v) {
      for (std::size_t k = 0; k < job.instances.size(); ++k) {
        const int i = job_first[j] + static_cast<int>(k);
        auto tags = nn::recency_tags(hist[i].visible);
        nn::KBGraphInput gi = base[v];
        for (std::size_t e = 0; e < gi.values.size(); ++e) {
          auto it = tags.find(gi.values[e]);
          gi.recency[e] = it == tags.end() ? 0 : it->second;
        }
        auto key = std::make_pair(std::make_pair(static_cast<int>(j), static_cast<int>(v)), gi.recency);
        auto found = graph_of.find(key);
        if (found == graph_of.end()) {
          found = graph_of.emplace(key, static_cast<int>(graphs.size())).first;
          graphs.push_back(std::move(gi));
        }
        slot_graph.push_back(found->second);
        slot_inst.push_back(i);
        slot_gold.push_back(job.instances[k].gold.value);
      }
    }
  }
  const int n_slots = static_cast<int>(slot_graph.size());
  // Empty views get no KB pointer; the model then relies on the context alone.
  std::vector<int> kb_slots;  // slots whose view is non-empty
  for (int s = 0; s < n_slots; ++s)
    if (!graphs[slot_graph[s]].values.empty()) kb_slots.push_back(s);

  Var hme = g.gather_cols(hm, slot_inst);
  Var q = g.gather_cols(q0, slot_inst);
  Var kb_ls;
  Segments kb_seg;
  std::vector<int> kb_gold_col(n_slots, -1);
  std::vector<std::vector<std::string>> slot_values(n_slots);
  if (!kb_slots.empty()) {
    std::vector<nn::KBGraphInput> nonempty;
    std::map<int, int> remap;
    for (std::size_t gi = 0; gi < graphs.size(); ++gi)
      if (!graphs[gi].values.empty()) {
        remap[static_cast<int>(gi)] = static_cast<int>(nonempty.size());
        nonempty.push_back(graphs[gi]);
      }
    nn::KBEncoding kbe = kb_enc_.encode(g, nonempty);
    std::vector<std::vector<int>> slots;
    std::vector<int> sizes;
    for (int s : kb_slots) {
      int gi = remap.at(slot_graph[s]);
      std::vector<int> cols;
      for (int c = kbe.start[gi]; c < kbe.start[gi + 1]; ++c) cols.push_back(c);
      sizes.push_back(static_cast<int>(cols.size()));
      slots.push_back(std::move(cols));
    }
    kb_seg = Segments::from_sizes(sizes);
    std::vector<int> kb_inst;
    for (int s : kb_slots) kb_inst.push_back(slot_inst[s]);
    nn::MemoryRead read = memory_.read(g, g.gather_cols(q0, kb_inst), kbe.z, slots);
    // Slots without a KB keep q0.
    if (static_cast<int>(kb_slots.size()) == n_slots) {
      q = read.q;
    } else {
      std::vector<int> pick(n_slots);
      int next_kb = 0;
      for (int s = 0; s < n_slots; ++s)
        pick[s] = next_kb < static_cast<int>(kb_slots.size()) && kb_slots[next_kb] == s ? next_kb++
                                                                                      : static_cast<int>(kb_slots.size()) + s;
      q = g.gather_cols(g.concat_cols({read.q, q}), pick);
    }
    std::vector<int> flat, owner;
    for (std::size_t k = 0; k < slots.size(); ++k) {
      flat.insert(flat.end(), slots[k].begin(), slots[k].end());
      owner.insert(owner.end(), slots[k].size(), static_cast<int>(k));
      const auto& gr = graphs[slot_graph[kb_slots[k]]];
      slot_values[kb_slots[k]] = gr.values;
      int idx = gr.index_of(slot_gold[kb_slots[k]]);
      if (idx >= 0) kb_gold_col[kb_slots[k]] = kb_seg.start[k] + idx;
    }
    Var key = g.concat_rows({g.gather_cols(q, kb_slots), g.gather_cols(hme, kb_slots)});
    Var u = kb_head_(g, key);
    Var score = g.sum_rows(g.cmul(g.gather_cols(kbe.z, flat), g.gather_cols(u, owner)));
    kb_ls = g.segment_log_softmax(score, kb_seg);
  }

  Var lam = gate_(g, g.concat_rows({q, hme}));
  Var log_lam = g.log_sigmoid(lam);
  Var log_1m = g.log_sigmoid(g.scale(lam, -1.0));

  // Mixture terms per slot, combined with a log-sum-exp.
  std::vector<int> kb_cols, kb_term_slot, ctx_cols, ctx_term_slot;
  for (int s = 0; s < n_slots; ++s) {
    if (kb_gold_col[s] >= 0) {
      kb_cols.push_back(kb_gold_col[s]);
      kb_term_slot.push_back(s);
    }
    const int i = slot_inst[s];
    const auto& h = hist[i];
    int best = -1;
    for (std::size_t p = 0; p < h.ctx_value.size(); ++p) {
      if (h.ctx_value[p] != slot_gold[s]) continue;
      int col = ctx_seg.start[i] + static_cast<int>(p);
      if (!cfg_.ctx_max) {
        ctx_cols.push_back(col);
        ctx_term_slot.push_back(s);
      } else if (best < 0 || g.value(ctx_ls)(0, col) > g.value(ctx_ls)(0, best)) {
        best = col;
      }
    }
    if (cfg_.ctx_max && best >= 0) {
      ctx_cols.push_back(best);
      ctx_term_slot.push_back(s);
    }
  }
  std::vector<Var> parts;
  std::vector<int> term_slot;
  if (!kb_cols.empty()) {
    parts.push_back(g.add(g.pick_many(kb_ls, zeros(kb_cols.size()), kb_cols),
                          g.pick_many(log_lam, zeros(kb_term_slot.size()), kb_term_slot)));
    term_slot.insert(term_slot.end(), kb_term_slot.begin(), kb_term_slot.end());
  }
  if (!ctx_cols.empty()) {
    parts.push_back(g.add(g.pick_many(ctx_ls, zeros(ctx_cols.size()), ctx_cols),
                          g.pick_many(log_1m, zeros(ctx_term_slot.size()), ctx_term_slot)));
    term_slot.insert(term_slot.end(), ctx_term_slot.begin(), ctx_term_slot.end());
  }
  std::vector<int> order(term_slot.size()), sizes(n_slots, 0);
  for (std::size_t t = 0; t < order.size(); ++t) order[t] = static_cast<int>(t);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return term_slot[a] < term_slot[b]; });
  for (int s : term_slot) ++sizes[s];
  Segments term_seg = Segments::from_sizes(sizes);
  if (parts.empty()) {
    res.logp = g.constant(Mat::Constant(1, n_slots, -std::numeric_limits<double>::infinity()));
  } else {
    Var all = parts.size() == 1 ? parts[0] : g.concat_cols(parts);
    res.logp = g.segment_logsumexp(g.gather_cols(all, order), term_seg);
  }
  for (int s = 0; s < n_slots; ++s)
    if (sizes[s] > 0) res.supported.push_back(s);

  if (keep_terms) {
    res.lambda_logit = lam;
    res.kb_ls = kb_ls;
    res.ctx_ls = ctx_ls;
    res.kb_seg = kb_seg;
    res.ctx_seg = ctx_seg;
    res.kb_values = slot_values;
    res.slot_instance = slot_inst;
    for (const auto& h : hist) res.ctx_surface.push_back(h.ctx_surface);
    const double nan = std::numeric_limits<double>::quiet_NaN();
    res.kb_gold.assign(n_slots, nan);
    res.ctx_gold.assign(n_slots, nan);
    for (int s = 0; s < n_slots; ++s)
      if (kb_gold_col[s] >= 0) res.kb_gold[s] = std::exp(g.value(kb_ls)(0, kb_gold_col[s]));
    for (std::size_t t = 0; t < ctx_cols.size(); ++t) {
      int s = ctx_term_slot[t];
      double p = std::exp(g.value(ctx_ls)(0, ctx_cols[t]));
      res.ctx_gold[s] = std::isnan(res.ctx_gold[s]) ? p : res.ctx_gold[s] + p;
    }
  }
  return res;
}

MemTerms MemModel::inspect(const Dialog& dialog, const KnowledgeBase& kb, const MaskedInstance& inst) const {
  Graph g;
  Result r = forward(g, {Job{&dialog, {view(dialog, kb)}, {inst}}}, true);
  MemTerms t;
  t.lambda = 1.0 / (1.0 + std::exp(-g.value(r.lambda_logit)(0, 0)));
  t.p_kb = std::isnan(r.kb_gold[0]) ? 0.0 : r.kb_gold[0];
  t.p_ctx = std::isnan(r.ctx_gold[0]) ? 0.0 : r.ctx_gold[0];
  t.prob = std::exp(g.value(r.logp)(0, 0));
  if (!r.kb_values[0].empty())
    for (std::size_t e = 0; e < r.kb_values[0].size(); ++e)
      t.kb_dist.push_back({r.kb_values[0][e], std::exp(g.value(r.kb_ls)(0, e))});
  for (std::size_t p = 0; p < r.ctx_surface[0].size(); ++p)
    t.ctx_dist.push_back({r.ctx_surface[0][p], std::exp(g.value(r.ctx_ls)(0, p))});
  return t;
}

double MemModel::mem_prob(const Dialog& dialog, const KnowledgeBase& kb, const MaskedInstance& inst) const {
  Graph g;
  Result r = forward(g, {Job{&dialog, {view(dialog, kb)}, {inst}}}, false);
  return std::exp(g.value(r.logp)(0, 0));
}

std::vector<double> MemModel::log_likelihoods(const Dialog& dialog,
                                              const std::vector<KnowledgeBase>& kbs) const {
  auto instances = mask_instances(dialog);
  std::vector<double> out(kbs.size(), 0.0);
  if (instances.empty() || kbs.empty()) return out;
  Job job{&dialog, {}, instances};
  for (const auto& kb : kbs) job.views.push_back(view(dialog, kb));
  Graph g;
  Result r = forward(g, {job}, false);
  const Mat& lp = g.value(r.logp);
  const double floor = std::log(cfg_.floor);
  const int n = static_cast<int>(instances.size());
  for (std::size_t v = 0; v < kbs.size(); ++v) {
    // Sum in a fixed order so the result does not depend on how instances were enumerated.
    std::vector<double> terms;
    for (int i = 0; i < n; ++i) terms.push_back(std::max(lp(0, static_cast<int>(v) * n + i), floor));
    std::sort(terms.begin(), terms.end());
    double s = 0.0;
    for (double t : terms) s += t;
    out[v] = s;
  }
  return out;
}

double MemModel::log_likelihood(const Dialog& dialog, const KnowledgeBase& kb) const {
  return log_likelihoods(dialog, {kb})[0];
}

std::vector<EpochStat> MemModel::train(const std::vector<MemExample>& data, int epochs,
                                       std::uint64_t seed,
                                       const std::function<void(const EpochStat&)>& on_epoch) {
  struct Prepared {
    const Dialog* dialog;
    KnowledgeBase view;
    std::vector<MaskedInstance> instances;
  };
  std::vector<Prepared> prep;
  for (const auto& ex : data) {
    auto inst = mask_instances(*ex.dialog);
    if (!inst.empty()) prep.push_back({ex.dialog, view(*ex.dialog, *ex.kb), std::move(inst)});
  }
  if (prep.empty()) throw InvalidInput("train_mem: no agent entities to learn from");
  nn::Adam opt(ps_, cfg_.adam);
  Rng rng(derive_seed(seed, "mem/order"));
  std::vector<EpochStat> curve;
  std::vector<std::size_t> order(prep.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  for (int epoch = 0; epoch < epochs; ++epoch) {
    rng.shuffle(order);
    double total = 0.0, norm = 0.0;
    long count = 0;
    int steps = 0;
    std::size_t pos = 0;
    while (pos < order.size()) {
      std::vector<Job> jobs;
      int n = 0;
      while (pos < order.size() && n < cfg_.batch) {
        const auto& p = prep[order[pos++]];
        jobs.push_back(Job{p.dialog, {p.view}, p.instances});
        n += static_cast<int>(p.instances.size());
      }
      Graph g;
      Result r = forward(g, jobs, false);
      if (r.supported.empty()) continue;
      Var lp = g.pick_many(r.logp, zeros(r.supported.size()), r.supported);
      Var loss = g.scale(g.mean(lp), -1.0);
      const double l = g.scalar(loss);
      if (!std::isfinite(l)) throw Divergence("MEM loss became non-finite at epoch " + std::to_string(epoch));
      g.backward(loss);
      norm += opt.step();
      ++steps;
      total += l * static_cast<double>(r.supported.size());
      count += static_cast<long>(r.supported.size());
    }
    EpochStat st{epoch, count ? total / count : 0.0, steps ? norm / steps : 0.0};
    curve.push_back(st);
    if (on_epoch) on_epoch(st);
  }
  return curve;
}

void MemModel::save(const std::string& path, const nlohmann::json& extra) const {
  nlohmann::json side = extra;
  side["kind"] = "mem";
  side["config"] = cfg_.to_json();
  side["seed"] = seed_;
  side["vocab"] = vocab_.to_json();
  side["ontology"] = to_json(ontology_);
  side["profile"] = {{"head_type", profile_.head_type},
                     {"ordering_key", profile_.ordering_key},
                     {"query_marker", profile_.query_marker}};
  nn::save_checkpoint(path, ps_, side);
}

MemModel MemModel::load(const std::string& path) {
  auto side = nn::read_checkpoint_sidecar(path);
  if (side.value("kind", "") != "mem") throw InvalidInput(path + " is not a MEM checkpoint");
  DomainProfile prof;
  prof.head_type = side.at("profile").at("head_type");
  prof.ordering_key = side.at("profile").at("ordering_key");
  prof.query_marker = side.at("profile").at("query_marker");
  MemModel m(ontology_from_json(side.at("ontology")), prof, nn::Vocab::from_json(side.at("vocab")),
             MemConfig::from_json(side.at("config")), side.at("seed").get<std::uint64_t>());
  m.ps_.load(path);
  return m;
}

MemModel train_mem(const std::vector<MemExample>& data, const Ontology& ontology,
                   const DomainProfile& profile, const MemConfig& cfg, std::uint64_t seed,
                   std::vector<EpochStat>* curve) {
  std::vector<Dialog> dialogs;
  for (const auto& ex : data) dialogs.push_back(*ex.dialog);
  MemModel m(ontology, profile, nn::Vocab::build(ontology, dialogs), cfg, seed);
  auto c = m.train(data, cfg.epochs, seed);
  if (curve) *curve = std::move(c);
  return m;
}

}  // namespace dkaf::mem
