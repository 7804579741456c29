#include "dkaf/tod/responder.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include "dkaf/core/error.hpp"
#include "dkaf/core/json_io.hpp"
#include "dkaf/core/judge.hpp"

namespace dkaf::tod {

using nn::Graph;
using nn::Mat;
using nn::Segments;
using nn::Var;

const std::string Responder::sos = "<sos>";
const std::string Responder::eos = "<eos>";

nlohmann::json TodConfig::to_json() const {
  return {{"blocks", blocks.to_json()}, {"adam", nn::to_json(adam)}, {"epochs", epochs},
          {"batch", batch},          {"key_dim", key_dim},          {"max_len", max_len}};
}

TodConfig TodConfig::from_json(const nlohmann::json& j) {
  TodConfig c;
  if (j.contains("blocks")) c.blocks = nn::BlockConfig::from_json(j.at("blocks"));
  if (j.contains("adam")) c.adam = nn::adam_from_json(j.at("adam"));
  c.epochs = j.value("epochs", c.epochs);
  c.batch = j.value("batch", c.batch);
  c.key_dim = j.value("key_dim", c.key_dim);
  c.max_len = j.value("max_len", c.max_len);
  if (c.epochs < 0 || c.batch <= 0 || c.key_dim <= 0 || c.max_len <= 0)
    throw InvalidInput("tod config: bad values");
  if (c.blocks.emb != c.blocks.hidden) throw InvalidInput("tod config: emb must equal hidden");
  return c;
}

nn::Vocab responder_vocab(const Ontology& ontology, const std::vector<Dialog>& dialogs) {
  nn::Vocab v = nn::Vocab::build(ontology, dialogs);
  v.add(Responder::sos);
  v.add(Responder::eos);
  return v;
}

namespace {

// Rows the responder may consult before agent turn `turn`: the view of the latest
// query so far, or only the mentioned rows when no query has been issued yet.
KnowledgeBase turn_kb(const Dialog& dialog, int turn, const KnowledgeBase& kb, const Ontology& onto,
                      const DomainProfile& profile) {
  Dialog prefix;
  prefix.id = dialog.id;
  prefix.utterances.assign(dialog.utterances.begin(), dialog.utterances.begin() + turn);
  if (extract_query(prefix, onto, profile).has_query) return dialog_kb(kb, prefix, onto, profile);
  KnowledgeBase out(kb.id());
  for (const auto& v : prefix.mentioned_values())
    if (const Row* r = kb.find(v)) out.insert(*r);
  return out;
}

std::vector<Entity> prefix_mentions(const Dialog& dialog, int turn) {
  Dialog prefix;
  prefix.utterances.assign(dialog.utterances.begin(), dialog.utterances.begin() + turn);
  return prefix.mentioned_entities();
}

std::vector<int> agent_turns(const Dialog& d) {
  std::vector<int> out;
  for (int u = 1; u < static_cast<int>(d.utterances.size()); ++u)
    if (d.utterances[u].speaker == Speaker::agent) out.push_back(u);
  return out;
}

}  // namespace

struct Responder::Batch {
  struct Turn {
    int inst = 0;
    int utt = 0;     // index of the agent utterance being produced
    int graph = -1;  // distinct KB graph, -1 when the turn sees no rows
    std::vector<std::pair<int, int>> hist;  // (utterance, token) of every history token
    std::vector<std::string> hist_str;
  };
  std::vector<nn::DialogInput> inputs;
  std::vector<nn::KBGraphInput> graphs;
  std::vector<Turn> turns;
  // Set by encode().
  nn::DialogEncoding enc;
  nn::KBEncoding kbe;
  Var s, q, ctx_keys, kb_keys;
};

struct Responder::Outputs {
  std::vector<int> step_turn, turn_start;
  Var gen, gate, ctx, kb;
  std::vector<int> ctx_step, kb_step;
  std::vector<const std::string*> ctx_str, kb_str;
};

Responder::Responder(Ontology ontology, DomainProfile profile, nn::Vocab vocab, TodConfig cfg,
                     std::uint64_t seed)
    : ontology_(std::move(ontology)),
      profile_(std::move(profile)),
      vocab_(std::move(vocab)),
      cfg_(cfg),
      seed_(seed) {
  if (!vocab_.contains(sos) || !vocab_.contains(eos)) throw InvalidInput("responder: vocab lacks decoder markers");
  if (cfg_.blocks.emb != cfg_.blocks.hidden) throw InvalidInput("responder: emb must equal hidden");
  std::set<std::string> entity_values;
  for (const auto& e : ontology_.entities()) entity_values.insert(e.value);
  gen_index_.assign(vocab_.size(), -1);
  for (int id = nn::Vocab::e2_close + 1; id < vocab_.size(); ++id) {
    const auto& t = vocab_.token(id);
    if (t == sos || entity_values.count(t)) continue;
    gen_index_[id] = static_cast<int>(gen_ids_.size());
    gen_ids_.push_back(id);
  }
  Rng rng(derive_seed(seed, "tod/init"));
  const auto& b = cfg_.blocks;
  const int H = b.hidden;
  enc_ = nn::DialogEncoder(ps_, "tod.dialog", vocab_, b, rng);
  kb_enc_ = nn::KBEncoder(ps_, "tod.kb", vocab_, static_cast<int>(ontology_.relations().size()), b, rng);
  memory_ = nn::MemoryNetwork(ps_, "tod.memory", b.emb, b.hops, b.scorer, rng);
  q0_ = nn::Linear(ps_, "tod.q0", H, b.emb, rng);
  dec_emb_ = &ps_.uniform("tod.dec.emb", b.emb, vocab_.size(), 0.1, rng);
  dec_ = nn::make_gru(ps_, "tod.dec.gru", b.emb + H + b.emb, H, rng);
  gen_ = nn::Linear(ps_, "tod.gen", 3 * H, static_cast<int>(gen_ids_.size()), rng);
  ctx_key_ = nn::Linear(ps_, "tod.ctx_key", H, cfg_.key_dim, rng, false);
  ctx_query_ = nn::Linear(ps_, "tod.ctx_query", 3 * H, cfg_.key_dim, rng);
  kb_key_ = nn::Linear(ps_, "tod.kb_key", b.emb, cfg_.key_dim, rng, false);
  kb_query_ = nn::Linear(ps_, "tod.kb_query", 3 * H, cfg_.key_dim, rng);
  gate_ = nn::Linear(ps_, "tod.gate", 3 * H, 3, rng);
}

Responder::Batch Responder::prepare(const std::vector<TodExample>& data,
                                    const std::vector<std::vector<int>>& turns) const {
  Batch b;
  std::map<std::pair<std::vector<std::string>, std::map<std::string, int>>, int> graph_ids;
  for (std::size_t j = 0; j < data.size(); ++j) {
    const Dialog& d = *data[j].dialog;
    const int n_hist = turns[j].empty() ? 0 : *std::max_element(turns[j].begin(), turns[j].end());
    if (n_hist > static_cast<int>(d.utterances.size())) throw InvalidInput("responder: turn out of range");
    b.inputs.push_back(nn::plain_input(d, vocab_, n_hist - 1));
    for (int t : turns[j]) {
      if (t < 1) throw InvalidInput("responder: an agent turn needs history");
      Batch::Turn turn;
      turn.inst = static_cast<int>(j);
      turn.utt = t;
      for (int u = 0; u < t; ++u)
        for (int k = 0; k < static_cast<int>(d.utterances[u].tokens.size()); ++k) {
          turn.hist.push_back({u, k});
          turn.hist_str.push_back(d.utterances[u].tokens[k]);
        }
      if (turn.hist.empty()) throw InvalidInput("responder: empty history in " + d.id);
      KnowledgeBase view = turn_kb(d, t, *data[j].kb, ontology_, profile_);
      if (!view.empty()) {
        auto tags = nn::recency_tags(prefix_mentions(d, t));
        std::vector<std::string> key{std::to_string(j)};
        for (const auto& [h, _] : view.rows()) key.push_back(h);
        auto id = std::make_pair(key, tags);
        auto it = graph_ids.find(id);
        if (it == graph_ids.end()) {
          it = graph_ids.emplace(id, static_cast<int>(b.graphs.size())).first;
          b.graphs.push_back(nn::kb_graph(view, ontology_, vocab_, tags));
        }
        turn.graph = it->second;
      }
      b.turns.push_back(std::move(turn));
    }
  }
  return b;
}

void Responder::encode(Graph& g, Batch& b) const {
  b.enc = enc_.encode(g, b.inputs);
  std::vector<int> state_cols;
  for (const auto& t : b.turns) state_cols.push_back(b.enc.state_col(t.inst, t.utt - 1));
  b.s = g.gather_cols(b.enc.states, state_cols);
  Var q0 = g.tanh(q0_(g, b.s));
  b.ctx_keys = ctx_key_(g, b.enc.tokens);
  if (b.graphs.empty()) {
    b.q = q0;
    return;
  }
  b.kbe = kb_enc_.encode(g, b.graphs);
  b.kb_keys = kb_key_(g, b.kbe.z);
  std::vector<int> with, without;
  std::vector<std::vector<int>> slots;
  for (std::size_t i = 0; i < b.turns.size(); ++i) {
    const int gi = b.turns[i].graph;
    if (gi < 0) {
      without.push_back(static_cast<int>(i));
      continue;
    }
    with.push_back(static_cast<int>(i));
    std::vector<int> cols;
    for (int c = b.kbe.start[gi]; c < b.kbe.start[gi + 1]; ++c) cols.push_back(c);
    slots.push_back(std::move(cols));
  }
  Var read = memory_.read(g, g.gather_cols(q0, with), b.kbe.z, slots).q;
  std::vector<int> perm(b.turns.size());
  for (std::size_t k = 0; k < with.size(); ++k) perm[with[k]] = static_cast<int>(k);
  if (without.empty()) {
    b.q = g.gather_cols(read, perm);
    return;
  }
  for (std::size_t k = 0; k < without.size(); ++k) perm[without[k]] = static_cast<int>(with.size() + k);
  b.q = g.gather_cols(g.concat_cols({read, g.gather_cols(q0, without)}), perm);
}

Responder::Outputs Responder::decode(Graph& g, const Batch& b,
                                     const std::vector<std::vector<std::string>>& feeds) const {
  Outputs o;
  std::vector<int> feed_ids, sizes;
  for (std::size_t r = 0; r < feeds.size(); ++r) {
    o.turn_start.push_back(static_cast<int>(o.step_turn.size()));
    for (const auto& tok : feeds[r]) {
      feed_ids.push_back(vocab_.id(tok));
      o.step_turn.push_back(static_cast<int>(r));
    }
    sizes.push_back(static_cast<int>(feeds[r].size()));
  }
  const int S = static_cast<int>(o.step_turn.size());
  Var s = g.gather_cols(b.s, o.step_turn);
  Var q = g.gather_cols(b.q, o.step_turn);
  Var x = g.concat_rows({g.gather_cols(g.param(*dec_emb_), feed_ids), s, q});
  Var h = g.gru(x, Segments::from_sizes(sizes), dec_, false);
  Var out = g.concat_rows({h, s, q});
  o.gen = g.col_log_softmax(gen_(g, out));
  Mat mask = Mat::Zero(3, S);
  for (int t = 0; t < S; ++t)
    if (b.turns[o.step_turn[t]].graph < 0) mask(2, t) = -1e9;
  o.gate = g.col_log_softmax(g.add(gate_(g, out), g.constant(mask)));
  const double inv = 1.0 / std::sqrt(static_cast<double>(cfg_.key_dim));

  std::vector<int> pq, pk, ctx_sizes;
  for (int t = 0; t < S; ++t) {
    const auto& turn = b.turns[o.step_turn[t]];
    for (std::size_t i = 0; i < turn.hist.size(); ++i) {
      pq.push_back(t);
      pk.push_back(b.enc.token_col(turn.inst, turn.hist[i].first, turn.hist[i].second));
      o.ctx_step.push_back(t);
      o.ctx_str.push_back(&turn.hist_str[i]);
    }
    ctx_sizes.push_back(static_cast<int>(turn.hist.size()));
  }
  Var cq = ctx_query_(g, out);
  Var cs = g.scale(g.sum_rows(g.cmul(g.gather_cols(cq, pq), g.gather_cols(b.ctx_keys, pk))), inv);
  o.ctx = g.segment_log_softmax(cs, Segments::from_sizes(ctx_sizes));

  if (!b.graphs.empty()) {
    std::vector<int> kq, kk, kb_sizes;
    for (int t = 0; t < S; ++t) {
      const int gi = b.turns[o.step_turn[t]].graph;
      int n = 0;
      if (gi >= 0) {
        for (int e = 0; e < static_cast<int>(b.graphs[gi].values.size()); ++e, ++n) {
          kq.push_back(t);
          kk.push_back(b.kbe.start[gi] + e);
          o.kb_step.push_back(t);
          o.kb_str.push_back(&b.graphs[gi].values[e]);
        }
      }
      kb_sizes.push_back(n);
    }
    if (!kq.empty()) {
      Var kqv = kb_query_(g, out);
      Var ks = g.scale(g.sum_rows(g.cmul(g.gather_cols(kqv, kq), g.gather_cols(b.kb_keys, kk))), inv);
      o.kb = g.segment_log_softmax(ks, Segments::from_sizes(kb_sizes));
    }
  }
  return o;
}

namespace {

// Per-step distributions over output strings from the decoder's log-probabilities.
std::vector<std::map<std::string, double>> distributions(const Graph& g, const std::vector<int>& steps,
                                                         const Mat& gen, const Mat& gate, const Mat* ctx,
                                                         const std::vector<int>& ctx_step,
                                                         const std::vector<const std::string*>& ctx_str,
                                                         const Mat* kb, const std::vector<int>& kb_step,
                                                         const std::vector<const std::string*>& kb_str,
                                                         const std::vector<int>& gen_ids, const nn::Vocab& vocab) {
  (void)g;
  std::map<int, int> slot;
  for (std::size_t i = 0; i < steps.size(); ++i) slot[steps[i]] = static_cast<int>(i);
  std::vector<std::map<std::string, double>> out(steps.size());
  for (std::size_t i = 0; i < steps.size(); ++i) {
    const int t = steps[i];
    for (int k = 0; k < gen.rows(); ++k) out[i][vocab.token(gen_ids[k])] += std::exp(gate(0, t) + gen(k, t));
  }
  if (ctx)
    for (std::size_t p = 0; p < ctx_step.size(); ++p) {
      auto it = slot.find(ctx_step[p]);
      if (it != slot.end()) out[it->second][*ctx_str[p]] += std::exp(gate(1, ctx_step[p]) + (*ctx)(0, p));
    }
  if (kb)
    for (std::size_t p = 0; p < kb_step.size(); ++p) {
      auto it = slot.find(kb_step[p]);
      if (it != slot.end()) out[it->second][*kb_str[p]] += std::exp(gate(2, kb_step[p]) + (*kb)(0, p));
    }
  return out;
}

std::string argmax(const std::map<std::string, double>& d) {
  std::string best;
  double bp = -1.0;
  for (const auto& [w, p] : d)
    if (p > bp) {
      best = w;
      bp = p;
    }
  return best;
}

}  // namespace

std::vector<TodEpoch> Responder::train(const std::vector<TodExample>& data, std::uint64_t seed,
                                       const std::function<void(const TodEpoch&)>& on_epoch) {
  if (data.empty()) throw InvalidInput("train_tod: no dialogs");
  std::vector<std::size_t> order(data.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  nn::Adam opt(ps_, cfg_.adam);
  Rng rng(derive_seed(seed, "tod/order"));
  std::vector<TodEpoch> curve;
  for (int epoch = 0; epoch < cfg_.epochs; ++epoch) {
    rng.shuffle(order);
    double loss_sum = 0.0;
    long supported = 0, correct = 0, total = 0;
    for (std::size_t pos = 0; pos < order.size(); pos += static_cast<std::size_t>(cfg_.batch)) {
      std::vector<TodExample> ex;
      std::vector<std::vector<int>> turns;
      for (std::size_t k = pos; k < std::min(order.size(), pos + static_cast<std::size_t>(cfg_.batch)); ++k) {
        auto ts = agent_turns(*data[order[k]].dialog);
        if (ts.empty()) continue;
        ex.push_back(data[order[k]]);
        turns.push_back(std::move(ts));
      }
      if (ex.empty()) continue;
      Batch b = prepare(ex, turns);
      Graph g;
      encode(g, b);
      std::vector<std::vector<std::string>> feeds, targets;
      for (const auto& t : b.turns) {
        const auto& toks = ex[t.inst].dialog->utterances[t.utt].tokens;
        std::vector<std::string> f{sos};
        f.insert(f.end(), toks.begin(), toks.end());
        std::vector<std::string> y(toks.begin(), toks.end());
        y.push_back(eos);
        feeds.push_back(std::move(f));
        targets.push_back(std::move(y));
      }
      Outputs o = decode(g, b, feeds);
      const int S = static_cast<int>(o.step_turn.size());
      std::vector<const std::string*> gold(S);
      for (int t = 0; t < S; ++t) gold[t] = &targets[o.step_turn[t]][t - o.turn_start[o.step_turn[t]]];

      // Gather every (step, log-probability) term supporting the gold token.
      std::vector<int> gen_r, gen_c, gate_c_gen, ctx_p, ctx_c, kb_p, kb_c;
      std::vector<int> term_step;
      for (int t = 0; t < S; ++t) {
        const int id = vocab_.contains(*gold[t]) ? vocab_.id(*gold[t]) : -1;
        if (id >= 0 && gen_index_[id] >= 0) {
          gen_r.push_back(gen_index_[id]);
          gen_c.push_back(t);
        }
      }
      for (std::size_t p = 0; p < o.ctx_step.size(); ++p)
        if (*o.ctx_str[p] == *gold[o.ctx_step[p]]) {
          ctx_p.push_back(static_cast<int>(p));
          ctx_c.push_back(o.ctx_step[p]);
        }
      for (std::size_t p = 0; p < o.kb_step.size(); ++p)
        if (*o.kb_str[p] == *gold[o.kb_step[p]]) {
          kb_p.push_back(static_cast<int>(p));
          kb_c.push_back(o.kb_step[p]);
        }
      std::vector<Var> parts;
      if (!gen_r.empty()) {
        parts.push_back(g.add(g.pick_many(o.gen, gen_r, gen_c),
                              g.pick_many(o.gate, std::vector<int>(gen_c.size(), 0), gen_c)));
        term_step.insert(term_step.end(), gen_c.begin(), gen_c.end());
      }
      if (!ctx_p.empty()) {
        parts.push_back(g.add(g.pick_many(o.ctx, std::vector<int>(ctx_p.size(), 0), ctx_p),
                              g.pick_many(o.gate, std::vector<int>(ctx_c.size(), 1), ctx_c)));
        term_step.insert(term_step.end(), ctx_c.begin(), ctx_c.end());
      }
      if (!kb_p.empty()) {
        parts.push_back(g.add(g.pick_many(o.kb, std::vector<int>(kb_p.size(), 0), kb_p),
                              g.pick_many(o.gate, std::vector<int>(kb_c.size(), 2), kb_c)));
        term_step.insert(term_step.end(), kb_c.begin(), kb_c.end());
      }
      if (parts.empty()) continue;
      std::vector<int> perm(term_step.size());
      for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = static_cast<int>(i);
      std::stable_sort(perm.begin(), perm.end(), [&](int a, int c) { return term_step[a] < term_step[c]; });
      std::vector<int> sizes;
      int prev = -1;
      for (int i : perm) {
        if (term_step[i] != prev) {
          sizes.push_back(0);
          prev = term_step[i];
        }
        ++sizes.back();
      }
      Var terms = g.gather_cols(parts.size() == 1 ? parts[0] : g.concat_cols(parts), perm);
      Var logp = g.segment_logsumexp(terms, Segments::from_sizes(sizes));
      const double n = static_cast<double>(sizes.size());
      Var loss = g.scale(g.sum(logp), -1.0 / n);
      const double lv = g.scalar(loss);
      if (!std::isfinite(lv)) throw Divergence("train_tod: non-finite loss at epoch " + std::to_string(epoch));
      loss_sum += lv * n;
      supported += static_cast<long>(sizes.size());

      std::vector<int> all(S);
      for (int t = 0; t < S; ++t) all[t] = t;
      auto dists = distributions(g, all, g.value(o.gen), g.value(o.gate), &g.value(o.ctx), o.ctx_step, o.ctx_str,
                                 o.kb.valid() ? &g.value(o.kb) : nullptr, o.kb_step, o.kb_str, gen_ids_, vocab_);
      for (int t = 0; t < S; ++t) correct += argmax(dists[t]) == *gold[t];
      total += S;

      g.backward(loss);
      opt.step();
    }
    TodEpoch st{epoch, supported ? loss_sum / static_cast<double>(supported) : 0.0,
                total ? static_cast<double>(correct) / static_cast<double>(total) : 0.0};
    curve.push_back(st);
    if (on_epoch) on_epoch(st);
  }
  return curve;
}

std::vector<std::string> Responder::greedy(const Dialog& dialog, const KnowledgeBase& kb,
                                           const std::vector<int>& turns, int max_len,
                                           StepDistribution* first) const {
  if (turns.empty()) return {};
  Batch b = prepare({{&dialog, &kb}}, {turns});
  Graph g;
  encode(g, b);
  const std::size_t R = b.turns.size();
  std::vector<std::vector<std::string>> feeds(R, std::vector<std::string>{sos});
  std::vector<bool> done(R, false);
  for (int step = 0; step < max_len; ++step) {
    Outputs o = decode(g, b, feeds);
    std::vector<int> last;
    std::vector<std::size_t> who;
    for (std::size_t r = 0; r < R; ++r)
      if (!done[r]) {
        last.push_back(o.turn_start[r] + static_cast<int>(feeds[r].size()) - 1);
        who.push_back(r);
      }
    auto dists = distributions(g, last, g.value(o.gen), g.value(o.gate), &g.value(o.ctx), o.ctx_step, o.ctx_str,
                               o.kb.valid() ? &g.value(o.kb) : nullptr, o.kb_step, o.kb_str, gen_ids_, vocab_);
    if (step == 0 && first) first->assign(dists[0].begin(), dists[0].end());
    for (std::size_t i = 0; i < who.size(); ++i) {
      const std::string w = argmax(dists[i]);
      if (w == eos) done[who[i]] = true;
      else feeds[who[i]].push_back(w);
    }
    if (std::all_of(done.begin(), done.end(), [](bool x) { return x; })) break;
  }
  std::vector<std::string> out;
  for (const auto& f : feeds) out.push_back(join_tokens(f, 1));
  return out;
}

std::vector<std::string> Responder::predict_dialog(const Dialog& dialog, const KnowledgeBase& kb) const {
  return greedy(dialog, kb, agent_turns(dialog), cfg_.max_len, nullptr);
}

std::string Responder::respond(const Dialog& history, const KnowledgeBase& kb) const {
  if (history.utterances.empty() || history.utterances.back().speaker != Speaker::user)
    throw InvalidInput("respond: history must end with a user utterance");
  return greedy(history, kb, {static_cast<int>(history.utterances.size())}, cfg_.max_len, nullptr)[0];
}

StepDistribution Responder::first_step(const Dialog& history, const KnowledgeBase& kb) const {
  if (history.utterances.empty() || history.utterances.back().speaker != Speaker::user)
    throw InvalidInput("first_step: history must end with a user utterance");
  StepDistribution d;
  greedy(history, kb, {static_cast<int>(history.utterances.size())}, 1, &d);
  return d;
}

void Responder::save(const std::string& path, const nlohmann::json& extra) const {
  nlohmann::json side = extra;
  side["kind"] = "tod";
  side["config"] = cfg_.to_json();
  side["seed"] = seed_;
  side["vocab"] = vocab_.to_json();
  side["ontology"] = to_json(ontology_);
  side["profile"] = {{"head_type", profile_.head_type},
                     {"ordering_key", profile_.ordering_key},
                     {"query_marker", profile_.query_marker}};
  nn::save_checkpoint(path, ps_, side);
}

Responder Responder::load(const std::string& path) {
  auto side = nn::read_checkpoint_sidecar(path);
  if (side.value("kind", "") != "tod") throw InvalidInput(path + " is not a responder checkpoint");
  DomainProfile prof;
  prof.head_type = side.at("profile").at("head_type");
  prof.ordering_key = side.at("profile").at("ordering_key");
  prof.query_marker = side.at("profile").at("query_marker");
  Responder m(ontology_from_json(side.at("ontology")), prof, nn::Vocab::from_json(side.at("vocab")),
              TodConfig::from_json(side.at("config")), side.at("seed").get<std::uint64_t>());
  m.ps_.load(path);
  return m;
}

Responder train_responder(const std::vector<TodExample>& data, const Ontology& ontology,
                          const DomainProfile& profile, const TodConfig& cfg, std::uint64_t seed,
                          std::vector<TodEpoch>* curve, const std::function<void(const TodEpoch&)>& on_epoch) {
  std::vector<Dialog> dialogs;
  for (const auto& ex : data) dialogs.push_back(*ex.dialog);
  Responder m(ontology, profile, responder_vocab(ontology, dialogs), cfg, seed);
  auto c = m.train(data, seed, on_epoch);
  if (curve) *curve = std::move(c);
  return m;
}

}  // namespace dkaf::tod
