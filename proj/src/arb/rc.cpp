#include "dkaf/arb/rc.hpp"

#include <algorithm>
#include <cmath>

#include "dkaf/arb/mapo.hpp"
#include "dkaf/core/error.hpp"
#include "dkaf/core/json_io.hpp"

namespace dkaf::arb {

using nn::Graph;
using nn::Mat;
using nn::Var;

std::vector<RCState> build_rc_states(const Dialog& dialog, const KnowledgeBase& kb, const Ontology& ontology,
                                     const DomainProfile& profile) {
  std::vector<RCState> out;
  auto latent = ontology.latent_relations();
  if (latent.empty()) return out;
  for (const auto& e : dialog.mentioned_entities()) {
    const Row* row = kb.find(e.value);
    if (!row || row->head.etype != e.etype) continue;
    for (const auto* r : latent) {
      if (r->head_type != e.etype) continue;
      RCState s;
      s.dialog = &dialog;
      s.head = e;
      s.relation = r->name;
      s.kb = kb;
      Row stripped = *row;
      stripped.fields.erase(r->name);
      s.kb.upsert(stripped);
      out.push_back(std::move(s));
    }
  }
  (void)profile;
  return out;
}

std::vector<double> rc_rewards(const mem::MemModel& mem, const RCState& state, double tolerance) {
  const auto& targets = mem.ontology().target_set(state.relation);
  if (targets.empty()) throw InvalidInput("rc: empty target set for " + state.relation);
  std::vector<KnowledgeBase> variants;
  for (const auto& t : targets) {
    KnowledgeBase k = state.kb;
    k.set_field(state.head.value, state.relation, t);
    variants.push_back(std::move(k));
  }
  auto ll = mem.log_likelihoods(*state.dialog, variants);
  const double best = *std::max_element(ll.begin(), ll.end());
  std::vector<double> out;
  for (double v : ll) out.push_back(v >= best - tolerance ? 1.0 : 0.0);
  return out;
}

RCModel::RCModel(Ontology ontology, DomainProfile profile, nn::Vocab vocab, PolicyConfig cfg,
                 std::uint64_t seed)
    : ontology_(std::move(ontology)),
      profile_(std::move(profile)),
      vocab_(std::move(vocab)),
      cfg_(cfg),
      seed_(seed) {
  if (cfg_.blocks.emb != cfg_.blocks.hidden) throw InvalidInput("rc: emb must equal hidden");
  Rng rng(derive_seed(seed, "rc/init"));
  const auto& b = cfg_.blocks;
  enc_ = nn::DialogEncoder(ps_, "rc.dialog", vocab_, b, rng);
  kb_enc_ = nn::KBEncoder(ps_, "rc.kb", vocab_, static_cast<int>(ontology_.relations().size()), b, rng);
  memory_ = nn::MemoryNetwork(ps_, "rc.memory", b.emb, b.hops, b.scorer, rng);
  q0_ = nn::Linear(ps_, "rc.q0", 2 * b.hidden, b.emb, rng);
  for (const auto* r : ontology_.latent_relations()) {
    const int n = static_cast<int>(ontology_.target_set(r->name).size());
    heads_[r->name] = {nn::Linear(ps_, "rc.head." + r->name + ".hidden", 2 * b.emb, b.hidden, rng),
                       nn::Linear(ps_, "rc.head." + r->name + ".out", b.hidden, n, rng)};
  }
}

void RCModel::init_from(const mem::MemModel& mem) {
  ps_.copy_from(mem.params(), "mem.dialog.", "rc.dialog.");
  ps_.copy_from(mem.params(), "mem.kb.", "rc.kb.");
  ps_.copy_from(mem.params(), "mem.memory.", "rc.memory.");
}

std::vector<Var> RCModel::log_policy(Graph& g, const std::vector<const RCState*>& states) const {
  std::vector<nn::DialogInput> inputs;
  std::vector<nn::KBGraphInput> graphs;
  std::vector<int> occ_cols_sizes;
  std::vector<std::vector<std::pair<int, int>>> occ;
  for (const auto* s : states) {
    auto mi = nn::marked_input(*s->dialog, vocab_, enc_, {s->head.value});
    if (mi.occurrences[0].empty()) throw InvalidInput("rc: head " + s->head.value + " not mentioned");
    inputs.push_back(std::move(mi.input));
    occ.push_back(std::move(mi.occurrences[0]));
    KnowledgeBase view = dialog_kb(s->kb, *s->dialog, ontology_, profile_);
    graphs.push_back(nn::kb_graph(view, ontology_, vocab_, nn::recency_tags(s->dialog->mentioned_entities())));
  }
  nn::DialogEncoding e = enc_.encode(g, inputs);
  std::vector<int> cols, sizes;
  for (std::size_t i = 0; i < states.size(); ++i) {
    for (const auto& [u, t] : occ[i]) cols.push_back(e.token_col(static_cast<int>(i), u, t));
    sizes.push_back(static_cast<int>(occ[i].size()));
  }
  Var h_es = g.segment_mean(g.gather_cols(e.tokens, cols), nn::Segments::from_sizes(sizes));
  Var q0 = g.tanh(q0_(g, g.concat_rows({e.c, h_es})));
  nn::KBEncoding kbe = kb_enc_.encode(g, graphs);
  std::vector<std::vector<int>> slots;
  std::vector<int> head_cols;
  for (std::size_t i = 0; i < states.size(); ++i) {
    std::vector<int> s;
    for (int c = kbe.start[i]; c < kbe.start[i + 1]; ++c) s.push_back(c);
    slots.push_back(std::move(s));
    int idx = graphs[i].index_of(states[i]->head.value);
    if (idx < 0) throw InvalidInput("rc: head row missing from the KB view");
    head_cols.push_back(kbe.start[i] + idx);
  }
  Var q = memory_.read(g, q0, kbe.z, slots).q;
  Var x = g.concat_rows({q, g.gather_cols(kbe.z, head_cols)});
  std::vector<Var> out;
  for (std::size_t i = 0; i < states.size(); ++i) {
    auto h = heads_.find(states[i]->relation);
    if (h == heads_.end()) throw InvalidInput("rc: relation " + states[i]->relation + " is not latent");
    Var xi = g.slice_cols(x, static_cast<int>(i), 1);
    out.push_back(g.col_log_softmax(h->second.second(g, g.tanh(h->second.first(g, xi)))));
  }
  return out;
}

std::vector<std::vector<double>> RCModel::policy(const std::vector<const RCState*>& states) const {
  if (states.empty()) return {};
  Graph g;
  auto lps = log_policy(g, states);
  std::vector<std::vector<double>> out;
  for (const auto& lp : lps) {
    std::vector<double> p;
    const Mat& v = g.value(lp);
    for (int a = 0; a < v.rows(); ++a) p.push_back(std::exp(v(a, 0)));
    out.push_back(std::move(p));
  }
  return out;
}

Entity RCModel::predict(const RCState& state) const {
  auto p = policy({&state})[0];
  std::size_t best = 0;
  for (std::size_t a = 1; a < p.size(); ++a)
    if (p[a] > p[best]) best = a;
  return ontology_.target_set(state.relation)[best];
}

std::vector<PolicyEpoch> RCModel::train(const std::vector<RCState>& states, std::uint64_t seed,
                                        const std::function<void(const PolicyEpoch&)>& on_epoch) {
  if (states.empty()) throw InvalidInput("train_rc: no states");
  MapoBuffer buffer;
  for (std::size_t i = 0; i < states.size(); ++i) {
    if (states[i].rewards.empty()) throw InvalidInput("train_rc: state without rewards");
    buffer.record(std::to_string(i), states[i].rewards);
  }
  nn::Adam opt(ps_, cfg_.adam);
  Rng rng(derive_seed(seed, "rc/order"));
  std::vector<std::size_t> order(states.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::vector<PolicyEpoch> curve;
  for (int epoch = 0; epoch < cfg_.epochs; ++epoch) {
    rng.shuffle(order);
    double reward_inf = 0.0, reward_all = 0.0, loss_sum = 0.0;
    long n_inf = 0, n_all = 0;
    for (std::size_t pos = 0; pos < order.size(); pos += static_cast<std::size_t>(cfg_.batch)) {
      std::vector<const RCState*> batch;
      std::vector<std::size_t> ids;
      for (std::size_t k = pos; k < std::min(order.size(), pos + static_cast<std::size_t>(cfg_.batch)); ++k) {
        batch.push_back(&states[order[k]]);
        ids.push_back(order[k]);
      }
      Graph g;
      auto lps = log_policy(g, batch);
      std::vector<Var> terms;
      for (std::size_t i = 0; i < batch.size(); ++i) {
        const Mat& v = g.value(lps[i]);
        std::vector<double> probs;
        for (int a = 0; a < v.rows(); ++a) probs.push_back(std::exp(v(a, 0)));
        const auto& rewards = batch[i]->rewards;
        auto w = mapo_weights(probs, rewards, buffer.actions(std::to_string(ids[i])), cfg_.w_floor);
        Mat coef(static_cast<int>(w.size()), 1);
        for (std::size_t a = 0; a < w.size(); ++a) coef(static_cast<int>(a), 0) = w[a] / static_cast<double>(batch.size());
        terms.push_back(g.sum(g.cmul(lps[i], g.constant(coef))));
        const double er = expected_reward(probs, rewards);
        reward_all += er;
        ++n_all;
        if (std::any_of(rewards.begin(), rewards.end(), [](double r) { return r != 0; })) {
          reward_inf += er;
          ++n_inf;
        }
      }
      Var total = terms[0];
      for (std::size_t i = 1; i < terms.size(); ++i) total = g.add(total, terms[i]);
      Var loss = g.scale(total, -1.0);
      loss_sum += g.scalar(loss);
      g.backward(loss);
      opt.step();
    }
    PolicyEpoch st{epoch, n_inf ? reward_inf / n_inf : 0.0, n_all ? reward_all / n_all : 0.0, loss_sum};
    curve.push_back(st);
    if (on_epoch) on_epoch(st);
  }
  return curve;
}

void RCModel::save(const std::string& path, const nlohmann::json& extra) const {
  nlohmann::json side = extra;
  side["kind"] = "rc";
  side["config"] = cfg_.to_json();
  side["seed"] = seed_;
  side["vocab"] = vocab_.to_json();
  side["ontology"] = to_json(ontology_);
  side["profile"] = {{"head_type", profile_.head_type},
                     {"ordering_key", profile_.ordering_key},
                     {"query_marker", profile_.query_marker}};
  nn::save_checkpoint(path, ps_, side);
}

RCModel RCModel::load(const std::string& path) {
  auto side = nn::read_checkpoint_sidecar(path);
  if (side.value("kind", "") != "rc") throw InvalidInput(path + " is not an RC checkpoint");
  DomainProfile prof;
  prof.head_type = side.at("profile").at("head_type");
  prof.ordering_key = side.at("profile").at("ordering_key");
  prof.query_marker = side.at("profile").at("query_marker");
  RCModel m(ontology_from_json(side.at("ontology")), prof, nn::Vocab::from_json(side.at("vocab")),
            PolicyConfig::from_json(side.at("config")), side.at("seed").get<std::uint64_t>());
  m.ps_.load(path);
  return m;
}

std::vector<Triple> apply_rc(const RCModel& model, const Dialog& dialog, KnowledgeBase& kb,
                             const std::vector<std::string>& rows, const Ontology& ontology,
                             const DomainProfile& profile) {
  std::vector<Triple> out;
  auto mentioned = dialog.mentioned_values();
  for (const auto& head : rows) {
    const Row* row = kb.find(head);
    if (!row || !mentioned.count(head)) continue;
    for (const auto* r : ontology.latent_relations()) {
      if (r->head_type != row->head.etype || row->field(r->name)) continue;
      RCState s;
      s.dialog = &dialog;
      s.head = row->head;
      s.relation = r->name;
      s.kb = kb;
      Entity t = model.predict(s);
      kb.set_field(head, r->name, t);
      out.push_back({s.head, r->name, t});
      row = kb.find(head);
    }
  }
  (void)profile;
  return out;
}

}  // namespace dkaf::arb
