#include "dkaf/arb/rd.hpp"

#include <algorithm>
#include <cmath>

#include "dkaf/arb/mapo.hpp"
#include "dkaf/core/error.hpp"
#include "dkaf/core/json_io.hpp"

namespace dkaf::arb {

using nn::Graph;
using nn::Mat;
using nn::Var;

nlohmann::json PolicyConfig::to_json() const {
  return {{"blocks", blocks.to_json()}, {"adam", nn::to_json(adam)}, {"epochs", epochs},
          {"batch", batch},          {"w_floor", w_floor},          {"reward_tolerance", reward_tolerance},
          {"keep_neutral", keep_neutral}};
}

PolicyConfig PolicyConfig::from_json(const nlohmann::json& j) {
  PolicyConfig c;
  if (j.contains("blocks")) c.blocks = nn::BlockConfig::from_json(j.at("blocks"));
  if (j.contains("adam")) c.adam = nn::adam_from_json(j.at("adam"));
  c.epochs = j.value("epochs", c.epochs);
  c.batch = j.value("batch", c.batch);
  c.w_floor = j.value("w_floor", c.w_floor);
  c.reward_tolerance = j.value("reward_tolerance", c.reward_tolerance);
  c.keep_neutral = j.value("keep_neutral", c.keep_neutral);
  if (c.epochs < 0 || c.batch <= 0 || c.w_floor < 0 || c.w_floor > 1 || c.reward_tolerance < 0)
    throw InvalidInput("policy config: bad values");
  if (c.blocks.emb != c.blocks.hidden) throw InvalidInput("policy config: emb must equal hidden");
  return c;
}

RDDialogRewards rd_rewards(const mem::MemModel& mem, const Dialog& dialog, const KnowledgeBase& kb,
                           double tolerance, bool keep_neutral) {
  KnowledgeBase view = dialog_kb(kb, dialog, mem.ontology(), mem.profile());
  RDDialogRewards out;
  std::vector<KnowledgeBase> variants{view};
  for (const auto& [head, _] : view.rows()) {
    KnowledgeBase k = view;
    k.erase(head);
    variants.push_back(std::move(k));
    out.rows.push_back(head);
  }
  auto ll = mem.log_likelihoods(dialog, variants);
  for (std::size_t i = 0; i < out.rows.size(); ++i) {
    out.delta.push_back(ll[i + 1] - ll[0]);
    const int s = sign_with_tolerance(out.delta.back(), tolerance);
    out.r0.push_back(s == 0 && keep_neutral ? -1 : s);
  }
  return out;
}

RDModel::RDModel(Ontology ontology, DomainProfile profile, nn::Vocab vocab, PolicyConfig cfg,
                 std::uint64_t seed)
    : ontology_(std::move(ontology)),
      profile_(std::move(profile)),
      vocab_(std::move(vocab)),
      cfg_(cfg),
      seed_(seed) {
  if (cfg_.blocks.emb != cfg_.blocks.hidden) throw InvalidInput("rd: emb must equal hidden");
  Rng rng(derive_seed(seed, "rd/init"));
  const auto& b = cfg_.blocks;
  enc_ = nn::DialogEncoder(ps_, "rd.dialog", vocab_, b, rng);
  kb_enc_ = nn::KBEncoder(ps_, "rd.kb", vocab_, static_cast<int>(ontology_.relations().size()), b, rng);
  memory_ = nn::MemoryNetwork(ps_, "rd.memory", b.emb, b.hops, b.scorer, rng);
  hidden_ = nn::Linear(ps_, "rd.hidden", 2 * b.emb, b.hidden, rng);
  out_ = nn::Linear(ps_, "rd.out", b.hidden, 2, rng);
}

Var RDModel::log_policy(Graph& g, const std::vector<const Dialog*>& dialogs,
                        const std::vector<const KnowledgeBase*>& views,
                        std::vector<std::vector<std::string>>* rows) const {
  std::vector<nn::DialogInput> inputs;
  std::vector<nn::KBGraphInput> graphs;
  for (std::size_t j = 0; j < dialogs.size(); ++j) {
    inputs.push_back(nn::plain_input(*dialogs[j], vocab_));
    graphs.push_back(nn::kb_graph(*views[j], ontology_, vocab_, nn::recency_tags(dialogs[j]->mentioned_entities())));
  }
  nn::DialogEncoding e = enc_.encode(g, inputs);
  nn::KBEncoding kbe = kb_enc_.encode(g, graphs);
  std::vector<std::vector<int>> slots;
  for (std::size_t j = 0; j < dialogs.size(); ++j) {
    std::vector<int> cols;
    for (int c = kbe.start[j]; c < kbe.start[j + 1]; ++c) cols.push_back(c);
    if (cols.empty()) throw InvalidInput("rd: empty KB view for dialog " + dialogs[j]->id);
    slots.push_back(std::move(cols));
  }
  Var q = memory_.read(g, e.c, kbe.z, slots).q;
  // One state per row: z_row = sum of its entities.
  std::vector<int> ent_cols, sizes, owner;
  rows->assign(dialogs.size(), {});
  for (std::size_t j = 0; j < dialogs.size(); ++j) {
    for (const auto& [head, row] : views[j]->rows()) {
      std::vector<int> cols{graphs[j].index_of(head)};
      for (const auto& [_, tail] : row.fields) cols.push_back(graphs[j].index_of(tail.value));
      for (int c : cols) ent_cols.push_back(kbe.start[j] + c);
      sizes.push_back(static_cast<int>(cols.size()));
      owner.push_back(static_cast<int>(j));
      (*rows)[j].push_back(head);
    }
  }
  Var z_rho = g.segment_sum(g.gather_cols(kbe.z, ent_cols), nn::Segments::from_sizes(sizes));
  Var x = g.concat_rows({g.gather_cols(q, owner), z_rho});
  return g.col_log_softmax(out_(g, g.tanh(hidden_(g, x))));
}

void RDModel::init_from(const mem::MemModel& mem) {
  ps_.copy_from(mem.params(), "mem.dialog.", "rd.dialog.");
  ps_.copy_from(mem.params(), "mem.kb.", "rd.kb.");
  ps_.copy_from(mem.params(), "mem.memory.", "rd.memory.");
}

std::vector<std::pair<std::string, double>> RDModel::delete_probs(const Dialog& dialog,
                                                                   const KnowledgeBase& kb) const {
  KnowledgeBase view = dialog_kb(kb, dialog, ontology_, profile_);
  if (view.empty()) return {};
  Graph g;
  std::vector<std::vector<std::string>> rows;
  const Mat& lp = g.value(log_policy(g, {&dialog}, {&view}, &rows));
  std::vector<std::pair<std::string, double>> out;
  for (std::size_t i = 0; i < rows[0].size(); ++i) out.push_back({rows[0][i], std::exp(lp(0, static_cast<int>(i)))});
  return out;
}

KnowledgeBase RDModel::apply(const Dialog& dialog, const KnowledgeBase& kb, std::vector<Row>* deleted,
                             const std::vector<std::string>& keep) const {
  KnowledgeBase out = kb;
  for (const auto& [head, p] : delete_probs(dialog, kb)) {
    if (p > 0.5 && std::find(keep.begin(), keep.end(), head) == keep.end()) {
      if (deleted) deleted->push_back(*kb.find(head));
      out.erase(head);
    }
  }
  return out;
}

std::vector<PolicyEpoch> RDModel::train(const std::vector<RDExample>& data, std::uint64_t seed,
                                        const std::function<void(const PolicyEpoch&)>& on_epoch) {
  struct Prepared {
    const Dialog* dialog;
    KnowledgeBase view;
    const RDDialogRewards* rewards;
  };
  std::vector<Prepared> prep;
  MapoBuffer buffer;
  for (const auto& ex : data) {
    KnowledgeBase view = dialog_kb(ex.kb, *ex.dialog, ontology_, profile_);
    if (view.empty()) continue;
    std::vector<std::string> heads;
    for (const auto& [h, _] : view.rows()) heads.push_back(h);
    if (heads != ex.rewards.rows) throw InvalidInput("rd: rewards do not match the KB view of " + ex.dialog->id);
    for (std::size_t i = 0; i < heads.size(); ++i)
      buffer.record(ex.dialog->id + "/" + heads[i], {static_cast<double>(ex.rewards.r0[i]),
                                                     -static_cast<double>(ex.rewards.r0[i])});
    prep.push_back({ex.dialog, std::move(view), &ex.rewards});
  }
  if (prep.empty()) throw InvalidInput("train_rd: no states");
  nn::Adam opt(ps_, cfg_.adam);
  Rng rng(derive_seed(seed, "rd/order"));
  std::vector<std::size_t> order(prep.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::vector<PolicyEpoch> curve;
  for (int epoch = 0; epoch < cfg_.epochs; ++epoch) {
    rng.shuffle(order);
    double reward_inf = 0.0, reward_all = 0.0, loss_sum = 0.0;
    long n_inf = 0, n_all = 0;
    std::size_t pos = 0;
    while (pos < order.size()) {
      std::vector<const Dialog*> ds;
      std::vector<const KnowledgeBase*> vs;
      std::vector<const Prepared*> ps;
      int states = 0;
      while (pos < order.size() && states < cfg_.batch) {
        const auto& p = prep[order[pos++]];
        ds.push_back(p.dialog);
        vs.push_back(&p.view);
        ps.push_back(&p);
        states += static_cast<int>(p.view.size());
      }
      Graph g;
      std::vector<std::vector<std::string>> rows;
      Var lp = log_policy(g, ds, vs, &rows);
      const Mat& lpv = g.value(lp);
      Mat coef = Mat::Zero(2, lpv.cols());
      int col = 0;
      for (std::size_t j = 0; j < ps.size(); ++j) {
        const double norm = 1.0 / (static_cast<double>(rows[j].size()) * static_cast<double>(ps.size()));
        for (std::size_t i = 0; i < rows[j].size(); ++i, ++col) {
          std::vector<double> probs{std::exp(lpv(0, col)), std::exp(lpv(1, col))};
          const double r0 = ps[j]->rewards->r0[i];
          std::vector<double> rewards{r0, -r0};
          auto w = mapo_weights(probs, rewards, buffer.actions(ds[j]->id + "/" + rows[j][i]), cfg_.w_floor);
          coef(0, col) = w[0] * norm;
          coef(1, col) = w[1] * norm;
          const double er = expected_reward(probs, rewards);
          reward_all += er;
          ++n_all;
          if (r0 != 0) {
            reward_inf += er;
            ++n_inf;
          }
        }
      }
      Var loss = g.scale(g.sum(g.cmul(lp, g.constant(coef))), -1.0);
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

void RDModel::save(const std::string& path, const nlohmann::json& extra) const {
  nlohmann::json side = extra;
  side["kind"] = "rd";
  side["config"] = cfg_.to_json();
  side["seed"] = seed_;
  side["vocab"] = vocab_.to_json();
  side["ontology"] = to_json(ontology_);
  side["profile"] = {{"head_type", profile_.head_type},
                     {"ordering_key", profile_.ordering_key},
                     {"query_marker", profile_.query_marker}};
  nn::save_checkpoint(path, ps_, side);
}

RDModel RDModel::load(const std::string& path) {
  auto side = nn::read_checkpoint_sidecar(path);
  if (side.value("kind", "") != "rd") throw InvalidInput(path + " is not an RD checkpoint");
  DomainProfile prof;
  prof.head_type = side.at("profile").at("head_type");
  prof.ordering_key = side.at("profile").at("ordering_key");
  prof.query_marker = side.at("profile").at("query_marker");
  RDModel m(ontology_from_json(side.at("ontology")), prof, nn::Vocab::from_json(side.at("vocab")),
            PolicyConfig::from_json(side.at("config")), side.at("seed").get<std::uint64_t>());
  m.ps_.load(path);
  return m;
}

}  // namespace dkaf::arb
