#include "dkaf/arb/ri.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "dkaf/core/error.hpp"
#include "dkaf/core/json_io.hpp"

namespace dkaf::arb {

using nn::Graph;
using nn::Mat;
using nn::Var;

nlohmann::json RIConfig::to_json() const {
  return {{"blocks", blocks.to_json()}, {"adam", nn::to_json(adam)}, {"epochs", epochs}, {"batch", batch},
          {"threshold", threshold},     {"validation_fraction", validation_fraction}};
}

RIConfig RIConfig::from_json(const nlohmann::json& j) {
  RIConfig c;
  if (j.contains("blocks")) c.blocks = nn::BlockConfig::from_json(j.at("blocks"));
  if (j.contains("adam")) c.adam = nn::adam_from_json(j.at("adam"));
  c.epochs = j.value("epochs", c.epochs);
  c.batch = j.value("batch", c.batch);
  c.threshold = j.value("threshold", c.threshold);
  c.validation_fraction = j.value("validation_fraction", c.validation_fraction);
  if (c.epochs < 0 || c.batch <= 0 || c.threshold <= 0 || c.threshold >= 1 || c.validation_fraction < 0 ||
      c.validation_fraction >= 1)
    throw InvalidInput("ri config: bad values");
  return c;
}

RIModel::RIModel(Ontology ontology, nn::Vocab vocab, RIConfig cfg, std::uint64_t seed)
    : ontology_(std::move(ontology)), vocab_(std::move(vocab)), cfg_(cfg), seed_(seed) {
  Rng rng(derive_seed(seed, "ri/init"));
  const auto& b = cfg_.blocks;
  enc_ = nn::DialogEncoder(ps_, "ri.dialog", vocab_, b, rng);
  for (const auto& r : ontology_.relations())
    heads_[r.name] = {nn::Linear(ps_, "ri.head." + r.name + ".hidden", 3 * b.hidden, b.hidden, rng),
                      nn::Linear(ps_, "ri.head." + r.name + ".out", b.hidden, 1, rng)};
}

namespace {

struct Item {
  const Dialog* dialog;
  Triple triple;
};

}  // namespace

static Var item_logits(Graph& g, const nn::DialogEncoder& enc, const nn::Vocab& vocab,
                       const std::map<std::string, std::pair<nn::Linear, nn::Linear>>& heads,
                       const std::vector<Item>& items) {
  std::vector<nn::DialogInput> inputs;
  std::vector<std::vector<std::vector<std::pair<int, int>>>> occ;
  for (const auto& it : items) {
    auto mi = nn::marked_input(*it.dialog, vocab, enc, {it.triple.head.value, it.triple.tail.value});
    for (const auto& o : mi.occurrences)
      if (o.empty()) throw InvalidInput("ri: entity " + it.triple.head.value + "/" + it.triple.tail.value +
                                        " not mentioned in dialog " + it.dialog->id);
    inputs.push_back(std::move(mi.input));
    occ.push_back(std::move(mi.occurrences));
  }
  nn::DialogEncoding e = enc.encode(g, inputs);
  std::vector<Var> feats(2);
  for (int which = 0; which < 2; ++which) {
    std::vector<int> cols, sizes;
    for (std::size_t i = 0; i < items.size(); ++i) {
      for (const auto& [u, t] : occ[i][which]) cols.push_back(e.token_col(static_cast<int>(i), u, t));
      sizes.push_back(static_cast<int>(occ[i][which].size()));
    }
    feats[which] = g.segment_mean(g.gather_cols(e.tokens, cols), nn::Segments::from_sizes(sizes));
  }
  Var x = g.concat_rows({e.c, feats[0], feats[1]});
  // Apply each relation's head to its items, then restore item order.
  std::map<std::string, std::vector<int>> by_rel;
  for (std::size_t i = 0; i < items.size(); ++i) by_rel[items[i].triple.relation].push_back(static_cast<int>(i));
  std::vector<Var> parts;
  std::vector<int> position(items.size());
  int offset = 0;
  for (const auto& [rel, idx] : by_rel) {
    auto h = heads.find(rel);
    if (h == heads.end()) throw InvalidInput("ri: unknown relation " + rel);
    Var hidden = g.tanh(h->second.first(g, g.gather_cols(x, idx)));
    parts.push_back(h->second.second(g, hidden));
    for (std::size_t k = 0; k < idx.size(); ++k) position[idx[k]] = offset + static_cast<int>(k);
    offset += static_cast<int>(idx.size());
  }
  Var all = parts.size() == 1 ? parts[0] : g.concat_cols(parts);
  return g.gather_cols(all, position);
}

Var RIModel::logits(Graph& g, const Dialog& dialog, const std::vector<Triple>& triples) const {
  std::vector<Item> items;
  for (const auto& t : triples) items.push_back({&dialog, t});
  return item_logits(g, enc_, vocab_, heads_, items);
}

std::vector<double> RIModel::score(const Dialog& dialog, const std::vector<Triple>& triples) const {
  if (triples.empty()) return {};
  Graph g;
  const Mat& l = g.value(logits(g, dialog, triples));
  std::vector<double> out;
  for (int i = 0; i < l.cols(); ++i) out.push_back(1.0 / (1.0 + std::exp(-l(0, i))));
  return out;
}

double RIModel::accuracy(const std::vector<LabeledCandidate>& data,
                         const std::map<std::string, const Dialog*>& dialogs) const {
  if (data.empty()) return 0.0;
  std::map<std::string, std::vector<const LabeledCandidate*>> by_dialog;
  for (const auto& c : data) by_dialog[c.dialog_id].push_back(&c);
  long correct = 0;
  for (const auto& [id, cands] : by_dialog) {
    std::vector<Triple> ts;
    for (const auto* c : cands) ts.push_back(c->triple);
    auto s = score(*dialogs.at(id), ts);
    for (std::size_t i = 0; i < cands.size(); ++i)
      correct += (s[i] > cfg_.threshold) == (cands[i]->label == Label::positive);
  }
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

std::pair<std::vector<std::string>, std::vector<std::string>> split_dialogs(
    std::vector<std::string> ids, double validation_fraction, std::uint64_t seed) {
  std::sort(ids.begin(), ids.end());
  ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
  Rng rng(seed);
  rng.shuffle(ids);
  std::size_t n_val = static_cast<std::size_t>(std::llround(validation_fraction * static_cast<double>(ids.size())));
  if (validation_fraction > 0 && n_val == 0 && ids.size() > 1) n_val = 1;
  std::vector<std::string> val(ids.begin(), ids.begin() + static_cast<long>(n_val));
  std::vector<std::string> train(ids.begin() + static_cast<long>(n_val), ids.end());
  std::sort(val.begin(), val.end());
  std::sort(train.begin(), train.end());
  return {train, val};
}

std::vector<RIEpoch> RIModel::train(const std::vector<LabeledCandidate>& data,
                                    const std::map<std::string, const Dialog*>& dialogs, std::uint64_t seed,
                                    const std::function<void(const RIEpoch&)>& on_epoch) {
  if (data.empty()) throw InvalidInput("train_ri: empty training set");
  std::vector<std::string> ids;
  for (const auto& c : data) ids.push_back(c.dialog_id);
  auto [train_ids, val_ids] = split_dialogs(ids, cfg_.validation_fraction, derive_seed(seed, "ri/split"));
  std::set<std::string> val_set(val_ids.begin(), val_ids.end());
  std::map<std::string, std::vector<const LabeledCandidate*>> train_by;
  std::vector<LabeledCandidate> train_data, val_data;
  for (const auto& c : data) {
    if (val_set.count(c.dialog_id)) {
      val_data.push_back(c);
    } else {
      train_by[c.dialog_id].push_back(&c);
      train_data.push_back(c);
    }
  }
  nn::Adam opt(ps_, cfg_.adam);
  Rng rng(derive_seed(seed, "ri/order"));
  std::vector<RIEpoch> curve;
  std::vector<std::string> order;
  for (const auto& [id, _] : train_by) order.push_back(id);
  for (int epoch = 0; epoch < cfg_.epochs; ++epoch) {
    rng.shuffle(order);
    double total = 0.0;
    long count = 0, correct = 0;
    std::size_t pos = 0;
    while (pos < order.size()) {
      std::vector<Item> items;
      std::vector<double> labels;
      while (pos < order.size() && static_cast<int>(items.size()) < cfg_.batch) {
        const auto& id = order[pos++];
        for (const auto* c : train_by.at(id)) {
          items.push_back({dialogs.at(id), c->triple});
          labels.push_back(c->label == Label::positive ? 1.0 : 0.0);
        }
      }
      Graph g;
      Var l = item_logits(g, enc_, vocab_, heads_, items);
      Mat target(1, static_cast<int>(labels.size()));
      for (std::size_t i = 0; i < labels.size(); ++i) target(0, static_cast<int>(i)) = labels[i];
      Var loss = g.bce_with_logits(l, target);
      const Mat& lv = g.value(l);
      for (std::size_t i = 0; i < labels.size(); ++i) correct += (lv(0, static_cast<int>(i)) > 0) == (labels[i] > 0.5);
      total += g.scalar(loss) * static_cast<double>(labels.size());
      count += static_cast<long>(labels.size());
      g.backward(loss);
      opt.step();
    }
    RIEpoch st{epoch, total / std::max(1L, count), static_cast<double>(correct) / std::max(1L, count),
               val_data.empty() ? 1.0 : accuracy(val_data, dialogs)};
    curve.push_back(st);
    if (on_epoch) on_epoch(st);
  }
  return curve;
}

void RIModel::save(const std::string& path, const nlohmann::json& extra) const {
  nlohmann::json side = extra;
  side["kind"] = "ri";
  side["config"] = cfg_.to_json();
  side["seed"] = seed_;
  side["vocab"] = vocab_.to_json();
  side["ontology"] = to_json(ontology_);
  nn::save_checkpoint(path, ps_, side);
}

RIModel RIModel::load(const std::string& path) {
  auto side = nn::read_checkpoint_sidecar(path);
  if (side.value("kind", "") != "ri") throw InvalidInput(path + " is not an RI checkpoint");
  RIModel m(ontology_from_json(side.at("ontology")), nn::Vocab::from_json(side.at("vocab")),
            RIConfig::from_json(side.at("config")), side.at("seed").get<std::uint64_t>());
  m.ps_.load(path);
  return m;
}

std::vector<ScoredTriple> infer_ri(const RIModel& model, const Dialog& dialog,
                                   const std::vector<LabeledCandidate>& infer, const KnowledgeBase& kb_t,
                                   double threshold) {
  if (infer.empty()) return {};
  // Tails owned by exactly one row of K_T.
  std::map<std::string, int> tail_rows;
  for (const auto& [head, row] : kb_t.rows()) {
    std::set<std::string> seen;
    for (const auto& [rel, tail] : row.fields)
      if (seen.insert(tail.value).second) ++tail_rows[tail.value];
  }
  std::vector<Triple> ts;
  for (const auto& c : infer) ts.push_back(c.triple);
  auto scores = model.score(dialog, ts);
  std::map<std::pair<std::string, std::string>, ScoredTriple> best;
  for (std::size_t i = 0; i < ts.size(); ++i) {
    if (!(scores[i] > threshold)) continue;
    auto it = tail_rows.find(ts[i].tail.value);
    if (it != tail_rows.end() && it->second == 1) continue;
    auto key = std::make_pair(ts[i].head.value, ts[i].relation);
    auto b = best.find(key);
    if (b == best.end() || scores[i] > b->second.score) best[key] = {ts[i], scores[i]};
  }
  std::vector<ScoredTriple> out;
  for (const auto& [_, st] : best) out.push_back(st);
  return out;
}

KnowledgeBase apply_insertions(const KnowledgeBase& kb, const std::vector<Triple>& accepted) {
  KnowledgeBase out = kb;
  std::map<std::string, Row> rows;
  for (const auto& t : accepted) {
    if (kb.contains(t.head.value)) continue;
    auto& r = rows[t.head.value];
    r.head = t.head;
    r.fields[t.relation] = t.tail;
  }
  for (auto& [_, r] : rows) out.insert(std::move(r));
  return out;
}

}  // namespace dkaf::arb
