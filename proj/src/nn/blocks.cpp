#include "dkaf/nn/blocks.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "dkaf/core/error.hpp"

namespace dkaf::nn {

Vocab::Vocab() {
  for (const char* t : {"<pad>", "<unk>", "<mask>", "<e1>", "</e1>", "<e2>", "</e2>"}) add(t);
}

Vocab Vocab::build(const Ontology& ontology, const std::vector<Dialog>& dialogs) {
  Vocab v;
  v.types_ = ontology.entity_types();
  for (const auto& e : ontology.entities()) v.add(e.value);
  std::set<std::string> words;
  for (const auto& d : dialogs)
    for (const auto& u : d.utterances)
      for (const auto& t : u.tokens) words.insert(t);
  for (const auto& w : words) v.add(w);
  return v;
}

int Vocab::add(const std::string& token) {
  auto it = ids_.find(token);
  if (it != ids_.end()) return it->second;
  int id = static_cast<int>(tokens_.size());
  tokens_.push_back(token);
  ids_[token] = id;
  return id;
}

int Vocab::id(const std::string& token) const {
  auto it = ids_.find(token);
  return it == ids_.end() ? unk : it->second;
}

int Vocab::require(const std::string& token) const {
  auto it = ids_.find(token);
  if (it == ids_.end()) throw InvalidInput("no embedding for KB value " + token);
  return it->second;
}

int Vocab::tag(const std::string& etype) const {
  for (std::size_t i = 0; i < types_.size(); ++i)
    if (types_[i] == etype) return static_cast<int>(i) + 1;
  return 0;
}

nlohmann::json Vocab::to_json() const { return {{"tokens", tokens_}, {"types", types_}}; }

Vocab Vocab::from_json(const nlohmann::json& j) {
  Vocab v;
  v.tokens_.clear();
  v.ids_.clear();
  for (const auto& t : j.at("tokens")) v.add(t.get<std::string>());
  v.types_ = j.at("types").get<std::vector<std::string>>();
  return v;
}

// ---------------------------------------------------------------------------

Scorer::Scorer(ParamStore& ps, const std::string& name, int in, int hidden, Rng& rng) {
  w = &ps.dense(name + ".w", hidden, in, rng);
  b = &ps.zeros(name + ".b", hidden, 1);
  v = &ps.dense(name + ".v", 1, hidden, rng);
}

Var Scorer::operator()(Graph& g, Var x) const {
  Var h = g.tanh(g.add_bias(g.matmul(g.param(*w), x), g.param(*b)));
  return g.matmul(g.param(*v), h);
}

Linear::Linear(ParamStore& ps, const std::string& name, int in, int out, Rng& rng, bool bias) {
  w = &ps.dense(name + ".w", out, in, rng);
  if (bias) b = &ps.zeros(name + ".b", out, 1);
}

Var Linear::operator()(Graph& g, Var x) const {
  Var y = g.matmul(g.param(*w), x);
  return b ? g.add_bias(y, g.param(*b)) : y;
}

TokenFeaturizer::TokenFeaturizer(ParamStore& ps, const std::string& name, const Vocab& vocab,
                                 int emb, Rng& rng) {
  tokens = &ps.uniform(name + ".tok", emb, vocab.size(), 0.1, rng);
  tags = &ps.uniform(name + ".tag", emb, vocab.tag_count(), 0.1, rng);
}

Var TokenFeaturizer::operator()(Graph& g, const std::vector<int>& tok,
                                const std::vector<int>& tag) const {
  return g.add(g.gather_cols(g.param(*tokens), tok), g.gather_cols(g.param(*tags), tag));
}

GruParams make_gru(ParamStore& ps, const std::string& name, int in, int h, Rng& rng) {
  GruParams p;
  p.w_ih = &ps.dense(name + ".w_ih", 3 * h, in, rng);
  p.w_hh = &ps.dense(name + ".w_hh", 3 * h, h, rng);
  p.b_ih = &ps.zeros(name + ".b_ih", 3 * h, 1);
  p.b_hh = &ps.zeros(name + ".b_hh", 3 * h, 1);
  return p;
}

DialogEncoder::DialogEncoder(ParamStore& ps, const std::string& name, const Vocab& vocab,
                             const BlockConfig& cfg, Rng& rng)
    : cfg_(cfg) {
  if (cfg.hidden % 2 != 0) throw InvalidInput("hidden width must be even");
  feat = TokenFeaturizer(ps, name + ".feat", vocab, cfg.emb, rng);
  fwd = make_gru(ps, name + ".fwd", cfg.emb, cfg.hidden / 2, rng);
  bwd = make_gru(ps, name + ".bwd", cfg.emb, cfg.hidden / 2, rng);
  utt_attn = Scorer(ps, name + ".utt_attn", cfg.hidden, cfg.scorer, rng);
  pos = &ps.uniform(name + ".pos", cfg.pos_dim, position_count(), 0.1, rng);
  dlg = make_gru(ps, name + ".dlg", cfg.hidden + cfg.pos_dim, cfg.hidden, rng);
  dlg_attn = Scorer(ps, name + ".dlg_attn", cfg.hidden, cfg.scorer, rng);
}

std::vector<int> DialogEncoder::positions(int n_utts, const std::vector<int>& marked) const {
  std::vector<int> out(n_utts, absent_position());
  if (marked.empty()) return out;
  for (int i = 0; i < n_utts; ++i) {
    int best = marked[0];
    for (int m : marked)
      if (std::abs(i - m) < std::abs(i - best) || (std::abs(i - m) == std::abs(i - best) && m < best))
        best = m;
    int d = std::clamp(i - best, -cfg_.pos_clip, cfg_.pos_clip);
    out[i] = d + cfg_.pos_clip;
  }
  return out;
}

DialogEncoding DialogEncoder::encode(Graph& g, const std::vector<DialogInput>& batch) const {
  if (batch.empty()) throw InvalidInput("encode: empty batch");
  DialogEncoding enc;
  std::map<std::pair<std::vector<int>, std::vector<int>>, int> distinct;
  std::vector<int> tok_ids, tag_ids, utt_sizes;
  for (const auto& inst : batch) {
    if (inst.tokens.empty()) throw InvalidInput("encode: empty dialog");
    std::vector<int> ids;
    for (std::size_t u = 0; u < inst.tokens.size(); ++u) {
      auto key = std::make_pair(inst.tokens[u], inst.tags[u]);
      if (key.first.empty()) {
        key.first = {Vocab::pad};
        key.second = {0};
      }
      auto it = distinct.find(key);
      if (it == distinct.end()) {
        int idx = static_cast<int>(utt_sizes.size());
        enc.utt_token_start.push_back(static_cast<int>(tok_ids.size()));
        tok_ids.insert(tok_ids.end(), key.first.begin(), key.first.end());
        tag_ids.insert(tag_ids.end(), key.second.begin(), key.second.end());
        utt_sizes.push_back(static_cast<int>(key.first.size()));
        it = distinct.emplace(std::move(key), idx).first;
      }
      ids.push_back(it->second);
    }
    enc.instance_utts.push_back(std::move(ids));
  }
  Segments useg = Segments::from_sizes(utt_sizes);
  Var x = feat(g, tok_ids, tag_ids);
  enc.tokens = g.concat_rows({g.gru(x, useg, fwd, false), g.gru(x, useg, bwd, true)});
  enc.alpha = g.segment_softmax(utt_attn(g, enc.tokens), useg);
  enc.utts = g.segment_wsum(enc.tokens, enc.alpha, useg);

  std::vector<int> step_utts, step_pos, sizes;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto& ids = enc.instance_utts[i];
    step_utts.insert(step_utts.end(), ids.begin(), ids.end());
    for (std::size_t u = 0; u < ids.size(); ++u)
      step_pos.push_back(batch[i].positions.empty() ? absent_position() : batch[i].positions[u]);
    sizes.push_back(static_cast<int>(ids.size()));
  }
  enc.steps = Segments::from_sizes(sizes);
  Var in = g.concat_rows({g.gather_cols(enc.utts, step_utts), g.gather_cols(g.param(*pos), step_pos)});
  enc.states = g.gru(in, enc.steps, dlg, false);
  enc.beta = g.segment_softmax(dlg_attn(g, enc.states), enc.steps);
  enc.c = g.segment_wsum(enc.states, enc.beta, enc.steps);
  return enc;
}

// ---------------------------------------------------------------------------

int KBGraphInput::index_of(const std::string& value) const {
  for (std::size_t i = 0; i < values.size(); ++i)
    if (values[i] == value) return static_cast<int>(i);
  return -1;
}

KBEncoder::KBEncoder(ParamStore& ps, const std::string& name, const Vocab& vocab, int relations,
                     const BlockConfig& cfg, Rng& rng)
    : relations_(relations) {
  feat = TokenFeaturizer(ps, name + ".feat", vocab, cfg.emb, rng);
  recency = &ps.uniform(name + ".recency", cfg.emb, 3, 0.1, rng);
  // Messages from several relations add up at each node; shrink their scale so
  // deep stacks keep activations of order one.
  const double self_scale = std::sqrt(3.0 / cfg.emb);
  const double rel_scale = std::sqrt(1.0 / cfg.emb);
  for (int l = 0; l < cfg.rgcn_layers; ++l) {
    self_.push_back(&ps.uniform(name + ".self." + std::to_string(l), cfg.emb, cfg.emb, self_scale, rng));
    std::vector<Param*> rs;
    for (int r = 0; r < 2 * relations; ++r)
      rs.push_back(&ps.uniform(name + ".rel." + std::to_string(l) + "." + std::to_string(r), cfg.emb,
                               cfg.emb, rel_scale, rng));
    rel_.push_back(std::move(rs));
  }
}

Var KBEncoder::layer(Graph& g, Var z, int l, const std::vector<std::tuple<int, int, int>>& edges) const {
  const int n = static_cast<int>(g.value(z).cols());
  Var out = g.matmul(g.param(*self_[l]), z);
  if (edges.empty()) return g.relu(out);

  // For each directed relation type: gather neighbour sums onto its targets, transform,
  // and scatter back.
  std::vector<std::vector<std::pair<int, int>>> by_type(2 * relations_);  // (src, dst)
  for (const auto& [h, r, t] : edges) {
    by_type[r].push_back({h, t});
    by_type[relations_ + r].push_back({t, h});
  }
  std::vector<Var> msgs;
  std::vector<Eigen::Triplet<double>> scatter;
  int offset = 0;
  for (int rt = 0; rt < 2 * relations_; ++rt) {
    if (by_type[rt].empty()) continue;
    std::map<int, int> target_col;
    for (const auto& [s, d] : by_type[rt]) target_col.emplace(d, 0);
    int k = 0;
    for (auto& [d, c] : target_col) c = k++;
    std::vector<Eigen::Triplet<double>> trip;
    for (const auto& [s, d] : by_type[rt]) trip.emplace_back(s, target_col[d], 1.0);
    auto a = std::make_shared<SpMat>(n, k);
    a->setFromTriplets(trip.begin(), trip.end());
    msgs.push_back(g.matmul(g.param(*rel_[l][rt]), g.sparse_matmul(z, a)));
    for (const auto& [d, c] : target_col) scatter.emplace_back(offset + c, d, 1.0);
    offset += k;
  }
  auto p = std::make_shared<SpMat>(offset, n);
  p->setFromTriplets(scatter.begin(), scatter.end());
  Var m = msgs.size() == 1 ? msgs[0] : g.concat_cols(msgs);
  return g.relu(g.add(out, g.sparse_matmul(m, p)));
}

KBEncoding KBEncoder::encode(Graph& g, const std::vector<KBGraphInput>& kbs) const {
  KBEncoding enc;
  std::vector<int> tok, typ, rec;
  std::vector<std::tuple<int, int, int>> edges;
  for (const auto& kb : kbs) {
    int base = static_cast<int>(tok.size());
    enc.start.push_back(base);
    tok.insert(tok.end(), kb.tokens.begin(), kb.tokens.end());
    typ.insert(typ.end(), kb.types.begin(), kb.types.end());
    if (kb.recency.empty())
      rec.insert(rec.end(), kb.tokens.size(), 0);
    else
      rec.insert(rec.end(), kb.recency.begin(), kb.recency.end());
    for (const auto& [h, r, t] : kb.edges) edges.emplace_back(base + h, r, base + t);
  }
  enc.start.push_back(static_cast<int>(tok.size()));
  if (tok.empty()) throw InvalidInput("encode_kb: empty KB");
  Var z = g.add(feat(g, tok, typ), g.gather_cols(g.param(*recency), rec));
  for (int l = 0; l < layers(); ++l) z = layer(g, z, l, edges);
  enc.z = z;
  return enc;
}

// ---------------------------------------------------------------------------

MemoryNetwork::MemoryNetwork(ParamStore& ps, const std::string& name, int dim, int hops,
                             int hidden, Rng& rng) {
  for (int l = 0; l < hops; ++l) {
    auto n = name + ".hop" + std::to_string(l);
    w_z_.push_back(&ps.dense(n + ".wz", hidden, dim, rng));
    w_q_.push_back(&ps.dense(n + ".wq", hidden, dim, rng));
    b_.push_back(&ps.zeros(n + ".b", hidden, 1));
    v_.push_back(&ps.dense(n + ".v", 1, hidden, rng));
  }
}

MemoryRead MemoryNetwork::read(Graph& g, Var q0, Var z,
                               const std::vector<std::vector<int>>& slots) const {
  std::vector<int> idx, sizes;
  for (const auto& s : slots) {
    if (s.empty()) throw InvalidInput("memory_read: empty memory");
    idx.insert(idx.end(), s.begin(), s.end());
    sizes.push_back(static_cast<int>(s.size()));
  }
  Segments seg = Segments::from_sizes(sizes);
  Var zs = g.gather_cols(z, idx);
  MemoryRead res;
  Var q = q0;
  for (int l = 0; l < hops(); ++l) {
    Var hz = g.matmul(g.param(*w_z_[l]), zs);
    Var hq = g.add_bias(g.matmul(g.param(*w_q_[l]), q), g.param(*b_[l]));
    Var score = g.matmul(g.param(*v_[l]), g.tanh(g.add_seg_broadcast(hz, hq, seg)));
    Var gamma = g.segment_softmax(score, seg);
    res.gamma.push_back(gamma);
    q = g.add(q, g.segment_wsum(zs, gamma, seg));
  }
  res.q = q;
  return res;
}

// ---------------------------------------------------------------------------

KBGraphInput kb_graph(const KnowledgeBase& kb, const Ontology& ontology, const Vocab& vocab,
                      const std::map<std::string, int>& recency) {
  KBGraphInput in;
  std::map<std::string, int> index;
  for (const auto& e : kb.entities()) {
    index[e.value] = static_cast<int>(in.values.size());
    in.values.push_back(e.value);
    in.tokens.push_back(vocab.require(e.value));
    in.types.push_back(vocab.tag(e.etype));
    auto it = recency.find(e.value);
    in.recency.push_back(it == recency.end() ? 0 : it->second);
  }
  std::map<std::string, int> rel_index;
  for (std::size_t r = 0; r < ontology.relations().size(); ++r)
    rel_index[ontology.relations()[r].name] = static_cast<int>(r);
  for (const auto& [head, row] : kb.rows())
    for (const auto& [rel, tail] : row.fields) {
      auto it = rel_index.find(rel);
      if (it == rel_index.end()) throw InvalidInput("kb_graph: unknown relation " + rel);
      in.edges.emplace_back(index.at(head), it->second, index.at(tail.value));
    }
  return in;
}

std::map<std::string, int> recency_tags(const std::vector<Entity>& mentions_in_order) {
  std::map<std::string, int> out;
  std::map<std::string, std::string> latest;
  for (const auto& e : mentions_in_order) {
    out[e.value] = 1;
    latest[e.etype] = e.value;
  }
  for (const auto& [_, v] : latest) out[v] = 2;
  return out;
}

}  // namespace dkaf::nn

namespace dkaf::nn {

DialogInput plain_input(const Dialog& dialog, const Vocab& vocab, int upto) {
  DialogInput in;
  const int n = upto < 0 ? static_cast<int>(dialog.utterances.size()) : upto + 1;
  for (int u = 0; u < n; ++u) {
    const auto& utt = dialog.utterances[u];
    std::vector<int> tok, tag;
    for (int k = 0; k < static_cast<int>(utt.tokens.size()); ++k) {
      const Mention* m = utt.mention_at(k);
      tok.push_back(vocab.id(utt.tokens[k]));
      tag.push_back(m ? vocab.tag(m->entity.etype) : 0);
    }
    in.tokens.push_back(std::move(tok));
    in.tags.push_back(std::move(tag));
  }
  return in;
}

MarkedInput marked_input(const Dialog& dialog, const Vocab& vocab, const DialogEncoder& encoder,
                         const std::vector<std::string>& values) {
  static const int open[] = {Vocab::e1_open, Vocab::e2_open};
  static const int close[] = {Vocab::e1_close, Vocab::e2_close};
  if (values.empty() || values.size() > 2) throw InvalidInput("marked_input: one or two values");
  MarkedInput out;
  out.occurrences.resize(values.size());
  std::vector<int> marked_utts;
  const int n = static_cast<int>(dialog.utterances.size());
  for (int u = 0; u < n; ++u) {
    const auto& utt = dialog.utterances[u];
    std::vector<int> tok, tag;
    bool has_first = false;
    for (int k = 0; k < static_cast<int>(utt.tokens.size()); ++k) {
      const Mention* m = utt.mention_at(k);
      int which = -1;
      if (m && m->start == k)
        for (std::size_t v = 0; v < values.size(); ++v)
          if (m->entity.value == values[v]) which = static_cast<int>(v);
      if (which >= 0) {
        tok.push_back(open[which]);
        tag.push_back(0);
        out.occurrences[which].push_back({u, static_cast<int>(tok.size())});
        if (which == 0) has_first = true;
        for (int t = m->start; t < m->end; ++t) {
          tok.push_back(vocab.id(utt.tokens[t]));
          tag.push_back(vocab.tag(m->entity.etype));
        }
        tok.push_back(close[which]);
        tag.push_back(0);
        k = m->end - 1;
        continue;
      }
      tok.push_back(vocab.id(utt.tokens[k]));
      tag.push_back(m ? vocab.tag(m->entity.etype) : 0);
    }
    if (has_first) marked_utts.push_back(u);
    out.input.tokens.push_back(std::move(tok));
    out.input.tags.push_back(std::move(tag));
  }
  out.input.positions = encoder.positions(n, marked_utts);
  return out;
}

}  // namespace dkaf::nn

#include "dkaf/core/json_io.hpp"

namespace dkaf::nn {

nlohmann::json BlockConfig::to_json() const {
  return {{"emb", emb}, {"hidden", hidden}, {"pos_dim", pos_dim}, {"pos_clip", pos_clip},
          {"rgcn_layers", rgcn_layers}, {"hops", hops}, {"scorer", scorer}};
}

BlockConfig BlockConfig::from_json(const nlohmann::json& j) {
  BlockConfig c;
  c.emb = j.value("emb", c.emb);
  c.hidden = j.value("hidden", c.hidden);
  c.pos_dim = j.value("pos_dim", c.pos_dim);
  c.pos_clip = j.value("pos_clip", c.pos_clip);
  c.rgcn_layers = j.value("rgcn_layers", c.rgcn_layers);
  c.hops = j.value("hops", c.hops);
  c.scorer = j.value("scorer", c.scorer);
  if (c.emb <= 0 || c.hidden <= 0 || c.pos_dim <= 0 || c.pos_clip < 0 || c.rgcn_layers < 0 ||
      c.hops < 1 || c.scorer <= 0)
    throw InvalidInput("block config: sizes must be positive and hops >= 1");
  return c;
}

nlohmann::json to_json(const AdamConfig& c) {
  return {{"lr", c.lr}, {"beta1", c.beta1}, {"beta2", c.beta2}, {"eps", c.eps}, {"clip_norm", c.clip_norm}};
}

AdamConfig adam_from_json(const nlohmann::json& j) {
  AdamConfig c;
  c.lr = j.value("lr", c.lr);
  c.beta1 = j.value("beta1", c.beta1);
  c.beta2 = j.value("beta2", c.beta2);
  c.eps = j.value("eps", c.eps);
  c.clip_norm = j.value("clip_norm", c.clip_norm);
  if (!(c.lr > 0)) throw InvalidInput("adam: lr must be positive");
  return c;
}

void save_checkpoint(const std::string& path, const ParamStore& ps, nlohmann::json sidecar) {
  std::string blob = ps.serialize();
  write_file(path, blob);
  sidecar["params_sha256"] = sha256_hex(blob);
  write_json(path + ".json", sidecar);
}

nlohmann::json read_checkpoint_sidecar(const std::string& path) {
  auto side = read_json(path + ".json");
  if (side.value("params_sha256", "") != sha256_hex(read_file(path)))
    throw InvalidInput("checkpoint " + path + " does not match its sidecar");
  return side;
}

}  // namespace dkaf::nn
