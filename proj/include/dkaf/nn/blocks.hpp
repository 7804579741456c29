#pragma once

#include <map>
#include <string>
#include <tuple>
#include <vector>

#include <json.hpp>

#include "dkaf/core/dialog.hpp"
#include "dkaf/nn/graph.hpp"

namespace dkaf::nn {

// Token vocabulary shared by dialog tokens and KB entity values.
class Vocab {
 public:
  static constexpr int pad = 0;
  static constexpr int unk = 1;
  static constexpr int mask = 2;
  static constexpr int e1_open = 3;
  static constexpr int e1_close = 4;
  static constexpr int e2_open = 5;
  static constexpr int e2_close = 6;

  Vocab();
  // Ontology entities first (in declaration order), then corpus tokens in sorted order.
  static Vocab build(const Ontology& ontology, const std::vector<Dialog>& dialogs);

  int id(const std::string& token) const;  // unk when absent
  bool contains(const std::string& token) const { return ids_.count(token) != 0; }
  // Throws InvalidInput when absent; used for KB values.
  int require(const std::string& token) const;
  int add(const std::string& token);
  const std::string& token(int id) const { return tokens_.at(id); }
  int size() const { return static_cast<int>(tokens_.size()); }

  // Entity-type tags: 0 is the null tag.
  int tag(const std::string& etype) const;
  int tag_count() const { return static_cast<int>(types_.size()) + 1; }
  const std::vector<std::string>& types() const { return types_; }

  nlohmann::json to_json() const;
  static Vocab from_json(const nlohmann::json& j);

 private:
  std::vector<std::string> tokens_;
  std::map<std::string, int> ids_;
  std::vector<std::string> types_;
};

struct BlockConfig {
  int emb = 100;
  int hidden = 100;  // BiGRU is hidden/2 per direction; dialog GRU is hidden
  int pos_dim = 20;
  int pos_clip = 10;
  int rgcn_layers = 8;
  int hops = 8;
  int scorer = 100;  // hidden width of attention scorers

  nlohmann::json to_json() const;
  static BlockConfig from_json(const nlohmann::json& j);
};

nlohmann::json to_json(const AdamConfig& c);
AdamConfig adam_from_json(const nlohmann::json& j);

// Parameter blob at `path` plus a JSON sidecar at `path`.json carrying the blob digest.
void save_checkpoint(const std::string& path, const ParamStore& ps, nlohmann::json sidecar);
// Reads the sidecar; throws InvalidInput when the blob digest does not match.
nlohmann::json read_checkpoint_sidecar(const std::string& path);

// GRU weights (input-hidden, hidden-hidden, biases) for `in` inputs and `h` units.
GruParams make_gru(ParamStore& ps, const std::string& name, int in, int h, Rng& rng);

// Additive scorer v^T tanh(W x + b) applied column-wise.
class Scorer {
 public:
  Scorer() = default;
  Scorer(ParamStore& ps, const std::string& name, int in, int hidden, Rng& rng);
  Var operator()(Graph& g, Var x) const;  // 1 x N
  Param* w = nullptr;
  Param* b = nullptr;
  Param* v = nullptr;
};

class Linear {
 public:
  Linear() = default;
  Linear(ParamStore& ps, const std::string& name, int in, int out, Rng& rng, bool bias = true);
  Var operator()(Graph& g, Var x) const;
  Param* w = nullptr;
  Param* b = nullptr;
};

// Token embedding plus entity-type tag embedding.
class TokenFeaturizer {
 public:
  TokenFeaturizer() = default;
  TokenFeaturizer(ParamStore& ps, const std::string& name, const Vocab& vocab, int emb, Rng& rng);
  Var operator()(Graph& g, const std::vector<int>& tokens, const std::vector<int>& tags) const;
  Param* tokens = nullptr;
  Param* tags = nullptr;
};

// One dialog instance as the encoder sees it.
struct DialogInput {
  std::vector<std::vector<int>> tokens;  // per utterance
  std::vector<std::vector<int>> tags;
  std::vector<int> positions;  // position-vector index per utterance; empty when unused
};

struct DialogEncoding {
  Var tokens;  // hidden x (distinct tokens)
  Var utts;    // hidden x (distinct utterances)
  Var states;  // hidden x (sum of instance lengths): dialog-level states
  Var c;       // hidden x instances
  Var alpha;   // 1 x distinct tokens
  Var beta;    // 1 x sum of instance lengths
  std::vector<int> utt_token_start;             // per distinct utterance
  std::vector<std::vector<int>> instance_utts;  // distinct utterance index per step
  Segments steps;                               // instance segments over states

  int token_col(int inst, int utt, int tok) const {
    return utt_token_start[instance_utts[inst][utt]] + tok;
  }
  int state_col(int inst, int utt) const { return steps.start[inst] + utt; }
};

// Hierarchical encoder: BiGRU over tokens with attention pooling per utterance,
// then a GRU over utterance vectors (with optional position vectors) pooled to c.
class DialogEncoder {
 public:
  DialogEncoder() = default;
  DialogEncoder(ParamStore& ps, const std::string& name, const Vocab& vocab, const BlockConfig& cfg,
                Rng& rng);
  DialogEncoding encode(Graph& g, const std::vector<DialogInput>& batch) const;

  int position_count() const { return 2 * cfg_.pos_clip + 2; }
  int absent_position() const { return 2 * cfg_.pos_clip + 1; }
  // Clipped signed distance of each utterance to the nearest marked utterance
  // (ties to the earlier one); the absent index when nothing is marked.
  std::vector<int> positions(int n_utts, const std::vector<int>& marked) const;

  TokenFeaturizer feat;
  GruParams fwd{}, bwd{}, dlg{};
  Scorer utt_attn, dlg_attn;
  Param* pos = nullptr;

 private:
  BlockConfig cfg_;
};

// Relational graph input for one KB.
struct KBGraphInput {
  std::vector<int> tokens;   // per entity
  std::vector<int> types;    // entity-type tag per entity
  std::vector<int> recency;  // 0 unseen, 1 mentioned earlier, 2 latest mention of its type
  std::vector<std::tuple<int, int, int>> edges;  // (head entity, relation index, tail entity)
  std::vector<std::string> values;               // entity values, for lookups
  int index_of(const std::string& value) const;  // -1 when absent
};

struct KBEncoding {
  Var z;                   // emb x total entities
  std::vector<int> start;  // first column of each KB
};

class KBEncoder {
 public:
  KBEncoder() = default;
  KBEncoder(ParamStore& ps, const std::string& name, const Vocab& vocab, int relations,
            const BlockConfig& cfg, Rng& rng);
  KBEncoding encode(Graph& g, const std::vector<KBGraphInput>& kbs) const;
  // One layer applied to an explicit entity matrix (for testing against naive passing).
  Var layer(Graph& g, Var z, int l, const std::vector<std::tuple<int, int, int>>& edges) const;
  int layers() const { return static_cast<int>(self_.size()); }
  int relation_types() const { return relations_; }
  Param* relation_weight(int l, int r) const { return rel_[l][r]; }
  Param* self_weight(int l) const { return self_[l]; }

  TokenFeaturizer feat;
  Param* recency = nullptr;

 private:
  int relations_ = 0;                   // forward relations; inverse directions add as many
  std::vector<Param*> self_;            // per layer W_0
  std::vector<std::vector<Param*>> rel_;  // per layer, 2 * relations
};

struct MemoryRead {
  Var q;
  std::vector<Var> gamma;  // per hop, 1 x (sum of slot counts)
};

// k-hop memory: gamma = softmax_k g^l(z_k || q), o = sum gamma z, q <- q + o.
class MemoryNetwork {
 public:
  MemoryNetwork() = default;
  MemoryNetwork(ParamStore& ps, const std::string& name, int dim, int hops, int hidden, Rng& rng);
  // q0: dim x I; slots[i] lists the columns of z visible to instance i.
  MemoryRead read(Graph& g, Var q0, Var z, const std::vector<std::vector<int>>& slots) const;
  int hops() const { return static_cast<int>(w_z_.size()); }

 private:
  std::vector<Param*> w_z_, w_q_, b_, v_;
};

// Encoder input for utterances [0, upto] of a dialog (all when upto < 0), no markers.
DialogInput plain_input(const Dialog& dialog, const Vocab& vocab, int upto = -1);

// Dialog with marker tokens wrapped around every occurrence of the given values
// (first value gets <e1>..</e1>, second <e2>..</e2>) and position vectors relative to
// utterances mentioning the first value.
struct MarkedInput {
  DialogInput input;
  // Per marked value: (utterance, token) of the first token of each occurrence.
  std::vector<std::vector<std::pair<int, int>>> occurrences;
};
MarkedInput marked_input(const Dialog& dialog, const Vocab& vocab, const DialogEncoder& encoder,
                         const std::vector<std::string>& values);

KBGraphInput kb_graph(const KnowledgeBase& kb, const Ontology& ontology, const Vocab& vocab,
                      const std::map<std::string, int>& recency = {});

// Recency tag per entity value given the visible mentions in order.
std::map<std::string, int> recency_tags(const std::vector<Entity>& mentions_in_order);

}  // namespace dkaf::nn
