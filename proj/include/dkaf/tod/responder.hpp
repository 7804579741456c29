#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include <json.hpp>

#include "dkaf/nn/blocks.hpp"

namespace dkaf::tod {

struct TodConfig {
  nn::BlockConfig blocks{.rgcn_layers = 2, .hops = 3};
  nn::AdamConfig adam{.lr = 1e-3};
  int epochs = 30;
  int batch = 8;  // dialogs per update
  int key_dim = 32;
  int max_len = 40;

  nlohmann::json to_json() const;
  static TodConfig from_json(const nlohmann::json& j);
};

struct TodExample {
  const Dialog* dialog = nullptr;
  const KnowledgeBase* kb = nullptr;
};

struct TodEpoch {
  int epoch = 0;
  double loss = 0.0;            // mean negative log-probability per supported token
  double token_accuracy = 0.0;  // teacher-forced argmax accuracy
};

// One decoding step's distribution over output strings.
using StepDistribution = std::vector<std::pair<std::string, double>>;

// Pointer-generator responder: a GRU decoder conditioned on the dialog state and a
// memory read over the turn's KB view, mixing vocabulary generation, copying from
// the history and copying from the KB.
class Responder {
 public:
  Responder(Ontology ontology, DomainProfile profile, nn::Vocab vocab, TodConfig cfg, std::uint64_t seed);

  std::vector<TodEpoch> train(const std::vector<TodExample>& data, std::uint64_t seed,
                              const std::function<void(const TodEpoch&)>& on_epoch = {});

  // Greedy responses for every agent turn, each conditioned on the gold history.
  std::vector<std::string> predict_dialog(const Dialog& dialog, const KnowledgeBase& kb) const;
  // Greedy response after the last utterance of `history` (which must end with a user turn).
  std::string respond(const Dialog& history, const KnowledgeBase& kb) const;
  // Distribution of the first decoding step after `history`, for inspection.
  StepDistribution first_step(const Dialog& history, const KnowledgeBase& kb) const;

  void save(const std::string& path, const nlohmann::json& extra = {}) const;
  static Responder load(const std::string& path);

  const nn::Vocab& vocab() const { return vocab_; }
  const TodConfig& config() const { return cfg_; }
  nn::ParamStore& params() { return ps_; }

  static const std::string sos;
  static const std::string eos;

 private:
  struct Batch;
  struct Outputs;
  Batch prepare(const std::vector<TodExample>& data, const std::vector<std::vector<int>>& turns) const;
  void encode(nn::Graph& g, Batch& b) const;
  Outputs decode(nn::Graph& g, const Batch& b, const std::vector<std::vector<std::string>>& feeds) const;
  std::vector<std::string> greedy(const Dialog& dialog, const KnowledgeBase& kb, const std::vector<int>& turns,
                                  int max_len, StepDistribution* first) const;

  Ontology ontology_;
  DomainProfile profile_;
  nn::Vocab vocab_;
  TodConfig cfg_;
  std::uint64_t seed_;
  nn::ParamStore ps_;
  nn::DialogEncoder enc_;
  nn::KBEncoder kb_enc_;
  nn::MemoryNetwork memory_;
  nn::Linear q0_, gen_, ctx_key_, ctx_query_, kb_key_, kb_query_, gate_;
  nn::Param* dec_emb_ = nullptr;
  nn::GruParams dec_{};
  std::vector<int> gen_ids_;      // vocab id per generation index
  std::vector<int> gen_index_;    // generation index per vocab id, -1 when not generable
};

// Vocabulary for the responder: the corpus vocabulary plus decoder markers.
nn::Vocab responder_vocab(const Ontology& ontology, const std::vector<Dialog>& dialogs);

Responder train_responder(const std::vector<TodExample>& data, const Ontology& ontology,
                          const DomainProfile& profile, const TodConfig& cfg, std::uint64_t seed,
                          std::vector<TodEpoch>* curve = nullptr,
                          const std::function<void(const TodEpoch&)>& on_epoch = {});

}  // namespace dkaf::tod
