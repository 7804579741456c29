#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include <json.hpp>

#include "dkaf/core/judge.hpp"
#include "dkaf/nn/blocks.hpp"

namespace dkaf::mem {

// One agent-utterance entity occurrence, masked out of the history that ends with
// its utterance.
struct MaskedInstance {
  std::string dialog_id;
  int utterance = 0;
  int mention = 0;  // index into that utterance's mentions
  Entity gold;
};

std::vector<MaskedInstance> mask_instances(const Dialog& dialog);

struct MemConfig {
  nn::BlockConfig blocks;
  nn::AdamConfig adam;
  int epochs = 100;
  int batch = 32;  // minimum masked instances per update
  double floor = 1e-8;
  bool ctx_max = false;  // aggregate context copies by max instead of sum

  nlohmann::json to_json() const;
  static MemConfig from_json(const nlohmann::json& j);
};

// Pieces of one prediction, for inspection and tests.
struct MemTerms {
  double lambda = 0.0;
  double p_kb = 0.0;   // P_kb(gold)
  double p_ctx = 0.0;  // P_ctx(gold), aggregated over matching positions
  double prob = 0.0;   // mixture
  std::vector<std::pair<std::string, double>> kb_dist;   // per KB entity
  std::vector<std::pair<std::string, double>> ctx_dist;  // per history token
};

struct MemExample {
  const Dialog* dialog = nullptr;
  const KnowledgeBase* kb = nullptr;
};

struct EpochStat {
  int epoch = 0;
  double loss = 0.0;  // mean negative log-probability per supported instance
  double grad_norm = 0.0;
};

// Masked entity model: a dual pointer network over the history and the dialog's KB
// view. Every public call applies the view, so callers may pass a full KB.
class MemModel {
 public:
  MemModel(Ontology ontology, DomainProfile profile, nn::Vocab vocab, MemConfig cfg,
           std::uint64_t seed);

  double mem_prob(const Dialog& dialog, const KnowledgeBase& kb, const MaskedInstance& inst) const;
  MemTerms inspect(const Dialog& dialog, const KnowledgeBase& kb, const MaskedInstance& inst) const;
  // log L(d, K) with the probability floor; 0 when the dialog has no agent entities.
  double log_likelihood(const Dialog& dialog, const KnowledgeBase& kb) const;
  // Same for several KBs at once; the dialog is encoded once.
  std::vector<double> log_likelihoods(const Dialog& dialog, const std::vector<KnowledgeBase>& kbs) const;

  std::vector<EpochStat> train(const std::vector<MemExample>& data, int epochs, std::uint64_t seed,
                               const std::function<void(const EpochStat&)>& on_epoch = {});

  void save(const std::string& path, const nlohmann::json& extra = {}) const;
  static MemModel load(const std::string& path);

  const nn::Vocab& vocab() const { return vocab_; }
  const MemConfig& config() const { return cfg_; }
  const Ontology& ontology() const { return ontology_; }
  const DomainProfile& profile() const { return profile_; }
  nn::ParamStore& params() { return ps_; }
  const nn::ParamStore& params() const { return ps_; }
  // Bias of the gate; tests force it to pin lambda.
  nn::Param& gate_bias() { return *gate_.b; }

 private:
  struct Job {
    const Dialog* dialog;
    std::vector<KnowledgeBase> views;
    std::vector<MaskedInstance> instances;
  };
  struct Result;
  Result forward(nn::Graph& g, const std::vector<Job>& jobs, bool keep_terms) const;
  KnowledgeBase view(const Dialog& dialog, const KnowledgeBase& kb) const;

  Ontology ontology_;
  DomainProfile profile_;
  nn::Vocab vocab_;
  MemConfig cfg_;
  std::uint64_t seed_;
  nn::ParamStore ps_;
  nn::DialogEncoder enc_;
  nn::KBEncoder kb_enc_;
  nn::MemoryNetwork memory_;
  nn::Linear q0_, kb_head_, ctx_head_, gate_;
};

MemModel train_mem(const std::vector<MemExample>& data, const Ontology& ontology,
                   const DomainProfile& profile, const MemConfig& cfg, std::uint64_t seed,
                   std::vector<EpochStat>* curve = nullptr);

}  // namespace dkaf::mem
