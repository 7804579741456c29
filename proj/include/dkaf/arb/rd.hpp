#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "dkaf/mem/mem.hpp"

namespace dkaf::arb {

struct PolicyConfig {
  nn::BlockConfig blocks;
  nn::AdamConfig adam;
  int epochs = 200;
  int batch = 32;           // minimum states per update
  double w_floor = 0.1;     // MAPO buffer weight floor
  double reward_tolerance = 0.05;  // log-likelihood dead zone, in nats
  bool keep_neutral = true;        // RD: a deletion inside the dead zone is penalized

  nlohmann::json to_json() const;
  static PolicyConfig from_json(const nlohmann::json& j);
};

struct PolicyEpoch {
  int epoch = 0;
  double avg_reward = 0.0;      // expected reward over states with a non-zero reward
  double avg_reward_all = 0.0;  // expected reward over all states
  double loss = 0.0;
};

// Deletion rewards of one dialog: R_0 per row of its KB view (R_1 = -R_0).
struct RDDialogRewards {
  std::vector<std::string> rows;
  std::vector<int> r0;
  std::vector<double> delta;  // log L(d, K \ row) - log L(d, K)
};

// With keep_neutral, rows whose removal moves the likelihood by at most `tolerance` get
// R_0 = -1, so only deletions that clearly help are rewarded.
RDDialogRewards rd_rewards(const mem::MemModel& mem, const Dialog& dialog, const KnowledgeBase& kb,
                           double tolerance, bool keep_neutral = true);

struct RDExample {
  const Dialog* dialog = nullptr;
  KnowledgeBase kb;
  RDDialogRewards rewards;
};

// Row deletion policy: pi(delete | d, K, row) from the memory-refined dialog query and
// the summed embeddings of the row's entities.
class RDModel {
 public:
  RDModel(Ontology ontology, DomainProfile profile, nn::Vocab vocab, PolicyConfig cfg, std::uint64_t seed);

  // Rows of the dialog's view and their deletion probabilities.
  std::vector<std::pair<std::string, double>> delete_probs(const Dialog& dialog, const KnowledgeBase& kb) const;
  // kb minus the view rows with pi(delete) > 0.5; deleted heads appended to `deleted`.
  // Rows whose heads are in `keep` are never deleted.
  KnowledgeBase apply(const Dialog& dialog, const KnowledgeBase& kb, std::vector<Row>* deleted = nullptr,
                      const std::vector<std::string>& keep = {}) const;

  // Copies the MEM's dialog encoder, KB encoder and memory weights (same shapes and vocab).
  void init_from(const mem::MemModel& mem);

  std::vector<PolicyEpoch> train(const std::vector<RDExample>& data, std::uint64_t seed,
                                 const std::function<void(const PolicyEpoch&)>& on_epoch = {});

  void save(const std::string& path, const nlohmann::json& extra = {}) const;
  static RDModel load(const std::string& path);

  const PolicyConfig& config() const { return cfg_; }
  nn::ParamStore& params() { return ps_; }

 private:
  struct Batch;
  // Log-probabilities (2 x states; row 0 delete, row 1 keep) for the given views.
  nn::Var log_policy(nn::Graph& g, const std::vector<const Dialog*>& dialogs,
                     const std::vector<const KnowledgeBase*>& views,
                     std::vector<std::vector<std::string>>* rows) const;

  Ontology ontology_;
  DomainProfile profile_;
  nn::Vocab vocab_;
  PolicyConfig cfg_;
  std::uint64_t seed_;
  nn::ParamStore ps_;
  nn::DialogEncoder enc_;
  nn::KBEncoder kb_enc_;
  nn::MemoryNetwork memory_;
  nn::Linear hidden_, out_;
};

}  // namespace dkaf::arb
