#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "dkaf/arb/rd.hpp"

namespace dkaf::arb {

// A latent field to complete: the dialog, the row head e_s, the relation and the KB with
// (e_s, r, .) removed.
struct RCState {
  const Dialog* dialog = nullptr;
  Entity head;
  std::string relation;
  KnowledgeBase kb;
  std::vector<double> rewards;  // per target in E_r order; empty until computed
};

// One state per (mentioned head with a row in kb, latent relation).
std::vector<RCState> build_rc_states(const Dialog& dialog, const KnowledgeBase& kb, const Ontology& ontology,
                                     const DomainProfile& profile);

// Reward 1 for every target whose likelihood is within `tolerance` nats of the best.
std::vector<double> rc_rewards(const mem::MemModel& mem, const RCState& state, double tolerance);

// Completion policy over E_r for a marked head entity.
class RCModel {
 public:
  RCModel(Ontology ontology, DomainProfile profile, nn::Vocab vocab, PolicyConfig cfg, std::uint64_t seed);

  // Policy distribution over E_r (ontology order) for each state.
  std::vector<std::vector<double>> policy(const std::vector<const RCState*>& states) const;
  // Highest-probability target, ties to the earlier target.
  Entity predict(const RCState& state) const;

  void init_from(const mem::MemModel& mem);
  std::vector<PolicyEpoch> train(const std::vector<RCState>& states, std::uint64_t seed,
                                 const std::function<void(const PolicyEpoch&)>& on_epoch = {});

  void save(const std::string& path, const nlohmann::json& extra = {}) const;
  static RCModel load(const std::string& path);

  const PolicyConfig& config() const { return cfg_; }
  nn::ParamStore& params() { return ps_; }

 private:
  // Log-probabilities per state (|E_r| x 1 each), in input order.
  std::vector<nn::Var> log_policy(nn::Graph& g, const std::vector<const RCState*>& states) const;

  Ontology ontology_;
  DomainProfile profile_;
  nn::Vocab vocab_;
  PolicyConfig cfg_;
  std::uint64_t seed_;
  nn::ParamStore ps_;
  nn::DialogEncoder enc_;
  nn::KBEncoder kb_enc_;
  nn::MemoryNetwork memory_;
  nn::Linear q0_;
  std::map<std::string, std::pair<nn::Linear, nn::Linear>> heads_;
};

// Fills missing latent fields of the given rows (heads mentioned in the dialog) with the
// policy's greedy choice; returns the completed triples.
std::vector<Triple> apply_rc(const RCModel& model, const Dialog& dialog, KnowledgeBase& kb,
                             const std::vector<std::string>& rows, const Ontology& ontology,
                             const DomainProfile& profile);

}  // namespace dkaf::arb
