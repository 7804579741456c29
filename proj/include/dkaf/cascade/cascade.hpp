#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "dkaf/arb/rc.hpp"
#include "dkaf/arb/rd.hpp"
#include "dkaf/arb/ri.hpp"

namespace dkaf::cascade {

enum class Stage { ri, rd, rc };
using Order = std::array<Stage, 3>;

// "ri,rd,rc" style; throws InvalidInput unless a permutation with RC after RI.
Order parse_order(const std::string& s);
std::string to_string(const Order& order);
// The three orders compared in the ablation, default first.
const std::vector<Order>& supported_orders();

struct ArbitrationTrace {
  std::string dialog_id;
  std::vector<Triple> inserted;
  std::vector<Row> deleted;
  std::vector<Triple> completed;
  KnowledgeBase result_kb;

  nlohmann::json to_json() const;
  static ArbitrationTrace from_json(const nlohmann::json& j);
};

// Re-applies the trace's edits to kb_t in stage order.
KnowledgeBase replay(const ArbitrationTrace& trace, const KnowledgeBase& kb_t, const Order& order);

// Frozen models; a null model makes its stage the identity.
struct Models {
  const arb::RIModel* ri = nullptr;
  const arb::RDModel* rd = nullptr;
  const arb::RCModel* rc = nullptr;
  double ri_threshold = 0.5;
};

std::vector<ArbitrationTrace> arbitrate(const std::vector<CorpusRecord>& records, const Models& models,
                                        const Order& order, const Ontology& ontology,
                                        const DomainProfile& profile);

// Training RD and RC inside the cascade: each is trained on the KBs produced by the
// stages before it, then applied.
struct LearnConfig {
  arb::PolicyConfig rd;
  arb::PolicyConfig rc;
  double ri_threshold = 0.5;
  bool warm_start = true;
};

struct LearnResult {
  std::vector<ArbitrationTrace> traces;
  std::vector<arb::PolicyEpoch> rd_curve, rc_curve;
  std::optional<arb::RDModel> rd;
  std::optional<arb::RCModel> rc;
};

using Logger = std::function<void(const std::string&)>;

LearnResult learn_cascade(const std::vector<CorpusRecord>& records, const mem::MemModel& mem,
                          const arb::RIModel& ri, const Order& order, const LearnConfig& cfg,
                          std::uint64_t seed, const Logger& log = {});

// Deterministic rule baseline: insertion by nearest mention, deletion of rows none of
// whose unique entities the dialog mentions, completion by suggestion order.
std::vector<ArbitrationTrace> rule_arbitrate(const std::vector<CorpusRecord>& records,
                                             const Ontology& ontology, const DomainProfile& profile);

// Per-dialog rule stages, exposed for tests.
std::vector<Triple> rule_insertions(const Dialog& dialog, const KnowledgeBase& kb, const Ontology& ontology,
                                    const DomainProfile& profile);
std::vector<std::string> rule_deletions(const Dialog& dialog, const KnowledgeBase& kb,
                                        const Ontology& ontology, const DomainProfile& profile);
std::vector<Triple> rule_completions(const Dialog& dialog, const KnowledgeBase& kb,
                                     const std::vector<std::string>& rows, const Ontology& ontology,
                                     const DomainProfile& profile);

struct CascadeCounts {
  std::size_t insertions = 0;  // inserted rows
  std::size_t deletions = 0;   // deleted rows
  std::size_t completions = 0;
};
CascadeCounts count_edits(const std::vector<ArbitrationTrace>& traces);

}  // namespace dkaf::cascade
