#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "dkaf/core/judge.hpp"
#include "dkaf/core/rng.hpp"

namespace dkaf {

struct CheckinProfile {
  std::array<std::array<double, 24>, 7> intensity{};

  double at(std::int64_t tick) const;
  double min_intensity() const;
  static CheckinProfile from_json(const nlohmann::json& j);
};

enum class AvailabilityKind { checkin_weighted, bernoulli, always_on };

struct AvailabilityProcess {
  AvailabilityKind kind = AvailabilityKind::always_on;
  CheckinProfile profile;
  double p = 1.0;
  double maintenance_prob = 0.0;  // per row per day
  double closure_prob = 0.0;      // per row per tick

  // Availability probability at a tick, before maintenance and closure.
  double availability(std::int64_t tick) const;
  void validate() const;
};

// Row availability over [0, horizon). The last tick's snapshot is K_T.
class KBTimeline {
 public:
  KBTimeline() = default;
  KBTimeline(KnowledgeBase base, std::int64_t horizon, std::vector<std::vector<std::uint8_t>> avail);

  const KnowledgeBase& base() const { return base_; }
  std::int64_t horizon() const { return horizon_; }
  std::int64_t last_tick() const { return horizon_ - 1; }
  bool available(std::int64_t tick, std::size_t row) const { return avail_[tick][row] != 0; }
  const std::vector<std::string>& heads() const { return heads_; }

  KnowledgeBase snapshot(std::int64_t tick) const;
  static std::string snapshot_id(std::int64_t tick);

 private:
  KnowledgeBase base_;
  std::int64_t horizon_ = 0;
  std::vector<std::string> heads_;
  std::vector<std::vector<std::uint8_t>> avail_;  // [tick][row]
};

// Processes are keyed by the head entity type of each row.
KBTimeline simulate_timeline(const KnowledgeBase& base,
                             const std::map<std::string, AvailabilityProcess>& process_by_domain,
                             std::int64_t horizon, std::uint64_t seed);

// Abstract dialog plan; entity slots are filled at grounding time.
struct DialogSkeleton {
  std::string id;
  std::map<std::string, Entity> constraints;  // final query constraints
  std::vector<std::string> informed_first;    // slots the user gives in the opening request
  std::string updated_slot;                   // empty when no update happens
  Entity initial_value;                       // value of updated_slot before the update
  int rejections = 0;
  std::vector<std::string> info_requests;     // relations asked about the booked row
  std::uint64_t phrasing_seed = 0;
};

struct Templates {
  nlohmann::json raw;
  static Templates from_json(const nlohmann::json& j);
  std::vector<std::string> slot_relations() const;
  double update_prob() const;
  int max_rejections() const;
  double info_prob() const;
};

std::vector<DialogSkeleton> sample_skeletons(const Ontology& ontology, const KnowledgeBase& base,
                                             const Templates& templates, int count,
                                             const std::string& prefix, std::uint64_t seed);

// Realizes a skeleton against the suggestions and booked row chosen from `kb`.
// Returns false when fewer than rejections + 1 rows satisfy the constraints.
bool realize_dialog(const DialogSkeleton& sk, const KnowledgeBase& kb, const Ontology& ontology,
                    const Templates& templates, const DomainProfile& profile, Dialog& out);

struct GroundingResult {
  std::vector<CorpusRecord> records;
  std::vector<std::string> dropped;  // skeleton ids unsatisfiable at every tick
  std::map<std::int64_t, std::shared_ptr<const KnowledgeBase>> snapshots;
};

// Train dialogs: uniform tick among satisfiable ticks, gold = snapshot at that tick,
// train KB = last snapshot. With probability 1 - stale_fraction a dialog satisfiable at
// the last tick is placed there instead.
GroundingResult assign_and_ground(const std::vector<DialogSkeleton>& skeletons,
                                  const KBTimeline& timeline, const Ontology& ontology,
                                  const Templates& templates, const DomainProfile& profile,
                                  std::uint64_t seed, double stale_fraction = 1.0);

// Test dialogs are grounded on K_T itself.
GroundingResult ground_on_final(const std::vector<DialogSkeleton>& skeletons,
                                const KBTimeline& timeline, const Ontology& ontology,
                                const Templates& templates, const DomainProfile& profile);

// Ground truth for the arbitration metrics of one record.
struct RecordTruth {
  std::vector<std::string> insert_rows;  // R: dialog-participating rows of K_d missing from K_T
  std::vector<std::string> delete_rows;  // D_g: rows of the dialog's K_T view missing from K_d
  bool consistent = true;
};

RecordTruth record_truth(const CorpusRecord& rec, const Ontology& ontology,
                         const DomainProfile& profile);

struct SimConfig {
  int train = 200;
  int test = 100;
  std::int64_t horizon = 24 * 7 * 4;
  std::uint64_t seed = 7;
  double maintenance_prob = 0.05;
  double closure_prob = 1e-5;
  double stale_fraction = 1.0;  // share of train dialogs placed at a random past tick
};

struct SimOutput {
  KBTimeline timeline;
  GroundingResult train;
  GroundingResult test;
  std::shared_ptr<const KnowledgeBase> kb_train;
};

SimOutput run_simulation(const Ontology& ontology, const KnowledgeBase& base,
                         const Templates& templates, const CheckinProfile& profile,
                         const SimConfig& cfg, const DomainProfile& domain = {});

}  // namespace dkaf
