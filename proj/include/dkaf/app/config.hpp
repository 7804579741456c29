#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "dkaf/arb/rc.hpp"
#include "dkaf/arb/ri.hpp"
#include "dkaf/cascade/cascade.hpp"
#include "dkaf/mem/mem.hpp"
#include "dkaf/sim/simulator.hpp"
#include "dkaf/tod/responder.hpp"

namespace dkaf::app {

struct Paths {
  std::string ontology = "data/ontology.json";
  std::string base_kb = "data/base_kb.json";
  std::string templates = "data/templates.json";
  std::string checkin = "data/checkin_profile.json";
};

struct Epochs {
  int ri = 30;
  int rd = 200;
  int rc = 200;
  int mem = 100;
  int tod = 30;
};

// Every knob of a run. The simulation uses the root seed directly; every other stage
// draws a named sub-seed from it.
struct RunConfig {
  std::uint64_t seed = 4;
  int embedding_size = 100;
  double lr = 1e-4;
  int batch = 32;
  int rgcn_layers = 8;
  int hops = 8;
  Epochs epochs;
  // The first order is the primary cascade; the others are ablations.
  std::vector<cascade::Order> orders = cascade::supported_orders();
  Paths paths;

  int train_dialogs = 200;
  int test_dialogs = 100;
  std::int64_t horizon = 24 * 7 * 4;
  double maintenance_prob = 0.05;
  double closure_prob = 1e-5;
  double stale_fraction = 1.0;

  double ri_lr = 1e-3;
  double ri_threshold = 0.5;
  double reward_tolerance = 0.05;
  double w_floor = 0.1;
  bool warm_start = true;

  double tod_lr = 1e-3;
  int tod_rgcn_layers = 2;
  int tod_hops = 3;
  int tod_batch = 8;
  bool tod_rules = true;  // also train a responder on rule-arbitrated KBs

  std::vector<double> sweep_levels{0.2, 0.4, 0.6, 0.8, 1.0};  // stale_fraction per sweep run

  nlohmann::json to_json() const;
  // Missing keys keep their defaults; unknown keys are rejected.
  static RunConfig from_json(const nlohmann::json& j);
  void validate() const;
  // sha256 of the canonical JSON dump.
  std::string hash() const;

  SimConfig sim_config() const;
  nn::BlockConfig blocks() const;
  mem::MemConfig mem_config() const;
  arb::RIConfig ri_config() const;
  arb::PolicyConfig rd_config() const;
  arb::PolicyConfig rc_config() const;
  cascade::LearnConfig learn_config() const;
  tod::TodConfig tod_config() const;
};

// Applies "key=value" overrides (dotted keys reach nested objects, values parse as JSON
// and fall back to strings).
RunConfig apply_overrides(const RunConfig& cfg, const std::vector<std::string>& overrides);

RunConfig load_config(const std::string& path);

}  // namespace dkaf::app
