#include "dkaf/app/config.hpp"

#include "dkaf/core/error.hpp"
#include "dkaf/core/json_io.hpp"
#include "dkaf/core/rng.hpp"

namespace dkaf::app {

namespace {

void reject_unknown(const nlohmann::json& given, const nlohmann::json& known, const std::string& where) {
  if (!given.is_object()) throw InvalidInput("config: " + where + " must be an object");
  for (const auto& [k, v] : given.items()) {
    if (!known.contains(k)) throw InvalidInput("config: unknown key '" + where + k + "'");
    if (known.at(k).is_object()) reject_unknown(v, known.at(k), where + k + ".");
  }
}

}  // namespace

nlohmann::json RunConfig::to_json() const {
  nlohmann::json ord = nlohmann::json::array();
  for (const auto& o : orders) ord.push_back(cascade::to_string(o));
  return {{"seed", seed},
          {"embedding_size", embedding_size},
          {"lr", lr},
          {"batch", batch},
          {"rgcn_layers", rgcn_layers},
          {"hops", hops},
          {"epochs", {{"ri", epochs.ri}, {"rd", epochs.rd}, {"rc", epochs.rc}, {"mem", epochs.mem}, {"tod", epochs.tod}}},
          {"orders", ord},
          {"paths",
           {{"ontology", paths.ontology},
            {"base_kb", paths.base_kb},
            {"templates", paths.templates},
            {"checkin", paths.checkin}}},
          {"train_dialogs", train_dialogs},
          {"test_dialogs", test_dialogs},
          {"horizon", horizon},
          {"maintenance_prob", maintenance_prob},
          {"closure_prob", closure_prob},
          {"stale_fraction", stale_fraction},
          {"ri_lr", ri_lr},
          {"ri_threshold", ri_threshold},
          {"reward_tolerance", reward_tolerance},
          {"w_floor", w_floor},
          {"warm_start", warm_start},
          {"tod_lr", tod_lr},
          {"tod_rgcn_layers", tod_rgcn_layers},
          {"tod_hops", tod_hops},
          {"tod_batch", tod_batch},
          {"tod_rules", tod_rules},
          {"sweep_levels", sweep_levels}};
}

RunConfig RunConfig::from_json(const nlohmann::json& j) {
  nlohmann::json m = RunConfig{}.to_json();
  reject_unknown(j, m, "");
  m.merge_patch(j);
  RunConfig c;
  c.seed = m.at("seed");
  c.embedding_size = m.at("embedding_size");
  c.lr = m.at("lr");
  c.batch = m.at("batch");
  c.rgcn_layers = m.at("rgcn_layers");
  c.hops = m.at("hops");
  const auto& e = m.at("epochs");
  c.epochs = {e.at("ri"), e.at("rd"), e.at("rc"), e.at("mem"), e.at("tod")};
  c.orders.clear();
  for (const auto& o : m.at("orders")) c.orders.push_back(cascade::parse_order(o.get<std::string>()));
  const auto& p = m.at("paths");
  c.paths = {p.at("ontology"), p.at("base_kb"), p.at("templates"), p.at("checkin")};
  c.train_dialogs = m.at("train_dialogs");
  c.test_dialogs = m.at("test_dialogs");
  c.horizon = m.at("horizon");
  c.maintenance_prob = m.at("maintenance_prob");
  c.closure_prob = m.at("closure_prob");
  c.stale_fraction = m.at("stale_fraction");
  c.ri_lr = m.at("ri_lr");
  c.ri_threshold = m.at("ri_threshold");
  c.reward_tolerance = m.at("reward_tolerance");
  c.w_floor = m.at("w_floor");
  c.warm_start = m.at("warm_start");
  c.tod_lr = m.at("tod_lr");
  c.tod_rgcn_layers = m.at("tod_rgcn_layers");
  c.tod_hops = m.at("tod_hops");
  c.tod_batch = m.at("tod_batch");
  c.tod_rules = m.at("tod_rules");
  c.sweep_levels = m.at("sweep_levels").get<std::vector<double>>();
  c.validate();
  return c;
}

void RunConfig::validate() const {
  auto positive = [](long v, const char* name) {
    if (v <= 0) throw InvalidInput(std::string("config: ") + name + " must be positive");
  };
  positive(embedding_size, "embedding_size");
  positive(batch, "batch");
  positive(rgcn_layers, "rgcn_layers");
  positive(hops, "hops");
  positive(epochs.ri, "epochs.ri");
  positive(epochs.rd, "epochs.rd");
  positive(epochs.rc, "epochs.rc");
  positive(epochs.mem, "epochs.mem");
  positive(epochs.tod, "epochs.tod");
  positive(train_dialogs, "train_dialogs");
  positive(test_dialogs, "test_dialogs");
  positive(horizon, "horizon");
  positive(tod_rgcn_layers, "tod_rgcn_layers");
  positive(tod_hops, "tod_hops");
  positive(tod_batch, "tod_batch");
  if (!(lr > 0) || !(ri_lr > 0) || !(tod_lr > 0)) throw InvalidInput("config: learning rates must be positive");
  if (orders.empty()) throw InvalidInput("config: at least one stage order is required");
  for (std::size_t i = 0; i < orders.size(); ++i)
    for (std::size_t k = 0; k < i; ++k)
      if (orders[i] == orders[k]) throw InvalidInput("config: duplicate order " + cascade::to_string(orders[i]));
  if (stale_fraction < 0 || stale_fraction > 1) throw InvalidInput("config: stale_fraction outside [0, 1]");
  for (double s : sweep_levels)
    if (s < 0 || s > 1) throw InvalidInput("config: sweep level outside [0, 1]");
  if (ri_threshold <= 0 || ri_threshold >= 1) throw InvalidInput("config: ri_threshold outside (0, 1)");
  if (reward_tolerance < 0) throw InvalidInput("config: reward_tolerance must be non-negative");
  if (w_floor < 0 || w_floor > 1) throw InvalidInput("config: w_floor outside [0, 1]");
}

std::string RunConfig::hash() const { return sha256_hex(to_json().dump()); }

SimConfig RunConfig::sim_config() const {
  SimConfig s;
  s.train = train_dialogs;
  s.test = test_dialogs;
  s.horizon = horizon;
  s.seed = seed;
  s.maintenance_prob = maintenance_prob;
  s.closure_prob = closure_prob;
  s.stale_fraction = stale_fraction;
  return s;
}

nn::BlockConfig RunConfig::blocks() const {
  nn::BlockConfig b;
  b.emb = embedding_size;
  b.hidden = embedding_size;
  b.rgcn_layers = rgcn_layers;
  b.hops = hops;
  return b;
}

mem::MemConfig RunConfig::mem_config() const {
  mem::MemConfig c;
  c.blocks = blocks();
  c.adam.lr = lr;
  c.epochs = epochs.mem;
  c.batch = batch;
  return c;
}

arb::RIConfig RunConfig::ri_config() const {
  arb::RIConfig c;
  c.blocks = blocks();
  c.adam.lr = ri_lr;
  c.epochs = epochs.ri;
  c.batch = batch;
  c.threshold = ri_threshold;
  return c;
}

namespace {

arb::PolicyConfig policy(const RunConfig& r, int epochs) {
  arb::PolicyConfig c;
  c.blocks = r.blocks();
  c.adam.lr = r.lr;
  c.epochs = epochs;
  c.batch = r.batch;
  c.w_floor = r.w_floor;
  c.reward_tolerance = r.reward_tolerance;
  return c;
}

}  // namespace

arb::PolicyConfig RunConfig::rd_config() const { return policy(*this, epochs.rd); }
arb::PolicyConfig RunConfig::rc_config() const { return policy(*this, epochs.rc); }

cascade::LearnConfig RunConfig::learn_config() const {
  cascade::LearnConfig c;
  c.rd = rd_config();
  c.rc = rc_config();
  c.ri_threshold = ri_threshold;
  c.warm_start = warm_start;
  return c;
}

tod::TodConfig RunConfig::tod_config() const {
  tod::TodConfig c;
  c.blocks = blocks();
  c.blocks.rgcn_layers = tod_rgcn_layers;
  c.blocks.hops = tod_hops;
  c.adam.lr = tod_lr;
  c.epochs = epochs.tod;
  c.batch = tod_batch;
  return c;
}

RunConfig apply_overrides(const RunConfig& cfg, const std::vector<std::string>& overrides) {
  nlohmann::json j = cfg.to_json();
  for (const auto& o : overrides) {
    auto eq = o.find('=');
    if (eq == std::string::npos || eq == 0) throw InvalidInput("override '" + o + "' is not key=value");
    const std::string key = o.substr(0, eq), raw = o.substr(eq + 1);
    nlohmann::json value = nlohmann::json::parse(raw, nullptr, false);
    if (value.is_discarded()) value = raw;
    nlohmann::json::json_pointer ptr("/" + [&] {
      std::string k = key;
      for (auto& ch : k)
        if (ch == '.') ch = '/';
      return k;
    }());
    if (!j.contains(ptr)) throw InvalidInput("override: unknown key '" + key + "'");
    j[ptr] = value;
  }
  return RunConfig::from_json(j);
}

RunConfig load_config(const std::string& path) { return RunConfig::from_json(read_json(path)); }

}  // namespace dkaf::app
