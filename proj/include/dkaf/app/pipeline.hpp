#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "dkaf/app/artifacts.hpp"
#include "dkaf/app/config.hpp"
#include "dkaf/eval/metrics.hpp"

namespace dkaf::app {

using Logger = std::function<void(const std::string&)>;

inline const std::string tool_version = "dkaf 1.0.0";

struct Inputs {
  Ontology ontology;
  KnowledgeBase base_kb;
  Templates templates;
  CheckinProfile checkin;
  DomainProfile profile;
};
Inputs load_inputs(const Paths& paths);

// Stage primitives shared by the pipeline and the CLI subcommands.
SimOutput simulate(const Inputs& in, const RunConfig& cfg);
mem::MemModel train_mem_model(const std::vector<CorpusRecord>& train, const Inputs& in, const RunConfig& cfg,
                              std::uint64_t seed, std::vector<mem::EpochStat>* curve, const Logger& log = {});
arb::RIModel train_ri_model(const std::vector<CorpusRecord>& train, const Inputs& in, const RunConfig& cfg,
                            std::uint64_t seed, std::vector<arb::RIEpoch>* curve, const Logger& log = {});
tod::Responder train_tod_model(const std::vector<CorpusRecord>& train, const std::vector<const KnowledgeBase*>& kbs,
                               const Inputs& in, const RunConfig& cfg, std::uint64_t seed,
                               std::vector<tod::TodEpoch>* curve, const Logger& log = {});
eval::DialogResponses predict_split(const tod::Responder& model, const std::vector<CorpusRecord>& records);

void write_mem_curve(const fs::path& path, const std::vector<mem::EpochStat>& curve);
void write_ri_curve(const fs::path& path, const std::vector<arb::RIEpoch>& curve);
void write_policy_curve(const fs::path& path, const std::vector<arb::PolicyEpoch>& curve);
void write_tod_curve(const fs::path& path, const std::vector<tod::TodEpoch>& curve);

// Arbitration half of a report: RI/RD F1, RC accuracy, rates and edit counts.
void fill_arbitration_metrics(eval::MetricReport& report, const std::vector<CorpusRecord>& train,
                              const std::vector<cascade::ArbitrationTrace>& traces, const Inputs& in);

// Markdown table of reports plus text plots of every CSV curve under curve_dir.
std::string render_report(const std::map<std::string, eval::MetricReport>& reports, const fs::path& curve_dir);

struct StageRecord {
  std::string name;
  std::string key;  // sha256 over stage name, config hash and input digests
  std::map<std::string, std::string> outputs;  // run-relative path -> digest
};

struct RunManifest {
  std::string tool_version;
  std::string config_hash;
  nlohmann::json config;
  std::map<std::string, std::string> inputs;  // path -> digest
  std::vector<StageRecord> stages;

  nlohmann::json to_json() const;
  static RunManifest from_json(const nlohmann::json& j);
};

struct StageTiming {
  std::string name;
  double seconds = 0.0;
  bool cached = false;
};

struct PipelineResult {
  RunManifest manifest;
  std::vector<StageTiming> timings;
  std::map<std::string, eval::MetricReport> reports;  // by system: raw, rules, and each order
};

// Digest of a file, or of a directory as the sorted (relative path, digest) list.
std::string path_digest(const fs::path& path);

// Runs every stage under run_dir, reusing stages whose key and output digests match.
// Writes manifest.json, timings.json, reports/*.json and report.md.
PipelineResult run_pipeline(const RunConfig& cfg, const fs::path& run_dir, const Logger& log = {});

struct SweepResult {
  std::vector<double> levels;
  std::vector<double> inconsistency;  // measured train rate per level
  std::vector<PipelineResult> runs;
};

// One pipeline per stale_fraction level under run_dir/level_<i>; writes sweep.json.
SweepResult run_sweep(const RunConfig& cfg, const fs::path& run_dir, const Logger& log = {});

// System name of an order, as used in file names ("ri-rd-rc").
std::string order_tag(const cascade::Order& order);

}  // namespace dkaf::app
