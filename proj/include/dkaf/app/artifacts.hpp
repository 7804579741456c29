#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "dkaf/cascade/cascade.hpp"
#include "dkaf/eval/metrics.hpp"
#include "dkaf/sim/simulator.hpp"

namespace dkaf::app {

namespace fs = std::filesystem;

// A simulated corpus as stored on disk: train.jsonl, test.jsonl, kb_train.json,
// kb_gold/<snapshot id>.json and stats.json.
struct Corpus {
  std::vector<CorpusRecord> train;
  std::vector<CorpusRecord> test;
  std::shared_ptr<const KnowledgeBase> kb_train;
};

void save_corpus(const SimOutput& sim, const Ontology& ontology, const DomainProfile& profile, const fs::path& dir);
Corpus load_corpus(const fs::path& dir);

// Records of one jsonl file paired with a shared training KB. Gold snapshots are
// attached when `gold_dir` holds them.
std::vector<CorpusRecord> load_records(const fs::path& jsonl, std::shared_ptr<const KnowledgeBase> kb,
                                       const fs::path& gold_dir = {});

void save_traces(const fs::path& path, const std::vector<cascade::ArbitrationTrace>& traces);
std::vector<cascade::ArbitrationTrace> load_traces(const fs::path& path);
// One file per dialog under dir, named by dialog id.
void save_kb_hat(const fs::path& dir, const std::vector<cascade::ArbitrationTrace>& traces);

// Per-dialog responses: one {id, responses} object per line.
void save_predictions(const fs::path& path, const std::vector<std::string>& ids, const eval::DialogResponses& r);
eval::DialogResponses load_predictions(const fs::path& path, const std::vector<std::string>& ids);

void write_csv(const fs::path& path, const std::vector<std::string>& header,
               const std::vector<std::vector<double>>& rows);
std::vector<std::vector<double>> read_csv(const fs::path& path, std::vector<std::string>* header = nullptr);

// sha256 of the file bytes; a checkpoint's digest also covers its sidecar.
std::string file_digest(const fs::path& path);

// Checkpoint sidecars carry the config hash of the run that wrote them.
void check_config_hash(const fs::path& checkpoint, const std::string& expected);

}  // namespace dkaf::app
