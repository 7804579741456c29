#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "dkaf/nn/blocks.hpp"
#include "dkaf/supervision/distant.hpp"

namespace dkaf::arb {

struct RIConfig {
  nn::BlockConfig blocks;
  nn::AdamConfig adam{.lr = 1e-3};
  int epochs = 30;
  int batch = 32;
  double threshold = 0.5;
  double validation_fraction = 0.1;

  nlohmann::json to_json() const;
  static RIConfig from_json(const nlohmann::json& j);
};

struct RIEpoch {
  int epoch = 0;
  double loss = 0.0;
  double train_accuracy = 0.0;
  double validation_accuracy = 0.0;
};

struct ScoredTriple {
  Triple triple;
  double score = 0.0;
};

// Relation classifier over a dialog with both candidate entities marked.
class RIModel {
 public:
  RIModel(Ontology ontology, nn::Vocab vocab, RIConfig cfg, std::uint64_t seed);

  // P(triple holds | dialog) for each triple, all from one dialog.
  std::vector<double> score(const Dialog& dialog, const std::vector<Triple>& triples) const;

  // Trains on positives and negatives; dialogs are looked up by id.
  std::vector<RIEpoch> train(const std::vector<LabeledCandidate>& data,
                             const std::map<std::string, const Dialog*>& dialogs, std::uint64_t seed,
                             const std::function<void(const RIEpoch&)>& on_epoch = {});

  // Accuracy of thresholded scores against binary labels.
  double accuracy(const std::vector<LabeledCandidate>& data,
                  const std::map<std::string, const Dialog*>& dialogs) const;

  void save(const std::string& path, const nlohmann::json& extra = {}) const;
  static RIModel load(const std::string& path);

  const RIConfig& config() const { return cfg_; }
  const nn::Vocab& vocab() const { return vocab_; }
  nn::ParamStore& params() { return ps_; }

 private:
  nn::Var logits(nn::Graph& g, const Dialog& dialog, const std::vector<Triple>& triples) const;

  Ontology ontology_;
  nn::Vocab vocab_;
  RIConfig cfg_;
  std::uint64_t seed_;
  nn::ParamStore ps_;
  nn::DialogEncoder enc_;
  std::map<std::string, std::pair<nn::Linear, nn::Linear>> heads_;
};

// Candidates scored above the threshold, one tail per (head, relation) (the best
// scoring), skipping tails that belong to exactly one row of K_T.
std::vector<ScoredTriple> infer_ri(const RIModel& model, const Dialog& dialog,
                                   const std::vector<LabeledCandidate>& infer,
                                   const KnowledgeBase& kb_t, double threshold);

// K_T plus new rows built from accepted triples.
KnowledgeBase apply_insertions(const KnowledgeBase& kb, const std::vector<Triple>& accepted);

// Split of dialog ids into train and validation parts.
std::pair<std::vector<std::string>, std::vector<std::string>> split_dialogs(
    std::vector<std::string> ids, double validation_fraction, std::uint64_t seed);

}  // namespace dkaf::arb
