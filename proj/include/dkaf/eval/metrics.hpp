#pragma once

#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "dkaf/cascade/cascade.hpp"
#include "dkaf/sim/simulator.hpp"

namespace dkaf::eval {

// Responses grouped by dialog; predictions and gold must align exactly.
using DialogResponses = std::vector<std::vector<std::string>>;

double response_accuracy(const DialogResponses& predictions, const DialogResponses& gold);
double dialog_accuracy(const DialogResponses& predictions, const DialogResponses& gold);

struct F1 {
  long tp = 0, fp = 0, fn = 0;
  double precision() const;
  double recall() const;
  double f1() const;
};

// One response with the entity annotations needed by entity F1.
struct EntityTurn {
  std::string prediction;
  std::set<std::string> gold_entities;  // entity values mentioned in the gold response
  std::set<std::string> context;        // entity values mentioned earlier in the dialog
  std::set<std::string> kb_values;      // entity values present in the supplied KB
};

struct EntityScores {
  F1 entity;
  F1 kb_entity;
};

// Micro-averaged over responses. Predicted entities are tokens that are known entity
// values. The KB variant keeps, on both sides, only entities in the KB and absent from
// the prior context.
EntityScores entity_f1(const std::vector<EntityTurn>& turns, const std::set<std::string>& entity_values);

// Corpus BLEU-4 in [0, 100]: uniform weights, brevity penalty, add-one smoothing of
// the 2- to 4-gram counts (unigram precision is not smoothed).
double bleu(const std::vector<std::string>& predictions, const std::vector<std::string>& gold);

struct SetF1 {
  double macro_f1 = 0.0;
  double macro_precision = 0.0;
  double macro_recall = 0.0;
  std::size_t predicted = 0;  // summed set sizes
  std::size_t gold = 0;
  std::size_t overlap = 0;
};

// Per-dialog precision and recall of predicted against gold row heads, macro-averaged.
// A dialog with an empty denominator scores 1 when both sets are empty, else 0.
SetF1 set_macro_f1(const std::vector<std::set<std::string>>& predicted,
                   const std::vector<std::set<std::string>>& gold);

SetF1 ri_f1(const std::vector<cascade::ArbitrationTrace>& traces, const std::vector<RecordTruth>& truth);
SetF1 rd_f1(const std::vector<cascade::ArbitrationTrace>& traces, const std::vector<RecordTruth>& truth);

// A completion of the ordering key is correct when its value keeps the suggestion order
// non-increasing against its nearest suggested neighbours in the final KB.
struct RCAccuracy {
  std::size_t correct = 0;
  std::size_t total = 0;
  double accuracy() const { return total ? static_cast<double>(correct) / static_cast<double>(total) : 1.0; }
};
RCAccuracy rc_accuracy(const std::vector<cascade::ArbitrationTrace>& traces, const std::vector<CorpusRecord>& records,
                       const Ontology& ontology, const DomainProfile& profile);

struct MetricReport {
  std::string split;
  std::string config_hash;
  std::string bleu_smoothing = "add-one on 2-4-gram counts";
  std::string entity_f1_averaging = "micro";
  std::optional<double> response_accuracy, dialog_accuracy, bleu, entity_f1, kb_entity_f1;
  std::optional<SetF1> ri, rd;
  std::optional<double> rc_accuracy;
  std::optional<double> inconsistency_rate_pre, inconsistency_rate_post;
  std::optional<std::size_t> insertion_count, deletion_count, completion_count;

  nlohmann::json to_json() const;
  static MetricReport from_json(const nlohmann::json& j);
};

// Collects the response metrics for a set of records and per-dialog predictions.
void fill_response_metrics(MetricReport& report, const std::vector<CorpusRecord>& records,
                           const DialogResponses& predictions, const Ontology& ontology);

}  // namespace dkaf::eval
