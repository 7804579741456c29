#include "dkaf/eval/metrics.hpp"

#include <algorithm>
#include <cmath>

#include "dkaf/core/error.hpp"
#include "dkaf/core/judge.hpp"

namespace dkaf::eval {

namespace {

void check_aligned(const DialogResponses& p, const DialogResponses& g) {
  if (p.size() != g.size()) throw InvalidInput("metrics: prediction and gold dialog counts differ");
  for (std::size_t i = 0; i < p.size(); ++i)
    if (p[i].size() != g[i].size())
      throw InvalidInput("metrics: dialog " + std::to_string(i) + " has misaligned responses");
}

double ratio(double a, double b) { return b > 0 ? a / b : 0.0; }

}  // namespace

double response_accuracy(const DialogResponses& predictions, const DialogResponses& gold) {
  check_aligned(predictions, gold);
  std::size_t ok = 0, n = 0;
  for (std::size_t i = 0; i < gold.size(); ++i)
    for (std::size_t k = 0; k < gold[i].size(); ++k, ++n) ok += predictions[i][k] == gold[i][k];
  if (n == 0) throw InvalidInput("metrics: no responses");
  return static_cast<double>(ok) / static_cast<double>(n);
}

double dialog_accuracy(const DialogResponses& predictions, const DialogResponses& gold) {
  check_aligned(predictions, gold);
  if (gold.empty()) throw InvalidInput("metrics: no dialogs");
  std::size_t ok = 0;
  for (std::size_t i = 0; i < gold.size(); ++i) ok += predictions[i] == gold[i];
  return static_cast<double>(ok) / static_cast<double>(gold.size());
}

double F1::precision() const { return ratio(static_cast<double>(tp), static_cast<double>(tp + fp)); }
double F1::recall() const { return ratio(static_cast<double>(tp), static_cast<double>(tp + fn)); }
double F1::f1() const {
  const double p = precision(), r = recall();
  return p + r > 0 ? 2 * p * r / (p + r) : 0.0;
}

EntityScores entity_f1(const std::vector<EntityTurn>& turns, const std::set<std::string>& entity_values) {
  EntityScores s;
  auto count = [](F1& f, const std::set<std::string>& pred, const std::set<std::string>& gold) {
    for (const auto& e : pred) (gold.count(e) ? f.tp : f.fp) += 1;
    for (const auto& e : gold) f.fn += pred.count(e) ? 0 : 1;
  };
  for (const auto& t : turns) {
    std::set<std::string> pred;
    for (const auto& tok : tokenize(t.prediction))
      if (entity_values.count(tok)) pred.insert(tok);
    count(s.entity, pred, t.gold_entities);
    auto kb_only = [&](const std::set<std::string>& xs) {
      std::set<std::string> out;
      for (const auto& e : xs)
        if (t.kb_values.count(e) && !t.context.count(e)) out.insert(e);
      return out;
    };
    count(s.kb_entity, kb_only(pred), kb_only(t.gold_entities));
  }
  return s;
}

double bleu(const std::vector<std::string>& predictions, const std::vector<std::string>& gold) {
  if (predictions.size() != gold.size()) throw InvalidInput("bleu: misaligned inputs");
  if (gold.empty()) throw InvalidInput("bleu: empty corpus");
  double match[4] = {0, 0, 0, 0}, total[4] = {0, 0, 0, 0};
  double hyp_len = 0, ref_len = 0;
  for (std::size_t i = 0; i < gold.size(); ++i) {
    auto h = tokenize(predictions[i]), r = tokenize(gold[i]);
    hyp_len += static_cast<double>(h.size());
    ref_len += static_cast<double>(r.size());
    for (int n = 1; n <= 4; ++n) {
      std::map<std::vector<std::string>, int> hc, rc;
      for (std::size_t k = 0; k + n <= h.size(); ++k) ++hc[{h.begin() + k, h.begin() + k + n}];
      for (std::size_t k = 0; k + n <= r.size(); ++k) ++rc[{r.begin() + k, r.begin() + k + n}];
      for (const auto& [g, c] : hc) {
        auto it = rc.find(g);
        match[n - 1] += std::min(c, it == rc.end() ? 0 : it->second);
        total[n - 1] += c;
      }
    }
  }
  if (hyp_len == 0 || match[0] == 0) return 0.0;
  double log_p = std::log(match[0] / total[0]);
  for (int n = 1; n < 4; ++n) log_p += std::log((match[n] + 1.0) / (total[n] + 1.0));
  const double bp = hyp_len > ref_len ? 1.0 : std::exp(1.0 - ref_len / hyp_len);
  return 100.0 * bp * std::exp(log_p / 4.0);
}

SetF1 set_macro_f1(const std::vector<std::set<std::string>>& predicted,
                   const std::vector<std::set<std::string>>& gold) {
  if (predicted.size() != gold.size()) throw InvalidInput("set_macro_f1: misaligned inputs");
  SetF1 out;
  if (gold.empty()) return out;
  double sf = 0, sp = 0, sr = 0;
  for (std::size_t i = 0; i < gold.size(); ++i) {
    std::size_t inter = 0;
    for (const auto& x : predicted[i]) inter += gold[i].count(x);
    out.predicted += predicted[i].size();
    out.gold += gold[i].size();
    out.overlap += inter;
    if (predicted[i].empty() || gold[i].empty()) {
      const double v = predicted[i].empty() && gold[i].empty() ? 1.0 : 0.0;
      sf += v;
      sp += predicted[i].empty() ? v : 0.0;
      sr += gold[i].empty() ? v : 0.0;
      continue;
    }
    const double p = static_cast<double>(inter) / static_cast<double>(predicted[i].size());
    const double r = static_cast<double>(inter) / static_cast<double>(gold[i].size());
    sp += p;
    sr += r;
    sf += p + r > 0 ? 2 * p * r / (p + r) : 0.0;
  }
  const double n = static_cast<double>(gold.size());
  out.macro_f1 = sf / n;
  out.macro_precision = sp / n;
  out.macro_recall = sr / n;
  return out;
}

namespace {

void check_truth(const std::vector<cascade::ArbitrationTrace>& traces, const std::vector<RecordTruth>& truth) {
  if (traces.size() != truth.size()) throw InvalidInput("arbitration metrics: missing ground truth");
}

}  // namespace

SetF1 ri_f1(const std::vector<cascade::ArbitrationTrace>& traces, const std::vector<RecordTruth>& truth) {
  check_truth(traces, truth);
  std::vector<std::set<std::string>> p, g;
  for (std::size_t i = 0; i < traces.size(); ++i) {
    std::set<std::string> heads;
    for (const auto& t : traces[i].inserted) heads.insert(t.head.value);
    p.push_back(std::move(heads));
    g.emplace_back(truth[i].insert_rows.begin(), truth[i].insert_rows.end());
  }
  return set_macro_f1(p, g);
}

SetF1 rd_f1(const std::vector<cascade::ArbitrationTrace>& traces, const std::vector<RecordTruth>& truth) {
  check_truth(traces, truth);
  std::vector<std::set<std::string>> p, g;
  for (std::size_t i = 0; i < traces.size(); ++i) {
    std::set<std::string> heads;
    for (const auto& r : traces[i].deleted) heads.insert(r.head.value);
    p.push_back(std::move(heads));
    g.emplace_back(truth[i].delete_rows.begin(), truth[i].delete_rows.end());
  }
  return set_macro_f1(p, g);
}

RCAccuracy rc_accuracy(const std::vector<cascade::ArbitrationTrace>& traces, const std::vector<CorpusRecord>& records,
                       const Ontology& ontology, const DomainProfile& profile) {
  if (traces.size() != records.size()) throw InvalidInput("rc_accuracy: misaligned inputs");
  RCAccuracy acc;
  for (std::size_t i = 0; i < traces.size(); ++i) {
    const auto& kb = traces[i].result_kb;
    const auto sugg = extract_query(records[i].dialog, ontology, profile).suggestions;
    auto key_of = [&](const std::string& head) -> std::optional<int> {
      const Row* r = kb.find(head);
      if (!r) return std::nullopt;
      const Entity* k = r->field(profile.ordering_key);
      return k ? ordering_value(k->value) : std::nullopt;
    };
    for (const auto& c : traces[i].completed) {
      if (c.relation != profile.ordering_key) continue;
      ++acc.total;
      const auto v = ordering_value(c.tail.value);
      if (!v) continue;
      auto pos = std::find_if(sugg.begin(), sugg.end(), [&](const Entity& e) { return e.value == c.head.value; });
      if (pos == sugg.end()) {
        ++acc.correct;
        continue;
      }
      bool ok = true;
      for (auto it = pos; it != sugg.begin();) {
        --it;
        if (auto k = key_of(it->value)) {
          ok &= *k >= *v;
          break;
        }
      }
      for (auto it = pos + 1; it != sugg.end(); ++it)
        if (auto k = key_of(it->value)) {
          ok &= *v >= *k;
          break;
        }
      acc.correct += ok;
    }
  }
  return acc;
}

namespace {

nlohmann::json set_json(const SetF1& s) {
  return {{"macro_f1", s.macro_f1},   {"macro_precision", s.macro_precision}, {"macro_recall", s.macro_recall},
          {"predicted", s.predicted}, {"gold", s.gold},                       {"overlap", s.overlap}};
}

SetF1 set_from_json(const nlohmann::json& j) {
  SetF1 s;
  s.macro_f1 = j.at("macro_f1");
  s.macro_precision = j.at("macro_precision");
  s.macro_recall = j.at("macro_recall");
  s.predicted = j.at("predicted");
  s.gold = j.at("gold");
  s.overlap = j.at("overlap");
  return s;
}

template <class T>
void put(nlohmann::json& j, const char* k, const std::optional<T>& v) {
  if (v) j[k] = *v;
}

template <class T>
void get(const nlohmann::json& j, const char* k, std::optional<T>& v) {
  if (j.contains(k)) v = j.at(k).get<T>();
}

}  // namespace

nlohmann::json MetricReport::to_json() const {
  nlohmann::json j{{"split", split},
                   {"config_hash", config_hash},
                   {"bleu_smoothing", bleu_smoothing},
                   {"entity_f1_averaging", entity_f1_averaging}};
  put(j, "response_accuracy", response_accuracy);
  put(j, "dialog_accuracy", dialog_accuracy);
  put(j, "bleu", bleu);
  put(j, "entity_f1", entity_f1);
  put(j, "kb_entity_f1", kb_entity_f1);
  if (ri) j["ri"] = set_json(*ri);
  if (rd) j["rd"] = set_json(*rd);
  put(j, "rc_accuracy", rc_accuracy);
  put(j, "inconsistency_rate_pre", inconsistency_rate_pre);
  put(j, "inconsistency_rate_post", inconsistency_rate_post);
  put(j, "insertion_count", insertion_count);
  put(j, "deletion_count", deletion_count);
  put(j, "completion_count", completion_count);
  return j;
}

MetricReport MetricReport::from_json(const nlohmann::json& j) {
  MetricReport r;
  r.split = j.value("split", "");
  r.config_hash = j.value("config_hash", "");
  r.bleu_smoothing = j.value("bleu_smoothing", r.bleu_smoothing);
  r.entity_f1_averaging = j.value("entity_f1_averaging", r.entity_f1_averaging);
  get(j, "response_accuracy", r.response_accuracy);
  get(j, "dialog_accuracy", r.dialog_accuracy);
  get(j, "bleu", r.bleu);
  get(j, "entity_f1", r.entity_f1);
  get(j, "kb_entity_f1", r.kb_entity_f1);
  if (j.contains("ri")) r.ri = set_from_json(j.at("ri"));
  if (j.contains("rd")) r.rd = set_from_json(j.at("rd"));
  get(j, "rc_accuracy", r.rc_accuracy);
  get(j, "inconsistency_rate_pre", r.inconsistency_rate_pre);
  get(j, "inconsistency_rate_post", r.inconsistency_rate_post);
  get(j, "insertion_count", r.insertion_count);
  get(j, "deletion_count", r.deletion_count);
  get(j, "completion_count", r.completion_count);
  return r;
}

void fill_response_metrics(MetricReport& report, const std::vector<CorpusRecord>& records,
                           const DialogResponses& predictions, const Ontology& ontology) {
  if (records.size() != predictions.size()) throw InvalidInput("metrics: prediction count differs from records");
  DialogResponses gold;
  std::vector<std::string> flat_pred, flat_gold;
  std::vector<EntityTurn> turns;
  std::set<std::string> entity_values;
  for (const auto& e : ontology.entities()) entity_values.insert(e.value);
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& d = records[i].dialog;
    std::set<std::string> kb_values;
    if (records[i].train_kb)
      for (const auto& e : records[i].train_kb->entities()) kb_values.insert(e.value);
    std::set<std::string> context;
    std::vector<std::string> g;
    std::size_t k = 0;
    for (std::size_t u = 0; u < d.utterances.size(); ++u) {
      const auto& utt = d.utterances[u];
      if (u > 0 && utt.speaker == Speaker::agent) {
        if (k >= predictions[i].size()) throw InvalidInput("metrics: too few predictions for " + d.id);
        g.push_back(utt.text());
        EntityTurn t;
        t.prediction = predictions[i][k];
        for (const auto& m : utt.mentions) t.gold_entities.insert(m.entity.value);
        t.context = context;
        t.kb_values = kb_values;
        turns.push_back(std::move(t));
        flat_pred.push_back(predictions[i][k]);
        flat_gold.push_back(g.back());
        ++k;
      }
      for (const auto& m : utt.mentions) context.insert(m.entity.value);
    }
    gold.push_back(std::move(g));
  }
  report.response_accuracy = response_accuracy(predictions, gold);
  report.dialog_accuracy = dialog_accuracy(predictions, gold);
  report.bleu = bleu(flat_pred, flat_gold);
  auto ef = entity_f1(turns, entity_values);
  report.entity_f1 = ef.entity.f1();
  report.kb_entity_f1 = ef.kb_entity.f1();
}

}  // namespace dkaf::eval
