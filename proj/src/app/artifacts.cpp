#include "dkaf/app/artifacts.hpp"

#include <iomanip>
#include <sstream>

#include "dkaf/core/error.hpp"
#include "dkaf/core/json_io.hpp"
#include "dkaf/core/judge.hpp"
#include "dkaf/core/rng.hpp"
#include "dkaf/nn/blocks.hpp"

namespace dkaf::app {

namespace {

std::vector<nlohmann::json> record_lines(const std::vector<CorpusRecord>& records) {
  std::vector<nlohmann::json> out;
  for (const auto& r : records) out.push_back(dialog_to_json(r.dialog, r.gold_kb_id));
  return out;
}

}  // namespace

void save_corpus(const SimOutput& sim, const Ontology& ontology, const DomainProfile& profile, const fs::path& dir) {
  write_jsonl(dir / "train.jsonl", record_lines(sim.train.records));
  write_jsonl(dir / "test.jsonl", record_lines(sim.test.records));
  write_json(dir / "kb_train.json", to_json(*sim.kb_train));
  for (const auto& [tick, snap] : sim.train.snapshots) write_json(dir / "kb_gold" / (snap->id() + ".json"), to_json(*snap));
  nlohmann::json per = nlohmann::json::array();
  std::size_t r_rows = 0, d_rows = 0;
  for (const auto& rec : sim.train.records) {
    auto t = record_truth(rec, ontology, profile);
    r_rows += t.insert_rows.size();
    d_rows += t.delete_rows.size();
    per.push_back({{"id", rec.dialog.id}, {"R", t.insert_rows}, {"D_g", t.delete_rows}, {"consistent", t.consistent}});
  }
  nlohmann::json stats{{"train_dialogs", sim.train.records.size()},
                       {"test_dialogs", sim.test.records.size()},
                       {"dropped", sim.train.dropped.size() + sim.test.dropped.size()},
                       {"kb_train_rows", sim.kb_train->size()},
                       {"inconsistency_rate_train", inconsistency_rate(sim.train.records, ontology, profile)},
                       {"inconsistency_rate_test", inconsistency_rate(sim.test.records, ontology, profile)},
                       {"R_rows", r_rows},
                       {"D_g_rows", d_rows},
                       {"per_dialog", per}};
  write_json(dir / "stats.json", stats);
}

std::vector<CorpusRecord> load_records(const fs::path& jsonl, std::shared_ptr<const KnowledgeBase> kb,
                                       const fs::path& gold_dir) {
  std::map<std::string, std::shared_ptr<const KnowledgeBase>> gold;
  std::vector<CorpusRecord> out;
  for (const auto& line : read_jsonl(jsonl)) {
    CorpusRecord rec;
    rec.dialog = dialog_from_json(line);
    rec.gold_kb_id = line.value("gold_kb_id", "");
    rec.train_kb = kb;
    if (!gold_dir.empty() && !rec.gold_kb_id.empty()) {
      if (kb && rec.gold_kb_id == kb->id()) {
        rec.gold_kb = kb;
      } else {
        auto& g = gold[rec.gold_kb_id];
        const fs::path p = gold_dir / (rec.gold_kb_id + ".json");
        if (!g && fs::exists(p)) g = std::make_shared<const KnowledgeBase>(load_kb(p));
        rec.gold_kb = g;
      }
    }
    out.push_back(std::move(rec));
  }
  return out;
}

Corpus load_corpus(const fs::path& dir) {
  Corpus c;
  c.kb_train = std::make_shared<const KnowledgeBase>(load_kb(dir / "kb_train.json"));
  c.train = load_records(dir / "train.jsonl", c.kb_train, dir / "kb_gold");
  c.test = load_records(dir / "test.jsonl", c.kb_train, dir / "kb_gold");
  return c;
}

void save_traces(const fs::path& path, const std::vector<cascade::ArbitrationTrace>& traces) {
  std::vector<nlohmann::json> lines;
  for (const auto& t : traces) lines.push_back(t.to_json());
  write_jsonl(path, lines);
}

std::vector<cascade::ArbitrationTrace> load_traces(const fs::path& path) {
  std::vector<cascade::ArbitrationTrace> out;
  for (const auto& line : read_jsonl(path)) out.push_back(cascade::ArbitrationTrace::from_json(line));
  return out;
}

void save_kb_hat(const fs::path& dir, const std::vector<cascade::ArbitrationTrace>& traces) {
  for (const auto& t : traces) write_json(dir / (t.dialog_id + ".json"), to_json(t.result_kb));
}

void save_predictions(const fs::path& path, const std::vector<std::string>& ids, const eval::DialogResponses& r) {
  if (ids.size() != r.size()) throw InvalidInput("predictions: id count differs from dialogs");
  std::vector<nlohmann::json> lines;
  for (std::size_t i = 0; i < ids.size(); ++i) lines.push_back({{"id", ids[i]}, {"responses", r[i]}});
  write_jsonl(path, lines);
}

eval::DialogResponses load_predictions(const fs::path& path, const std::vector<std::string>& ids) {
  std::map<std::string, std::vector<std::string>> by_id;
  for (const auto& line : read_jsonl(path))
    by_id[line.at("id").get<std::string>()] = line.at("responses").get<std::vector<std::string>>();
  eval::DialogResponses out;
  for (const auto& id : ids) {
    auto it = by_id.find(id);
    if (it == by_id.end()) throw InvalidInput("predictions: no responses for dialog " + id);
    out.push_back(it->second);
  }
  return out;
}

void write_csv(const fs::path& path, const std::vector<std::string>& header,
               const std::vector<std::vector<double>>& rows) {
  std::ostringstream s;
  for (std::size_t i = 0; i < header.size(); ++i) s << (i ? "," : "") << header[i];
  s << "\n" << std::setprecision(10);
  for (const auto& r : rows) {
    if (r.size() != header.size()) throw InvalidInput("csv: row width differs from header");
    for (std::size_t i = 0; i < r.size(); ++i) s << (i ? "," : "") << r[i];
    s << "\n";
  }
  write_file(path, s.str());
}

std::vector<std::vector<double>> read_csv(const fs::path& path, std::vector<std::string>* header) {
  std::istringstream in(read_file(path));
  std::string line;
  std::vector<std::vector<double>> rows;
  bool first = true;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::istringstream ls(line);
    for (std::string c; std::getline(ls, c, ',');) cells.push_back(c);
    if (first) {
      if (header) *header = cells;
      first = false;
      continue;
    }
    std::vector<double> r;
    for (const auto& c : cells) r.push_back(std::stod(c));
    rows.push_back(std::move(r));
  }
  return rows;
}

std::string file_digest(const fs::path& path) {
  std::string data = read_file(path);
  const fs::path side = path.string() + ".json";
  if (fs::exists(side)) data += read_file(side);
  return sha256_hex(data);
}

void check_config_hash(const fs::path& checkpoint, const std::string& expected) {
  const auto side = nn::read_checkpoint_sidecar(checkpoint.string());
  const std::string got = side.value("config_hash", "");
  if (got != expected)
    throw InvalidInput(checkpoint.string() + " was written under config " + (got.empty() ? "<none>" : got) +
                       ", expected " + expected);
}

}  // namespace dkaf::app
