#include "dkaf/core/json_io.hpp"

#include <fstream>
#include <sstream>

#include "dkaf/core/error.hpp"

namespace dkaf {

json to_json(const Entity& e) { return json{{"value", e.value}, {"etype", e.etype}}; }

Entity entity_from_json(const json& j) {
  return Entity{j.at("value").get<std::string>(), j.at("etype").get<std::string>()};
}

json to_json(const Ontology& o) {
  json rels = json::array();
  for (const auto& r : o.relations())
    rels.push_back({{"name", r.name},
                    {"head_type", r.head_type},
                    {"tail_type", r.tail_type},
                    {"latent", r.latent}});
  json ents = json::array();
  for (const auto& e : o.entities()) ents.push_back(to_json(e));
  return json{{"entity_types", o.entity_types()}, {"relation_types", rels}, {"entities", ents}};
}

Ontology ontology_from_json(const json& j) {
  try {
    std::vector<RelationType> rels;
    for (const auto& r : j.at("relation_types"))
      rels.push_back(RelationType{r.at("name"), r.at("head_type"), r.at("tail_type"),
                                  r.value("latent", false)});
    std::vector<Entity> ents;
    for (const auto& e : j.at("entities")) ents.push_back(entity_from_json(e));
    return Ontology(j.at("entity_types").get<std::vector<std::string>>(), std::move(rels),
                    std::move(ents));
  } catch (const json::exception& e) {
    throw InvalidInput(std::string("ontology json: ") + e.what());
  }
}

json to_json(const Row& r) {
  json fields = json::object();
  for (const auto& [rel, tail] : r.fields) fields[rel] = to_json(tail);
  return json{{"head", to_json(r.head)}, {"fields", fields}};
}

Row row_from_json(const json& j) {
  Row r;
  r.head = entity_from_json(j.at("head"));
  for (const auto& [rel, tail] : j.at("fields").items()) r.fields[rel] = entity_from_json(tail);
  return r;
}

json to_json(const KnowledgeBase& kb) {
  json rows = json::array();
  for (const auto& [_, row] : kb.rows()) rows.push_back(to_json(row));
  return json{{"id", kb.id()}, {"rows", rows}};
}

KnowledgeBase kb_from_json(const json& j) {
  try {
    KnowledgeBase kb(j.value("id", std::string{}));
    for (const auto& r : j.at("rows")) kb.insert(row_from_json(r));
    return kb;
  } catch (const json::exception& e) {
    throw InvalidInput(std::string("kb json: ") + e.what());
  }
}

json to_json(const Triple& t) {
  return json{{"head", to_json(t.head)}, {"relation", t.relation}, {"tail", to_json(t.tail)}};
}

Triple triple_from_json(const json& j) {
  return Triple{entity_from_json(j.at("head")), j.at("relation").get<std::string>(),
                entity_from_json(j.at("tail"))};
}

json dialog_to_json(const Dialog& d, const std::string& gold_kb_id) {
  json turns = json::array();
  for (const auto& u : d.utterances) {
    json mentions = json::array();
    for (const auto& m : u.mentions)
      mentions.push_back({{"start", m.start},
                          {"end", m.end},
                          {"value", m.entity.value},
                          {"etype", m.entity.etype}});
    turns.push_back({{"speaker", to_string(u.speaker)}, {"text", u.text()}, {"mentions", mentions}});
  }
  json j{{"id", d.id}, {"timestamp", d.timestamp}, {"turns", turns}};
  if (!gold_kb_id.empty()) j["gold_kb_id"] = gold_kb_id;
  return j;
}

Dialog dialog_from_json(const json& j) {
  try {
    Dialog d;
    d.id = j.at("id").get<std::string>();
    d.timestamp = j.value("timestamp", std::int64_t{0});
    for (const auto& t : j.at("turns")) {
      Utterance u;
      u.speaker = speaker_from_string(t.at("speaker").get<std::string>());
      u.tokens = tokenize(t.at("text").get<std::string>());
      for (const auto& m : t.value("mentions", json::array()))
        u.mentions.push_back(Mention{m.at("start").get<int>(), m.at("end").get<int>(),
                                     Entity{m.at("value"), m.at("etype")}});
      d.utterances.push_back(std::move(u));
    }
    d.validate();
    return d;
  } catch (const json::exception& e) {
    throw InvalidInput(std::string("dialog json: ") + e.what());
  }
}

std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw InvalidInput("cannot open " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::filesystem::path& p, const std::string& content) {
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + p.string());
  out << content;
}

json read_json(const std::filesystem::path& p) {
  try {
    return json::parse(read_file(p));
  } catch (const json::parse_error& e) {
    throw InvalidInput(p.string() + ": " + e.what());
  }
}

void write_json(const std::filesystem::path& p, const json& j) { write_file(p, j.dump(2) + "\n"); }

std::vector<json> read_jsonl(const std::filesystem::path& p) {
  std::istringstream in(read_file(p));
  std::vector<json> out;
  std::string line;
  int n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(json::parse(line));
    } catch (const json::parse_error& e) {
      throw InvalidInput(p.string() + ":" + std::to_string(n) + ": " + e.what());
    }
  }
  return out;
}

void write_jsonl(const std::filesystem::path& p, const std::vector<json>& lines) {
  std::string s;
  for (const auto& j : lines) s += j.dump() + "\n";
  write_file(p, s);
}

Ontology load_ontology(const std::filesystem::path& p) { return ontology_from_json(read_json(p)); }

KnowledgeBase load_kb(const std::filesystem::path& p) { return kb_from_json(read_json(p)); }

}  // namespace dkaf
