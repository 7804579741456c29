#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "dkaf/core/dialog.hpp"

namespace dkaf {

using json = nlohmann::json;

json to_json(const Entity& e);
Entity entity_from_json(const json& j);

json to_json(const Ontology& o);
Ontology ontology_from_json(const json& j);

json to_json(const Row& r);
Row row_from_json(const json& j);

json to_json(const KnowledgeBase& kb);
KnowledgeBase kb_from_json(const json& j);

json to_json(const Triple& t);
Triple triple_from_json(const json& j);

// Corpus record line: {id, timestamp, turns: [...], gold_kb_id?}.
json dialog_to_json(const Dialog& d, const std::string& gold_kb_id = {});
Dialog dialog_from_json(const json& j);

std::string read_file(const std::filesystem::path& p);
// Writes atomically enough for our purposes (truncate + write); creates parent dirs.
void write_file(const std::filesystem::path& p, const std::string& content);

json read_json(const std::filesystem::path& p);
void write_json(const std::filesystem::path& p, const json& j);

std::vector<json> read_jsonl(const std::filesystem::path& p);
void write_jsonl(const std::filesystem::path& p, const std::vector<json>& lines);

Ontology load_ontology(const std::filesystem::path& p);
KnowledgeBase load_kb(const std::filesystem::path& p);

}  // namespace dkaf
