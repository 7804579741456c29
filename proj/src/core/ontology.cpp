#include "dkaf/core/ontology.hpp"

#include <algorithm>
#include <cctype>
#include <set>

#include "dkaf/core/error.hpp"

namespace dkaf {

Ontology::Ontology(std::vector<std::string> entity_types, std::vector<RelationType> relations,
                   std::vector<Entity> entities)
    : entity_types_(std::move(entity_types)),
      relations_(std::move(relations)),
      entities_(std::move(entities)) {
  std::set<std::string> types;
  for (const auto& t : entity_types_) {
    if (t.empty()) throw InvalidInput("ontology: empty entity type name");
    if (!types.insert(t).second) throw InvalidInput("ontology: duplicate entity type " + t);
  }
  std::set<std::string> rel_names;
  for (const auto& r : relations_) {
    if (!rel_names.insert(r.name).second)
      throw InvalidInput("ontology: duplicate relation " + r.name);
    if (!types.count(r.head_type) || !types.count(r.tail_type))
      throw InvalidInput("ontology: relation " + r.name + " uses an undeclared type");
  }
  for (const auto& e : entities_) {
    if (e.value.empty()) throw InvalidInput("ontology: empty entity value");
    if (!types.count(e.etype))
      throw InvalidInput("ontology: entity " + e.value + " has undeclared type " + e.etype);
    // Values are the tokens entities surface as, so they must be unique across types.
    if (!by_value_.emplace(e.value, e).second)
      throw InvalidInput("ontology: duplicate entity value " + e.value);
  }
  for (const auto& r : relations_) {
    auto& set = target_sets_[r.name];
    for (const auto& e : entities_)
      if (e.etype == r.tail_type) set.push_back(e);
    if (r.latent && set.empty())
      throw InvalidInput("ontology: latent relation " + r.name + " has an empty target set");
  }
}

bool Ontology::has_type(const std::string& etype) const {
  return std::find(entity_types_.begin(), entity_types_.end(), etype) != entity_types_.end();
}

const RelationType* Ontology::relation(const std::string& name) const {
  for (const auto& r : relations_)
    if (r.name == name) return &r;
  return nullptr;
}

const RelationType& Ontology::require_relation(const std::string& name) const {
  const auto* r = relation(name);
  if (!r) throw InvalidInput("unknown relation " + name);
  return *r;
}

const std::vector<Entity>& Ontology::target_set(const std::string& relation) const {
  auto it = target_sets_.find(relation);
  if (it == target_sets_.end()) throw InvalidInput("unknown relation " + relation);
  return it->second;
}

std::vector<const RelationType*> Ontology::relations_between(const std::string& head_type,
                                                             const std::string& tail_type) const {
  std::vector<const RelationType*> out;
  for (const auto& r : relations_)
    if (r.head_type == head_type && r.tail_type == tail_type) out.push_back(&r);
  return out;
}

std::vector<const RelationType*> Ontology::latent_relations() const {
  std::vector<const RelationType*> out;
  for (const auto& r : relations_)
    if (r.latent) out.push_back(&r);
  return out;
}

std::optional<Entity> Ontology::find_entity(const std::string& value) const {
  auto it = by_value_.find(value);
  if (it == by_value_.end()) return std::nullopt;
  return it->second;
}

std::optional<int> ordering_value(const std::string& value) {
  // Last run of digits in the value.
  int end = static_cast<int>(value.size());
  while (end > 0 && !std::isdigit(static_cast<unsigned char>(value[end - 1]))) --end;
  if (end == 0) return std::nullopt;
  int begin = end;
  while (begin > 0 && std::isdigit(static_cast<unsigned char>(value[begin - 1]))) --begin;
  return std::stoi(value.substr(begin, end - begin));
}

}  // namespace dkaf
