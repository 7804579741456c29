#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

namespace dkaf {

struct Entity {
  std::string value;
  std::string etype;

  auto operator<=>(const Entity&) const = default;
  bool operator==(const Entity&) const = default;
};

struct RelationType {
  std::string name;
  std::string head_type;
  std::string tail_type;
  bool latent = false;

  bool operator==(const RelationType&) const = default;
};

// Task ontology: entity types, typed relations and the global entity vocabulary.
// Target sets E_r are derived from each relation's tail type over the vocabulary,
// in vocabulary order.
class Ontology {
 public:
  Ontology() = default;
  Ontology(std::vector<std::string> entity_types, std::vector<RelationType> relations,
           std::vector<Entity> entities);

  const std::vector<std::string>& entity_types() const { return entity_types_; }
  const std::vector<RelationType>& relations() const { return relations_; }
  const std::vector<Entity>& entities() const { return entities_; }

  bool has_type(const std::string& etype) const;
  const RelationType* relation(const std::string& name) const;
  const RelationType& require_relation(const std::string& name) const;
  const std::vector<Entity>& target_set(const std::string& relation) const;

  // Relations whose head and tail types are (head_type, tail_type), in declaration order.
  std::vector<const RelationType*> relations_between(const std::string& head_type,
                                                     const std::string& tail_type) const;
  std::vector<const RelationType*> latent_relations() const;
  std::optional<Entity> find_entity(const std::string& value) const;

 private:
  std::vector<std::string> entity_types_;
  std::vector<RelationType> relations_;
  std::vector<Entity> entities_;
  std::map<std::string, std::vector<Entity>> target_sets_;
  std::map<std::string, Entity> by_value_;
};

// Which relation orders agent suggestions and how queries appear in dialogs.
struct DomainProfile {
  std::string head_type = "restaurant";
  std::string ordering_key = "rating";
  std::string query_marker = "api_call";
};

// Integer ordering value of a key entity: its last run of digits ("7stars" -> 7).
std::optional<int> ordering_value(const std::string& value);

}  // namespace dkaf
