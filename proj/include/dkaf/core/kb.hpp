#pragma once

#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "dkaf/core/ontology.hpp"

namespace dkaf {

struct Triple {
  Entity head;
  std::string relation;
  Entity tail;

  auto operator<=>(const Triple&) const = default;
  bool operator==(const Triple&) const = default;
};

struct Row {
  Entity head;
  std::map<std::string, Entity> fields;  // relation -> tail

  const Entity* field(const std::string& relation) const;
  bool operator==(const Row&) const = default;
};

// A KB snapshot: rows keyed by head value. Heads are unique.
class KnowledgeBase {
 public:
  KnowledgeBase() = default;
  explicit KnowledgeBase(std::string id) : id_(std::move(id)) {}

  const std::string& id() const { return id_; }
  void set_id(std::string id) { id_ = std::move(id); }

  const std::map<std::string, Row>& rows() const { return rows_; }
  std::size_t size() const { return rows_.size(); }
  bool empty() const { return rows_.empty(); }

  const Row* find(const std::string& head_value) const;
  bool contains(const std::string& head_value) const { return rows_.count(head_value) != 0; }

  // Throws InvalidInput if the head already exists.
  void insert(Row row);
  void upsert(Row row);
  bool erase(const std::string& head_value);
  void set_field(const std::string& head_value, const std::string& relation, Entity tail);

  // Distinct entities (heads and tails) in deterministic order.
  std::vector<Entity> entities() const;
  std::size_t triple_count() const;

  // Checks typing against the ontology; throws InvalidInput on violation.
  void validate(const Ontology& ontology) const;

  bool operator==(const KnowledgeBase& other) const { return rows_ == other.rows_; }

 private:
  std::string id_;
  std::map<std::string, Row> rows_;
};

std::set<Triple> kb_to_triples(const KnowledgeBase& kb);
// Inverse of kb_to_triples. Throws InvalidInput if two triples share (head, relation).
KnowledgeBase triples_to_rows(const std::set<Triple>& triples, std::string id = {});

// Row equality including every field.
bool same_row(const Row& a, const Row& b);

}  // namespace dkaf
