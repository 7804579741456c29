#include "dkaf/core/kb.hpp"

#include "dkaf/core/error.hpp"

namespace dkaf {

const Entity* Row::field(const std::string& relation) const {
  auto it = fields.find(relation);
  return it == fields.end() ? nullptr : &it->second;
}

const Row* KnowledgeBase::find(const std::string& head_value) const {
  auto it = rows_.find(head_value);
  return it == rows_.end() ? nullptr : &it->second;
}

void KnowledgeBase::insert(Row row) {
  auto key = row.head.value;
  if (!rows_.emplace(key, std::move(row)).second)
    throw InvalidInput("kb " + id_ + ": duplicate row head " + key);
}

void KnowledgeBase::upsert(Row row) {
  auto key = row.head.value;
  rows_[key] = std::move(row);
}

bool KnowledgeBase::erase(const std::string& head_value) { return rows_.erase(head_value) != 0; }

void KnowledgeBase::set_field(const std::string& head_value, const std::string& relation,
                              Entity tail) {
  auto it = rows_.find(head_value);
  if (it == rows_.end()) throw InvalidInput("kb " + id_ + ": no row " + head_value);
  it->second.fields[relation] = std::move(tail);
}

std::vector<Entity> KnowledgeBase::entities() const {
  std::vector<Entity> out;
  std::set<std::string> seen;
  auto add = [&](const Entity& e) {
    if (seen.insert(e.value).second) out.push_back(e);
  };
  for (const auto& [_, row] : rows_) {
    add(row.head);
    for (const auto& [__, tail] : row.fields) add(tail);
  }
  return out;
}

std::size_t KnowledgeBase::triple_count() const {
  std::size_t n = 0;
  for (const auto& [_, row] : rows_) n += row.fields.size();
  return n;
}

void KnowledgeBase::validate(const Ontology& ontology) const {
  for (const auto& [key, row] : rows_) {
    if (row.head.value.empty() || key != row.head.value)
      throw InvalidInput("kb " + id_ + ": malformed row head " + key);
    if (!ontology.has_type(row.head.etype))
      throw InvalidInput("kb " + id_ + ": row " + key + " has unknown type " + row.head.etype);
    for (const auto& [rel, tail] : row.fields) {
      const auto& r = ontology.require_relation(rel);
      if (r.head_type != row.head.etype || r.tail_type != tail.etype || tail.value.empty())
        throw InvalidInput("kb " + id_ + ": ill-typed triple (" + key + ", " + rel + ", " +
                           tail.value + ")");
    }
  }
}

std::set<Triple> kb_to_triples(const KnowledgeBase& kb) {
  std::set<Triple> out;
  for (const auto& [_, row] : kb.rows())
    for (const auto& [rel, tail] : row.fields) out.insert(Triple{row.head, rel, tail});
  return out;
}

KnowledgeBase triples_to_rows(const std::set<Triple>& triples, std::string id) {
  std::map<std::string, Row> rows;
  for (const auto& t : triples) {
    auto& row = rows[t.head.value];
    row.head = t.head;
    if (!row.fields.emplace(t.relation, t.tail).second)
      throw InvalidInput("triples: two values for (" + t.head.value + ", " + t.relation + ")");
  }
  KnowledgeBase kb(std::move(id));
  for (auto& [_, row] : rows) kb.insert(std::move(row));
  return kb;
}

bool same_row(const Row& a, const Row& b) { return a == b; }

}  // namespace dkaf
