#pragma once

#include <cstdint>
#include <memory>
#include <set>
#include <string>
#include <vector>

#include "dkaf/core/kb.hpp"

namespace dkaf {

enum class Speaker { user, agent };

struct Mention {
  int start = 0;  // token index, inclusive
  int end = 0;    // token index, exclusive
  Entity entity;

  bool operator==(const Mention&) const = default;
};

struct Utterance {
  Speaker speaker = Speaker::user;
  std::vector<std::string> tokens;
  std::vector<Mention> mentions;

  std::string text() const;
  // Entity mentioned at token position, or nullptr.
  const Mention* mention_at(int token) const;
  bool operator==(const Utterance&) const = default;
};

struct Dialog {
  std::string id;
  std::int64_t timestamp = 0;
  std::vector<Utterance> utterances;

  // Throws InvalidInput when spans overlap, leave range, or speakers do not alternate.
  void validate() const;
  // Distinct mentioned entities in first-mention order.
  std::vector<Entity> mentioned_entities() const;
  std::set<std::string> mentioned_values() const;
  // E_a: entities occurring in agent utterances, first-mention order.
  std::vector<Entity> agent_entities() const;
  bool operator==(const Dialog&) const = default;
};

struct CorpusRecord {
  Dialog dialog;
  std::shared_ptr<const KnowledgeBase> train_kb;
  std::shared_ptr<const KnowledgeBase> gold_kb;  // simulator ground truth only
  std::string gold_kb_id;
};

std::vector<std::string> tokenize(const std::string& text);
std::string join_tokens(const std::vector<std::string>& tokens, std::size_t begin = 0,
                        std::size_t end = static_cast<std::size_t>(-1));
const char* to_string(Speaker s);
Speaker speaker_from_string(const std::string& s);

}  // namespace dkaf
