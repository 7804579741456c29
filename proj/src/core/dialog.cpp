#include "dkaf/core/dialog.hpp"

#include <algorithm>
#include <sstream>

#include "dkaf/core/error.hpp"

namespace dkaf {

std::string Utterance::text() const { return join_tokens(tokens); }

const Mention* Utterance::mention_at(int token) const {
  for (const auto& m : mentions)
    if (token >= m.start && token < m.end) return &m;
  return nullptr;
}

void Dialog::validate() const {
  for (std::size_t i = 0; i < utterances.size(); ++i) {
    const auto& u = utterances[i];
    Speaker expected = (i % 2 == 0) ? Speaker::user : Speaker::agent;
    if (u.speaker != expected)
      throw InvalidInput("dialog " + id + ": utterance " + std::to_string(i) +
                         " breaks user/agent alternation");
    std::vector<bool> covered(u.tokens.size(), false);
    for (const auto& m : u.mentions) {
      if (m.start < 0 || m.end <= m.start || m.end > static_cast<int>(u.tokens.size()))
        throw InvalidInput("dialog " + id + ": mention span out of range");
      for (int k = m.start; k < m.end; ++k) {
        if (covered[k]) throw InvalidInput("dialog " + id + ": overlapping mentions");
        covered[k] = true;
      }
      if (join_tokens(u.tokens, m.start, m.end) != m.entity.value)
        throw InvalidInput("dialog " + id + ": mention surface differs from " + m.entity.value);
    }
  }
}

std::vector<Entity> Dialog::mentioned_entities() const {
  std::vector<Entity> out;
  std::set<std::string> seen;
  for (const auto& u : utterances)
    for (const auto& m : u.mentions)
      if (seen.insert(m.entity.value).second) out.push_back(m.entity);
  return out;
}

std::set<std::string> Dialog::mentioned_values() const {
  std::set<std::string> out;
  for (const auto& u : utterances)
    for (const auto& m : u.mentions) out.insert(m.entity.value);
  return out;
}

std::vector<Entity> Dialog::agent_entities() const {
  std::vector<Entity> out;
  std::set<std::string> seen;
  for (const auto& u : utterances) {
    if (u.speaker != Speaker::agent) continue;
    for (const auto& m : u.mentions)
      if (seen.insert(m.entity.value).second) out.push_back(m.entity);
  }
  return out;
}

std::vector<std::string> tokenize(const std::string& text) {
  std::istringstream in(text);
  std::vector<std::string> out;
  std::string tok;
  while (in >> tok) out.push_back(tok);
  return out;
}

std::string join_tokens(const std::vector<std::string>& tokens, std::size_t begin,
                        std::size_t end) {
  end = std::min(end, tokens.size());
  std::string out;
  for (std::size_t i = begin; i < end; ++i) {
    if (i > begin) out += ' ';
    out += tokens[i];
  }
  return out;
}

const char* to_string(Speaker s) { return s == Speaker::user ? "user" : "agent"; }

Speaker speaker_from_string(const std::string& s) {
  if (s == "user") return Speaker::user;
  if (s == "agent") return Speaker::agent;
  throw InvalidInput("unknown speaker " + s);
}

}  // namespace dkaf
