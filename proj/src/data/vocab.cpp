#include "duel/data/vocab.hpp"

#include <set>

#include "duel/error.hpp"
#include "duel/tokens.hpp"
#include "duel/util/kv.hpp"

namespace duel::data {

Vocabulary::Vocabulary() {
  for (const char* t : {"<pad>", "<bos>", "<eos>", "<unk>"}) add(t);
}

int Vocabulary::add(std::string_view token) {
  if (auto it = ids_.find(token); it != ids_.end()) return it->second;
  const int id = size();
  tokens_.emplace_back(token);
  ids_.emplace(std::string(token), id);
  return id;
}

bool Vocabulary::contains(std::string_view token) const { return ids_.find(token) != ids_.end(); }

int Vocabulary::id(std::string_view token) const {
  auto it = ids_.find(token);
  return it == ids_.end() ? kUnkId : it->second;
}

const std::string& Vocabulary::token(int id) const {
  if (id < 0 || id >= size()) throw InputError("token id " + std::to_string(id) + " outside vocabulary");
  return tokens_[static_cast<std::size_t>(id)];
}

std::vector<int> Vocabulary::encode(std::string_view text) const {
  std::vector<int> out;
  for (const auto& t : tokens(text)) out.push_back(id(t));
  return out;
}

std::string Vocabulary::decode(const std::vector<int>& ids) const {
  std::vector<std::string> parts;
  for (int id : ids) {
    if (id == kPadId || id == kBosId || id == kEosId) continue;
    parts.push_back(token(id));
  }
  return util::join(parts, " ");
}

std::string Vocabulary::to_text() const {
  std::string out;
  for (const auto& t : tokens_) {
    out += t;
    out += '\n';
  }
  return out;
}

Vocabulary Vocabulary::from_text(std::string_view text) {
  Vocabulary v;
  const auto lines = util::split(text, '\n');
  for (std::size_t i = 0; i < lines.size(); ++i) {
    const auto line = util::trim(lines[i]);
    if (line.empty()) continue;
    if (static_cast<int>(i) < kNumReserved) {
      if (line != v.tokens_[i]) throw InputError("vocabulary file: reserved token mismatch at line " + std::to_string(i + 1));
      continue;
    }
    if (v.contains(line)) throw InputError("vocabulary file: duplicate token '" + line + "'");
    v.add(line);
  }
  return v;
}

Vocabulary build_vocab(const std::vector<const Dataset*>& datasets) {
  std::set<std::string> all;
  for (const auto* ds : datasets) {
    for (const auto& ex : ds->examples) {
      for (auto& t : tokens(ex.input)) all.insert(std::move(t));
      for (auto& t : tokens(ex.output)) all.insert(std::move(t));
    }
  }
  Vocabulary v;
  for (const auto& t : all) v.add(t);
  return v;
}

}  // namespace duel::data
