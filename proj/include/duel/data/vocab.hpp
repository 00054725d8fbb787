#pragma once

#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "duel/data/dataset.hpp"

namespace duel::data {

/// Token <-> id map. Ids 0..3 are reserved for PAD, BOS, EOS, UNK.
class Vocabulary {
 public:
  Vocabulary();

  /// Adds a token if absent; returns its id.
  int add(std::string_view token);
  bool contains(std::string_view token) const;
  /// UNK for unknown tokens.
  int id(std::string_view token) const;
  const std::string& token(int id) const;
  int size() const { return static_cast<int>(tokens_.size()); }

  /// Whitespace tokens to ids; no BOS/EOS added.
  std::vector<int> encode(std::string_view text) const;
  /// Space-joined tokens; reserved ids are skipped.
  std::string decode(const std::vector<int>& ids) const;

  /// One token per line in id order.
  std::string to_text() const;
  static Vocabulary from_text(std::string_view text);

  friend bool operator==(const Vocabulary& a, const Vocabulary& b) { return a.tokens_ == b.tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::map<std::string, int, std::less<>> ids_;
};

/// Vocabulary over every input and output token of the datasets, with
/// non-reserved tokens in lexicographic order.
Vocabulary build_vocab(const std::vector<const Dataset*>& datasets);

}  // namespace duel::data
