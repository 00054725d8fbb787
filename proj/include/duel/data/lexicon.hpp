#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "duel/data/dataset.hpp"

namespace duel::data {

enum class WordClass { proper_noun, noun, verb };

std::string word_class_name(WordClass c);
WordClass parse_word_class(std::string_view name);

struct LexiconEntry {
  WordClass word_class = WordClass::noun;
  std::string source;
  std::vector<std::string> alternatives;
  /// Output-side forms. When absent the stem is the lowercased token;
  /// when present, alternative_stems is parallel to alternatives.
  std::optional<std::string> source_stem;
  std::vector<std::string> alternative_stems;

  std::string stem() const;
  std::string alternative_stem(std::size_t i) const;
};

/// Per-class replacement table. Line format:
///   class<TAB>source<TAB>alt1,alt2,...[<TAB>source_stem<TAB>stem1,stem2,...]
class LexiconTable {
 public:
  /// Throws InputError on duplicate sources, empty alternative lists, or an
  /// alternative that is itself a source token of the table.
  void add(LexiconEntry entry);
  const std::vector<LexiconEntry>& entries() const { return entries_; }
  const LexiconEntry* find(std::string_view source) const;
  bool empty() const { return entries_.empty(); }

  std::string to_text() const;
  static LexiconTable parse(std::string_view text);
  static LexiconTable load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

 private:
  std::vector<LexiconEntry> entries_;
};

/// Fabricated pseudo-word alternatives for the given sources, disjoint from
/// the sources and from each other.
LexiconTable synthetic_lexicon(const std::map<std::string, WordClass>& sources, int alternatives_per_source,
                               std::uint64_t seed);

struct LexicalVariant {
  Dataset dataset;
  /// Input-side token substitution.
  std::map<std::string, std::string> mapping;
  /// Output-side stem substitution (lowercased keys).
  std::map<std::string, std::string> stem_mapping;
};

/// One global 1-to-1 substitution over every lexicon source that occurs in
/// some input. Inputs are rewritten by exact token match; output tokens are
/// rewritten when their lowercased form equals a mapped stem, keeping the
/// original token's casing pattern. A chosen alternative that is already
/// taken falls through to the next one; running out throws InputError.
LexicalVariant make_lexical_variant(const Dataset& dataset, const LexiconTable& lexicon, std::uint64_t seed,
                                    std::string name = {});

/// "JUMP" -> upper, "Emma" -> capitalized, otherwise unchanged.
std::string apply_case_pattern(std::string_view pattern, std::string_view word);

}  // namespace duel::data
