#include "duel/data/lexicon.hpp"

#include <algorithm>
#include <cctype>
#include <random>
#include <set>

#include "duel/error.hpp"
#include "duel/util/kv.hpp"

namespace duel::data {
namespace {

bool has_space(std::string_view s) {
  return std::any_of(s.begin(), s.end(), [](char c) { return std::isspace(static_cast<unsigned char>(c)); });
}

bool all_upper(std::string_view s) {
  bool letter = false;
  for (char c : s) {
    const auto u = static_cast<unsigned char>(c);
    if (std::islower(u)) return false;
    letter = letter || std::isupper(u);
  }
  return letter && s.size() > 1;
}

}  // namespace

std::string word_class_name(WordClass c) {
  switch (c) {
    case WordClass::proper_noun: return "propn";
    case WordClass::noun: return "noun";
    case WordClass::verb: return "verb";
  }
  return "noun";
}

WordClass parse_word_class(std::string_view name) {
  const auto n = util::lowercase(name);
  if (n == "propn" || n == "proper_noun") return WordClass::proper_noun;
  if (n == "noun") return WordClass::noun;
  if (n == "verb") return WordClass::verb;
  throw InputError("unknown word class '" + std::string(name) + "'");
}

std::string LexiconEntry::stem() const { return source_stem ? *source_stem : util::lowercase(source); }

std::string LexiconEntry::alternative_stem(std::size_t i) const {
  if (!alternative_stems.empty()) return alternative_stems.at(i);
  return util::lowercase(alternatives.at(i));
}

std::string apply_case_pattern(std::string_view pattern, std::string_view word) {
  std::string out(word);
  if (all_upper(pattern)) {
    for (char& c : out) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  } else if (!pattern.empty() && std::isupper(static_cast<unsigned char>(pattern[0])) && !out.empty()) {
    out[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(out[0])));
  }
  return out;
}

void LexiconTable::add(LexiconEntry e) {
  if (e.source.empty() || has_space(e.source)) throw InputError("lexicon: invalid source token '" + e.source + "'");
  if (e.alternatives.empty()) throw InputError("lexicon: no alternatives for '" + e.source + "'");
  if (!e.alternative_stems.empty() && e.alternative_stems.size() != e.alternatives.size()) {
    throw InputError("lexicon: stem list for '" + e.source + "' does not match its alternatives");
  }
  if (find(e.source)) throw InputError("lexicon: duplicate source '" + e.source + "'");
  for (const auto& a : e.alternatives) {
    if (a.empty() || has_space(a)) throw InputError("lexicon: invalid alternative '" + a + "'");
    if (a == e.source || find(a)) throw InputError("lexicon: alternative '" + a + "' is also a source token");
  }
  for (const auto& other : entries_) {
    if (std::find(other.alternatives.begin(), other.alternatives.end(), e.source) != other.alternatives.end()) {
      throw InputError("lexicon: source '" + e.source + "' is an alternative of '" + other.source + "'");
    }
  }
  entries_.push_back(std::move(e));
}

const LexiconEntry* LexiconTable::find(std::string_view source) const {
  for (const auto& e : entries_) {
    if (e.source == source) return &e;
  }
  return nullptr;
}

std::string LexiconTable::to_text() const {
  std::string out;
  for (const auto& e : entries_) {
    out += word_class_name(e.word_class) + "\t" + e.source + "\t" + util::join(e.alternatives, ",");
    if (e.source_stem) {
      out += "\t" + *e.source_stem + "\t" + util::join(e.alternative_stems, ",");
    }
    out += '\n';
  }
  return out;
}

LexiconTable LexiconTable::parse(std::string_view text) {
  LexiconTable table;
  const auto lines = util::split(text, '\n');
  for (std::size_t i = 0; i < lines.size(); ++i) {
    const auto line = util::trim(lines[i]);
    if (line.empty() || line[0] == '#') continue;
    const auto fields = util::split(line, '\t');
    const auto where = "lexicon line " + std::to_string(i + 1);
    if (fields.size() != 3 && fields.size() != 5) throw InputError(where + ": expected 3 or 5 tab-separated fields");
    LexiconEntry e;
    e.word_class = parse_word_class(util::trim(fields[0]));
    e.source = util::trim(fields[1]);
    for (const auto& a : util::split(fields[2], ',')) e.alternatives.push_back(util::trim(a));
    if (fields.size() == 5) {
      e.source_stem = util::trim(fields[3]);
      for (const auto& a : util::split(fields[4], ',')) e.alternative_stems.push_back(util::trim(a));
    }
    try {
      table.add(std::move(e));
    } catch (const InputError& err) {
      throw InputError(where + ": " + err.what());
    }
  }
  return table;
}

LexiconTable LexiconTable::load(const std::filesystem::path& path) { return parse(util::read_file(path.string())); }

void LexiconTable::save(const std::filesystem::path& path) const { util::write_file(path.string(), to_text()); }

LexiconTable synthetic_lexicon(const std::map<std::string, WordClass>& sources, int alternatives_per_source,
                               std::uint64_t seed) {
  if (alternatives_per_source < 1) throw InputError("synthetic lexicon needs at least one alternative per source");
  static constexpr const char* kOnsets[] = {"b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z"};
  static constexpr const char* kVowels[] = {"a", "e", "i", "o", "u"};
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> onset(0, 13), vowel(0, 4), syllables(2, 3);
  std::set<std::string> taken;
  for (const auto& [s, c] : sources) taken.insert(util::lowercase(s));
  LexiconTable table;
  for (const auto& [source, cls] : sources) {
    LexiconEntry e{cls, source, {}, std::nullopt, {}};
    while (static_cast<int>(e.alternatives.size()) < alternatives_per_source) {
      std::string w;
      const int n = syllables(rng);
      for (int i = 0; i < n; ++i) {
        w += kOnsets[onset(rng)];
        w += kVowels[vowel(rng)];
      }
      if (!taken.insert(w).second) continue;
      e.alternatives.push_back(apply_case_pattern(source, w));
    }
    table.add(std::move(e));
  }
  return table;
}

LexicalVariant make_lexical_variant(const Dataset& dataset, const LexiconTable& lexicon, std::uint64_t seed,
                                    std::string name) {
  LexicalVariant out;
  out.dataset.name = name.empty() ? dataset.name : std::move(name);

  std::set<std::string> present;
  for (const auto& ex : dataset.examples) {
    for (auto& t : tokens(ex.input)) present.insert(std::move(t));
  }
  // Every token of the mapped classes is off limits as a target.
  std::set<std::string> used;
  for (const auto& e : lexicon.entries()) used.insert(e.source);

  std::mt19937_64 rng(seed);
  for (const auto& e : lexicon.entries()) {
    if (!present.count(e.source)) continue;
    const std::size_t n = e.alternatives.size();
    const std::size_t start = std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
    std::optional<std::size_t> pick;
    for (std::size_t k = 0; k < n && !pick; ++k) {
      const std::size_t i = (start + k) % n;
      if (!used.count(e.alternatives[i])) pick = i;
    }
    if (!pick) throw InputError("lexicon: every alternative of '" + e.source + "' is already taken");
    used.insert(e.alternatives[*pick]);
    out.mapping.emplace(e.source, e.alternatives[*pick]);
    out.stem_mapping.emplace(e.stem(), e.alternative_stem(*pick));
  }

  out.dataset.examples.reserve(dataset.size());
  for (const auto& ex : dataset.examples) {
    auto in = tokens(ex.input);
    for (auto& t : in) {
      if (auto it = out.mapping.find(t); it != out.mapping.end()) t = it->second;
    }
    auto outp = tokens(ex.output);
    for (auto& t : outp) {
      if (auto it = out.stem_mapping.find(util::lowercase(t)); it != out.stem_mapping.end()) {
        t = apply_case_pattern(t, it->second);
      }
    }
    out.dataset.examples.push_back({util::join(in, " "), util::join(outp, " "), ex.category});
  }
  return out;
}

}  // namespace duel::data
