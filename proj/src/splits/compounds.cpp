#include "duel/splits/compounds.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>

#include "duel/error.hpp"
#include "duel/util/kv.hpp"

namespace duel::splits {
namespace {

bool is_delim(char c) { return c == '(' || c == ')' || c == ',' || std::isspace(static_cast<unsigned char>(c)); }

class BracketParser {
 public:
  BracketParser(std::string_view text, ExampleUnits& out) : s_(text), out_(out) {}

  void parse() {
    skip();
    term();
    skip();
    if (pos_ != s_.size()) fail("trailing text");
  }

 private:
  std::string term() {
    skip();
    const std::size_t start = pos_;
    while (pos_ < s_.size() && !is_delim(s_[pos_])) ++pos_;
    if (pos_ == start) fail("expected a symbol");
    std::string name(s_.substr(start, pos_ - start));
    out_.atoms.push_back(name);
    skip();
    if (pos_ < s_.size() && s_[pos_] == '(') {
      ++pos_;
      while (true) {
        out_.compounds.push_back(name + "->" + term());
        skip();
        if (pos_ >= s_.size()) fail("unclosed '('");
        if (s_[pos_] == ',') {
          ++pos_;
          continue;
        }
        if (s_[pos_] == ')') {
          ++pos_;
          break;
        }
        fail("expected ',' or ')'");
      }
    }
    return name;
  }

  void skip() {
    while (pos_ < s_.size() && std::isspace(static_cast<unsigned char>(s_[pos_]))) ++pos_;
  }

  [[noreturn]] void fail(const std::string& what) const {
    throw InputError("bracket parse error at offset " + std::to_string(pos_) + ": " + what);
  }

  std::string_view s_;
  ExampleUnits& out_;
  std::size_t pos_ = 0;
};

void add_bigrams(const std::vector<std::string>& toks, std::string_view prefix, std::vector<std::string>& out) {
  for (std::size_t i = 0; i + 1 < toks.size(); ++i) out.push_back(std::string(prefix) + toks[i] + " " + toks[i + 1]);
}

}  // namespace

std::string compound_rule_name(CompoundRule rule) {
  switch (rule) {
    case CompoundRule::bracket_tree: return "bracket_tree";
    case CompoundRule::output_bigram: return "output_bigram";
    case CompoundRule::automatic: return "automatic";
  }
  return "automatic";
}

CompoundRule parse_compound_rule(std::string_view name) {
  if (name == "bracket_tree") return CompoundRule::bracket_tree;
  if (name == "output_bigram") return CompoundRule::output_bigram;
  if (name == "automatic") return CompoundRule::automatic;
  throw ConfigError("unknown compound rule '" + std::string(name) + "'");
}

ExampleUnits extract_units(const data::Example& ex, const ExtractorConfig& cfg) {
  ExampleUnits units;
  const bool tree = cfg.rule == CompoundRule::bracket_tree ||
                    (cfg.rule == CompoundRule::automatic && ex.output.find('(') != std::string::npos);
  bool done = false;
  if (tree) {
    try {
      BracketParser(ex.output, units).parse();
      done = true;
    } catch (const InputError& e) {
      if (!cfg.fallback_to_bigram) throw InputError("output '" + ex.output + "': " + e.what());
      units = {};
    }
  }
  if (!done) {
    units.atoms = data::tokens(ex.output);
    add_bigrams(units.atoms, "", units.compounds);
  }
  if (cfg.input_bigrams) add_bigrams(data::tokens(ex.input), "in:", units.compounds);
  return units;
}

void CompoundProfile::add(const ExampleUnits& units) {
  for (const auto& a : units.atoms) atom_counts[a] += 1.0;
  for (const auto& c : units.compounds) compound_counts[c] += 1.0;
}

FrequencyMap CompoundProfile::atom_frequencies() const { return normalize(atom_counts); }
FrequencyMap CompoundProfile::compound_frequencies() const { return normalize(compound_counts); }

CompoundProfile extract_profile(const data::Dataset& dataset, const ExtractorConfig& cfg) {
  CompoundProfile p;
  for (const auto& ex : dataset.examples) p.add(extract_units(ex, cfg));
  return p;
}

FrequencyMap normalize(const std::map<std::string, double>& counts) {
  double total = 0.0;
  for (const auto& [k, v] : counts) total += v;
  FrequencyMap out;
  if (total <= 0.0) return out;
  for (const auto& [k, v] : counts) out.emplace(k, v / total);
  return out;
}

void DivergenceConfig::validate() const {
  if (!(chernoff_alpha > 0.0 && chernoff_alpha < 1.0)) {
    throw ConfigError("chernoff_alpha must lie strictly inside (0, 1), got " + util::format_double(chernoff_alpha));
  }
}

double chernoff_coefficient(const FrequencyMap& p, const FrequencyMap& q, double alpha) {
  DivergenceConfig{alpha}.validate();
  const auto check = [](const FrequencyMap& m, const char* which) {
    double total = 0.0;
    for (const auto& [k, v] : m) {
      if (!(v >= 0.0)) throw InputError(std::string(which) + ": negative or NaN frequency for '" + k + "'");
      total += v;
    }
    if (std::abs(total - 1.0) > 1e-6) {
      throw InputError(std::string(which) + ": frequencies sum to " + util::format_double(total) + ", not 1");
    }
  };
  check(p, "chernoff_coefficient P");
  check(q, "chernoff_coefficient Q");
  // Identical distributions are exactly 1 rather than a rounded sum.
  if (p == q) return 1.0;
  double c = 0.0;
  auto a = p.begin();
  auto b = q.begin();
  while (a != p.end() && b != q.end()) {
    if (a->first < b->first) {
      ++a;
    } else if (b->first < a->first) {
      ++b;
    } else {
      if (a->second > 0.0 && b->second > 0.0) c += std::pow(a->second, alpha) * std::pow(b->second, 1.0 - alpha);
      ++a;
      ++b;
    }
  }
  return std::clamp(c, 0.0, 1.0);
}

double compound_divergence(const CompoundProfile& train, const CompoundProfile& test, const DivergenceConfig& cfg) {
  cfg.validate();
  if (train.compound_counts.empty() || test.compound_counts.empty()) {
    throw InputError("compound divergence is undefined when a side has no compounds");
  }
  return 1.0 - chernoff_coefficient(train.compound_frequencies(), test.compound_frequencies(), cfg.chernoff_alpha);
}

}  // namespace duel::splits
