#pragma once

#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "duel/data/dataset.hpp"

namespace duel::splits {

using FrequencyMap = std::map<std::string, double>;

enum class CompoundRule {
  /// Parent->child pairs of a bracketed expression such as f(g(a, b)).
  bracket_tree,
  /// Adjacent output tokens.
  output_bigram,
  /// bracket_tree when the output contains '(', otherwise output_bigram.
  automatic,
};

std::string compound_rule_name(CompoundRule rule);
CompoundRule parse_compound_rule(std::string_view name);

struct ExtractorConfig {
  CompoundRule rule = CompoundRule::automatic;
  /// Use output bigrams when a bracket parse fails instead of throwing.
  bool fallback_to_bigram = true;
  /// Also count adjacent input tokens as compounds ("in:" prefixed keys).
  bool input_bigrams = false;

  friend bool operator==(const ExtractorConfig&, const ExtractorConfig&) = default;
};

struct ExampleUnits {
  std::vector<std::string> atoms;
  std::vector<std::string> compounds;
};

/// Atoms and compounds of one example. Tree compounds are keyed
/// "parent->child", bigrams "left right".
ExampleUnits extract_units(const data::Example& example, const ExtractorConfig& config);

/// Raw atom and compound counts over a dataset.
struct CompoundProfile {
  std::map<std::string, double> atom_counts;
  std::map<std::string, double> compound_counts;

  FrequencyMap atom_frequencies() const;
  FrequencyMap compound_frequencies() const;
  void add(const ExampleUnits& units);
};

CompoundProfile extract_profile(const data::Dataset& dataset, const ExtractorConfig& config);

/// Counts divided by their sum; empty in, empty out.
FrequencyMap normalize(const std::map<std::string, double>& counts);

struct DivergenceConfig {
  double chernoff_alpha = 0.1;
  /// Throws ConfigError unless alpha is strictly inside (0, 1).
  void validate() const;
};

/// sum_k p_k^alpha q_k^(1-alpha) over the shared support. Throws InputError
/// when either map's total differs from 1 by more than 1e-6.
double chernoff_coefficient(const FrequencyMap& p, const FrequencyMap& q, double alpha);

/// 1 - C_alpha(train || test) over the compound distributions. Throws
/// InputError when either side has no compounds.
double compound_divergence(const CompoundProfile& train, const CompoundProfile& test,
                           const DivergenceConfig& config = {});

}  // namespace duel::splits
