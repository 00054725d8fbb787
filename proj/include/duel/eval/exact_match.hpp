#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "duel/data/dataset.hpp"
#include "duel/data/vocab.hpp"
#include "duel/grad/tensor.hpp"
#include "duel/model/config.hpp"
#include "duel/model/transformer.hpp"

namespace duel::eval {

inline constexpr const char* kUntagged = "untagged";

struct CategoryStats {
  std::size_t total = 0;
  std::size_t correct = 0;
  double accuracy() const { return total ? static_cast<double>(correct) / static_cast<double>(total) : 0.0; }
  friend bool operator==(const CategoryStats&, const CategoryStats&) = default;
};

struct EvalResult {
  std::size_t total = 0;
  std::size_t correct = 0;
  double accuracy = 0.0;
  /// Untagged examples are grouped under "untagged".
  std::map<std::string, CategoryStats> per_category;
  /// Predictions cut off by the length cap instead of ending in EOS.
  std::size_t truncated = 0;
  friend bool operator==(const EvalResult&, const EvalResult&) = default;
};

struct Prediction {
  std::string input;
  std::string reference;
  std::string prediction;
  bool correct = false;
  bool truncated = false;
  std::string category;
};

/// Token-sequence equality after whitespace tokenization.
bool sequences_match(std::string_view reference, std::string_view prediction);

/// Scores given predictions against a dataset's references.
EvalResult score_predictions(const data::Dataset& references, const std::vector<std::string>& predictions,
                             const std::vector<bool>& truncated = {});

/// Greedy-decodes every input and scores it. max_len <= 0 uses the model's
/// target length cap. Optionally returns the per-example predictions.
EvalResult exact_match(const grad::ParamStore& params, const model::ModelConfig& config,
                       const data::Vocabulary& vocab, const data::Dataset& dataset, int max_len = 0,
                       std::vector<Prediction>* predictions = nullptr);

/// Exact-match accuracy over pre-encoded pairs (id equality).
double exact_match_ids(const grad::ParamStore& params, const model::ModelConfig& config,
                       std::span<const model::SeqPair> pairs, int max_len = 0);

struct CategoryRow {
  std::string category;
  std::size_t total = 0;
  std::size_t correct = 0;
  double accuracy = 0.0;
};

/// One row per non-empty category, in name order, then an "overall" row.
std::vector<CategoryRow> category_breakdown(const EvalResult& result);

/// Structured "key = value" report.
std::string to_text(const EvalResult& result);
EvalResult eval_result_from_text(std::string_view text);

/// Header line, then input, reference, prediction, correct, category per example.
std::string predictions_tsv(const std::vector<Prediction>& predictions);

/// Either a fraction of the dataset or an absolute count.
struct HoldoutSize {
  std::optional<double> fraction;
  std::optional<std::size_t> count;
};

/// Seeded disjoint partition into (holdout, remainder); each side keeps the
/// source order. Throws InputError when the holdout would not be strictly
/// smaller than the dataset.
std::pair<data::Dataset, data::Dataset> make_validation_holdout(const data::Dataset& dataset, HoldoutSize size,
                                                                std::uint64_t seed);

}  // namespace duel::eval
