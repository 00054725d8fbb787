#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "duel/data/dataset.hpp"
#include "duel/splits/compounds.hpp"

namespace duel::splits {

enum class SplitKind { standard, length, mcd };

std::string split_kind_name(SplitKind kind);
SplitKind parse_split_kind(std::string_view name);

struct SplitMetrics {
  /// Absent when a side has no compounds.
  std::optional<double> compound_divergence;
  /// Fraction of distinct test atoms that also occur in train.
  double atom_coverage = 1.0;
  double train_mean_input_length = 0.0;
  double test_mean_input_length = 0.0;
  double train_mean_output_length = 0.0;
  double test_mean_output_length = 0.0;
  int train_max_input_length = 0;
  int test_max_input_length = 0;
};

struct SplitPair {
  data::Dataset train;
  data::Dataset test;
  SplitKind kind = SplitKind::standard;
  std::uint64_t seed = 0;
  /// Indices into the source dataset, ascending.
  std::vector<std::size_t> train_indices;
  std::vector<std::size_t> test_indices;
  SplitMetrics metrics;
  /// Divergence after each accepted hill-climb move (mcd only).
  std::vector<double> trace;
};

/// Builds both sides from index lists and fills the metrics. Throws
/// InputError unless the lists partition the dataset.
SplitPair make_split(const data::Dataset& dataset, std::vector<std::size_t> train_indices,
                     std::vector<std::size_t> test_indices, SplitKind kind, std::uint64_t seed,
                     const ExtractorConfig& extractor = {}, const DivergenceConfig& divergence = {});

/// Number of training examples for a fraction, rounded to nearest and kept
/// within [1, n-1]. Throws InputError for n < 2 or a fraction outside (0,1).
std::size_t train_count(std::size_t n, double train_fraction);

/// Uniform seeded partition.
SplitPair standard_split(const data::Dataset& dataset, double train_fraction, std::uint64_t seed,
                         const ExtractorConfig& extractor = {});

/// Shortest inputs go to train; ties broken by output length, then position.
SplitPair length_split(const data::Dataset& dataset, double train_fraction, const ExtractorConfig& extractor = {});

struct McdConfig {
  ExtractorConfig extractor;
  DivergenceConfig divergence;
  std::size_t train_size = 0;
  std::size_t test_size = 0;
  /// Swap proposals per restart.
  std::size_t iterations = 10000;
  /// Independent random starts; the best result is kept.
  int restarts = 1;
};

/// Greedy swap hill-climb on compound divergence under the constraint that
/// every test atom also occurs in train. Each restart draws a random split of
/// the requested sizes, repairs atom coverage by swaps, then proposes random
/// train/test swaps and keeps one only if it strictly raises the divergence
/// while preserving coverage. Sizes must add up to the dataset size. Throws
/// InputError naming the atoms when coverage cannot be repaired.
SplitPair mcd_split_search(const data::Dataset& dataset, const McdConfig& config, std::uint64_t seed);

/// Divergence of an index partition, for brute-force comparisons.
double split_divergence(const data::Dataset& dataset, const std::vector<std::size_t>& train_indices,
                        const std::vector<std::size_t>& test_indices, const ExtractorConfig& extractor = {},
                        const DivergenceConfig& divergence = {});

/// True when every atom of the test side also occurs on the train side.
bool atoms_covered(const data::Dataset& dataset, const std::vector<std::size_t>& train_indices,
                   const std::vector<std::size_t>& test_indices, const ExtractorConfig& extractor = {});

/// Text manifest: kind, seed, source name, metrics, and both index lists.
std::string to_manifest(const SplitPair& split, std::string_view source_name);

struct SplitManifest {
  SplitKind kind = SplitKind::standard;
  std::uint64_t seed = 0;
  std::string source;
  std::vector<std::size_t> train_indices;
  std::vector<std::size_t> test_indices;
};

SplitManifest parse_manifest(std::string_view text);
void save_manifest(const std::filesystem::path& path, const SplitPair& split, std::string_view source_name);
SplitManifest load_manifest(const std::filesystem::path& path);

/// Rebuilds the split a manifest describes from its source dataset.
SplitPair apply_manifest(const data::Dataset& dataset, const SplitManifest& manifest,
                         const ExtractorConfig& extractor = {});

}  // namespace duel::splits
