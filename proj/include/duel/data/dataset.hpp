#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace duel::data {

/// One (input, output) pair. Tokens are whitespace-separated.
struct Example {
  std::string input;
  std::string output;
  std::optional<std::string> category;

  friend bool operator==(const Example&, const Example&) = default;
};

struct Dataset {
  std::string name;
  std::vector<Example> examples;

  std::size_t size() const { return examples.size(); }
  bool empty() const { return examples.empty(); }

  friend bool operator==(const Dataset&, const Dataset&) = default;
};

/// Parses `input<TAB>output[<TAB>category]` lines. Errors carry the
/// 1-based line number; an input without any example is an error.
Dataset parse_tsv(std::string_view text, std::string name);
Dataset load_tsv(const std::filesystem::path& path);
Dataset load_tsv(const std::filesystem::path& path, std::string name);

std::string to_tsv(const Dataset& dataset);
void save_tsv(const std::filesystem::path& path, const Dataset& dataset);

/// Prepends "<tag>: " to every input. Not idempotent.
Dataset apply_prompt(const Dataset& dataset, std::string_view tag);

/// Concatenation in argument order under a new name.
Dataset concat(std::string name, const std::vector<const Dataset*>& parts);

/// Examples at the given positions, in that order.
Dataset subset(const Dataset& dataset, const std::vector<std::size_t>& indices, std::string name);

std::vector<std::string> tokens(std::string_view text);

}  // namespace duel::data
