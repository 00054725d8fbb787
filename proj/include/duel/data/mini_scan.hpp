#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "duel/data/dataset.hpp"

namespace duel::data {

/// Size knobs for the SCAN-style command grammar
///   C -> S | S and S | S after S
///   S -> V | V twice | V thrice
///   V -> U | D | U opposite dir | U around dir   (U may be "turn" when allowed)
///   D -> U dir
struct MiniScanConfig {
  std::vector<std::string> primitives{"walk", "look", "run", "jump"};
  bool turn = true;          // "turn left" etc.
  bool directions = true;    // "U left", "U right"
  bool opposite = true;
  bool around = true;
  bool repetition = true;    // twice / thrice
  bool conjunctions = true;  // and / after
  /// 0 keeps every command; otherwise a seeded sample of this many.
  std::size_t max_examples = 0;

  friend bool operator==(const MiniScanConfig&, const MiniScanConfig&) = default;
};

/// Enumerates the grammar in a fixed order, then (when sampling) keeps a
/// seeded random subset in its shuffled order.
Dataset generate_mini_scan(const MiniScanConfig& config, std::uint64_t seed, std::string name = "scan");

/// Action sequence of a command. Any word that is not a grammar keyword
/// acts as a primitive whose action is its uppercase form; "turn" emits
/// nothing. Throws InputError for commands outside the grammar.
std::string interpret_scan(std::string_view command);

}  // namespace duel::data
