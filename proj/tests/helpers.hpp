#pragma once

#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "duel/data/dataset.hpp"
#include "duel/model/config.hpp"
#include "duel/model/transformer.hpp"
#include "duel/tokens.hpp"

namespace duel::test {

inline model::ModelConfig tiny_config(int vocab = 12) {
  model::ModelConfig c;
  c.vocab_size = vocab;
  c.embed_dim = 8;
  c.num_heads = 2;
  c.encoder_layers = 1;
  c.decoder_layers = 1;
  c.ffn_dim = 16;
  c.max_src_len = 8;
  c.max_tgt_len = 8;
  return c;
}

// Random non-reserved ids; lengths in [1, max_len].
inline std::vector<model::SeqPair> random_pairs(int n, int vocab, std::uint64_t seed, int max_len = 5) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> len(1, max_len);
  std::uniform_int_distribution<int> id(4, vocab - 1);
  std::vector<model::SeqPair> out(n);
  for (auto& p : out) {
    p.src.resize(len(rng));
    p.tgt.resize(len(rng));
    for (auto& x : p.src) x = id(rng);
    for (auto& x : p.tgt) x = id(rng);
  }
  return out;
}

inline std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("duel_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

inline data::Dataset make_dataset(std::string name, const std::vector<std::pair<std::string, std::string>>& rows) {
  data::Dataset d;
  d.name = std::move(name);
  for (const auto& [in, out] : rows) d.examples.push_back({in, out, std::nullopt});
  return d;
}

}  // namespace duel::test
