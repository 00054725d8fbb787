#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "duel/grad/graph.hpp"
#include "duel/grad/tensor.hpp"

namespace duel::model {

/// Shape of the encoder-decoder. Defaults are the desk-scale configuration.
struct ModelConfig {
  int vocab_size = 0;
  int embed_dim = 64;
  int num_heads = 4;
  int encoder_layers = 2;
  int decoder_layers = 2;
  int ffn_dim = 256;
  int max_src_len = 64;
  int max_tgt_len = 64;
  double dropout = 0.0;

  /// Throws ConfigError describing the first violated constraint.
  void validate() const;

  /// "key = value" lines, one per field.
  std::string to_text() const;
  static ModelConfig from_text(std::string_view text);

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// The two halves of the parameter store. theta is the representation
/// (everything named "encoder."), phi the task head ("decoder.").
enum class Block { theta, phi, all };

std::string_view block_name(Block block);
bool in_block(std::string_view param_name, Block block);
grad::ParamFilter block_filter(Block block);

/// Names of the parameters in one block, lexicographic.
std::vector<std::string> block_names(const grad::ParamStore& params, Block block);

/// FNV-1a over the names, shapes, and raw bytes of one block.
std::uint64_t block_hash(const grad::ParamStore& params, Block block);

}  // namespace duel::model
