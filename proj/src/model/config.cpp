#include "duel/model/config.hpp"

#include <cstring>
#include <sstream>

#include "duel/error.hpp"
#include "duel/util/kv.hpp"

namespace duel::model {

void ModelConfig::validate() const {
  const auto require = [](bool ok, const std::string& what) {
    if (!ok) throw ConfigError("model config: " + what);
  };
  require(vocab_size >= 1, "vocab_size must be >= 1");
  require(embed_dim >= 1, "embed_dim must be >= 1");
  require(num_heads >= 1, "num_heads must be >= 1");
  require(embed_dim % num_heads == 0, "embed_dim must be divisible by num_heads");
  require(encoder_layers >= 1, "encoder_layers must be >= 1");
  require(decoder_layers >= 1, "decoder_layers must be >= 1");
  require(ffn_dim >= 1, "ffn_dim must be >= 1");
  require(max_src_len >= 2, "max_src_len must be >= 2");
  require(max_tgt_len >= 2, "max_tgt_len must be >= 2");
  require(dropout >= 0.0 && dropout < 1.0, "dropout must lie in [0,1)");
}

std::string ModelConfig::to_text() const {
  std::ostringstream os;
  os << "vocab_size = " << vocab_size << '\n'
     << "embed_dim = " << embed_dim << '\n'
     << "num_heads = " << num_heads << '\n'
     << "encoder_layers = " << encoder_layers << '\n'
     << "decoder_layers = " << decoder_layers << '\n'
     << "ffn_dim = " << ffn_dim << '\n'
     << "max_src_len = " << max_src_len << '\n'
     << "max_tgt_len = " << max_tgt_len << '\n'
     << "dropout = " << util::format_double(dropout) << '\n';
  return os.str();
}

ModelConfig ModelConfig::from_text(std::string_view text) {
  ModelConfig cfg;
  for (const auto& [key, value] : util::parse_kv_lines(text)) {
    if (key == "vocab_size") cfg.vocab_size = util::to_int(value, key);
    else if (key == "embed_dim") cfg.embed_dim = util::to_int(value, key);
    else if (key == "num_heads") cfg.num_heads = util::to_int(value, key);
    else if (key == "encoder_layers") cfg.encoder_layers = util::to_int(value, key);
    else if (key == "decoder_layers") cfg.decoder_layers = util::to_int(value, key);
    else if (key == "ffn_dim") cfg.ffn_dim = util::to_int(value, key);
    else if (key == "max_src_len") cfg.max_src_len = util::to_int(value, key);
    else if (key == "max_tgt_len") cfg.max_tgt_len = util::to_int(value, key);
    else if (key == "dropout") cfg.dropout = util::to_double(value, key);
    else throw ConfigError("model config: unknown key '" + key + "'");
  }
  cfg.validate();
  return cfg;
}

std::string_view block_name(Block block) {
  switch (block) {
    case Block::theta: return "theta";
    case Block::phi: return "phi";
    case Block::all: return "all";
  }
  return "?";
}

bool in_block(std::string_view name, Block block) {
  switch (block) {
    case Block::theta: return name.starts_with("encoder.");
    case Block::phi: return name.starts_with("decoder.");
    case Block::all: return true;
  }
  return false;
}

grad::ParamFilter block_filter(Block block) {
  if (block == Block::all) return {};
  return [block](const std::string& name) { return in_block(name, block); };
}

std::vector<std::string> block_names(const grad::ParamStore& params, Block block) {
  std::vector<std::string> names;
  for (const auto& [name, _] : params.entries()) {
    if (in_block(name, block)) names.push_back(name);
  }
  return names;
}

std::uint64_t block_hash(const grad::ParamStore& params, Block block) {
  std::uint64_t h = 1469598103934665603ull;
  const auto mix = [&h](const void* data, std::size_t n) {
    const auto* bytes = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= bytes[i];
      h *= 1099511628211ull;
    }
  };
  for (const auto& [name, t] : params.entries()) {
    if (!in_block(name, block)) continue;
    mix(name.data(), name.size());
    mix(t.shape.data(), t.shape.size() * sizeof(int));
    mix(t.values.data(), t.values.size() * sizeof(float));
  }
  return h;
}

}  // namespace duel::model
