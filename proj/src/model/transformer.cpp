#include "duel/model/transformer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <string>

#include "duel/error.hpp"
#include "duel/grad/kernels.hpp"
#include "duel/tokens.hpp"

namespace duel::model {
namespace {

using grad::ParamStore;
using grad::Tensor;
using grad::Var;

std::string enc_layer(int i) { return "encoder.layer" + std::to_string(i) + "."; }
std::string dec_layer(int i) { return "decoder.layer" + std::to_string(i) + "."; }

// Parameter names and shapes in declaration order; init and counting share it.
struct ParamSpec {
  std::string name;
  std::vector<int> shape;
};

void attention_specs(std::vector<ParamSpec>& out, const std::string& prefix, int d) {
  for (const char* w : {"wq", "wk", "wv", "wo"}) out.push_back({prefix + w, {d, d}});
  for (const char* b : {"bq", "bk", "bv", "bo"}) out.push_back({prefix + b, {d}});
}

void norm_specs(std::vector<ParamSpec>& out, const std::string& prefix, int d) {
  out.push_back({prefix + "gain", {d}});
  out.push_back({prefix + "bias", {d}});
}

void ffn_specs(std::vector<ParamSpec>& out, const std::string& prefix, int d, int f) {
  out.push_back({prefix + "w1", {d, f}});
  out.push_back({prefix + "b1", {f}});
  out.push_back({prefix + "w2", {f, d}});
  out.push_back({prefix + "b2", {d}});
}

std::vector<ParamSpec> param_specs(const ModelConfig& cfg) {
  const int d = cfg.embed_dim, f = cfg.ffn_dim, v = cfg.vocab_size;
  std::vector<ParamSpec> out;
  out.push_back({"encoder.tok_embed", {v, d}});
  out.push_back({"encoder.pos_embed", {cfg.max_src_len, d}});
  for (int i = 0; i < cfg.encoder_layers; ++i) {
    attention_specs(out, enc_layer(i) + "attn.", d);
    norm_specs(out, enc_layer(i) + "ln1.", d);
    norm_specs(out, enc_layer(i) + "ln2.", d);
    ffn_specs(out, enc_layer(i) + "ffn.", d, f);
  }
  norm_specs(out, "encoder.final_ln.", d);
  out.push_back({"decoder.tok_embed", {v, d}});
  out.push_back({"decoder.pos_embed", {cfg.max_tgt_len, d}});
  for (int i = 0; i < cfg.decoder_layers; ++i) {
    attention_specs(out, dec_layer(i) + "self_attn.", d);
    attention_specs(out, dec_layer(i) + "cross_attn.", d);
    norm_specs(out, dec_layer(i) + "ln1.", d);
    norm_specs(out, dec_layer(i) + "ln2.", d);
    norm_specs(out, dec_layer(i) + "ln3.", d);
    ffn_specs(out, dec_layer(i) + "ffn.", d, f);
  }
  norm_specs(out, "decoder.final_ln.", d);
  out.push_back({"decoder.out_proj", {d, v}});
  out.push_back({"decoder.out_bias", {v}});
  return out;
}

std::uint64_t name_stream(std::uint64_t seed, const std::string& name) {
  std::uint64_t h = 1469598103934665603ull ^ (seed * 0x9E3779B97F4A7C15ull);
  for (unsigned char c : name) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

Tensor init_tensor(const ParamSpec& spec, std::uint64_t seed) {
  const std::string& n = spec.name;
  const auto ends_with = [&n](std::string_view suffix) { return n.ends_with(suffix); };
  if (ends_with(".gain")) return Tensor::filled(spec.shape, 1.0f);
  if (spec.shape.size() == 1) return Tensor::zeros(spec.shape);
  // Embedding tables are indexed rather than multiplied; their rows feed a
  // width-d stream, so they are scaled like a d-input layer.
  const int fan_in = ends_with("embed") ? spec.shape[1] : spec.shape[0];
  const float limit = std::sqrt(3.0f / static_cast<float>(fan_in));
  std::mt19937_64 rng(name_stream(seed, n));
  std::uniform_real_distribution<float> dist(-limit, limit);
  Tensor t = Tensor::zeros(spec.shape);
  for (float& x : t.values) x = dist(rng);
  return t;
}

void check_ids(std::span<const int> ids, int vocab, const char* side) {
  for (int id : ids) {
    if (id < 0 || id >= vocab) {
      throw InputError(std::string(side) + " id " + std::to_string(id) + " outside vocabulary of size " +
                       std::to_string(vocab));
    }
  }
}

/// Padded index tensors for one batch.
struct BatchLayout {
  int batch = 0;
  int src_len = 0;  // longest source + EOS
  int tgt_len = 0;  // longest target + 1
  std::vector<int> src_ids, src_pos;
  std::vector<std::uint8_t> src_valid;
  std::vector<int> tgt_in, tgt_pos, targets;
  std::vector<std::uint8_t> tgt_valid;
};

BatchLayout layout_batch(const ModelConfig& cfg, std::span<const SeqPair> batch) {
  if (batch.empty()) throw InputError("empty batch");
  BatchLayout L;
  L.batch = static_cast<int>(batch.size());
  for (const auto& p : batch) {
    check_ids(p.src, cfg.vocab_size, "source");
    check_ids(p.tgt, cfg.vocab_size, "target");
    const int s = static_cast<int>(p.src.size()) + 1;
    const int t = static_cast<int>(p.tgt.size()) + 1;
    if (s > cfg.max_src_len) {
      throw InputError("source of " + std::to_string(p.src.size()) + " tokens exceeds max_src_len " +
                       std::to_string(cfg.max_src_len) + " (EOS included)");
    }
    if (t > cfg.max_tgt_len) {
      throw InputError("target of " + std::to_string(p.tgt.size()) + " tokens exceeds max_tgt_len " +
                       std::to_string(cfg.max_tgt_len) + " (BOS included)");
    }
    L.src_len = std::max(L.src_len, s);
    L.tgt_len = std::max(L.tgt_len, t);
  }
  const auto B = static_cast<std::size_t>(L.batch);
  L.src_ids.assign(B * L.src_len, kPadId);
  L.src_pos.resize(B * L.src_len);
  L.src_valid.assign(B * L.src_len, 0);
  L.tgt_in.assign(B * L.tgt_len, kPadId);
  L.tgt_pos.resize(B * L.tgt_len);
  L.tgt_valid.assign(B * L.tgt_len, 0);
  L.targets.assign(B * L.tgt_len, -1);
  for (std::size_t b = 0; b < B; ++b) {
    const auto& p = batch[b];
    const std::size_t so = b * L.src_len, to = b * L.tgt_len;
    for (int j = 0; j < L.src_len; ++j) L.src_pos[so + j] = j;
    for (std::size_t j = 0; j < p.src.size(); ++j) {
      L.src_ids[so + j] = p.src[j];
      L.src_valid[so + j] = 1;
    }
    L.src_ids[so + p.src.size()] = kEosId;
    L.src_valid[so + p.src.size()] = 1;
    for (int j = 0; j < L.tgt_len; ++j) L.tgt_pos[to + j] = j;
    L.tgt_in[to] = kBosId;
    L.tgt_valid[to] = 1;
    for (std::size_t j = 0; j < p.tgt.size(); ++j) {
      L.tgt_in[to + j + 1] = p.tgt[j];
      L.tgt_valid[to + j + 1] = 1;
      L.targets[to + j] = p.tgt[j];
    }
    L.targets[to + p.tgt.size()] = kEosId;
  }
  return L;
}

// Splits a batch into contiguous runs of the length-sorted order so each
// run is padded only to its own longest sequence. The split minimizes padded
// rows plus a fixed per-run overhead.
std::vector<std::vector<std::size_t>> length_groups(std::span<const SeqPair> batch) {
  constexpr double kRunOverhead = 32.0;
  const std::size_t n = batch.size();
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return std::pair(batch[a].tgt.size(), batch[a].src.size()) < std::pair(batch[b].tgt.size(), batch[b].src.size());
  });
  std::vector<double> best(n + 1, 0.0);
  std::vector<std::size_t> cut(n + 1, 0);
  for (std::size_t end = 1; end <= n; ++end) {
    best[end] = std::numeric_limits<double>::infinity();
    std::size_t src_max = 0;
    for (std::size_t start = end; start-- > 0;) {
      src_max = std::max(src_max, batch[order[start]].src.size());
      const double rows = static_cast<double>(end - start);
      const double cost = best[start] + kRunOverhead +
                          rows * (static_cast<double>(batch[order[end - 1]].tgt.size() + 1) +
                                  0.5 * static_cast<double>(src_max + 1));
      if (cost < best[end]) {
        best[end] = cost;
        cut[end] = start;
      }
    }
  }
  std::vector<std::vector<std::size_t>> groups;
  for (std::size_t end = n; end > 0; end = cut[end]) {
    groups.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(cut[end]),
                        order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  std::reverse(groups.begin(), groups.end());
  return groups;
}

template <typename T>
class Builder {
 public:
  Builder(grad::BasicGraph<T>& g, const ModelConfig& cfg) : g_(g), cfg_(cfg) {}

  Var linear(Var x, const std::string& w, const std::string& b) {
    return g_.add_bias(g_.matmul(x, g_.param(w)), g_.param(b));
  }

  Var norm(Var x, const std::string& prefix) {
    return g_.layer_norm(x, g_.param(prefix + "gain"), g_.param(prefix + "bias"));
  }

  Var attention(Var query_in, Var kv_in, const std::string& prefix, std::vector<std::uint8_t> key_valid,
                grad::kernels::AttentionShape shape) {
    Var q = linear(query_in, prefix + "wq", prefix + "bq");
    Var k = linear(kv_in, prefix + "wk", prefix + "bk");
    Var v = linear(kv_in, prefix + "wv", prefix + "bv");
    Var a = g_.attention(q, k, v, std::move(key_valid), shape);
    return linear(a, prefix + "wo", prefix + "bo");
  }

  Var ffn(Var x, const std::string& prefix) {
    Var h = g_.gelu(linear(x, prefix + "w1", prefix + "b1"));
    return linear(h, prefix + "w2", prefix + "b2");
  }

  Var residual(Var x, Var update) { return g_.add(x, g_.dropout(update, cfg_.dropout)); }

  Var embed(const std::string& side, const std::vector<int>& ids, const std::vector<int>& pos) {
    Var tok = g_.gather_rows(g_.param(side + ".tok_embed"), ids);
    Var p = g_.gather_rows(g_.param(side + ".pos_embed"), pos);
    return g_.dropout(g_.add(tok, p), cfg_.dropout);
  }

  Var encode(const BatchLayout& L) {
    const int d = cfg_.embed_dim;
    Var x = embed("encoder", L.src_ids, L.src_pos);
    const grad::kernels::AttentionShape self{L.batch, L.src_len, L.src_len, d, cfg_.num_heads, false, 0};
    for (int i = 0; i < cfg_.encoder_layers; ++i) {
      const auto p = enc_layer(i);
      Var h = norm(x, p + "ln1.");
      x = residual(x, attention(h, h, p + "attn.", L.src_valid, self));
      x = residual(x, ffn(norm(x, p + "ln2."), p + "ffn."));
    }
    return norm(x, "encoder.final_ln.");
  }

  Var decode(const BatchLayout& L, Var memory) {
    const int d = cfg_.embed_dim;
    Var y = embed("decoder", L.tgt_in, L.tgt_pos);
    const grad::kernels::AttentionShape self{L.batch, L.tgt_len, L.tgt_len, d, cfg_.num_heads, true, 0};
    const grad::kernels::AttentionShape cross{L.batch, L.tgt_len, L.src_len, d, cfg_.num_heads, false, 0};
    for (int i = 0; i < cfg_.decoder_layers; ++i) {
      const auto p = dec_layer(i);
      Var h = norm(y, p + "ln1.");
      y = residual(y, attention(h, h, p + "self_attn.", L.tgt_valid, self));
      h = norm(y, p + "ln2.");
      y = residual(y, attention(h, memory, p + "cross_attn.", L.src_valid, cross));
      y = residual(y, ffn(norm(y, p + "ln3."), p + "ffn."));
    }
    Var out = norm(y, "decoder.final_ln.");
    return linear(out, "decoder.out_proj", "decoder.out_bias");
  }

 private:
  grad::BasicGraph<T>& g_;
  const ModelConfig& cfg_;
};

grad::ParamFilter no_grad() {
  return [](const std::string&) { return false; };
}

}  // namespace

ParamStore init_model(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  ParamStore params(seed);
  for (const auto& spec : param_specs(cfg)) params.insert(spec.name, init_tensor(spec, seed));
  return params;
}

ParamStore reinit_task_head(const ParamStore& params, const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  ParamStore out(params.seed());
  for (const auto& spec : param_specs(cfg)) {
    if (!params.contains(spec.name)) throw InputError("parameter store lacks '" + spec.name + "'");
    if (in_block(spec.name, Block::phi)) {
      out.insert(spec.name, init_tensor(spec, seed));
    } else {
      out.insert(spec.name, params.at(spec.name));
    }
  }
  if (out.size() != params.size()) throw InputError("parameter store has entries outside the model config");
  return out;
}

std::size_t parameter_count(const ModelConfig& cfg) {
  std::size_t n = 0;
  for (const auto& spec : param_specs(cfg)) n += grad::shape_product(spec.shape);
  return n;
}

template <typename T>
Var build_logits(grad::BasicGraph<T>& g, const ModelConfig& cfg, std::span<const SeqPair> batch) {
  const auto L = layout_batch(cfg, batch);
  Builder<T> b(g, cfg);
  return b.decode(L, b.encode(L));
}

template <typename T>
Var build_loss(grad::BasicGraph<T>& g, const ModelConfig& cfg, std::span<const SeqPair> batch,
               double label_smoothing) {
  if (batch.empty()) throw InputError("empty batch");
  Builder<T> b(g, cfg);
  Var total;
  for (const auto& group : length_groups(batch)) {
    std::vector<SeqPair> part;
    part.reserve(group.size());
    for (auto i : group) part.push_back(batch[i]);
    const auto L = layout_batch(cfg, part);
    Var logits = b.decode(L, b.encode(L));
    Var loss = g.cross_entropy(logits, L.targets, label_smoothing);
    total = total.valid() ? g.add(total, loss) : loss;
  }
  return g.scale(total, 1.0 / static_cast<double>(batch.size()));
}

template Var build_logits<float>(grad::BasicGraph<float>&, const ModelConfig&, std::span<const SeqPair>);
template Var build_logits<double>(grad::BasicGraph<double>&, const ModelConfig&, std::span<const SeqPair>);
template Var build_loss<float>(grad::BasicGraph<float>&, const ModelConfig&, std::span<const SeqPair>, double);
template Var build_loss<double>(grad::BasicGraph<double>&, const ModelConfig&, std::span<const SeqPair>, double);

double training_loss(const ParamStore& params, const ModelConfig& cfg, std::span<const SeqPair> batch,
                     double label_smoothing) {
  grad::Graph g(params, {.training = false, .dropout_seed = 0, .requires_grad = no_grad()});
  return g.value(build_loss(g, cfg, batch, label_smoothing)).values[0];
}

double sequence_log_prob(const ParamStore& params, const ModelConfig& cfg, const SeqPair& pair) {
  return -training_loss(params, cfg, std::span<const SeqPair>(&pair, 1), 0.0);
}

namespace {

using grad::kernels::AttentionShape;

// Row-wise y = x W + b into out (rows x cols).
void affine(const ParamStore& P, const std::string& w, const std::string& b, const std::vector<float>& x, int rows,
            std::vector<float>& out) {
  const Tensor& W = P.at(w);
  const Tensor& bias = P.at(b);
  const int in = W.shape[0], cols = W.shape[1];
  out.assign(static_cast<std::size_t>(rows) * cols, 0.0f);
  grad::kernels::matmul(x.data(), W.data(), out.data(), rows, in, cols, false);
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) out[static_cast<std::size_t>(r) * cols + c] += bias.values[c];
  }
}

void norm_rows(const ParamStore& P, const std::string& prefix, const std::vector<float>& x, int rows, int cols,
               std::vector<float>& out) {
  out.resize(x.size());
  grad::kernels::layer_norm(x.data(), P.at(prefix + "gain").data(), P.at(prefix + "bias").data(), out.data(),
                            static_cast<float*>(nullptr), static_cast<float*>(nullptr), rows, cols);
}

std::vector<Decoded> decode_chunk(const ParamStore& P, const ModelConfig& cfg,
                                  std::span<const std::vector<int>> srcs, int max_len) {
  std::vector<SeqPair> pairs;
  pairs.reserve(srcs.size());
  for (const auto& s : srcs) pairs.push_back({s, {}});
  const auto L = layout_batch(cfg, pairs);
  const int B = L.batch, S = L.src_len, d = cfg.embed_dim, H = cfg.num_heads, V = cfg.vocab_size;

  std::vector<float> memory;
  {
    grad::Graph g(P, {.training = false, .dropout_seed = 0, .requires_grad = no_grad()});
    Builder<float> builder(g, cfg);
    memory = g.value(builder.encode(L)).values;
  }

  const int layers = cfg.decoder_layers;
  const auto cache_size = static_cast<std::size_t>(B) * max_len * d;
  std::vector<std::vector<float>> self_k(layers, std::vector<float>(cache_size, 0.0f));
  std::vector<std::vector<float>> self_v(layers, std::vector<float>(cache_size, 0.0f));
  std::vector<std::vector<float>> cross_k(layers), cross_v(layers);
  for (int i = 0; i < layers; ++i) {
    const auto p = dec_layer(i) + "cross_attn.";
    affine(P, p + "wk", p + "bk", memory, B * S, cross_k[i]);
    affine(P, p + "wv", p + "bv", memory, B * S, cross_v[i]);
  }

  std::vector<Decoded> results(static_cast<std::size_t>(B));
  std::vector<int> current(static_cast<std::size_t>(B), kBosId);
  std::vector<bool> done(static_cast<std::size_t>(B), false);
  std::vector<float> x(static_cast<std::size_t>(B) * d), h, q, k, v, a, o, f, logits;
  const Tensor& tok = P.at("decoder.tok_embed");
  const Tensor& pos = P.at("decoder.pos_embed");

  for (int t = 0; t < max_len; ++t) {
    for (int b = 0; b < B; ++b) {
      for (int c = 0; c < d; ++c) {
        x[static_cast<std::size_t>(b) * d + c] = tok.values[static_cast<std::size_t>(current[b]) * d + c] +
                                                  pos.values[static_cast<std::size_t>(t) * d + c];
      }
    }
    for (int i = 0; i < layers; ++i) {
      const auto p = dec_layer(i);
      norm_rows(P, p + "ln1.", x, B, d, h);
      affine(P, p + "self_attn.wq", p + "self_attn.bq", h, B, q);
      affine(P, p + "self_attn.wk", p + "self_attn.bk", h, B, k);
      affine(P, p + "self_attn.wv", p + "self_attn.bv", h, B, v);
      for (int b = 0; b < B; ++b) {
        const auto dst = (static_cast<std::size_t>(b) * max_len + t) * d;
        std::copy_n(k.begin() + static_cast<std::ptrdiff_t>(b) * d, d, self_k[i].begin() + dst);
        std::copy_n(v.begin() + static_cast<std::ptrdiff_t>(b) * d, d, self_v[i].begin() + dst);
      }
      a.assign(static_cast<std::size_t>(B) * d, 0.0f);
      grad::kernels::attention(q.data(), self_k[i].data(), self_v[i].data(), {},
                               AttentionShape{B, 1, max_len, d, H, true, t}, a.data(),
                               static_cast<float*>(nullptr));
      affine(P, p + "self_attn.wo", p + "self_attn.bo", a, B, o);
      for (std::size_t j = 0; j < x.size(); ++j) x[j] += o[j];

      norm_rows(P, p + "ln2.", x, B, d, h);
      affine(P, p + "cross_attn.wq", p + "cross_attn.bq", h, B, q);
      grad::kernels::attention(q.data(), cross_k[i].data(), cross_v[i].data(), L.src_valid,
                               AttentionShape{B, 1, S, d, H, false, 0}, a.data(), static_cast<float*>(nullptr));
      affine(P, p + "cross_attn.wo", p + "cross_attn.bo", a, B, o);
      for (std::size_t j = 0; j < x.size(); ++j) x[j] += o[j];

      norm_rows(P, p + "ln3.", x, B, d, h);
      affine(P, p + "ffn.w1", p + "ffn.b1", h, B, f);
      for (float& z : f) z = grad::kernels::gelu(z);
      affine(P, p + "ffn.w2", p + "ffn.b2", f, B, o);
      for (std::size_t j = 0; j < x.size(); ++j) x[j] += o[j];
    }
    norm_rows(P, "decoder.final_ln.", x, B, d, h);
    affine(P, "decoder.out_proj", "decoder.out_bias", h, B, logits);

    bool all_done = true;
    for (int b = 0; b < B; ++b) {
      if (done[b]) continue;
      const float* row = logits.data() + static_cast<std::size_t>(b) * V;
      if (!std::all_of(row, row + V, [](float z) { return std::isfinite(z); })) {
        throw NumericError("non-finite logits during greedy decoding at step " + std::to_string(t));
      }
      int best = 0;
      for (int c = 1; c < V; ++c) {
        if (row[c] > row[best]) best = c;
      }
      if (best == kEosId) {
        done[b] = true;
      } else {
        results[b].ids.push_back(best);
        current[b] = best;
        all_done = false;
      }
    }
    if (all_done) break;
  }
  for (int b = 0; b < B; ++b) results[b].hit_max_len = !done[b];
  return results;
}

}  // namespace

std::vector<Decoded> greedy_decode_batch(const ParamStore& params, const ModelConfig& cfg,
                                         std::span<const std::vector<int>> srcs, int max_len, int batch_size) {
  if (max_len < 0 || max_len > cfg.max_tgt_len) {
    throw InputError("max_len " + std::to_string(max_len) + " outside [0, max_tgt_len=" +
                     std::to_string(cfg.max_tgt_len) + "]");
  }
  if (batch_size < 1) throw InputError("decode batch size must be positive");
  std::vector<Decoded> out;
  out.reserve(srcs.size());
  if (max_len == 0) {
    for (const auto& s : srcs) {
      check_ids(s, cfg.vocab_size, "source");
      out.push_back({{}, true});
    }
    return out;
  }
  for (std::size_t start = 0; start < srcs.size(); start += static_cast<std::size_t>(batch_size)) {
    const auto n = std::min(srcs.size() - start, static_cast<std::size_t>(batch_size));
    auto chunk = decode_chunk(params, cfg, srcs.subspan(start, n), max_len);
    std::move(chunk.begin(), chunk.end(), std::back_inserter(out));
  }
  return out;
}

Decoded greedy_decode(const ParamStore& params, const ModelConfig& cfg, std::span<const int> src, int max_len) {
  const std::vector<std::vector<int>> one{std::vector<int>(src.begin(), src.end())};
  return greedy_decode_batch(params, cfg, one, max_len).front();
}

}  // namespace duel::model
