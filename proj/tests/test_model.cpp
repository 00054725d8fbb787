#include <doctest.h>

#include <cmath>
#include <set>

#include "duel/data/vocab.hpp"
#include "duel/error.hpp"
#include "duel/grad/graph.hpp"
#include "duel/model/transformer.hpp"
#include "duel/train/optimizer.hpp"
#include "duel/train/procedures.hpp"
#include "helpers.hpp"

using namespace duel;
using model::Block;
using model::ModelConfig;

namespace {

// Closed-form count, written out independently of the model's own spec list.
std::size_t expected_count(const ModelConfig& c) {
  const std::size_t d = c.embed_dim, f = c.ffn_dim, v = c.vocab_size;
  const std::size_t attention = 4 * d * d + 4 * d;
  const std::size_t ffn = d * f + f + f * d + d;
  const std::size_t norm = 2 * d;
  const std::size_t encoder = v * d + c.max_src_len * d + c.encoder_layers * (attention + 2 * norm + ffn) + norm;
  const std::size_t decoder =
      v * d + c.max_tgt_len * d + c.decoder_layers * (2 * attention + 3 * norm + ffn) + norm + d * v + v;
  return encoder + decoder;
}

std::vector<double> log_softmax(const float* row, int n) {
  double m = row[0];
  for (int i = 1; i < n; ++i) m = std::max(m, static_cast<double>(row[i]));
  double z = 0.0;
  for (int i = 0; i < n; ++i) z += std::exp(row[i] - m);
  std::vector<double> out(n);
  for (int i = 0; i < n; ++i) out[i] = row[i] - m - std::log(z);
  return out;
}

grad::Tensor logits_of(const grad::ParamStore& p, const ModelConfig& cfg, const model::SeqPair& pair) {
  grad::Graph g(p);
  std::vector<model::SeqPair> one{pair};
  return g.value(model::build_logits(g, cfg, one));
}

}  // namespace

TEST_CASE("config validation and text round trip") {
  auto c = test::tiny_config();
  c.num_heads = 3;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = test::tiny_config();
  c.max_tgt_len = 1;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = test::tiny_config();
  c.dropout = 1.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = test::tiny_config();
  c.dropout = 0.25;
  CHECK(ModelConfig::from_text(c.to_text()) == c);
  CHECK_THROWS_AS(ModelConfig::from_text("embed_dim = 8\nwidth = 3\n"), ConfigError);
}

TEST_CASE("init is deterministic per seed") {
  const auto cfg = test::tiny_config();
  CHECK(model::init_model(cfg, 4) == model::init_model(cfg, 4));
  CHECK_FALSE(model::init_model(cfg, 4) == model::init_model(cfg, 5));
}

TEST_CASE("initial weights are zero-mean with fan-in scale, biases zero, gains one") {
  ModelConfig cfg;
  cfg.vocab_size = 40;
  const auto p = model::init_model(cfg, 2);
  const auto& w = p.at("encoder.layer0.ffn.w1");  // [64, 256]
  double sum = 0.0, sq = 0.0;
  for (float x : w.values) {
    sum += x;
    sq += static_cast<double>(x) * x;
  }
  const double n = static_cast<double>(w.size());
  CHECK(std::abs(sum / n) < 0.01);
  CHECK(sq / n == doctest::Approx(1.0 / 64).epsilon(0.05));
  for (float x : p.at("encoder.layer0.ffn.b1").values) CHECK(x == 0.0f);
  for (float x : p.at("decoder.final_ln.gain").values) CHECK(x == 1.0f);
}

TEST_CASE("parameter count matches the closed form") {
  ModelConfig cfg;
  cfg.vocab_size = 64;
  cfg.embed_dim = 32;
  cfg.num_heads = 4;
  cfg.encoder_layers = 2;
  cfg.decoder_layers = 2;
  CHECK(model::parameter_count(cfg) == expected_count(cfg));
  CHECK(model::init_model(cfg, 1).parameter_count() == expected_count(cfg));
  const auto tiny = test::tiny_config(20);
  CHECK(model::init_model(tiny, 1).parameter_count() == expected_count(tiny));
}

TEST_CASE("theta and phi partition the parameters by name") {
  const auto p = model::init_model(test::tiny_config(), 1);
  const auto theta = model::block_names(p, Block::theta);
  const auto phi = model::block_names(p, Block::phi);
  CHECK(theta.size() + phi.size() == p.size());
  std::set<std::string> all(theta.begin(), theta.end());
  for (const auto& n : phi) CHECK(all.insert(n).second);
  CHECK(model::in_block("encoder.tok_embed", Block::theta));
  CHECK(model::in_block("encoder.pos_embed", Block::theta));
  CHECK(model::in_block("decoder.tok_embed", Block::phi));
  CHECK(model::in_block("decoder.out_proj", Block::phi));
  CHECK_FALSE(model::in_block("decoder.out_proj", Block::theta));
}

TEST_CASE("reinit_task_head redraws phi only") {
  const auto cfg = test::tiny_config();
  const auto p = model::init_model(cfg, 1);
  const auto r = model::reinit_task_head(p, cfg, 99);
  CHECK(model::block_hash(r, Block::theta) == model::block_hash(p, Block::theta));
  for (const auto& n : model::block_names(p, Block::theta)) CHECK(r.at(n) == p.at(n));
  CHECK(model::block_hash(r, Block::phi) != model::block_hash(p, Block::phi));
  CHECK(model::reinit_task_head(p, cfg, 99) == r);
}

TEST_CASE("sequence log-prob is non-positive and -ln V per token for a zero head") {
  const auto cfg = test::tiny_config(15);
  auto p = model::init_model(cfg, 3);
  for (const auto& pair : test::random_pairs(6, cfg.vocab_size, 4)) {
    CHECK(model::sequence_log_prob(p, cfg, pair) <= 0.0);
  }
  for (auto& x : p.at("decoder.out_proj").values) x = 0.0f;
  for (auto& x : p.at("decoder.out_bias").values) x = 0.0f;
  const model::SeqPair pair{{4, 5, 6}, {7, 8}};
  CHECK(model::sequence_log_prob(p, cfg, pair) == doctest::Approx(-3.0 * std::log(15.0)).epsilon(1e-6));
  CHECK_THROWS_AS(model::sequence_log_prob(p, cfg, {{4, 99}, {5}}), InputError);
}

TEST_CASE("one-token target log-prob equals a manual softmax of the logits") {
  const auto cfg = test::tiny_config();
  const auto p = model::init_model(cfg, 8);
  const model::SeqPair pair{{5, 9, 4}, {6}};
  const auto logits = logits_of(p, cfg, pair);
  REQUIRE(logits.rows() == 2);
  const auto first = log_softmax(logits.data(), cfg.vocab_size);
  const auto second = log_softmax(logits.data() + cfg.vocab_size, cfg.vocab_size);
  CHECK(model::sequence_log_prob(p, cfg, pair) == doctest::Approx(first[6] + second[kEosId]).epsilon(1e-5));
}

TEST_CASE("training loss definitions") {
  const auto cfg = test::tiny_config(11);
  const auto p = model::init_model(cfg, 6);
  // Mixed lengths so the loss is assembled from several length groups.
  const auto batch = test::random_pairs(9, cfg.vocab_size, 2, 7);

  SUBCASE("no smoothing is the mean negative log-likelihood") {
    double nll = 0.0;
    for (const auto& pair : batch) nll -= model::sequence_log_prob(p, cfg, pair);
    CHECK(model::training_loss(p, cfg, batch, 0.0) == doctest::Approx(nll / batch.size()).epsilon(1e-5));
  }
  SUBCASE("smoothed batch loss is the mean of per-example losses") {
    double sum = 0.0;
    for (const auto& pair : batch) sum += model::training_loss(p, cfg, std::vector<model::SeqPair>{pair}, 0.1);
    CHECK(model::training_loss(p, cfg, batch, 0.1) == doctest::Approx(sum / batch.size()).epsilon(1e-5));
  }
  SUBCASE("full smoothing with uniform logits is ln V per token") {
    auto z = p;
    for (auto& x : z.at("decoder.out_proj").values) x = 0.0f;
    for (auto& x : z.at("decoder.out_bias").values) x = 0.0f;
    double tokens = 0.0;
    for (const auto& pair : batch) tokens += pair.tgt.size() + 1;
    CHECK(model::training_loss(z, cfg, batch, 1.0) ==
          doctest::Approx(tokens / batch.size() * std::log(11.0)).epsilon(1e-5));
  }
}

TEST_CASE("theta gradient does not depend on whether phi is frozen") {
  const auto cfg = test::tiny_config();
  const auto p = model::init_model(cfg, 12);
  const auto batch = test::random_pairs(5, cfg.vocab_size, 13);
  const auto all = train::compute_gradients(p, cfg, batch, Block::all, 0.0);
  const auto theta = train::compute_gradients(p, cfg, batch, Block::theta, 0.0);
  CHECK(theta.size() == model::block_names(p, Block::theta).size());
  for (const auto& [name, g] : theta) {
    const auto& ref = all.at(name);
    for (std::size_t i = 0; i < g.size(); ++i) CHECK(std::abs(g.values[i] - ref.values[i]) <= 1e-6);
  }
}

TEST_CASE("decode step distributions sum to one") {
  const auto cfg = test::tiny_config();
  const auto p = model::init_model(cfg, 21);
  const auto logits = logits_of(p, cfg, {{4, 5, 6, 7}, {8, 9, 10}});
  for (int r = 0; r < logits.rows(); ++r) {
    double total = 0.0;
    for (double lp : log_softmax(logits.data() + r * cfg.vocab_size, cfg.vocab_size)) total += std::exp(lp);
    CHECK(total == doctest::Approx(1.0).epsilon(1e-5));
  }
}

TEST_CASE("greedy decode is argmax-consistent with teacher forcing") {
  const auto cfg = test::tiny_config(14);
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const auto p = model::init_model(cfg, seed);
    const std::vector<int> src{4, 7, 9, 5};
    const auto out = model::greedy_decode(p, cfg, src, cfg.max_tgt_len - 1);
    const auto logits = logits_of(p, cfg, {src, out.ids});
    const std::size_t rows = out.hit_max_len ? out.ids.size() : out.ids.size() + 1;
    for (std::size_t t = 0; t < rows; ++t) {
      const float* row = logits.data() + t * cfg.vocab_size;
      const int expected = t < out.ids.size() ? out.ids[t] : kEosId;
      for (int v = 0; v < cfg.vocab_size; ++v) CHECK(row[v] <= row[expected] + 1e-5f);
    }
  }
}

TEST_CASE("greedy decode length cap and tie-breaking") {
  const auto cfg = test::tiny_config(10);
  auto p = model::init_model(cfg, 1);
  const auto one = model::greedy_decode(p, cfg, std::vector<int>{4, 5}, 1);
  CHECK(one.ids.size() <= 1);
  for (auto& x : p.at("decoder.out_proj").values) x = 0.0f;
  auto& bias = p.at("decoder.out_bias").values;
  std::fill(bias.begin(), bias.end(), 0.0f);
  bias[7] = 2.0f;
  bias[5] = 2.0f;
  const auto tied = model::greedy_decode(p, cfg, std::vector<int>{4}, 3);
  CHECK(tied.ids == std::vector<int>{5, 5, 5});
  CHECK(tied.hit_max_len);
}

TEST_CASE("batched decode matches single decodes") {
  const auto cfg = test::tiny_config(13);
  const auto p = model::init_model(cfg, 31);
  std::vector<std::vector<int>> srcs;
  for (const auto& pair : test::random_pairs(11, cfg.vocab_size, 32, 7)) srcs.push_back(pair.src);
  const auto batched = model::greedy_decode_batch(p, cfg, srcs, cfg.max_tgt_len, 4);
  REQUIRE(batched.size() == srcs.size());
  for (std::size_t i = 0; i < srcs.size(); ++i) {
    const auto single = model::greedy_decode(p, cfg, srcs[i], cfg.max_tgt_len);
    CHECK(batched[i].ids == single.ids);
    CHECK(batched[i].hit_max_len == single.hit_max_len);
  }
}

TEST_CASE("a model overfit on one pair emits it exactly") {
  data::Dataset d = test::make_dataset("scan", {{"jump twice", "JUMP JUMP"}});
  const auto vocab = data::build_vocab({&d});
  auto cfg = test::tiny_config(vocab.size());
  cfg.embed_dim = 16;
  cfg.ffn_dim = 32;
  auto p = model::init_model(cfg, 1);
  const auto enc = train::encode_dataset(vocab, d);
  train::OptimizerConfig oc;
  oc.learning_rate = 1e-2;
  oc.weight_decay = 0.0;
  auto state = train::make_optimizer(oc);
  for (int step = 0; step < 150; ++step) {
    const auto g = train::compute_gradients(p, cfg, enc.pairs, Block::all, 0.0);
    train::adam_step(p, g, state, Block::all);
  }
  const auto out = model::greedy_decode(p, cfg, vocab.encode("jump twice"), cfg.max_tgt_len);
  CHECK(vocab.decode(out.ids) == "JUMP JUMP");
  CHECK_FALSE(out.hit_max_len);
}
