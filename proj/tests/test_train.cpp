#include <doctest.h>

#include <cmath>

#include "duel/error.hpp"
#include "duel/eval/exact_match.hpp"
#include "duel/grad/graph.hpp"
#include "duel/train/optimizer.hpp"
#include "duel/train/procedures.hpp"
#include "helpers.hpp"

using namespace duel;
using namespace duel::train;
using model::Block;

namespace {

// Pairs whose first source token marks the dataset they came from.
EncodedDataset marked(std::string name, int marker, int n, std::uint64_t seed) {
  EncodedDataset d{std::move(name), test::random_pairs(n, 16, seed)};
  for (auto& p : d.pairs) p.src[0] = marker;
  return d;
}

grad::ParamStore scalar_store(float encoder, float decoder) {
  grad::ParamStore p;
  p.insert("encoder.w", grad::Tensor::scalar(encoder));
  p.insert("decoder.w", grad::Tensor::scalar(decoder));
  return p;
}

grad::GradMap scalar_grads(float encoder, float decoder) {
  grad::GradMap g;
  g.emplace("encoder.w", grad::Tensor::scalar(encoder));
  g.emplace("decoder.w", grad::Tensor::scalar(decoder));
  return g;
}

OptimizerConfig plain_adam(double lr) {
  OptimizerConfig c;
  c.learning_rate = lr;
  c.weight_decay = 0.0;
  return c;
}

double eval_loss(const grad::ParamStore& params, const model::ModelConfig& cfg, std::span<const model::SeqPair> batch) {
  grad::Graph g(params, {false, 0, {}});
  return g.value(model::build_loss(g, cfg, batch, 0.0)).values[0];
}

DuelConfig small_duel() {
  DuelConfig c;
  c.optimizer = plain_adam(1e-3);
  c.batch_size = 4;
  c.outer_rounds = 2;
  c.inner_steps = 12;
  c.eval_every = 4;
  c.patience = 100;
  c.min_theta_steps = 0;
  return c;
}

}  // namespace

TEST_CASE("adam matches a hand computation on a scalar") {
  auto p = scalar_store(1.0f, 0.0f);
  auto st = make_optimizer(plain_adam(0.1));
  const double b1 = 0.9, b2 = 0.999, eps = 1e-8, lr = 0.1;
  double x = 1.0, m = 0.0, v = 0.0;
  const double gs[] = {0.5, -0.2, 0.05};
  for (int t = 1; t <= 3; ++t) {
    const double g = gs[t - 1];
    m = b1 * m + (1 - b1) * g;
    v = b2 * v + (1 - b2) * g * g;
    x -= lr * (m / (1 - std::pow(b1, t))) / (std::sqrt(v / (1 - std::pow(b2, t))) + eps);
    adam_step(p, scalar_grads(static_cast<float>(g), 0.0f), st, Block::theta);
    CHECK(std::abs(p.at("encoder.w").values[0] - x) < 1e-7);
  }
  CHECK(st.step == 3);
  CHECK(st.parameter_steps.at("encoder.w") == 3);
  CHECK(st.parameter_steps.count("decoder.w") == 0);
}

TEST_CASE("decoupled weight decay and zero gradients") {
  auto p = scalar_store(2.0f, -3.0f);
  auto st = make_optimizer(plain_adam(0.01));
  adam_step(p, scalar_grads(0.0f, 0.0f), st, Block::all);
  CHECK(p == scalar_store(2.0f, -3.0f));

  OptimizerConfig decay = plain_adam(0.01);
  decay.weight_decay = 0.1;
  auto st2 = make_optimizer(decay);
  adam_step(p, scalar_grads(0.0f, 0.0f), st2, Block::all);
  CHECK(p.at("encoder.w").values[0] == doctest::Approx(2.0 * (1 - 0.001)).epsilon(1e-7));
  CHECK(p.at("decoder.w").values[0] == doctest::Approx(-3.0 * (1 - 0.001)).epsilon(1e-7));

  OptimizerConfig sgd = plain_adam(0.5);
  sgd.kind = OptimizerKind::sgd;
  auto st3 = make_optimizer(sgd);
  auto q = scalar_store(1.0f, 1.0f);
  optimizer_step(q, scalar_grads(0.25f, -1.0f), st3, Block::all);
  CHECK(q == scalar_store(0.875f, 1.5f));
}

TEST_CASE("optimizer restrictions and misuse") {
  auto p = scalar_store(1.0f, 1.0f);
  auto st = make_optimizer(plain_adam(0.1));
  grad::GradMap only_phi;
  only_phi.emplace("decoder.w", grad::Tensor::scalar(1.0f));
  CHECK_THROWS_AS(adam_step(p, only_phi, st, Block::theta), UsageError);
  grad::GradMap bad_shape = scalar_grads(1.0f, 1.0f);
  bad_shape.at("encoder.w") = grad::Tensor::zeros({2});
  CHECK_THROWS_AS(adam_step(p, bad_shape, st, Block::all), UsageError);

  const auto cfg = test::tiny_config(16);
  auto params = model::init_model(cfg, 1);
  const auto phi = model::block_hash(params, Block::phi);
  const auto theta = model::block_hash(params, Block::theta);
  const auto batch = test::random_pairs(4, 16, 2);
  auto adam = make_optimizer(plain_adam(1e-2));
  adam_step(params, compute_gradients(params, cfg, batch, Block::theta, 0.0), adam, Block::theta);
  CHECK(model::block_hash(params, Block::phi) == phi);
  CHECK(model::block_hash(params, Block::theta) != theta);
  adam_step(params, compute_gradients(params, cfg, batch, Block::all, 0.0), adam, Block::all);
  CHECK(adam.parameter_steps.at("encoder.tok_embed") == 2);
  CHECK(adam.parameter_steps.at("decoder.out_bias") == 1);

  CHECK_THROWS_AS(plain_adam(-1.0).validate(), ConfigError);
  CHECK(parse_optimizer_kind("sgd") == OptimizerKind::sgd);
}

TEST_CASE("a small gradient step lowers the loss") {
  auto cfg = test::tiny_config(16);
  auto params = model::init_model(cfg, 4);
  const auto batch = test::random_pairs(8, 16, 5);
  const double before = eval_loss(params, cfg, batch);
  OptimizerConfig sgd = plain_adam(1e-2);
  sgd.kind = OptimizerKind::sgd;
  auto st = make_optimizer(sgd);
  optimizer_step(params, compute_gradients(params, cfg, batch, Block::all, 0.0), st, Block::all);
  CHECK(eval_loss(params, cfg, batch) < before);
}

TEST_CASE("early stopping patience") {
  const auto trace = [](int patience, std::vector<double> accs) {
    EarlyStopMonitor m{patience};
    std::vector<bool> out;
    for (double a : accs) out.push_back(accuracy_decreases(m, a));
    return out;
  };
  CHECK(trace(1, {0.5, 0.6}) == std::vector<bool>{false, false});
  CHECK(trace(1, {0.5, 0.5, 0.5}) == std::vector<bool>{false, false, true});
  CHECK(trace(1, {0.0}) == std::vector<bool>{false});
  CHECK(trace(1, {0.5, 0.4, 0.6, 0.6, 0.6}) == std::vector<bool>{false, false, false, false, true});
  CHECK(trace(5, {0.9, 0.8, 0.8, 0.8, 0.8, 0.8, 0.8}) ==
        std::vector<bool>{false, false, false, false, false, false, true});
}

TEST_CASE("duel with zero outer rounds is the identity") {
  const auto cfg = test::tiny_config(16);
  auto params = model::init_model(cfg, 2);
  const auto before = params;
  auto duel = small_duel();
  duel.outer_rounds = 0;
  const auto r = duel_prefinetune(params, cfg, marked("s", 4, 10, 1), marked("s~", 5, 10, 2), duel, 1);
  CHECK(params == before);
  CHECK(r.loops.empty());
  CHECK(r.theta_updates + r.phi_updates == 0);
}

TEST_CASE("duel loops update one block, train on their own set, monitor the other") {
  const auto cfg = test::tiny_config(16);
  auto params = model::init_model(cfg, 3);
  const auto s = marked("s", 4, 20, 1), st = marked("s~", 5, 20, 2);
  auto theta = model::block_hash(params, Block::theta);
  auto phi = model::block_hash(params, Block::phi);
  int phi_steps = 0, theta_steps = 0;
  const auto observer = [&](const StepInfo& info) {
    const auto t = model::block_hash(*info.params, Block::theta);
    const auto f = model::block_hash(*info.params, Block::phi);
    const int marker = info.loop == "phi" ? 4 : 5;
    for (const auto& p : info.batch) CHECK(p.src[0] == marker);
    if (info.loop == "phi") {
      CHECK(info.block == Block::phi);
      CHECK(t == theta);
      ++phi_steps;
    } else {
      CHECK(info.loop == "theta");
      CHECK(info.block == Block::theta);
      CHECK(f == phi);
      ++theta_steps;
    }
    theta = t;
    phi = f;
  };
  const auto r = duel_prefinetune(params, cfg, s, st, small_duel(), 7, observer);
  REQUIRE(r.loops.size() == 4);
  CHECK(r.loops[0].loop == "phi");
  CHECK(r.loops[1].loop == "theta");
  for (const auto& l : r.loops) {
    CHECK(l.train_set == (l.loop == "phi" ? "s" : "s~"));
    CHECK(l.monitor_set == (l.loop == "phi" ? "s~" : "s"));
    CHECK(l.steps <= 12);
  }
  for (const auto& e : r.events) CHECK(e.dataset == (e.loop == "phi" ? "s~" : "s"));
  CHECK(r.phi_updates == phi_steps);
  CHECK(r.theta_updates == theta_steps);
  CHECK(phi_steps == 24);
  CHECK(r.outer_stop == StopReason::step_cap);
}

TEST_CASE("duel termination: patience, minimum theta steps, and the step bound") {
  const auto cfg = test::tiny_config(16);
  const auto s = marked("s", 4, 20, 1), st = marked("s~", 5, 20, 2);

  auto duel = small_duel();
  duel.eval_every = 1;
  duel.patience = 1;
  duel.outer_rounds = 3;
  auto params = model::init_model(cfg, 5);
  const auto r = duel_prefinetune(params, cfg, s, st, duel, 1);
  std::int64_t total = 0;
  for (const auto& l : r.loops) {
    total += l.steps;
    // Evaluations happen every step, so patience ends a loop after at least
    // patience + 1 evaluations.
    if (l.stop == StopReason::patience) CHECK(l.steps >= 3);
  }
  CHECK(r.loops.size() <= 6);
  CHECK(total == r.theta_updates + r.phi_updates);
  CHECK(total <= 3 * 2 * duel.inner_steps);

  duel.patience = 100;
  duel.min_theta_steps = duel.inner_steps + 1;
  params = model::init_model(cfg, 5);
  const auto short_run = duel_prefinetune(params, cfg, s, st, duel, 1);
  CHECK(short_run.loops.size() == 2);
  CHECK(short_run.outer_stop == StopReason::min_steps);

  duel.min_theta_steps.reset();
  duel.inner_steps = 3000;
  CHECK(duel.t_min() == 100);
  duel.inner_steps = 30;
  CHECK(duel.t_min() == 50);
}

TEST_CASE("duel and merged are seeded") {
  const auto cfg = test::tiny_config(16);
  const auto s = marked("s", 4, 20, 1), st = marked("s~", 5, 20, 2);
  const auto run = [&](std::uint64_t seed) {
    auto p = model::init_model(cfg, 1);
    duel_prefinetune(p, cfg, s, st, small_duel(), seed);
    return p;
  };
  CHECK(run(3) == run(3));
  CHECK_FALSE(run(3) == run(4));
  const auto merged = [&](std::uint64_t seed) {
    auto p = model::init_model(cfg, 1);
    merged_prefinetune(p, cfg, s, st, 10, small_duel(), seed);
    return p;
  };
  CHECK(merged(3) == merged(3));
}

TEST_CASE("merged training samples the union uniformly") {
  const auto cfg = test::tiny_config(16);
  auto params = model::init_model(cfg, 6);
  const auto before = params;
  const auto s = marked("s", 4, 100, 1), st = marked("s~", 5, 300, 2);
  auto duel = small_duel();
  duel.batch_size = 32;
  CHECK(merged_prefinetune(params, cfg, s, st, 0, duel, 1).loops.empty());
  CHECK(params == before);

  long from_s = 0, total = 0;
  const auto r = merged_prefinetune(params, cfg, s, st, 50, duel, 1, [&](const StepInfo& info) {
    CHECK(info.block == Block::all);
    for (const auto& p : info.batch) from_s += p.src[0] == 4;
    total += static_cast<long>(info.batch.size());
  });
  CHECK(total == 1600);
  const double frac = static_cast<double>(from_s) / total;
  CHECK(std::abs(frac - 0.25) < 3 * std::sqrt(0.25 * 0.75 / total));
  CHECK(r.theta_updates == 50);
  CHECK(r.phi_updates == 50);
  CHECK_THROWS_AS(merged_prefinetune(params, cfg, s, st, -1, duel, 1), ConfigError);
}

TEST_CASE("finetune: head reinit, fixed budget, best-dev restore") {
  const auto cfg = test::tiny_config(16);
  const auto t = marked("t", 6, 30, 3);
  const auto dev = marked("dev", 6, 10, 4);
  FinetuneConfig ft;
  ft.optimizer = plain_adam(1e-2);
  ft.batch_size = 4;
  ft.steps = 0;
  ft.reinit_head = true;

  auto params = model::init_model(cfg, 7);
  const auto theta = model::block_hash(params, Block::theta);
  const auto phi = model::block_hash(params, Block::phi);
  finetune(params, cfg, t, nullptr, ft, 1);
  CHECK(model::block_hash(params, Block::theta) == theta);
  CHECK(model::block_hash(params, Block::phi) != phi);

  ft.steps = 25;
  ft.eval_every = 10;
  ft.reinit_head = false;
  params = model::init_model(cfg, 7);
  const auto r = finetune(params, cfg, t, nullptr, ft, 1);
  REQUIRE(r.loops.size() == 1);
  CHECK(r.loops[0].steps == 25);
  CHECK(r.loops[0].stop == StopReason::step_budget);
  CHECK(r.events.size() == 3);

  ft.steps = 60;
  ft.eval_every = 5;
  ft.patience = 2;
  params = model::init_model(cfg, 7);
  const auto with_dev = finetune(params, cfg, t, &dev, ft, 1);
  double best = 0.0;
  for (const auto& e : with_dev.events) best = std::max(best, e.accuracy);
  CHECK(eval::exact_match_ids(params, cfg, dev.pairs) == doctest::Approx(best));
}
