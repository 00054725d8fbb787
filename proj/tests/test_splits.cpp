#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "duel/data/mini_scan.hpp"
#include "duel/error.hpp"
#include "duel/splits/compounds.hpp"
#include "duel/splits/split.hpp"
#include "helpers.hpp"

using namespace duel;
using namespace duel::splits;

namespace {

data::Dataset scan_sample(std::size_t n, std::uint64_t seed) {
  data::MiniScanConfig cfg;
  cfg.max_examples = n;
  return data::generate_mini_scan(cfg, seed);
}

// Ten examples whose outputs are "A B" or "B A": putting every "A B" on one
// side makes the compound sets disjoint while both atoms stay covered.
data::Dataset two_order_dataset() {
  data::Dataset d{"orders", {}};
  for (int i = 0; i < 10; ++i) d.examples.push_back({"x" + std::to_string(i), i % 2 ? "B A" : "A B", std::nullopt});
  return d;
}

}  // namespace

TEST_CASE("chernoff coefficient") {
  const FrequencyMap half{{"a", 0.5}, {"b", 0.5}};
  const FrequencyMap only_a{{"a", 1.0}};
  const double c = chernoff_coefficient(half, only_a, 0.1);
  CHECK(c == doctest::Approx(std::pow(0.5, 0.1)).epsilon(1e-12));
  CHECK(c == doctest::Approx(0.93303).epsilon(1e-5));
  CHECK(1.0 - c == doctest::Approx(0.06697).epsilon(1e-4));
  CHECK(chernoff_coefficient(half, half, 0.1) == doctest::Approx(1.0));
  CHECK(chernoff_coefficient(only_a, {{"b", 1.0}}, 0.1) == 0.0);
  CHECK_THROWS_AS(chernoff_coefficient({{"a", 0.5}}, half, 0.1), InputError);
  CHECK_THROWS_AS(DivergenceConfig{1.0}.validate(), ConfigError);
  CHECK_THROWS_AS(DivergenceConfig{0.0}.validate(), ConfigError);
}

TEST_CASE("compound divergence bounds") {
  const auto a = test::make_dataset("a", {{"x", "A B"}, {"y", "B C"}});
  const auto b = test::make_dataset("b", {{"z", "C D"}});
  const ExtractorConfig ex;
  CHECK(compound_divergence(extract_profile(a, ex), extract_profile(a, ex)) == doctest::Approx(0.0));
  CHECK(compound_divergence(extract_profile(a, ex), extract_profile(b, ex)) == doctest::Approx(1.0));
  const auto atom_only = test::make_dataset("c", {{"x", "LOOK"}});
  CHECK_THROWS_AS(compound_divergence(extract_profile(a, ex), extract_profile(atom_only, ex)), InputError);
}

TEST_CASE("bracket-tree compounds") {
  const auto u = extract_units({"q", "answer(intersection(state, next_to_2(m0)))", std::nullopt}, {});
  CHECK(u.atoms == std::vector<std::string>{"answer", "intersection", "state", "next_to_2", "m0"});
  auto compounds = u.compounds;
  std::sort(compounds.begin(), compounds.end());
  CHECK(compounds ==
        std::vector<std::string>{"answer->intersection", "intersection->next_to_2", "intersection->state", "next_to_2->m0"});

  const auto look = extract_units({"look", "LOOK", std::nullopt}, {});
  CHECK(look.atoms == std::vector<std::string>{"LOOK"});
  CHECK(look.compounds.empty());

  const auto bigrams = extract_units({"jump left", "LTURN JUMP", std::nullopt}, {CompoundRule::automatic, true, true});
  CHECK(bigrams.compounds == std::vector<std::string>{"LTURN JUMP", "in:jump left"});

  const data::Example broken{"q", "f(a, b", std::nullopt};
  CHECK(extract_units(broken, {}).compounds == std::vector<std::string>{"f(a, b"});
  CHECK_THROWS_AS(extract_units(broken, {CompoundRule::bracket_tree, false, false}), InputError);
}

TEST_CASE("duplicating a dataset leaves frequencies unchanged") {
  const auto d = scan_sample(200, 3);
  auto twice = d;
  twice.examples.insert(twice.examples.end(), d.examples.begin(), d.examples.end());
  const auto p1 = extract_profile(d, {}), p2 = extract_profile(twice, {});
  const auto f1 = p1.compound_frequencies(), f2 = p2.compound_frequencies();
  REQUIRE(f1.size() == f2.size());
  for (const auto& [k, v] : f1) CHECK(f2.at(k) == doctest::Approx(v).epsilon(1e-12));
  double total = 0.0;
  for (const auto& [k, v] : p1.atom_frequencies()) total += v;
  CHECK(total == doctest::Approx(1.0));
}

TEST_CASE("train_count rounding and bounds") {
  CHECK(train_count(1000, 0.8) == 800);
  CHECK(train_count(880, 0.5) == 440);
  CHECK(train_count(3, 0.01) == 1);
  CHECK(train_count(3, 0.99) == 2);
  CHECK_THROWS_AS(train_count(1, 0.5), InputError);
  CHECK_THROWS_AS(train_count(10, 1.0), InputError);
}

TEST_CASE("length split puts short inputs in train") {
  const auto d = scan_sample(880, 4);
  const auto s = length_split(d, 0.5);
  CHECK(s.train.size() == 440);
  CHECK(s.test.size() == 440);
  CHECK(s.metrics.train_mean_input_length <= s.metrics.test_mean_input_length);
  std::size_t test_min = 1000;
  for (const auto& ex : s.test.examples) test_min = std::min(test_min, data::tokens(ex.input).size());
  CHECK(static_cast<std::size_t>(s.metrics.train_max_input_length) <= test_min);
}

TEST_CASE("standard split is seeded and has lower divergence than mcd") {
  const auto d = scan_sample(600, 5);
  const auto a = standard_split(d, 0.8, 1);
  CHECK(a.train_indices == standard_split(d, 0.8, 1).train_indices);
  CHECK(a.train_indices != standard_split(d, 0.8, 2).train_indices);
  CHECK(a.train.size() == 480);

  McdConfig cfg;
  cfg.train_size = 480;
  cfg.test_size = 120;
  cfg.iterations = 20000;
  const auto m = mcd_split_search(d, cfg, 1);
  REQUIRE(a.metrics.compound_divergence);
  REQUIRE(m.metrics.compound_divergence);
  CHECK(*a.metrics.compound_divergence < *m.metrics.compound_divergence);
}

TEST_CASE("mcd: zero iterations keep the initial split") {
  const auto d = scan_sample(200, 6);
  McdConfig cfg;
  cfg.train_size = 150;
  cfg.test_size = 50;
  cfg.iterations = 0;
  const auto s = mcd_split_search(d, cfg, 3);
  CHECK(s.trace.empty());
  CHECK(s.train.size() == 150);
  CHECK(*s.metrics.compound_divergence == doctest::Approx(split_divergence(d, s.train_indices, s.test_indices)));
  CHECK(s.train_indices == mcd_split_search(d, cfg, 3).train_indices);
}

TEST_CASE("mcd: trace strictly increases and coverage holds") {
  const auto d = scan_sample(880, 7);
  McdConfig cfg;
  cfg.train_size = 440;
  cfg.test_size = 440;
  cfg.iterations = 5000;
  const auto s = mcd_split_search(d, cfg, 2);
  CHECK(s.train.size() == 440);
  CHECK(s.test.size() == 440);
  REQUIRE_FALSE(s.trace.empty());
  for (std::size_t i = 1; i < s.trace.size(); ++i) CHECK(s.trace[i] > s.trace[i - 1]);
  CHECK(*s.metrics.compound_divergence == doctest::Approx(s.trace.back()));
  CHECK(atoms_covered(d, s.train_indices, s.test_indices));
  CHECK(s.metrics.atom_coverage == 1.0);
}

TEST_CASE("mcd reaches the optimum on a small instance and never beats brute force") {
  const auto d = two_order_dataset();
  McdConfig cfg;
  cfg.train_size = 5;
  cfg.test_size = 5;
  cfg.iterations = 500;
  const auto s = mcd_split_search(d, cfg, 1);
  CHECK(*s.metrics.compound_divergence == doctest::Approx(1.0));

  // Exhaustive search on an eight-example mini-SCAN sample.
  const auto small = scan_sample(8, 9);
  double best = 0.0;
  for (unsigned mask = 0; mask < 256; ++mask) {
    if (__builtin_popcount(mask) != 4) continue;
    std::vector<std::size_t> tr, te;
    for (std::size_t i = 0; i < 8; ++i) (mask >> i & 1 ? tr : te).push_back(i);
    if (!atoms_covered(small, tr, te)) continue;
    best = std::max(best, split_divergence(small, tr, te));
  }
  cfg.train_size = 4;
  cfg.test_size = 4;
  cfg.iterations = 2000;
  cfg.restarts = 3;
  REQUIRE(best > 0.0);
  const auto m = mcd_split_search(small, cfg, 1);
  CHECK(*m.metrics.compound_divergence <= best + 1e-12);
  CHECK(atoms_covered(small, m.train_indices, m.test_indices));
}

TEST_CASE("mcd: infeasible coverage names the atoms; bad sizes are rejected") {
  const auto d = test::make_dataset("u", {{"a", "X Q"}, {"b", "Y Q"}, {"c", "Z Q"}});
  McdConfig cfg;
  cfg.train_size = 1;
  cfg.test_size = 2;
  try {
    mcd_split_search(d, cfg, 1);
    FAIL("expected InputError");
  } catch (const InputError& e) {
    const std::string msg = e.what();
    const int named = (msg.find('X') != std::string::npos) + (msg.find('Y') != std::string::npos) +
                      (msg.find('Z') != std::string::npos);
    CHECK(named >= 2);
  }
  cfg.test_size = 1;
  CHECK_THROWS_AS(mcd_split_search(d, cfg, 1), InputError);
}

TEST_CASE("make_split requires a partition") {
  const auto d = scan_sample(10, 1);
  CHECK_THROWS_AS(make_split(d, {0, 1, 2}, {2, 3, 4, 5, 6, 7, 8, 9}, SplitKind::standard, 0), InputError);
  CHECK_THROWS_AS(make_split(d, {0, 1}, {2, 3}, SplitKind::standard, 0), InputError);
  const auto s = make_split(d, {9, 0}, {1, 2, 3, 4, 5, 6, 7, 8}, SplitKind::standard, 0);
  CHECK(s.train_indices == std::vector<std::size_t>{0, 9});
}

TEST_CASE("manifest round trip") {
  const auto d = scan_sample(300, 2);
  McdConfig cfg;
  cfg.train_size = 200;
  cfg.test_size = 100;
  cfg.iterations = 1000;
  const auto s = mcd_split_search(d, cfg, 4);
  const auto m = parse_manifest(to_manifest(s, "scan"));
  CHECK(m.kind == SplitKind::mcd);
  CHECK(m.seed == 4);
  CHECK(m.source == "scan");
  CHECK(m.train_indices == s.train_indices);
  CHECK(m.test_indices == s.test_indices);
  const auto back = apply_manifest(d, m);
  CHECK(back.train == s.train);
  CHECK(back.test == s.test);

  const auto dir = test::scratch_dir("manifest");
  save_manifest(dir / "m.txt", s, "scan");
  CHECK(load_manifest(dir / "m.txt").test_indices == s.test_indices);
  CHECK_THROWS_AS(parse_manifest("kind = mcd\n"), ConfigError);
  CHECK(parse_split_kind("length") == SplitKind::length);
  CHECK_THROWS_AS(parse_split_kind("random"), ConfigError);
}

TEST_CASE("mcd finds a covered split whenever one exists") {
  std::mt19937_64 rng(21);
  std::uniform_int_distribution<int> letter(0, 6), len(2, 3);
  int feasible = 0, infeasible = 0;
  for (int trial = 0; trial < 300; ++trial) {
    data::Dataset d{"r", {}};
    for (int i = 0; i < 8; ++i) {
      std::string out;
      for (int k = len(rng); k > 0; --k) out += std::string(out.empty() ? "" : " ") + static_cast<char>('A' + letter(rng));
      d.examples.push_back({"x" + std::to_string(i), out, std::nullopt});
    }
    bool exists = false;
    for (unsigned mask = 0; mask < 256 && !exists; ++mask) {
      if (__builtin_popcount(mask) != 3) continue;
      std::vector<std::size_t> tr, te;
      for (std::size_t i = 0; i < 8; ++i) (mask >> i & 1 ? tr : te).push_back(i);
      exists = atoms_covered(d, tr, te);
    }
    McdConfig cfg;
    cfg.train_size = 3;
    cfg.test_size = 5;
    cfg.iterations = 0;
    bool found = true;
    try {
      mcd_split_search(d, cfg, static_cast<std::uint64_t>(trial));
    } catch (const InputError&) {
      found = false;
    }
    CHECK(found == exists);
    (exists ? feasible : infeasible) += 1;
  }
  CHECK(feasible > 10);
  CHECK(infeasible > 10);
}
