#include <doctest.h>

#include <cmath>
#include <fstream>
#include <sstream>

#include "duel/error.hpp"
#include "duel/experiment/config.hpp"
#include "duel/experiment/runner.hpp"
#include "helpers.hpp"

using namespace duel;
using namespace duel::experiment;

namespace {

std::string tiny_config_text(const std::string& method, const std::string& output_dir) {
  return "[experiment]\n"
         "name = tiny\n"
         "method = " + method + "\n"
         "seeds = 1\n"
         "output_dir = " + output_dir + "\n"
         "\n[model]\nembed_dim = 8\nnum_heads = 2\nencoder_layers = 1\ndecoder_layers = 1\n"
         "ffn_dim = 16\nmax_src_len = 24\nmax_tgt_len = 50\n"
         "\n[target]\nname = scan\nmax_examples = 60\nsplit = length\n"
         "\n[source]\nname = scan_var\nmax_examples = 60\ngenerator_seed = 2\nlexicon = synthetic\n"
         "split = standard\ntag = scan\n"
         "\n[duel]\nouter_rounds = 1\ninner_steps = 6\neval_every = 3\nbatch_size = 4\n"
         "\n[merged]\nsteps = 6\n"
         "\n[finetune]\nsteps = 6\nbatch_size = 4\neval_every = 3\nreinit_head = false\n";
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

RunReport fake_report(Method method, std::string source, std::vector<double> accuracies,
                      std::string target_spec = "spec") {
  RunReport r;
  r.name = method_name(method);
  r.method = method;
  r.target_spec = std::move(target_spec);
  r.target_label = "scan/length";
  r.source_label = std::move(source);
  std::uint64_t seed = 1;
  for (double a : accuracies) {
    SeedResult s;
    s.seed = seed++;
    s.ok = true;
    s.eval.total = 1000;
    s.eval.correct = static_cast<std::size_t>(std::lround(a * 1000));
    s.eval.accuracy = a;
    r.seeds.push_back(s);
  }
  return r;
}

}  // namespace

TEST_CASE("experiment config parsing, overrides, and round trip") {
  const auto cfg = parse_experiment_config(tiny_config_text("duel", "out"), {});
  CHECK(cfg.method == Method::duel);
  CHECK(cfg.model.embed_dim == 8);
  REQUIRE(cfg.sources.size() == 1);
  CHECK(cfg.sources[0].lexicon == "synthetic");
  CHECK(cfg.sources[0].prompt_tag() == "scan");
  CHECK(cfg.target.prompt_tag() == "scan");
  CHECK(cfg.duel.inner_steps == 6);
  CHECK(parse_experiment_config(to_text(cfg), {}) == cfg);

  const auto over = parse_experiment_config(tiny_config_text("duel", "out"),
                                            {{"duel.inner_steps", "9"}, {"source.split", "mcd"}, {"eval.max_len", "12"}});
  CHECK(over.duel.inner_steps == 9);
  CHECK(over.sources[0].split == splits::SplitKind::mcd);
  CHECK(over.eval_max_len == 12);

  CHECK_THROWS_AS(parse_experiment_config(tiny_config_text("duel", "out"), {{"duel.bogus", "1"}}), ConfigError);
  CHECK_THROWS_AS(parse_experiment_config(tiny_config_text("duel", "out") + "\n[nonsense]\nx = 1\n", {}), ConfigError);
  CHECK_THROWS_AS(parse_experiment_config(tiny_config_text("duel", "out") + "\n[merged]\nsteps = 7\n", {}),
                  ConfigError);
  CHECK_THROWS_AS(parse_experiment_config(tiny_config_text("sideways", "out"), {}), ConfigError);
  CHECK_THROWS_AS(load_experiment_config("/nonexistent/experiment.ini", {}), ConfigError);
  CHECK(parse_method("Merged") == Method::merged);
  CHECK(method_name(Method::none) == "NONE");

  // A source is required for the two pre-finetuning methods only.
  std::string no_source = tiny_config_text("merged", "out");
  no_source.erase(no_source.find("[source]"), no_source.find("[duel]") - no_source.find("[source]"));
  CHECK_THROWS_AS(parse_experiment_config(no_source, {}), ConfigError);
  CHECK_NOTHROW(parse_experiment_config(no_source, {{"experiment.method", "none"}}));
}

TEST_CASE("NONE runs have no pre-finetuning stage") {
  const auto dir = test::scratch_dir("exp_none");
  const auto cfg = parse_experiment_config(tiny_config_text("none", dir.string()), {});
  const auto report = run_experiment(cfg);
  REQUIRE(report.seeds.size() == 1);
  CHECK(report.seeds[0].ok);
  CHECK_FALSE(report.seeds[0].prefinetune);
  CHECK(report.seeds[0].finetune);
  CHECK(report.source_label == "-");
  CHECK(report.target.train_size + report.target.test_size == 60);
  CHECK_FALSE(std::filesystem::exists(dir / "tiny" / "seed1" / "prefinetune.ckpt"));
  CHECK(std::filesystem::exists(dir / "tiny" / "seed1" / "finetune.ckpt"));
  CHECK(std::filesystem::exists(dir / "tiny" / "report.txt"));

  const auto table = report_table({report});
  CHECK(table.find("NONE") != std::string::npos);
  CHECK(table.find("(+") == std::string::npos);
}

TEST_CASE("DUEL runs resume bit-exactly from the pre-finetuning checkpoint") {
  const auto dir = test::scratch_dir("exp_duel");
  auto cfg = parse_experiment_config(tiny_config_text("duel", dir.string()), {});
  const auto first = run_experiment(cfg);
  REQUIRE(first.seeds.size() == 1);
  REQUIRE(first.seeds[0].ok);
  REQUIRE(first.seeds[0].prefinetune);
  CHECK(first.seeds[0].prefinetune->phi_updates > 0);
  CHECK(first.source_label.find("scan_var") != std::string::npos);
  const auto seed_dir = dir / "tiny" / "seed1";
  const auto ckpt = slurp(seed_dir / "finetune.ckpt");
  const auto preds = slurp(seed_dir / "predictions.tsv");

  cfg.resume = true;
  const auto second = run_experiment(cfg);
  REQUIRE(second.seeds[0].ok);
  CHECK(second.seeds[0].resumed);
  CHECK_FALSE(second.seeds[0].prefinetune);
  CHECK(second.seeds[0].eval == first.seeds[0].eval);
  CHECK(slurp(seed_dir / "finetune.ckpt") == ckpt);
  CHECK(slurp(seed_dir / "predictions.tsv") == preds);

  const auto back = parse_run_report(to_text(second));
  CHECK(back.method == Method::duel);
  CHECK(back.target_spec == second.target_spec);
  CHECK(back.source_label == second.source_label);
  REQUIRE(back.seeds.size() == 1);
  CHECK(back.seeds[0].resumed);
  CHECK(back.seeds[0].eval.accuracy == second.seeds[0].eval.accuracy);
}

TEST_CASE("run report statistics and table") {
  const auto merged = fake_report(Method::merged, "scan_var/mcd", {0.30, 0.32, 0.28});
  const auto duel = fake_report(Method::duel, "scan_var/mcd", {0.359, 0.379, 0.339});
  CHECK(merged.mean_accuracy() == doctest::Approx(0.30));
  CHECK(merged.stddev_accuracy() == doctest::Approx(0.02));
  CHECK(fake_report(Method::none, "-", {0.5}).stddev_accuracy() == 0.0);

  const auto table = report_table({merged, duel});
  CHECK(table.find("(+5.9)") != std::string::npos);
  CHECK(table.find("30.0 ± 2.0") != std::string::npos);

  auto failed = duel;
  failed.seeds[1].ok = false;
  failed.seeds[1].error = "boom";
  CHECK(failed.failures() == 1);
  CHECK(failed.mean_accuracy() == doctest::Approx(0.349));
  CHECK(report_table({failed}).find("[1 failed]") != std::string::npos);

  CHECK_THROWS_AS(report_table({}), UsageError);
  CHECK_THROWS_AS(report_table({merged, fake_report(Method::none, "-", {0.1}, "other")}), UsageError);

  CHECK(format_delta(5.94) == "+5.9");
  CHECK(format_delta(-0.01) == "+0.0");
  CHECK(format_delta(-2.26) == "-2.3");
}
