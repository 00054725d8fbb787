// Command-line front end: generate, split, train, eval, report.
#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "duel/data/dataset.hpp"
#include "duel/data/lexicon.hpp"
#include "duel/data/mini_scan.hpp"
#include "duel/data/vocab.hpp"
#include "duel/error.hpp"
#include "duel/eval/exact_match.hpp"
#include "duel/experiment/config.hpp"
#include "duel/experiment/runner.hpp"
#include "duel/grad/checkpoint.hpp"
#include "duel/splits/split.hpp"
#include "duel/util/kv.hpp"

namespace {

namespace fs = std::filesystem;
using namespace duel;

constexpr int kConfigError = 1;
constexpr int kRuntimeError = 2;

void emit(const std::string& text, const std::string& path) {
  if (path.empty() || path == "-") {
    std::cout << text;
  } else {
    util::write_file(path, text);
  }
}

struct GenerateScanArgs {
  std::string out;
  std::string name = "scan";
  std::vector<std::string> primitives;
  std::size_t max_examples = 0;
  std::uint64_t seed = 1;
  bool no_turn = false, no_directions = false, no_opposite = false, no_around = false, no_repetition = false,
       no_conjunctions = false;
};

struct GenerateVariantArgs {
  std::string in, out, lexicon, name, mapping_out;
  std::uint64_t seed = 1;
};

struct GenerateLexiconArgs {
  std::vector<std::string> sources;
  int alternatives = 5;
  std::uint64_t seed = 1;
  std::string out;
};

struct SplitArgs {
  std::string in, kind = "standard", out, train_out, test_out, rule = "automatic";
  double train_fraction = 0.8;
  std::uint64_t seed = 1;
  std::size_t iterations = 20000;
  int restarts = 1;
  bool input_bigrams = false;
};

struct TrainArgs {
  std::string config;
  std::vector<std::string> sets;
  std::string method, seeds, output_dir;
  bool resume = false;
  int jobs = 0;
  bool quiet = false;
};

struct EvalArgs {
  std::string run_dir, checkpoint, vocab, model, data, prompt, out, predictions;
  int max_len = 0;
};

struct ReportArgs {
  std::vector<std::string> reports;
  std::string out;
};

int run_generate_scan(const GenerateScanArgs& a) {
  data::MiniScanConfig cfg;
  if (!a.primitives.empty()) cfg.primitives = a.primitives;
  cfg.turn = !a.no_turn;
  cfg.directions = !a.no_directions;
  cfg.opposite = !a.no_opposite;
  cfg.around = !a.no_around;
  cfg.repetition = !a.no_repetition;
  cfg.conjunctions = !a.no_conjunctions;
  cfg.max_examples = a.max_examples;
  const auto ds = data::generate_mini_scan(cfg, a.seed, a.name);
  emit(data::to_tsv(ds), a.out);
  std::cerr << "generated " << ds.size() << " examples\n";
  return 0;
}

int run_generate_variant(const GenerateVariantArgs& a) {
  const auto ds = data::load_tsv(a.in);
  const auto lexicon = data::LexiconTable::load(a.lexicon);
  const auto variant = data::make_lexical_variant(ds, lexicon, a.seed, a.name.empty() ? ds.name + "_var" : a.name);
  emit(data::to_tsv(variant.dataset), a.out);
  if (!a.mapping_out.empty()) {
    std::string text;
    for (const auto& [from, to] : variant.mapping) text += from + "\t" + to + "\n";
    util::write_file(a.mapping_out, text);
  }
  return 0;
}

int run_generate_lexicon(const GenerateLexiconArgs& a) {
  std::map<std::string, data::WordClass> sources;
  for (const auto& item : a.sources) {
    const auto colon = item.find(':');
    const auto word = item.substr(0, colon);
    sources[word] = colon == std::string::npos ? data::WordClass::noun : data::parse_word_class(item.substr(colon + 1));
  }
  emit(data::synthetic_lexicon(sources, a.alternatives, a.seed).to_text(), a.out);
  return 0;
}

int run_split(const SplitArgs& a) {
  const auto ds = data::load_tsv(a.in);
  experiment::DataSpec spec;
  spec.name = ds.name;
  spec.split = splits::parse_split_kind(a.kind);
  spec.train_fraction = a.train_fraction;
  spec.split_seed = a.seed;
  spec.mcd_iterations = a.iterations;
  spec.mcd_restarts = a.restarts;
  spec.extractor.rule = splits::parse_compound_rule(a.rule);
  spec.extractor.input_bigrams = a.input_bigrams;
  const auto pair = experiment::make_split_pair(spec, ds);
  emit(splits::to_manifest(pair, ds.name), a.out);
  if (!a.train_out.empty()) data::save_tsv(a.train_out, pair.train);
  if (!a.test_out.empty()) data::save_tsv(a.test_out, pair.test);
  std::cerr << splits::split_kind_name(pair.kind) << " split: " << pair.train.size() << " train, "
            << pair.test.size() << " test";
  if (pair.metrics.compound_divergence) std::cerr << ", compound divergence " << *pair.metrics.compound_divergence;
  std::cerr << "\n";
  return 0;
}

int run_train(const TrainArgs& a) {
  std::map<std::string, std::string> overrides;
  for (const auto& s : a.sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects section.key=value, got '" + s + "'");
    overrides[util::trim(s.substr(0, eq))] = util::trim(s.substr(eq + 1));
  }
  if (!a.method.empty()) overrides["experiment.method"] = a.method;
  if (!a.seeds.empty()) overrides["experiment.seeds"] = a.seeds;
  if (!a.output_dir.empty()) overrides["experiment.output_dir"] = a.output_dir;
  if (a.resume) overrides["experiment.resume"] = "true";
  if (a.jobs > 0) overrides["experiment.jobs"] = std::to_string(a.jobs);
  const auto cfg = experiment::load_experiment_config(a.config, overrides);
  experiment::RunOptions options;
  if (!a.quiet) options.log = [](std::string_view line) { std::cerr << line << "\n"; };
  const auto report = experiment::run_experiment(cfg, options);
  std::cout << experiment::report_table({report});
  return report.failures() ? kRuntimeError : 0;
}

int run_eval(const EvalArgs& a) {
  std::string checkpoint = a.checkpoint, vocab_path = a.vocab, model_path = a.model;
  if (!a.run_dir.empty()) {
    const fs::path seed_dir(a.run_dir);
    if (checkpoint.empty()) checkpoint = (seed_dir / "finetune.ckpt").string();
    if (vocab_path.empty()) vocab_path = (seed_dir.parent_path() / "vocab.txt").string();
    if (model_path.empty()) model_path = (seed_dir.parent_path() / "model.txt").string();
  }
  for (const auto& [what, path] : {std::pair{"checkpoint", checkpoint}, {"vocabulary", vocab_path},
                                   {"model config", model_path}, {"dataset", a.data}}) {
    if (path.empty()) throw ConfigError(std::string("eval: no ") + what + " given");
    if (!fs::exists(path)) throw ConfigError(std::string("eval: ") + what + " not found: " + path);
  }
  const auto params = grad::load_checkpoint(checkpoint);
  const auto vocab = data::Vocabulary::from_text(util::read_file(vocab_path));
  const auto model = model::ModelConfig::from_text(util::read_file(model_path));
  auto ds = data::load_tsv(a.data);
  if (!a.prompt.empty()) ds = data::apply_prompt(ds, a.prompt);
  std::vector<eval::Prediction> predictions;
  const auto result = eval::exact_match(params, model, vocab, ds, a.max_len, &predictions);
  emit(eval::to_text(result), a.out);
  if (!a.predictions.empty()) util::write_file(a.predictions, eval::predictions_tsv(predictions));
  return 0;
}

int run_report(const ReportArgs& a) {
  std::vector<experiment::RunReport> reports;
  for (const auto& path : a.reports) {
    if (!fs::exists(path)) throw ConfigError("report not found: " + path);
    reports.push_back(experiment::parse_run_report(util::read_file(path)));
  }
  emit(experiment::report_table(reports), a.out);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"DUEL pre-finetuning lab"};
  app.require_subcommand(1);

  auto* generate = app.add_subcommand("generate", "Generate mini-SCAN data, lexical variants, or lexicons");
  generate->require_subcommand(1);

  GenerateScanArgs scan;
  auto* g_scan = generate->add_subcommand("scan", "Enumerate the mini-SCAN grammar");
  g_scan->add_option("-o,--out", scan.out, "Output TSV (default stdout)");
  g_scan->add_option("--name", scan.name, "Dataset name");
  g_scan->add_option("--primitives", scan.primitives, "Primitive verbs");
  g_scan->add_option("--max-examples", scan.max_examples, "Keep a seeded sample of this many (0 = all)");
  g_scan->add_option("--seed", scan.seed, "Sampling seed");
  g_scan->add_flag("--no-turn", scan.no_turn);
  g_scan->add_flag("--no-directions", scan.no_directions);
  g_scan->add_flag("--no-opposite", scan.no_opposite);
  g_scan->add_flag("--no-around", scan.no_around);
  g_scan->add_flag("--no-repetition", scan.no_repetition);
  g_scan->add_flag("--no-conjunctions", scan.no_conjunctions);

  GenerateVariantArgs variant;
  auto* g_variant = generate->add_subcommand("variant", "Apply a 1-to-1 lexical substitution to a dataset");
  g_variant->add_option("-i,--in", variant.in, "Input TSV")->required();
  g_variant->add_option("-l,--lexicon", variant.lexicon, "Lexicon file")->required();
  g_variant->add_option("-o,--out", variant.out, "Output TSV (default stdout)");
  g_variant->add_option("--name", variant.name, "Variant dataset name");
  g_variant->add_option("--mapping-out", variant.mapping_out, "Write the chosen substitution here");
  g_variant->add_option("--seed", variant.seed, "Substitution seed");

  GenerateLexiconArgs lexicon;
  auto* g_lexicon = generate->add_subcommand("lexicon", "Fabricate a pseudo-word lexicon");
  g_lexicon->add_option("sources", lexicon.sources, "word[:class] entries (class propn|noun|verb)")->required();
  g_lexicon->add_option("-n,--alternatives", lexicon.alternatives, "Alternatives per source");
  g_lexicon->add_option("--seed", lexicon.seed, "Lexicon seed");
  g_lexicon->add_option("-o,--out", lexicon.out, "Output file (default stdout)");

  SplitArgs split;
  auto* c_split = app.add_subcommand("split", "Split a dataset and write its manifest");
  c_split->add_option("-i,--in", split.in, "Input TSV")->required();
  c_split->add_option("-k,--kind", split.kind, "standard | length | mcd");
  c_split->add_option("--train-fraction", split.train_fraction);
  c_split->add_option("--seed", split.seed);
  c_split->add_option("--iterations", split.iterations, "MCD swap proposals per restart");
  c_split->add_option("--restarts", split.restarts, "MCD restarts");
  c_split->add_option("--compound-rule", split.rule, "automatic | bracket_tree | output_bigram");
  c_split->add_flag("--input-bigrams", split.input_bigrams, "Count input bigrams as compounds");
  c_split->add_option("-o,--out", split.out, "Manifest file (default stdout)");
  c_split->add_option("--train-out", split.train_out, "Write the train side as TSV");
  c_split->add_option("--test-out", split.test_out, "Write the test side as TSV");

  TrainArgs train;
  auto* c_train = app.add_subcommand("train", "Run an experiment config (pre-finetune, fine-tune, evaluate)");
  c_train->add_option("config", train.config, "Experiment config file")->required();
  c_train->add_option("--set", train.sets, "Override a config key: section.key=value (repeatable)");
  c_train->add_option("--method", train.method, "NONE | MERGED | DUEL");
  c_train->add_option("--seeds", train.seeds, "Seed list, e.g. \"1 2 3\"");
  c_train->add_option("--output-dir", train.output_dir);
  c_train->add_option("--jobs", train.jobs, "Seeds trained concurrently");
  c_train->add_flag("--resume", train.resume, "Reuse persisted pre-finetune checkpoints");
  c_train->add_flag("-q,--quiet", train.quiet);

  EvalArgs ev;
  auto* c_eval = app.add_subcommand("eval", "Exact match of a checkpoint on a dataset");
  c_eval->add_option("--run", ev.run_dir, "Seed directory of a run (supplies checkpoint, vocabulary, model)");
  c_eval->add_option("--checkpoint", ev.checkpoint);
  c_eval->add_option("--vocab", ev.vocab);
  c_eval->add_option("--model", ev.model, "Model config file");
  c_eval->add_option("-d,--data", ev.data, "Dataset TSV")->required();
  c_eval->add_option("--prompt", ev.prompt, "Task tag to prepend to every input");
  c_eval->add_option("--max-len", ev.max_len, "Decode length cap (0 = model cap)");
  c_eval->add_option("-o,--out", ev.out, "Report file (default stdout)");
  c_eval->add_option("--predictions", ev.predictions, "Per-example TSV");

  ReportArgs rep;
  auto* c_report = app.add_subcommand("report", "Tabulate run reports that share a target");
  c_report->add_option("reports", rep.reports, "report.txt files")->required();
  c_report->add_option("-o,--out", rep.out, "Output file (default stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kConfigError;
  }

  try {
    if (g_scan->parsed()) return run_generate_scan(scan);
    if (g_variant->parsed()) return run_generate_variant(variant);
    if (g_lexicon->parsed()) return run_generate_lexicon(lexicon);
    if (c_split->parsed()) return run_split(split);
    if (c_train->parsed()) return run_train(train);
    if (c_eval->parsed()) return run_eval(ev);
    if (c_report->parsed()) return run_report(rep);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfigError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kRuntimeError;
  }
  return 0;
}
