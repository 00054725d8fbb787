#include "duel/experiment/runner.hpp"

#include <algorithm>
#include <array>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <mutex>
#include <sstream>
#include <thread>

#include "duel/data/lexicon.hpp"
#include "duel/data/mini_scan.hpp"
#include "duel/data/vocab.hpp"
#include "duel/error.hpp"
#include "duel/grad/checkpoint.hpp"
#include "duel/model/transformer.hpp"
#include "duel/util/kv.hpp"

namespace duel::experiment {
namespace {

namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

// Stage seeds derived from the run seed (splitmix64 finalizer).
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stage) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stage + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

std::string one_line(std::string text) {
  std::replace(text.begin(), text.end(), '\n', ' ');
  return text;
}

SplitSummary summarize(const DataSpec& spec, const splits::SplitPair& pair,
                       const std::map<std::string, std::string>& mapping) {
  return {spec.name, spec.manifest.empty() ? splits::split_kind_name(pair.kind) : "manifest", pair.train.size(),
          pair.test.size(), pair.metrics, mapping};
}

std::string label(const SplitSummary& s) { return s.name + "/" + s.split; }

void write_summary(std::ostream& os, const std::string& prefix, const SplitSummary& s) {
  os << prefix << "name = " << s.name << '\n'
     << prefix << "split = " << s.split << '\n'
     << prefix << "train_size = " << s.train_size << '\n'
     << prefix << "test_size = " << s.test_size << '\n';
  if (s.metrics.compound_divergence) {
    os << prefix << "compound_divergence = " << util::format_double(*s.metrics.compound_divergence) << '\n';
  }
  os << prefix << "atom_coverage = " << util::format_double(s.metrics.atom_coverage) << '\n'
     << prefix << "train_mean_input_length = " << util::format_double(s.metrics.train_mean_input_length) << '\n'
     << prefix << "test_mean_input_length = " << util::format_double(s.metrics.test_mean_input_length) << '\n';
  if (!s.mapping.empty()) {
    std::vector<std::string> pairs;
    for (const auto& [from, to] : s.mapping) pairs.push_back(from + ":" + to);
    os << prefix << "mapping = " << util::join(pairs, " ") << '\n';
  }
}

void read_summary_field(SplitSummary& s, const std::string& field, const std::string& v) {
  if (field == "name") s.name = v;
  else if (field == "split") s.split = v;
  else if (field == "train_size") s.train_size = util::to_uint64(v, field);
  else if (field == "test_size") s.test_size = util::to_uint64(v, field);
  else if (field == "compound_divergence") s.metrics.compound_divergence = util::to_double(v, field);
  else if (field == "atom_coverage") s.metrics.atom_coverage = util::to_double(v, field);
  else if (field == "train_mean_input_length") s.metrics.train_mean_input_length = util::to_double(v, field);
  else if (field == "test_mean_input_length") s.metrics.test_mean_input_length = util::to_double(v, field);
  else if (field == "mapping") {
    for (const auto& pair : util::split_whitespace(v)) {
      const auto colon = pair.find(':');
      if (colon != std::string::npos) s.mapping[pair.substr(0, colon)] = pair.substr(colon + 1);
    }
  }
}

int longest(const std::vector<const data::Dataset*>& sets, bool inputs) {
  std::size_t n = 0;
  for (const auto* d : sets) {
    for (const auto& ex : d->examples) n = std::max(n, data::tokens(inputs ? ex.input : ex.output).size());
  }
  return static_cast<int>(n);
}

// Everything the per-seed workers share, read-only.
struct Prepared {
  model::ModelConfig model;
  data::Vocabulary vocab;
  train::EncodedDataset t, dev, s, s_tilde;
  data::Dataset t_tilde;
  bool has_dev = false;
};

class Logger {
 public:
  explicit Logger(const std::function<void(std::string_view)>& sink) : sink_(sink) {}
  void operator()(const std::string& line) {
    if (!sink_) return;
    std::lock_guard<std::mutex> lock(mutex_);
    sink_(line);
  }

 private:
  const std::function<void(std::string_view)>& sink_;
  std::mutex mutex_;
};

SeedResult run_seed(const ExperimentConfig& cfg, const Prepared& p, std::uint64_t seed, const fs::path& root,
                    Logger& log) {
  SeedResult r;
  r.seed = seed;
  const auto dir = root / ("seed" + std::to_string(seed));
  const auto tag = "[seed " + std::to_string(seed) + "] ";
  try {
    fs::create_directories(dir);
    auto params = model::init_model(p.model, seed);

    if (cfg.method != Method::none) {
      const auto ckpt = dir / "prefinetune.ckpt";
      const auto start = Clock::now();
      if (cfg.resume && fs::exists(ckpt)) {
        auto restored = grad::load_checkpoint(ckpt);
        bool same_layout = restored.size() == params.size();
        for (const auto& [name, t] : params.entries()) {
          same_layout = same_layout && restored.contains(name) && restored.at(name).shape == t.shape;
        }
        if (!same_layout) throw InputError("checkpoint " + ckpt.string() + " does not match the model layout");
        params = std::move(restored);
        r.resumed = true;
        log(tag + "resumed pre-finetuning from " + ckpt.string());
      } else {
        const auto stage_seed = derive_seed(seed, 1);
        log(tag + "pre-finetuning (" + method_name(cfg.method) + ")");
        r.prefinetune = cfg.method == Method::duel
                            ? train::duel_prefinetune(params, p.model, p.s, p.s_tilde, cfg.duel, stage_seed)
                            : train::merged_prefinetune(params, p.model, p.s, p.s_tilde, cfg.merged_steps, cfg.duel,
                                                        stage_seed);
        grad::save_checkpoint(ckpt, params);
        util::write_file((dir / "prefinetune.txt").string(), train::to_text(*r.prefinetune));
      }
      r.prefinetune_seconds = seconds_since(start);
    }

    auto start = Clock::now();
    log(tag + "fine-tuning");
    r.finetune = train::finetune(params, p.model, p.t, p.has_dev ? &p.dev : nullptr, cfg.finetune.config,
                                 derive_seed(seed, 2));
    r.finetune_seconds = seconds_since(start);
    grad::save_checkpoint(dir / "finetune.ckpt", params);
    util::write_file((dir / "finetune.txt").string(), train::to_text(*r.finetune));

    start = Clock::now();
    std::vector<eval::Prediction> predictions;
    r.eval = eval::exact_match(params, p.model, p.vocab, p.t_tilde, cfg.eval_max_len, &predictions);
    r.eval_seconds = seconds_since(start);
    util::write_file((dir / "eval.txt").string(), eval::to_text(r.eval));
    util::write_file((dir / "predictions.tsv").string(), eval::predictions_tsv(predictions));
    r.ok = true;
    log(tag + "exact match " + util::format_double(r.eval.accuracy));
  } catch (const std::exception& e) {
    r.ok = false;
    r.error = one_line(e.what());
    log(tag + "failed: " + r.error);
  }
  return r;
}

}  // namespace

Corpus load_corpus(const DataSpec& spec) {
  Corpus c;
  if (spec.origin == "generate") {
    c.dataset = data::generate_mini_scan(spec.generator, spec.generator_seed, spec.name);
  } else if (spec.origin == "tsv") {
    c.dataset = data::load_tsv(spec.path, spec.name);
  } else {
    throw ConfigError("unknown data origin '" + spec.origin + "'");
  }
  if (spec.lexicon.empty()) return c;
  data::LexiconTable lexicon;
  if (spec.lexicon == "synthetic") {
    if (spec.origin != "generate") throw ConfigError("a synthetic lexicon needs generated data");
    std::map<std::string, data::WordClass> sources;
    for (const auto& w : spec.generator.primitives) sources[w] = data::WordClass::verb;
    if (spec.generator.turn) sources["turn"] = data::WordClass::verb;
    lexicon = data::synthetic_lexicon(sources, spec.lexicon_alternatives, spec.lexicon_seed);
  } else {
    lexicon = data::LexiconTable::load(spec.lexicon);
  }
  auto variant = data::make_lexical_variant(c.dataset, lexicon, spec.variant_seed, spec.name);
  c.dataset = std::move(variant.dataset);
  c.mapping = std::move(variant.mapping);
  return c;
}

splits::SplitPair make_split_pair(const DataSpec& spec, const data::Dataset& corpus) {
  if (!spec.manifest.empty()) return splits::apply_manifest(corpus, splits::load_manifest(spec.manifest), spec.extractor);
  switch (spec.split) {
    case splits::SplitKind::standard:
      return splits::standard_split(corpus, spec.train_fraction, spec.split_seed, spec.extractor);
    case splits::SplitKind::length:
      return splits::length_split(corpus, spec.train_fraction, spec.extractor);
    case splits::SplitKind::mcd: {
      splits::McdConfig mcd;
      mcd.extractor = spec.extractor;
      mcd.train_size = splits::train_count(corpus.size(), spec.train_fraction);
      mcd.test_size = corpus.size() - mcd.train_size;
      mcd.iterations = spec.mcd_iterations;
      mcd.restarts = spec.mcd_restarts;
      return splits::mcd_split_search(corpus, mcd, spec.split_seed);
    }
  }
  throw ConfigError("unknown split kind");
}

double RunReport::mean_accuracy() const {
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& s : seeds) {
    if (!s.ok) continue;
    sum += s.eval.accuracy;
    ++n;
  }
  return n ? sum / static_cast<double>(n) : std::nan("");
}

double RunReport::stddev_accuracy() const {
  const double mean = mean_accuracy();
  double sq = 0.0;
  std::size_t n = 0;
  for (const auto& s : seeds) {
    if (!s.ok) continue;
    sq += (s.eval.accuracy - mean) * (s.eval.accuracy - mean);
    ++n;
  }
  return n > 1 ? std::sqrt(sq / static_cast<double>(n - 1)) : 0.0;
}

std::size_t RunReport::failures() const {
  return static_cast<std::size_t>(std::count_if(seeds.begin(), seeds.end(), [](const auto& s) { return !s.ok; }));
}

RunReport run_experiment(const ExperimentConfig& cfg, const RunOptions& options) {
  cfg.validate();
  Logger log(options.log);
  const fs::path root = fs::path(cfg.output_dir) / cfg.name;
  fs::create_directories(root);

  RunReport report;
  report.name = cfg.name;
  report.method = cfg.method;
  report.config_text = to_text(cfg);
  report.target_spec = to_text(cfg.target);
  util::write_file((root / "config.txt").string(), report.config_text);

  const auto prompt = [&](const data::Dataset& d, const DataSpec& spec) {
    return cfg.prompts ? data::apply_prompt(d, spec.prompt_tag()) : d;
  };

  const auto target_corpus = load_corpus(cfg.target);
  const auto target_pair = make_split_pair(cfg.target, target_corpus.dataset);
  splits::save_manifest(root / "target.manifest", target_pair, cfg.target.name);
  report.target = summarize(cfg.target, target_pair, target_corpus.mapping);
  report.target_label = label(report.target);

  Prepared p;
  const auto t = prompt(target_pair.train, cfg.target);
  p.t_tilde = prompt(target_pair.test, cfg.target);

  std::vector<data::Dataset> source_train, source_test;
  std::vector<std::string> source_labels;
  for (std::size_t i = 0; i < cfg.sources.size(); ++i) {
    const auto& spec = cfg.sources[i];
    const auto corpus = load_corpus(spec);
    const auto pair = make_split_pair(spec, corpus.dataset);
    splits::save_manifest(root / ("source" + std::to_string(i) + ".manifest"), pair, spec.name);
    report.sources.push_back(summarize(spec, pair, corpus.mapping));
    source_labels.push_back(label(report.sources.back()));
    source_train.push_back(prompt(pair.train, spec));
    source_test.push_back(prompt(pair.test, spec));
  }
  report.source_label = cfg.method == Method::none || source_labels.empty() ? "-" : util::join(source_labels, "+");

  std::vector<const data::Dataset*> all{&t, &p.t_tilde};
  std::vector<const data::Dataset*> train_parts, test_parts;
  for (auto& d : source_train) {
    all.push_back(&d);
    train_parts.push_back(&d);
  }
  for (auto& d : source_test) {
    all.push_back(&d);
    test_parts.push_back(&d);
  }
  p.vocab = data::build_vocab(all);
  util::write_file((root / "vocab.txt").string(), p.vocab.to_text());

  p.model = cfg.model;
  p.model.vocab_size = p.vocab.size();
  const int src_needed = longest(all, true) + 1;
  const int tgt_needed = longest(all, false) + 1;
  if (src_needed > p.model.max_src_len || tgt_needed > p.model.max_tgt_len) {
    throw ConfigError("model length caps (" + std::to_string(p.model.max_src_len) + ", " +
                      std::to_string(p.model.max_tgt_len) + ") are below the data's needs (" +
                      std::to_string(src_needed) + ", " + std::to_string(tgt_needed) + ")");
  }
  p.model.validate();
  util::write_file((root / "model.txt").string(), p.model.to_text());

  if (cfg.finetune.dev_fraction > 0.0) {
    auto [dev, rest] = eval::make_validation_holdout(t, {cfg.finetune.dev_fraction, std::nullopt}, cfg.finetune.dev_seed);
    p.dev = train::encode_dataset(p.vocab, dev);
    p.t = train::encode_dataset(p.vocab, rest);
    p.has_dev = true;
  } else {
    p.t = train::encode_dataset(p.vocab, t);
  }
  if (!train_parts.empty()) {
    p.s = train::encode_dataset(p.vocab, data::concat("source_train", train_parts));
    p.s_tilde = train::encode_dataset(p.vocab, data::concat("source_test", test_parts));
  }

  log("target " + report.target_label + ": " + std::to_string(target_pair.train.size()) + " train, " +
      std::to_string(target_pair.test.size()) + " test; vocabulary " + std::to_string(p.vocab.size()));

  report.seeds.resize(cfg.seeds.size());
  const auto workers = std::min<std::size_t>(static_cast<std::size_t>(cfg.jobs), cfg.seeds.size());
  if (workers <= 1) {
    for (std::size_t i = 0; i < cfg.seeds.size(); ++i) report.seeds[i] = run_seed(cfg, p, cfg.seeds[i], root, log);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&] {
        for (auto i = next++; i < cfg.seeds.size(); i = next++) report.seeds[i] = run_seed(cfg, p, cfg.seeds[i], root, log);
      });
    }
    for (auto& th : pool) th.join();
  }

  util::write_file((root / "report.txt").string(), to_text(report));
  return report;
}

std::string to_text(const RunReport& r) {
  std::ostringstream os;
  os << "name = " << r.name << '\n'
     << "method = " << method_name(r.method) << '\n'
     << "target_label = " << r.target_label << '\n'
     << "source_label = " << r.source_label << '\n';
  for (const auto& [k, v] : util::parse_kv_lines(r.target_spec)) os << "target_spec." << k << " = " << v << '\n';
  write_summary(os, "target.", r.target);
  for (std::size_t i = 0; i < r.sources.size(); ++i) write_summary(os, "source." + std::to_string(i) + ".", r.sources[i]);
  std::vector<std::string> seeds;
  for (const auto& s : r.seeds) seeds.push_back(std::to_string(s.seed));
  os << "seeds = " << util::join(seeds, " ") << '\n';
  for (const auto& s : r.seeds) {
    const auto prefix = "seed." + std::to_string(s.seed) + ".";
    os << prefix << "ok = " << (s.ok ? "true" : "false") << '\n';
    if (!s.ok) {
      os << prefix << "error = " << s.error << '\n';
      continue;
    }
    os << prefix << "resumed = " << (s.resumed ? "true" : "false") << '\n';
    if (s.prefinetune) {
      os << prefix << "prefinetune.theta_updates = " << s.prefinetune->theta_updates << '\n'
         << prefix << "prefinetune.phi_updates = " << s.prefinetune->phi_updates << '\n';
      if (s.prefinetune->outer_stop) {
        os << prefix << "prefinetune.outer_stop = " << train::stop_reason_name(*s.prefinetune->outer_stop) << '\n';
      }
    }
    os << prefix << "prefinetune_seconds = " << util::format_double(s.prefinetune_seconds) << '\n'
       << prefix << "finetune_seconds = " << util::format_double(s.finetune_seconds) << '\n'
       << prefix << "eval_seconds = " << util::format_double(s.eval_seconds) << '\n';
    for (const auto& [k, v] : util::parse_kv_lines(eval::to_text(s.eval))) {
      os << prefix << "eval." << k << " = " << v << '\n';
    }
  }
  os << "mean_accuracy = " << util::format_double(r.mean_accuracy()) << '\n'
     << "stddev_accuracy = " << util::format_double(r.stddev_accuracy()) << '\n'
     << "failures = " << r.failures() << '\n';
  return os.str();
}

RunReport parse_run_report(std::string_view text) {
  RunReport r;
  std::map<std::uint64_t, SeedResult> seeds;
  std::map<std::uint64_t, std::string> eval_text;
  std::vector<std::uint64_t> order;
  std::map<std::size_t, SplitSummary> sources;
  for (const auto& [k, v] : util::parse_kv_lines(text)) {
    if (k == "name") {
      r.name = v;
    } else if (k == "method") {
      r.method = parse_method(v);
    } else if (k == "target_label") {
      r.target_label = v;
    } else if (k == "source_label") {
      r.source_label = v;
    } else if (k.starts_with("target_spec.")) {
      r.target_spec += k.substr(12) + " = " + v + "\n";
    } else if (k.starts_with("target.")) {
      read_summary_field(r.target, k.substr(7), v);
    } else if (k.starts_with("source.")) {
      const auto dot = k.find('.', 7);
      if (dot == std::string::npos) throw InputError("run report: bad key '" + k + "'");
      read_summary_field(sources[util::to_uint64(k.substr(7, dot - 7), k)], k.substr(dot + 1), v);
    } else if (k == "seeds") {
      for (const auto& w : util::split_whitespace(v)) order.push_back(util::to_uint64(w, k));
    } else if (k.starts_with("seed.")) {
      const auto dot = k.find('.', 5);
      if (dot == std::string::npos) throw InputError("run report: bad key '" + k + "'");
      const auto seed = util::to_uint64(k.substr(5, dot - 5), k);
      const auto field = k.substr(dot + 1);
      auto& s = seeds[seed];
      s.seed = seed;
      if (field == "ok") s.ok = util::to_bool(v, k);
      else if (field == "error") s.error = v;
      else if (field == "resumed") s.resumed = util::to_bool(v, k);
      else if (field == "prefinetune_seconds") s.prefinetune_seconds = util::to_double(v, k);
      else if (field == "finetune_seconds") s.finetune_seconds = util::to_double(v, k);
      else if (field == "eval_seconds") s.eval_seconds = util::to_double(v, k);
      else if (field.starts_with("eval.")) eval_text[seed] += field.substr(5) + " = " + v + "\n";
    }
  }
  for (auto& [i, s] : sources) r.sources.push_back(std::move(s));
  for (auto seed : order) {
    auto s = seeds[seed];
    s.seed = seed;
    if (eval_text.count(seed)) s.eval = eval::eval_result_from_text(eval_text[seed]);
    r.seeds.push_back(std::move(s));
  }
  if (r.name.empty() || r.target_spec.empty()) throw InputError("run report is missing its name or target spec");
  return r;
}

std::string format_delta(double delta_points) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%+.1f", delta_points);
  std::string out = buf;
  if (out == "-0.0") out = "+0.0";
  return out;
}

std::string report_table(const std::vector<RunReport>& reports) {
  if (reports.empty()) throw UsageError("report_table: no reports");
  for (const auto& r : reports) {
    if (r.target_spec != reports.front().target_spec) {
      throw UsageError("report_table: reports '" + reports.front().name + "' and '" + r.name +
                       "' have different targets");
    }
  }
  const auto percent = [](double x) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.1f", 100.0 * x);
    return std::string(buf);
  };

  std::vector<std::array<std::string, 4>> rows;
  for (const auto& r : reports) {
    const auto ok = r.seeds.size() - r.failures();
    std::string cell = ok ? percent(r.mean_accuracy()) + " ± " + percent(r.stddev_accuracy()) : "n/a";
    if (r.method == Method::duel && ok) {
      for (const auto& m : reports) {
        if (m.method == Method::merged && m.source_label == r.source_label && m.seeds.size() > m.failures()) {
          cell += " (" + format_delta(100.0 * r.mean_accuracy() - 100.0 * m.mean_accuracy()) + ")";
          break;
        }
      }
    }
    if (r.failures()) cell += " [" + std::to_string(r.failures()) + " failed]";
    rows.push_back({method_name(r.method), r.source_label, std::to_string(r.seeds.size()), cell});
  }

  const std::array<std::string, 4> header{"method", "source", "seeds", "t~ exact match (%)"};
  std::array<std::size_t, 4> width{};
  const auto display = [](const std::string& s) {
    // Count code points so "±" takes one column.
    return static_cast<std::size_t>(std::count_if(s.begin(), s.end(), [](char c) { return (c & 0xC0) != 0x80; }));
  };
  for (std::size_t c = 0; c < 4; ++c) {
    width[c] = display(header[c]);
    for (const auto& row : rows) width[c] = std::max(width[c], display(row[c]));
  }
  const auto line = [&](const std::array<std::string, 4>& cells) {
    std::string out;
    for (std::size_t c = 0; c < 4; ++c) {
      out += cells[c];
      if (c + 1 < 4) out += std::string(width[c] - display(cells[c]) + 2, ' ');
    }
    while (!out.empty() && out.back() == ' ') out.pop_back();
    return out + "\n";
  };
  std::string out = "target: " + reports.front().target_label + "\n";
  out += line(header);
  std::string rule;
  for (std::size_t c = 0; c < 4; ++c) rule += std::string(width[c], '-') + (c + 1 < 4 ? "  " : "");
  out += rule + "\n";
  for (const auto& row : rows) out += line(row);
  return out;
}

}  // namespace duel::experiment
