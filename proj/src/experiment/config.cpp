#include "duel/experiment/config.hpp"

#include <filesystem>
#include <set>
#include <sstream>

#include "duel/error.hpp"
#include "duel/util/kv.hpp"

namespace duel::experiment {
namespace {

using util::format_double;

// Pops keys from one section; leftovers are reported as unknown.
class SectionReader {
 public:
  explicit SectionReader(const util::Section& section) : name_(section.name.empty() ? "(top)" : section.name) {
    for (const auto& [k, v] : section.entries) {
      if (!values_.emplace(k, v).second) throw ConfigError("[" + name_ + "] repeats key '" + k + "'");
    }
  }

  template <typename F>
  void read(const std::string& key, F&& apply) {
    const auto it = values_.find(key);
    if (it == values_.end()) return;
    try {
      apply(it->second);
    } catch (const ConfigError& e) {
      throw ConfigError("[" + name_ + "] " + key + ": " + e.what());
    } catch (const Error& e) {
      throw ConfigError("[" + name_ + "] " + key + ": " + e.what());
    }
    values_.erase(it);
  }

  void integer(const std::string& key, int& out) {
    read(key, [&](const std::string& v) { out = util::to_int(v, key); });
  }
  void uint64(const std::string& key, std::uint64_t& out) {
    read(key, [&](const std::string& v) { out = util::to_uint64(v, key); });
  }
  void size(const std::string& key, std::size_t& out) {
    read(key, [&](const std::string& v) { out = static_cast<std::size_t>(util::to_uint64(v, key)); });
  }
  void real(const std::string& key, double& out) {
    read(key, [&](const std::string& v) { out = util::to_double(v, key); });
  }
  void boolean(const std::string& key, bool& out) {
    read(key, [&](const std::string& v) { out = util::to_bool(v, key); });
  }
  void text(const std::string& key, std::string& out) {
    read(key, [&](const std::string& v) { out = v; });
  }

  void finish() const {
    if (!values_.empty()) throw ConfigError("[" + name_ + "] unknown key '" + values_.begin()->first + "'");
  }

 private:
  std::string name_;
  std::map<std::string, std::string> values_;
};

std::vector<std::uint64_t> parse_seeds(const std::string& text) {
  std::string spaced = text;
  for (auto& c : spaced) {
    if (c == ',') c = ' ';
  }
  std::vector<std::uint64_t> seeds;
  for (const auto& word : util::split_whitespace(spaced)) seeds.push_back(util::to_uint64(word, "seeds"));
  return seeds;
}

void read_optimizer(SectionReader& r, train::OptimizerConfig& o) {
  r.read("optimizer", [&](const std::string& v) { o.kind = train::parse_optimizer_kind(v); });
  r.real("learning_rate", o.learning_rate);
  r.real("weight_decay", o.weight_decay);
  r.real("beta1", o.beta1);
  r.real("beta2", o.beta2);
  r.real("epsilon", o.epsilon);
}

void write_optimizer(std::ostream& os, const train::OptimizerConfig& o) {
  os << "optimizer = " << train::optimizer_kind_name(o.kind) << '\n'
     << "learning_rate = " << format_double(o.learning_rate) << '\n'
     << "weight_decay = " << format_double(o.weight_decay) << '\n'
     << "beta1 = " << format_double(o.beta1) << '\n'
     << "beta2 = " << format_double(o.beta2) << '\n'
     << "epsilon = " << format_double(o.epsilon) << '\n';
}

void read_model(SectionReader& r, model::ModelConfig& m) {
  r.integer("embed_dim", m.embed_dim);
  r.integer("num_heads", m.num_heads);
  r.integer("encoder_layers", m.encoder_layers);
  r.integer("decoder_layers", m.decoder_layers);
  r.integer("ffn_dim", m.ffn_dim);
  r.integer("max_src_len", m.max_src_len);
  r.integer("max_tgt_len", m.max_tgt_len);
  r.real("dropout", m.dropout);
}

DataSpec read_data(SectionReader& r) {
  DataSpec d;
  r.text("name", d.name);
  r.text("origin", d.origin);
  r.text("path", d.path);
  r.read("primitives", [&](const std::string& v) { d.generator.primitives = util::split_whitespace(v); });
  r.boolean("turn", d.generator.turn);
  r.boolean("directions", d.generator.directions);
  r.boolean("opposite", d.generator.opposite);
  r.boolean("around", d.generator.around);
  r.boolean("repetition", d.generator.repetition);
  r.boolean("conjunctions", d.generator.conjunctions);
  r.size("max_examples", d.generator.max_examples);
  r.uint64("generator_seed", d.generator_seed);
  r.text("lexicon", d.lexicon);
  r.integer("lexicon_alternatives", d.lexicon_alternatives);
  r.uint64("lexicon_seed", d.lexicon_seed);
  r.uint64("variant_seed", d.variant_seed);
  r.read("split", [&](const std::string& v) { d.split = splits::parse_split_kind(v); });
  r.real("train_fraction", d.train_fraction);
  r.uint64("split_seed", d.split_seed);
  r.size("mcd_iterations", d.mcd_iterations);
  r.integer("mcd_restarts", d.mcd_restarts);
  r.read("compound_rule", [&](const std::string& v) { d.extractor.rule = splits::parse_compound_rule(v); });
  r.boolean("fallback_to_bigram", d.extractor.fallback_to_bigram);
  r.boolean("input_bigrams", d.extractor.input_bigrams);
  r.text("manifest", d.manifest);
  r.text("tag", d.tag);
  return d;
}

void write_data(std::ostream& os, const DataSpec& d) {
  os << "name = " << d.name << '\n' << "origin = " << d.origin << '\n';
  if (!d.path.empty()) os << "path = " << d.path << '\n';
  os << "primitives = " << util::join(d.generator.primitives, " ") << '\n'
     << "turn = " << (d.generator.turn ? "true" : "false") << '\n'
     << "directions = " << (d.generator.directions ? "true" : "false") << '\n'
     << "opposite = " << (d.generator.opposite ? "true" : "false") << '\n'
     << "around = " << (d.generator.around ? "true" : "false") << '\n'
     << "repetition = " << (d.generator.repetition ? "true" : "false") << '\n'
     << "conjunctions = " << (d.generator.conjunctions ? "true" : "false") << '\n'
     << "max_examples = " << d.generator.max_examples << '\n'
     << "generator_seed = " << d.generator_seed << '\n';
  if (!d.lexicon.empty()) os << "lexicon = " << d.lexicon << '\n';
  os << "lexicon_alternatives = " << d.lexicon_alternatives << '\n'
     << "lexicon_seed = " << d.lexicon_seed << '\n'
     << "variant_seed = " << d.variant_seed << '\n'
     << "split = " << splits::split_kind_name(d.split) << '\n'
     << "train_fraction = " << format_double(d.train_fraction) << '\n'
     << "split_seed = " << d.split_seed << '\n'
     << "mcd_iterations = " << d.mcd_iterations << '\n'
     << "mcd_restarts = " << d.mcd_restarts << '\n'
     << "compound_rule = " << splits::compound_rule_name(d.extractor.rule) << '\n'
     << "fallback_to_bigram = " << (d.extractor.fallback_to_bigram ? "true" : "false") << '\n'
     << "input_bigrams = " << (d.extractor.input_bigrams ? "true" : "false") << '\n';
  if (!d.manifest.empty()) os << "manifest = " << d.manifest << '\n';
  if (!d.tag.empty()) os << "tag = " << d.tag << '\n';
}

void validate_data(const DataSpec& d, const std::string& where) {
  const auto require = [&](bool ok, const std::string& what) {
    if (!ok) throw ConfigError(where + ": " + what);
  };
  require(!d.name.empty(), "name must not be empty");
  require(d.origin == "generate" || d.origin == "tsv", "origin must be 'generate' or 'tsv'");
  if (d.origin == "tsv") {
    require(!d.path.empty(), "origin 'tsv' needs a path");
    require(std::filesystem::exists(d.path), "file not found: " + d.path);
  } else {
    require(!d.generator.primitives.empty(), "primitives must not be empty");
  }
  if (!d.lexicon.empty() && d.lexicon != "synthetic") {
    require(std::filesystem::exists(d.lexicon), "lexicon file not found: " + d.lexicon);
  }
  require(d.lexicon_alternatives >= 1, "lexicon_alternatives must be >= 1");
  require(d.train_fraction > 0.0 && d.train_fraction < 1.0, "train_fraction must lie in (0, 1)");
  require(d.mcd_restarts >= 1, "mcd_restarts must be >= 1");
  if (!d.manifest.empty()) require(std::filesystem::exists(d.manifest), "manifest not found: " + d.manifest);
  const auto tag = d.prompt_tag();
  require(!tag.empty() && util::split_whitespace(tag).size() == 1, "prompt tag must be a single token");
}

// Applies "section.key" overrides to the parsed sections. "source.key" hits
// every source section, "sourceN.key" only the N-th.
void apply_overrides(std::vector<util::Section>& sections, const std::map<std::string, std::string>& overrides) {
  for (const auto& [path, value] : overrides) {
    const auto dot = path.find('.');
    if (dot == std::string::npos || dot == 0 || dot + 1 == path.size()) {
      throw ConfigError("override '" + path + "' is not of the form section.key");
    }
    std::string section = path.substr(0, dot);
    const std::string key = path.substr(dot + 1);
    std::optional<std::size_t> source_index;
    if (section.size() > 6 && section.starts_with("source")) {
      source_index = static_cast<std::size_t>(util::to_uint64(section.substr(6), path));
      section = "source";
    }
    std::vector<util::Section*> targets;
    std::size_t seen = 0;
    for (auto& s : sections) {
      if (s.name != section) continue;
      if (!source_index || *source_index == seen) targets.push_back(&s);
      ++seen;
    }
    if (targets.empty()) {
      if (source_index || section == "source") throw ConfigError("override '" + path + "': no such source section");
      sections.push_back({section, {}, 0});
      targets.push_back(&sections.back());
    }
    for (auto* s : targets) {
      bool replaced = false;
      for (auto& [k, v] : s->entries) {
        if (k == key) {
          v = value;
          replaced = true;
        }
      }
      if (!replaced) s->entries.emplace_back(key, value);
    }
  }
}

}  // namespace

std::string method_name(Method method) {
  switch (method) {
    case Method::none: return "NONE";
    case Method::merged: return "MERGED";
    case Method::duel: return "DUEL";
  }
  return "?";
}

Method parse_method(std::string_view name) {
  const auto lower = util::lowercase(name);
  if (lower == "none") return Method::none;
  if (lower == "merged") return Method::merged;
  if (lower == "duel") return Method::duel;
  throw ConfigError("unknown method '" + std::string(name) + "' (expected NONE, MERGED, or DUEL)");
}

std::string DataSpec::prompt_tag() const { return tag.empty() ? util::lowercase(name) : tag; }

void ExperimentConfig::validate() const {
  const auto require = [](bool ok, const std::string& what) {
    if (!ok) throw ConfigError("experiment config: " + what);
  };
  require(!name.empty(), "name must not be empty");
  require(!seeds.empty(), "seeds must list at least one seed");
  require(std::set<std::uint64_t>(seeds.begin(), seeds.end()).size() == seeds.size(), "seeds must be distinct");
  require(!output_dir.empty(), "output_dir must not be empty");
  require(jobs >= 1, "jobs must be >= 1");
  auto m = model;
  m.vocab_size = 1;
  m.validate();
  validate_data(target, "[target]");
  for (std::size_t i = 0; i < sources.size(); ++i) validate_data(sources[i], "[source " + std::to_string(i) + "]");
  if (method != Method::none) {
    require(!sources.empty(), method_name(method) + " needs at least one [source] section");
    duel.validate();
  }
  if (method == Method::merged) require(merged_steps >= 1, "merged steps must be >= 1");
  finetune.config.validate();
  require(finetune.dev_fraction >= 0.0 && finetune.dev_fraction < 1.0, "finetune dev_fraction must lie in [0, 1)");
  require(eval_max_len >= 0, "eval max_len must be >= 0");
}

ExperimentConfig parse_experiment_config(std::string_view text, const std::map<std::string, std::string>& overrides) {
  auto sections = util::parse_sections(text);
  apply_overrides(sections, overrides);
  ExperimentConfig cfg;
  std::set<std::string> seen;
  for (const auto& section : sections) {
    if (section.name.empty() && section.entries.empty()) continue;
    if (section.name != "source" && !seen.insert(section.name).second) {
      throw ConfigError("section [" + section.name + "] appears more than once (line " + std::to_string(section.line) +
                        ")");
    }
    SectionReader r(section);
    if (section.name == "experiment") {
      r.text("name", cfg.name);
      r.read("method", [&](const std::string& v) { cfg.method = parse_method(v); });
      r.read("seeds", [&](const std::string& v) { cfg.seeds = parse_seeds(v); });
      r.text("output_dir", cfg.output_dir);
      r.boolean("prompts", cfg.prompts);
      r.boolean("resume", cfg.resume);
      r.integer("jobs", cfg.jobs);
    } else if (section.name == "model") {
      read_model(r, cfg.model);
    } else if (section.name == "target") {
      cfg.target = read_data(r);
    } else if (section.name == "source") {
      cfg.sources.push_back(read_data(r));
    } else if (section.name == "duel") {
      auto& d = cfg.duel;
      read_optimizer(r, d.optimizer);
      r.integer("batch_size", d.batch_size);
      r.integer("outer_rounds", d.outer_rounds);
      r.integer("inner_steps", d.inner_steps);
      r.integer("patience", d.patience);
      r.read("min_theta_steps", [&](const std::string& v) { d.min_theta_steps = util::to_int(v, "min_theta_steps"); });
      r.integer("eval_every", d.eval_every);
      r.size("eval_subset", d.eval_subset);
      r.real("label_smoothing", d.label_smoothing);
      r.integer("max_decode_len", d.max_decode_len);
      r.boolean("theta_first", d.theta_first);
    } else if (section.name == "merged") {
      r.integer("steps", cfg.merged_steps);
    } else if (section.name == "finetune") {
      auto& f = cfg.finetune.config;
      read_optimizer(r, f.optimizer);
      r.integer("batch_size", f.batch_size);
      r.integer("steps", f.steps);
      r.integer("eval_every", f.eval_every);
      r.integer("patience", f.patience);
      r.size("eval_subset", f.eval_subset);
      r.real("label_smoothing", f.label_smoothing);
      r.integer("max_decode_len", f.max_decode_len);
      r.boolean("reinit_head", f.reinit_head);
      r.real("dev_fraction", cfg.finetune.dev_fraction);
      r.uint64("dev_seed", cfg.finetune.dev_seed);
    } else if (section.name == "eval") {
      r.integer("max_len", cfg.eval_max_len);
    } else {
      throw ConfigError("unknown section [" + (section.name.empty() ? std::string("(top)") : section.name) +
                        "] at line " + std::to_string(section.line));
    }
    r.finish();
  }
  if (!seen.count("target")) throw ConfigError("experiment config has no [target] section");
  cfg.validate();
  return cfg;
}

std::string to_text(const DataSpec& spec) {
  std::ostringstream os;
  write_data(os, spec);
  return os.str();
}

ExperimentConfig load_experiment_config(const std::string& path, const std::map<std::string, std::string>& overrides) {
  if (!std::filesystem::exists(path)) throw ConfigError("config file not found: " + path);
  return parse_experiment_config(util::read_file(path), overrides);
}

std::string to_text(const ExperimentConfig& cfg) {
  std::ostringstream os;
  os << "[experiment]\n"
     << "name = " << cfg.name << '\n'
     << "method = " << method_name(cfg.method) << '\n';
  std::vector<std::string> seeds;
  for (auto s : cfg.seeds) seeds.push_back(std::to_string(s));
  os << "seeds = " << util::join(seeds, " ") << '\n'
     << "output_dir = " << cfg.output_dir << '\n'
     << "prompts = " << (cfg.prompts ? "true" : "false") << '\n'
     << "resume = " << (cfg.resume ? "true" : "false") << '\n'
     << "jobs = " << cfg.jobs << '\n';

  const auto& m = cfg.model;
  os << "\n[model]\n"
     << "embed_dim = " << m.embed_dim << '\n'
     << "num_heads = " << m.num_heads << '\n'
     << "encoder_layers = " << m.encoder_layers << '\n'
     << "decoder_layers = " << m.decoder_layers << '\n'
     << "ffn_dim = " << m.ffn_dim << '\n'
     << "max_src_len = " << m.max_src_len << '\n'
     << "max_tgt_len = " << m.max_tgt_len << '\n'
     << "dropout = " << format_double(m.dropout) << '\n';

  os << "\n[target]\n";
  write_data(os, cfg.target);
  for (const auto& s : cfg.sources) {
    os << "\n[source]\n";
    write_data(os, s);
  }

  const auto& d = cfg.duel;
  os << "\n[duel]\n";
  write_optimizer(os, d.optimizer);
  os << "batch_size = " << d.batch_size << '\n'
     << "outer_rounds = " << d.outer_rounds << '\n'
     << "inner_steps = " << d.inner_steps << '\n'
     << "patience = " << d.patience << '\n';
  if (d.min_theta_steps) os << "min_theta_steps = " << *d.min_theta_steps << '\n';
  os << "eval_every = " << d.eval_every << '\n'
     << "eval_subset = " << d.eval_subset << '\n'
     << "label_smoothing = " << format_double(d.label_smoothing) << '\n'
     << "max_decode_len = " << d.max_decode_len << '\n'
     << "theta_first = " << (d.theta_first ? "true" : "false") << '\n';

  os << "\n[merged]\nsteps = " << cfg.merged_steps << '\n';

  const auto& f = cfg.finetune.config;
  os << "\n[finetune]\n";
  write_optimizer(os, f.optimizer);
  os << "batch_size = " << f.batch_size << '\n'
     << "steps = " << f.steps << '\n'
     << "eval_every = " << f.eval_every << '\n'
     << "patience = " << f.patience << '\n'
     << "eval_subset = " << f.eval_subset << '\n'
     << "label_smoothing = " << format_double(f.label_smoothing) << '\n'
     << "max_decode_len = " << f.max_decode_len << '\n'
     << "reinit_head = " << (f.reinit_head ? "true" : "false") << '\n'
     << "dev_fraction = " << format_double(cfg.finetune.dev_fraction) << '\n'
     << "dev_seed = " << cfg.finetune.dev_seed << '\n';

  os << "\n[eval]\nmax_len = " << cfg.eval_max_len << '\n';
  return os.str();
}

}  // namespace duel::experiment
