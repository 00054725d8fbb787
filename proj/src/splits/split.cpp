#include "duel/splits/split.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <set>
#include <unordered_map>

#include "duel/error.hpp"
#include "duel/util/kv.hpp"

namespace duel::splits {
namespace {

double mean_tokens(const data::Dataset& ds, bool input) {
  if (ds.empty()) return 0.0;
  double total = 0.0;
  for (const auto& ex : ds.examples) total += static_cast<double>(data::tokens(input ? ex.input : ex.output).size());
  return total / static_cast<double>(ds.size());
}

int max_tokens(const data::Dataset& ds) {
  std::size_t m = 0;
  for (const auto& ex : ds.examples) m = std::max(m, data::tokens(ex.input).size());
  return static_cast<int>(m);
}

std::string join_indices(const std::vector<std::size_t>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ' ';
    out += std::to_string(v[i]);
  }
  return out;
}

// Interned atoms and compounds of every example, for incremental search.
struct Index {
  std::vector<std::vector<std::pair<int, double>>> compounds;  // (id, count)
  std::vector<std::vector<int>> atoms;                          // distinct ids
  std::vector<std::string> atom_names;
  std::size_t num_compounds = 0;

  Index(const data::Dataset& ds, const ExtractorConfig& cfg) {
    std::unordered_map<std::string, int> cids, aids;
    for (const auto& ex : ds.examples) {
      const auto units = extract_units(ex, cfg);
      std::map<int, double> counts;
      for (const auto& c : units.compounds) {
        auto [it, fresh] = cids.emplace(c, static_cast<int>(cids.size()));
        counts[it->second] += 1.0;
      }
      compounds.emplace_back(counts.begin(), counts.end());
      std::set<int> as;
      for (const auto& a : units.atoms) {
        auto [it, fresh] = aids.emplace(a, static_cast<int>(aids.size()));
        if (fresh) atom_names.push_back(a);
        as.insert(it->second);
      }
      atoms.emplace_back(as.begin(), as.end());
    }
    num_compounds = cids.size();
  }
};

class SearchState {
 public:
  SearchState(const Index& idx, double alpha, std::vector<char> in_train)
      : idx_(idx), alpha_(alpha), in_train_(std::move(in_train)) {
    a_.assign(idx.num_compounds, 0.0);
    b_.assign(idx.num_compounds, 0.0);
    atom_train_.assign(idx.atom_names.size(), 0);
    atom_test_.assign(idx.atom_names.size(), 0);
    for (std::size_t e = 0; e < in_train_.size(); ++e) {
      auto& side = in_train_[e] ? a_ : b_;
      for (auto [c, n] : idx.compounds[e]) side[c] += n;
      auto& atoms = in_train_[e] ? atom_train_ : atom_test_;
      for (int a : idx.atoms[e]) ++atoms[a];
    }
    for (std::size_t k = 0; k < atom_train_.size(); ++k) violations_ += violated(atom_train_[k], atom_test_[k]);
    recompute();
  }

  struct Move {
    double divergence;  // NaN when a side would have no compounds
    int violations;
  };

  // Effect of swapping train example i with test example j.
  Move evaluate(std::size_t i, std::size_t j) {
    touched_.clear();
    for (auto [c, n] : idx_.compounds[i]) bump(c, -n);
    for (auto [c, n] : idx_.compounds[j]) bump(c, n);
    double s = s_, A = A_, B = B_;
    for (int c : touched_) {
      const double d = delta_[c];
      s -= term(a_[c], b_[c]);
      s += term(a_[c] + d, b_[c] - d);
      A += d;
      B -= d;
      delta_[c] = 0.0;
      mark_[c] = 0;
    }
    int v = violations_;
    for (int k : idx_.atoms[i]) {
      v -= violated(atom_train_[k], atom_test_[k]);
      v += violated(atom_train_[k] - 1 + has(j, k), atom_test_[k] + 1 - has(j, k));
    }
    for (int k : idx_.atoms[j]) {
      if (has(i, k)) continue;
      v -= violated(atom_train_[k], atom_test_[k]);
      v += violated(atom_train_[k] + 1, atom_test_[k] - 1);
    }
    return {divergence_of(s, A, B), v};
  }

  void commit(std::size_t i, std::size_t j) {
    for (auto [c, n] : idx_.compounds[i]) {
      a_[c] -= n;
      b_[c] += n;
    }
    for (auto [c, n] : idx_.compounds[j]) {
      a_[c] += n;
      b_[c] -= n;
    }
    for (int k : idx_.atoms[i]) {
      --atom_train_[k];
      ++atom_test_[k];
    }
    for (int k : idx_.atoms[j]) {
      ++atom_train_[k];
      --atom_test_[k];
    }
    in_train_[i] = 0;
    in_train_[j] = 1;
    violations_ = 0;
    for (std::size_t k = 0; k < atom_train_.size(); ++k) violations_ += violated(atom_train_[k], atom_test_[k]);
    recompute();
  }

  double divergence() const { return divergence_of(s_, A_, B_); }
  int violations() const { return violations_; }
  const std::vector<char>& in_train() const { return in_train_; }

  std::vector<std::string> violating_atoms() const {
    std::vector<std::string> out;
    for (std::size_t k = 0; k < atom_train_.size(); ++k) {
      if (violated(atom_train_[k], atom_test_[k])) out.push_back(idx_.atom_names[k]);
    }
    return out;
  }

  // True when example e carries an atom that is currently uncovered.
  bool carries_violation(std::size_t e) const {
    for (int k : idx_.atoms[e]) {
      if (violated(atom_train_[k], atom_test_[k])) return true;
    }
    return false;
  }

 private:
  static int violated(int train, int test) { return test > 0 && train == 0 ? 1 : 0; }

  bool has(std::size_t e, int atom) const {
    const auto& v = idx_.atoms[e];
    return std::binary_search(v.begin(), v.end(), atom);
  }

  double term(double a, double b) const {
    if (a <= 0.0 || b <= 0.0) return 0.0;
    return std::pow(a, alpha_) * std::pow(b, 1.0 - alpha_);
  }

  double divergence_of(double s, double A, double B) const {
    if (A <= 0.0 || B <= 0.0) return std::nan("");
    return 1.0 - s / (std::pow(A, alpha_) * std::pow(B, 1.0 - alpha_));
  }

  void bump(int c, double d) {
    if (delta_.size() < idx_.num_compounds) {
      delta_.assign(idx_.num_compounds, 0.0);
      mark_.assign(idx_.num_compounds, 0);
    }
    if (!mark_[c]) {
      mark_[c] = 1;
      touched_.push_back(c);
    }
    delta_[c] += d;
  }

  // Full recomputation on every accepted move keeps the sum free of drift.
  void recompute() {
    s_ = A_ = B_ = 0.0;
    for (std::size_t c = 0; c < a_.size(); ++c) {
      s_ += term(a_[c], b_[c]);
      A_ += a_[c];
      B_ += b_[c];
    }
  }

  const Index& idx_;
  double alpha_;
  std::vector<char> in_train_;
  std::vector<double> a_, b_;
  std::vector<int> atom_train_, atom_test_;
  int violations_ = 0;
  double s_ = 0.0, A_ = 0.0, B_ = 0.0;
  std::vector<double> delta_;
  std::vector<char> mark_;
  std::vector<int> touched_;
};

// Greedy cover of every atom of the dataset, preferring examples already in
// train. Empty when the cover does not fit in train.
std::vector<std::size_t> atom_cover(const Index& idx, const std::vector<char>& in_train, std::size_t train_size) {
  std::vector<char> covered(idx.atom_names.size(), 0), chosen(in_train.size(), 0);
  std::size_t left = idx.atom_names.size();
  std::vector<std::size_t> cover;
  while (left > 0) {
    std::size_t best_e = 0;
    int best_gain = 0;
    for (std::size_t e = 0; e < in_train.size(); ++e) {
      if (chosen[e]) continue;
      int fresh = 0;
      for (int a : idx.atoms[e]) fresh += !covered[a];
      const int gain = fresh == 0 ? 0 : 2 * fresh + (in_train[e] ? 1 : 0);
      if (gain > best_gain) {
        best_gain = gain;
        best_e = e;
      }
    }
    if (best_gain == 0) break;
    chosen[best_e] = 1;
    cover.push_back(best_e);
    for (int a : idx.atoms[best_e]) {
      if (!covered[a]) --left;
      covered[a] = 1;
    }
    if (cover.size() > train_size) return {};
  }
  return cover;
}

void repair_coverage(SearchState& st, const Index& idx, std::size_t n, std::size_t train_size, std::mt19937_64& rng) {
  // Min-conflicts walk: take the swap with the fewest resulting violations,
  // ties broken at random, so plateaus do not stop the repair early.
  std::size_t budget = 1000;
  while (st.violations() > 0 && budget-- > 0) {
    std::vector<std::size_t> train, test;
    for (std::size_t e = 0; e < n; ++e) (st.in_train()[e] ? train : test).push_back(e);
    int best = std::numeric_limits<int>::max();
    std::vector<std::pair<std::size_t, std::size_t>> ties;
    for (std::size_t j : test) {
      if (!st.carries_violation(j)) continue;
      for (std::size_t i : train) {
        const int v = st.evaluate(i, j).violations;
        if (v < best) {
          best = v;
          ties.clear();
        }
        if (v == best) ties.emplace_back(i, j);
      }
    }
    if (ties.empty() || best > st.violations()) break;
    const auto pick = ties[std::uniform_int_distribution<std::size_t>(0, ties.size() - 1)(rng)];
    st.commit(pick.first, pick.second);
  }
  if (st.violations() > 0) {
    std::vector<std::size_t> train;
    for (std::size_t e = 0; e < n; ++e) {
      if (st.in_train()[e]) train.push_back(e);
    }
    // Still stuck: move a whole atom cover into train.
    const auto cover = atom_cover(idx, st.in_train(), train_size);
    if (cover.empty()) {
      throw InputError("mcd split: atom coverage is infeasible at the requested sizes; uncovered atoms: " +
                       util::join(st.violating_atoms(), ", "));
    }
    std::vector<char> in_cover(n, 0);
    for (auto e : cover) in_cover[e] = 1;
    std::size_t out = 0;
    for (auto e : cover) {
      if (st.in_train()[e]) continue;
      while (!st.in_train()[train[out]] || in_cover[train[out]]) ++out;
      st.commit(train[out], e);
    }
  }
}

}  // namespace

std::string split_kind_name(SplitKind kind) {
  switch (kind) {
    case SplitKind::standard: return "standard";
    case SplitKind::length: return "length";
    case SplitKind::mcd: return "mcd";
  }
  return "standard";
}

SplitKind parse_split_kind(std::string_view name) {
  if (name == "standard") return SplitKind::standard;
  if (name == "length") return SplitKind::length;
  if (name == "mcd") return SplitKind::mcd;
  throw ConfigError("unknown split kind '" + std::string(name) + "'");
}

SplitPair make_split(const data::Dataset& dataset, std::vector<std::size_t> train_indices,
                     std::vector<std::size_t> test_indices, SplitKind kind, std::uint64_t seed,
                     const ExtractorConfig& extractor, const DivergenceConfig& divergence) {
  const std::size_t n = dataset.size();
  std::sort(train_indices.begin(), train_indices.end());
  std::sort(test_indices.begin(), test_indices.end());
  std::vector<int> seen(n, 0);
  for (auto i : train_indices) {
    if (i >= n) throw InputError("split index " + std::to_string(i) + " out of range");
    ++seen[i];
  }
  for (auto i : test_indices) {
    if (i >= n) throw InputError("split index " + std::to_string(i) + " out of range");
    ++seen[i];
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (seen[i] != 1) throw InputError("split does not partition the dataset at index " + std::to_string(i));
  }
  SplitPair out;
  out.kind = kind;
  out.seed = seed;
  out.train = data::subset(dataset, train_indices, dataset.name + "_train");
  out.test = data::subset(dataset, test_indices, dataset.name + "_test");
  out.train_indices = std::move(train_indices);
  out.test_indices = std::move(test_indices);

  const auto ptrain = extract_profile(out.train, extractor);
  const auto ptest = extract_profile(out.test, extractor);
  if (!ptrain.compound_counts.empty() && !ptest.compound_counts.empty()) {
    out.metrics.compound_divergence = compound_divergence(ptrain, ptest, divergence);
  }
  std::size_t covered = 0;
  for (const auto& [atom, count] : ptest.atom_counts) covered += ptrain.atom_counts.count(atom);
  out.metrics.atom_coverage =
      ptest.atom_counts.empty() ? 1.0 : static_cast<double>(covered) / static_cast<double>(ptest.atom_counts.size());
  out.metrics.train_mean_input_length = mean_tokens(out.train, true);
  out.metrics.test_mean_input_length = mean_tokens(out.test, true);
  out.metrics.train_mean_output_length = mean_tokens(out.train, false);
  out.metrics.test_mean_output_length = mean_tokens(out.test, false);
  out.metrics.train_max_input_length = max_tokens(out.train);
  out.metrics.test_max_input_length = max_tokens(out.test);
  return out;
}

std::size_t train_count(std::size_t n, double train_fraction) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
    throw InputError("train fraction must lie strictly inside (0, 1)");
  }
  if (n < 2) throw InputError("a split needs at least two examples");
  const auto k = static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(n)));
  return std::clamp<std::size_t>(k, 1, n - 1);
}

SplitPair standard_split(const data::Dataset& dataset, double train_fraction, std::uint64_t seed,
                         const ExtractorConfig& extractor) {
  const std::size_t k = train_count(dataset.size(), train_fraction);
  std::vector<std::size_t> order(dataset.size());
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::size_t> train(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k));
  std::vector<std::size_t> test(order.begin() + static_cast<std::ptrdiff_t>(k), order.end());
  return make_split(dataset, std::move(train), std::move(test), SplitKind::standard, seed, extractor);
}

SplitPair length_split(const data::Dataset& dataset, double train_fraction, const ExtractorConfig& extractor) {
  const std::size_t k = train_count(dataset.size(), train_fraction);
  std::vector<std::tuple<std::size_t, std::size_t, std::size_t>> keyed;
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    const auto& ex = dataset.examples[i];
    keyed.emplace_back(data::tokens(ex.input).size(), data::tokens(ex.output).size(), i);
  }
  std::sort(keyed.begin(), keyed.end());
  std::vector<std::size_t> train, test;
  for (std::size_t r = 0; r < keyed.size(); ++r) (r < k ? train : test).push_back(std::get<2>(keyed[r]));
  return make_split(dataset, std::move(train), std::move(test), SplitKind::length, 0, extractor);
}

SplitPair mcd_split_search(const data::Dataset& dataset, const McdConfig& cfg, std::uint64_t seed) {
  cfg.divergence.validate();
  const std::size_t n = dataset.size();
  if (cfg.train_size == 0 || cfg.test_size == 0) throw InputError("mcd split: both sides must be nonempty");
  if (cfg.train_size + cfg.test_size != n) {
    throw InputError("mcd split: sizes " + std::to_string(cfg.train_size) + "+" + std::to_string(cfg.test_size) +
                     " do not add up to the dataset size " + std::to_string(n));
  }
  if (cfg.restarts < 1) throw InputError("mcd split: restarts must be at least 1");
  const Index idx(dataset, cfg.extractor);
  std::mt19937_64 rng(seed);

  std::optional<std::vector<char>> best_split;
  std::vector<double> best_trace;
  double best = -1.0;
  for (int r = 0; r < cfg.restarts; ++r) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<char> in_train(n, 0);
    for (std::size_t p = 0; p < cfg.train_size; ++p) in_train[order[p]] = 1;
    SearchState st(idx, cfg.divergence.chernoff_alpha, std::move(in_train));
    repair_coverage(st, idx, n, cfg.train_size, rng);

    std::vector<std::size_t> train, test;
    for (std::size_t e = 0; e < n; ++e) (st.in_train()[e] ? train : test).push_back(e);
    std::uniform_int_distribution<std::size_t> pick_train(0, train.size() - 1), pick_test(0, test.size() - 1);
    std::vector<double> trace;
    double current = st.divergence();
    for (std::size_t it = 0; it < cfg.iterations; ++it) {
      const std::size_t pi = pick_train(rng), pj = pick_test(rng);
      const auto move = st.evaluate(train[pi], test[pj]);
      if (move.violations > 0 || std::isnan(move.divergence)) continue;
      if (!(std::isnan(current) || move.divergence > current + 1e-12)) continue;
      st.commit(train[pi], test[pj]);
      std::swap(train[pi], test[pj]);
      current = st.divergence();
      trace.push_back(current);
    }
    const double score = std::isnan(current) ? -1.0 : current;
    if (!best_split || score > best) {
      best = score;
      best_split = st.in_train();
      best_trace = std::move(trace);
    }
  }
  std::vector<std::size_t> train, test;
  for (std::size_t e = 0; e < n; ++e) ((*best_split)[e] ? train : test).push_back(e);
  auto out = make_split(dataset, std::move(train), std::move(test), SplitKind::mcd, seed, cfg.extractor,
                        cfg.divergence);
  out.trace = std::move(best_trace);
  return out;
}

double split_divergence(const data::Dataset& dataset, const std::vector<std::size_t>& train_indices,
                        const std::vector<std::size_t>& test_indices, const ExtractorConfig& extractor,
                        const DivergenceConfig& divergence) {
  return compound_divergence(extract_profile(data::subset(dataset, train_indices, "train"), extractor),
                             extract_profile(data::subset(dataset, test_indices, "test"), extractor), divergence);
}

bool atoms_covered(const data::Dataset& dataset, const std::vector<std::size_t>& train_indices,
                   const std::vector<std::size_t>& test_indices, const ExtractorConfig& extractor) {
  const auto ptrain = extract_profile(data::subset(dataset, train_indices, "train"), extractor);
  const auto ptest = extract_profile(data::subset(dataset, test_indices, "test"), extractor);
  for (const auto& [atom, count] : ptest.atom_counts) {
    if (!ptrain.atom_counts.count(atom)) return false;
  }
  return true;
}

std::string to_manifest(const SplitPair& split, std::string_view source_name) {
  const auto& m = split.metrics;
  std::string out;
  const auto line = [&out](std::string_view k, const std::string& v) {
    out += std::string(k) + " = " + v + "\n";
  };
  line("kind", split_kind_name(split.kind));
  line("seed", std::to_string(split.seed));
  line("source", std::string(source_name));
  if (m.compound_divergence) line("compound_divergence", util::format_double(*m.compound_divergence));
  line("atom_coverage", util::format_double(m.atom_coverage));
  line("train_mean_input_length", util::format_double(m.train_mean_input_length));
  line("test_mean_input_length", util::format_double(m.test_mean_input_length));
  line("train_mean_output_length", util::format_double(m.train_mean_output_length));
  line("test_mean_output_length", util::format_double(m.test_mean_output_length));
  line("train_size", std::to_string(split.train_indices.size()));
  line("test_size", std::to_string(split.test_indices.size()));
  line("train", join_indices(split.train_indices));
  line("test", join_indices(split.test_indices));
  return out;
}

SplitManifest parse_manifest(std::string_view text) {
  SplitManifest m;
  bool has_kind = false, has_train = false, has_test = false;
  const auto indices = [](const std::string& v, const std::string& key) {
    std::vector<std::size_t> out;
    for (const auto& t : util::split_whitespace(v)) out.push_back(static_cast<std::size_t>(util::to_uint64(t, key)));
    return out;
  };
  for (const auto& [k, v] : util::parse_kv_lines(text)) {
    if (k == "kind") {
      m.kind = parse_split_kind(v);
      has_kind = true;
    } else if (k == "seed") {
      m.seed = util::to_uint64(v, k);
    } else if (k == "source") {
      m.source = v;
    } else if (k == "train") {
      m.train_indices = indices(v, k);
      has_train = true;
    } else if (k == "test") {
      m.test_indices = indices(v, k);
      has_test = true;
    }
  }
  if (!has_kind || !has_train || !has_test) throw ConfigError("split manifest needs kind, train, and test entries");
  return m;
}

void save_manifest(const std::filesystem::path& path, const SplitPair& split, std::string_view source_name) {
  util::write_file(path.string(), to_manifest(split, source_name));
}

SplitManifest load_manifest(const std::filesystem::path& path) { return parse_manifest(util::read_file(path.string())); }

SplitPair apply_manifest(const data::Dataset& dataset, const SplitManifest& manifest,
                         const ExtractorConfig& extractor) {
  return make_split(dataset, manifest.train_indices, manifest.test_indices, manifest.kind, manifest.seed, extractor);
}

}  // namespace duel::splits
