#include "duel/eval/exact_match.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "duel/error.hpp"
#include "duel/util/kv.hpp"

namespace duel::eval {
namespace {

void tally(EvalResult& r, const std::optional<std::string>& category, bool correct) {
  ++r.total;
  auto& c = r.per_category[category ? *category : kUntagged];
  ++c.total;
  if (correct) {
    ++r.correct;
    ++c.correct;
  }
}

void finish(EvalResult& r) {
  r.accuracy = r.total ? static_cast<double>(r.correct) / static_cast<double>(r.total) : 0.0;
}

}  // namespace

bool sequences_match(std::string_view reference, std::string_view prediction) {
  return data::tokens(reference) == data::tokens(prediction);
}

EvalResult score_predictions(const data::Dataset& references, const std::vector<std::string>& predictions,
                             const std::vector<bool>& truncated) {
  if (predictions.size() != references.size()) {
    throw InputError("score_predictions: " + std::to_string(predictions.size()) + " predictions for " +
                     std::to_string(references.size()) + " references");
  }
  EvalResult r;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    const auto& ex = references.examples[i];
    tally(r, ex.category, sequences_match(ex.output, predictions[i]));
    if (i < truncated.size() && truncated[i]) ++r.truncated;
  }
  finish(r);
  return r;
}

EvalResult exact_match(const grad::ParamStore& params, const model::ModelConfig& config,
                       const data::Vocabulary& vocab, const data::Dataset& dataset, int max_len,
                       std::vector<Prediction>* predictions) {
  util::tune_allocator();
  if (max_len <= 0) max_len = config.max_tgt_len;
  std::vector<std::vector<int>> srcs;
  srcs.reserve(dataset.size());
  for (const auto& ex : dataset.examples) srcs.push_back(vocab.encode(ex.input));
  const auto decoded = model::greedy_decode_batch(params, config, srcs, max_len);
  std::vector<std::string> texts;
  std::vector<bool> truncated;
  for (const auto& d : decoded) {
    texts.push_back(vocab.decode(d.ids));
    truncated.push_back(d.hit_max_len);
  }
  auto result = score_predictions(dataset, texts, truncated);
  if (predictions) {
    predictions->clear();
    for (std::size_t i = 0; i < dataset.size(); ++i) {
      const auto& ex = dataset.examples[i];
      predictions->push_back({ex.input, ex.output, texts[i], sequences_match(ex.output, texts[i]), truncated[i],
                              ex.category ? *ex.category : kUntagged});
    }
  }
  return result;
}

double exact_match_ids(const grad::ParamStore& params, const model::ModelConfig& config,
                       std::span<const model::SeqPair> pairs, int max_len) {
  if (pairs.empty()) return 0.0;
  util::tune_allocator();
  if (max_len <= 0) max_len = config.max_tgt_len;
  std::vector<std::vector<int>> srcs;
  srcs.reserve(pairs.size());
  for (const auto& p : pairs) srcs.push_back(p.src);
  const auto decoded = model::greedy_decode_batch(params, config, srcs, max_len);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < pairs.size(); ++i) correct += decoded[i].ids == pairs[i].tgt;
  return static_cast<double>(correct) / static_cast<double>(pairs.size());
}

std::vector<CategoryRow> category_breakdown(const EvalResult& result) {
  std::vector<CategoryRow> rows;
  for (const auto& [name, c] : result.per_category) {
    if (c.total == 0) continue;
    rows.push_back({name, c.total, c.correct, c.accuracy()});
  }
  rows.push_back({"overall", result.total, result.correct, result.accuracy});
  return rows;
}

std::string to_text(const EvalResult& r) {
  std::string out;
  out += "total = " + std::to_string(r.total) + "\n";
  out += "correct = " + std::to_string(r.correct) + "\n";
  out += "accuracy = " + util::format_double(r.accuracy) + "\n";
  out += "truncated = " + std::to_string(r.truncated) + "\n";
  for (const auto& [name, c] : r.per_category) {
    out += "category." + name + ".total = " + std::to_string(c.total) + "\n";
    out += "category." + name + ".correct = " + std::to_string(c.correct) + "\n";
    out += "category." + name + ".accuracy = " + util::format_double(c.accuracy()) + "\n";
  }
  return out;
}

EvalResult eval_result_from_text(std::string_view text) {
  EvalResult r;
  for (const auto& [k, v] : util::parse_kv_lines(text)) {
    if (k == "total") {
      r.total = util::to_uint64(v, k);
    } else if (k == "correct") {
      r.correct = util::to_uint64(v, k);
    } else if (k == "accuracy") {
      r.accuracy = util::to_double(v, k);
    } else if (k == "truncated") {
      r.truncated = util::to_uint64(v, k);
    } else if (k.rfind("category.", 0) == 0) {
      const auto dot = k.rfind('.');
      const auto name = k.substr(9, dot - 9);
      const auto field = k.substr(dot + 1);
      if (field == "total") r.per_category[name].total = util::to_uint64(v, k);
      if (field == "correct") r.per_category[name].correct = util::to_uint64(v, k);
    }
  }
  return r;
}

std::string predictions_tsv(const std::vector<Prediction>& predictions) {
  std::string out = "input\treference\tprediction\tcorrect\tcategory\n";
  for (const auto& p : predictions) {
    out += p.input + "\t" + p.reference + "\t" + p.prediction + "\t" + (p.correct ? "1" : "0") + "\t" + p.category +
           "\n";
  }
  return out;
}

std::pair<data::Dataset, data::Dataset> make_validation_holdout(const data::Dataset& dataset, HoldoutSize size,
                                                                std::uint64_t seed) {
  const std::size_t n = dataset.size();
  std::size_t k = 0;
  if (size.fraction && size.count) throw InputError("holdout: give a fraction or a count, not both");
  if (size.fraction) {
    if (!(*size.fraction > 0.0 && *size.fraction < 1.0)) throw InputError("holdout fraction must lie in (0, 1)");
    k = static_cast<std::size_t>(std::llround(*size.fraction * static_cast<double>(n)));
  } else if (size.count) {
    k = *size.count;
  } else {
    throw InputError("holdout: no size given");
  }
  if (k == 0 || k >= n) {
    throw InputError("holdout of " + std::to_string(k) + " examples is not strictly inside a dataset of " +
                     std::to_string(n));
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::size_t> hold(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k));
  std::vector<std::size_t> rest(order.begin() + static_cast<std::ptrdiff_t>(k), order.end());
  std::sort(hold.begin(), hold.end());
  std::sort(rest.begin(), rest.end());
  return {data::subset(dataset, hold, dataset.name + "_holdout"), data::subset(dataset, rest, dataset.name + "_rest")};
}

}  // namespace duel::eval
