#include "duel/data/mini_scan.hpp"

#include <algorithm>
#include <cctype>
#include <random>

#include "duel/error.hpp"
#include "duel/util/kv.hpp"

namespace duel::data {
namespace {

using Words = std::vector<std::string>;

bool is_keyword(std::string_view w) {
  return w == "and" || w == "after" || w == "twice" || w == "thrice" || w == "opposite" || w == "around" ||
         w == "left" || w == "right" || w == "turn";
}

std::string upper(std::string_view w) {
  std::string out(w);
  for (char& c : out) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  return out;
}

Words primitive_actions(const std::string& verb) {
  if (verb == "turn") return {};
  return {upper(verb)};
}

// V := U | U dir | U opposite dir | U around dir
Words interpret_verb_phrase(const Words& w, std::string_view command) {
  const auto bad = [&] { return InputError("not a SCAN command: '" + std::string(command) + "'"); };
  if (w.empty() || (is_keyword(w[0]) && w[0] != "turn")) throw bad();
  const Words act = primitive_actions(w[0]);
  if (w.size() == 1) {
    if (w[0] == "turn") throw bad();
    return act;
  }
  const auto turn_of = [&](const std::string& dir) -> std::string {
    if (dir == "left") return "LTURN";
    if (dir == "right") return "RTURN";
    throw bad();
  };
  Words out;
  if (w.size() == 2) {
    out.push_back(turn_of(w[1]));
    out.insert(out.end(), act.begin(), act.end());
    return out;
  }
  if (w.size() == 3 && w[1] == "opposite") {
    const auto t = turn_of(w[2]);
    out = {t, t};
    out.insert(out.end(), act.begin(), act.end());
    return out;
  }
  if (w.size() == 3 && w[1] == "around") {
    const auto t = turn_of(w[2]);
    for (int i = 0; i < 4; ++i) {
      out.push_back(t);
      out.insert(out.end(), act.begin(), act.end());
    }
    return out;
  }
  throw bad();
}

// S := V | V twice | V thrice
Words interpret_phrase(Words w, std::string_view command) {
  int repeat = 1;
  if (!w.empty() && (w.back() == "twice" || w.back() == "thrice")) {
    repeat = w.back() == "twice" ? 2 : 3;
    w.pop_back();
  }
  const Words once = interpret_verb_phrase(w, command);
  Words out;
  for (int i = 0; i < repeat; ++i) out.insert(out.end(), once.begin(), once.end());
  return out;
}

Words verb_phrases(const MiniScanConfig& cfg) {
  Words verbs = cfg.primitives;
  Words out = cfg.primitives;
  if (cfg.turn) verbs.push_back("turn");
  for (const char* dir : {"left", "right"}) {
    if (cfg.directions) {
      for (const auto& u : verbs) out.push_back(u + " " + dir);
    }
    if (cfg.opposite) {
      for (const auto& u : verbs) out.push_back(u + " opposite " + dir);
    }
    if (cfg.around) {
      for (const auto& u : verbs) out.push_back(u + " around " + dir);
    }
  }
  return out;
}

}  // namespace

std::string interpret_scan(std::string_view command) {
  const Words w = util::split_whitespace(command);
  const auto conj = std::find_if(w.begin(), w.end(), [](const auto& t) { return t == "and" || t == "after"; });
  if (conj == w.end()) return util::join(interpret_phrase(w, command), " ");
  const Words left(w.begin(), conj), right(conj + 1, w.end());
  Words a = interpret_phrase(left, command);
  Words b = interpret_phrase(right, command);
  if (*conj == "after") std::swap(a, b);
  a.insert(a.end(), b.begin(), b.end());
  return util::join(a, " ");
}

Dataset generate_mini_scan(const MiniScanConfig& cfg, std::uint64_t seed, std::string name) {
  if (cfg.primitives.empty()) throw InputError("mini-SCAN needs at least one primitive");
  for (const auto& p : cfg.primitives) {
    if (is_keyword(p) || p.find_first_of(" \t") != std::string::npos) {
      throw InputError("invalid mini-SCAN primitive '" + p + "'");
    }
  }
  Words phrases;
  for (const auto& v : verb_phrases(cfg)) {
    phrases.push_back(v);
    if (cfg.repetition) {
      phrases.push_back(v + " twice");
      phrases.push_back(v + " thrice");
    }
  }
  Words commands = phrases;
  if (cfg.conjunctions) {
    for (const char* c : {" and ", " after "}) {
      for (const auto& a : phrases) {
        for (const auto& b : phrases) commands.push_back(a + c + b);
      }
    }
  }
  if (cfg.max_examples > 0 && cfg.max_examples < commands.size()) {
    std::mt19937_64 rng(seed);
    std::shuffle(commands.begin(), commands.end(), rng);
    commands.resize(cfg.max_examples);
  }
  Dataset ds{std::move(name), {}};
  ds.examples.reserve(commands.size());
  for (auto& c : commands) {
    auto out = interpret_scan(c);
    ds.examples.push_back({std::move(c), std::move(out), std::nullopt});
  }
  return ds;
}

}  // namespace duel::data
