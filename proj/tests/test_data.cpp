#include <doctest.h>

#include <algorithm>
#include <set>
#include <sstream>

#include "duel/data/dataset.hpp"
#include "duel/data/lexicon.hpp"
#include "duel/data/mini_scan.hpp"
#include "duel/data/vocab.hpp"
#include "duel/error.hpp"
#include "duel/tokens.hpp"
#include "helpers.hpp"

using namespace duel;
using namespace duel::data;

namespace {

std::vector<std::string> words(const std::string& s) {
  std::istringstream in(s);
  std::vector<std::string> out;
  for (std::string w; in >> w;) out.push_back(w);
  return out;
}

std::string upper(std::string s) {
  for (auto& c : s) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  return s;
}

// Straightforward reference semantics for the command grammar.
std::vector<std::string> oracle_verb(const std::vector<std::string>& w) {
  const auto act = [](const std::string& u) { return u == "turn" ? std::vector<std::string>{} : std::vector{upper(u)}; };
  const auto turn = [](const std::string& d) { return d == "left" ? std::string("LTURN") : std::string("RTURN"); };
  std::vector<std::string> out;
  const auto push = [&](const std::vector<std::string>& xs) { out.insert(out.end(), xs.begin(), xs.end()); };
  if (w.size() == 1) {
    push(act(w[0]));
  } else if (w.size() == 2) {
    out.push_back(turn(w[1]));
    push(act(w[0]));
  } else if (w.size() == 3 && w[1] == "opposite") {
    out.push_back(turn(w[2]));
    out.push_back(turn(w[2]));
    push(act(w[0]));
  } else if (w.size() == 3 && w[1] == "around") {
    for (int i = 0; i < 4; ++i) {
      out.push_back(turn(w[2]));
      push(act(w[0]));
    }
  } else {
    throw std::logic_error("oracle: unexpected verb phrase");
  }
  return out;
}

std::vector<std::string> oracle_sentence(std::vector<std::string> w) {
  int times = 1;
  if (w.back() == "twice") times = 2;
  if (w.back() == "thrice") times = 3;
  if (times > 1) w.pop_back();
  const auto once = oracle_verb(w);
  std::vector<std::string> out;
  for (int i = 0; i < times; ++i) out.insert(out.end(), once.begin(), once.end());
  return out;
}

std::string oracle_command(const std::string& command) {
  const auto w = words(command);
  for (std::size_t i = 0; i < w.size(); ++i) {
    if (w[i] == "and" || w[i] == "after") {
      std::vector<std::string> left(w.begin(), w.begin() + i), right(w.begin() + i + 1, w.end());
      auto a = oracle_sentence(left), b = oracle_sentence(right);
      if (w[i] == "after") std::swap(a, b);
      a.insert(a.end(), b.begin(), b.end());
      std::string s;
      for (const auto& t : a) s += (s.empty() ? "" : " ") + t;
      return s;
    }
  }
  std::string s;
  for (const auto& t : oracle_sentence(w)) s += (s.empty() ? "" : " ") + t;
  return s;
}

LexiconTable emma_lexicon() {
  return LexiconTable::parse(
      "proper_noun\tEmma\tTrudy\n"
      "verb\tate\tconsumed\teat\tconsume\n"
      "noun\tring\thoop\n"
      "noun\tbed\tlayer\n");
}

}  // namespace

TEST_CASE("tsv parsing") {
  const auto ds = parse_tsv("jump twice\tJUMP JUMP\nlook\tLOOK\tprim\n", "t");
  REQUIRE(ds.size() == 2);
  CHECK(ds.examples[0] == Example{"jump twice", "JUMP JUMP", std::nullopt});
  CHECK(ds.examples[1].category == "prim");

  try {
    parse_tsv("a\tA\nbroken line\n", "bad");
    FAIL("expected InputError");
  } catch (const InputError& e) {
    CHECK(std::string(e.what()).find(":2:") != std::string::npos);
  }
  CHECK_THROWS_AS(parse_tsv("a\tA\tc\td\n", "t"), InputError);
  CHECK_THROWS_AS(parse_tsv("", "t"), InputError);
  CHECK_THROWS_AS(parse_tsv("\n\n", "t"), InputError);
}

TEST_CASE("tsv line count and save/load identity") {
  Dataset big{"big", {}};
  for (int i = 0; i < 24155; ++i) big.examples.push_back({"w" + std::to_string(i), "X", std::nullopt});
  CHECK(parse_tsv(to_tsv(big), "big").size() == 24155);

  const auto ds = test::make_dataset("d", {{"walk left", "LTURN WALK"}, {"run", "RUN"}});
  const auto dir = test::scratch_dir("tsv");
  save_tsv(dir / "d.tsv", ds);
  CHECK(load_tsv(dir / "d.tsv", "d") == ds);
  CHECK(load_tsv(dir / "d.tsv").name == "d");
}

TEST_CASE("prompts prepend the tag") {
  const auto scan = apply_prompt(test::make_dataset("s", {{"jump twice", "JUMP JUMP"}}), "scan");
  CHECK(scan.examples[0].input == "scan: jump twice");
  CHECK(scan.examples[0].output == "JUMP JUMP");
  const auto cogs = apply_prompt(test::make_dataset("c", {{"A rose was helped by a dog .", "x"}}), "cogs");
  CHECK(cogs.examples[0].input == "cogs: A rose was helped by a dog .");
  CHECK(apply_prompt(scan, "scan").examples[0].input == "scan: scan: jump twice");
  CHECK_THROWS_AS(apply_prompt(scan, ""), InputError);
  CHECK_THROWS_AS(apply_prompt(scan, "a b"), InputError);
}

TEST_CASE("vocabulary") {
  Vocabulary v;
  CHECK(v.size() == 4);
  CHECK(v.id("<pad>") == kPadId);
  const int jump = v.add("JUMP");
  CHECK(jump == 4);
  CHECK(v.add("JUMP") == jump);
  CHECK(v.encode("JUMP zzz") == std::vector<int>{jump, kUnkId});
  CHECK(v.decode({kBosId, jump, jump, kEosId, kPadId}) == "JUMP JUMP");
  CHECK_THROWS_AS(v.token(99), InputError);
  CHECK(Vocabulary::from_text(v.to_text()) == v);

  const auto scan = generate_mini_scan({}, 1);
  const auto sv = build_vocab({&scan});
  for (const char* t : {"JUMP", "LTURN", "after", "around", "thrice"}) CHECK(sv.contains(t));
  for (const auto& ex : scan.examples) {
    CHECK(sv.decode(sv.encode(ex.input)) == ex.input);
    CHECK(sv.decode(sv.encode(ex.output)) == ex.output);
  }
  CHECK_THROWS_AS(Vocabulary::from_text("a\nb\nc\nd\n"), InputError);
}

TEST_CASE("mini-SCAN interpretation") {
  CHECK(interpret_scan("jump twice") == "JUMP JUMP");
  CHECK(interpret_scan("look") == "LOOK");
  CHECK(interpret_scan("run around right after look opposite left") ==
        "LTURN LTURN LOOK RTURN RUN RTURN RUN RTURN RUN RTURN RUN");
  CHECK(interpret_scan("turn left twice") == "LTURN LTURN");
  CHECK_THROWS_AS(interpret_scan(""), InputError);
  CHECK_THROWS_AS(interpret_scan("jump jump"), InputError);
  CHECK_THROWS_AS(interpret_scan("turn"), InputError);
  CHECK_THROWS_AS(interpret_scan("jump and"), InputError);
}

TEST_CASE("mini-SCAN generation matches the reference interpreter and count") {
  const auto full = generate_mini_scan({}, 1);
  const std::size_t p = 4;
  const std::size_t verbs = p + 6 * (p + 1);
  const std::size_t sentences = 3 * verbs;
  CHECK(full.size() == sentences + 2 * sentences * sentences);
  std::set<std::string> inputs;
  for (const auto& ex : full.examples) {
    CHECK(ex.output == oracle_command(ex.input));
    inputs.insert(ex.input);
  }
  CHECK(inputs.size() == full.size());

  MiniScanConfig small;
  small.max_examples = 300;
  const auto a = generate_mini_scan(small, 5);
  CHECK(a.size() == 300);
  CHECK(a == generate_mini_scan(small, 5));
  CHECK_FALSE(a == generate_mini_scan(small, 6));
  for (const auto& ex : a.examples) CHECK(inputs.count(ex.input) == 1);
}

TEST_CASE("mini-SCAN knobs shrink the grammar") {
  MiniScanConfig c;
  c.conjunctions = false;
  c.repetition = false;
  c.opposite = false;
  c.around = false;
  c.turn = false;
  CHECK(generate_mini_scan(c, 1).size() == 4 + 4 * 2);
  c.primitives = {};
  CHECK_THROWS_AS(generate_mini_scan(c, 1), InputError);
}

TEST_CASE("lexicon table parsing and validation") {
  const auto lex = emma_lexicon();
  CHECK(lex.entries().size() == 4);
  CHECK(LexiconTable::parse(lex.to_text()).to_text() == lex.to_text());
  CHECK(lex.find("ate")->stem() == "eat");
  CHECK(lex.find("ring")->stem() == "ring");
  CHECK(lex.find("ate")->alternative_stem(0) == "consume");
  CHECK_THROWS_AS(LexiconTable::parse("noun\tdog\tcat\nnoun\tdog\tbird\n"), InputError);
  CHECK_THROWS_AS(LexiconTable::parse("noun\tdog\tcat\nnoun\tcat\tbird\n"), InputError);
  CHECK_THROWS_AS(LexiconTable::parse("noun\tdog\tdog\n"), InputError);
  CHECK_THROWS_AS(LexiconTable::parse("adverb\tfast\tquick\n"), InputError);
  CHECK_THROWS_AS(LexiconTable::parse("verb\tate\ta,b\teat\tx\n"), InputError);
}

TEST_CASE("lexical variant rewrites inputs and output stems") {
  const auto ds = test::make_dataset(
      "cogs", {{"Emma ate the ring beside a bed .", "eat . agent ( x _ 1 , Emma ) AND ring ( x _ 3 ) AND bed ( x _ 6 )"}});
  const auto v = make_lexical_variant(ds, emma_lexicon(), 1);
  CHECK(v.dataset.examples[0].input == "Trudy consumed the hoop beside a layer .");
  CHECK(v.dataset.examples[0].output ==
        "consume . agent ( x _ 1 , Trudy ) AND hoop ( x _ 3 ) AND layer ( x _ 6 )");
  CHECK(v.mapping.at("ate") == "consumed");
  CHECK(v.stem_mapping.at("eat") == "consume");
  CHECK(apply_case_pattern("JUMP", "leap") == "LEAP");
  CHECK(apply_case_pattern("Emma", "trudy") == "Trudy");
  CHECK(apply_case_pattern("ring", "hoop") == "hoop");
}

TEST_CASE("empty lexicon is the identity") {
  const auto ds = generate_mini_scan({}, 1);
  const auto v = make_lexical_variant(ds, LexiconTable{}, 3);
  CHECK(v.dataset.examples == ds.examples);
  CHECK(v.mapping.empty());
}

TEST_CASE("synthetic variant: determinism, structure, disjointness") {
  MiniScanConfig cfg;
  cfg.max_examples = 500;
  const auto ds = generate_mini_scan(cfg, 2);
  const auto lex = synthetic_lexicon(
      {{"walk", WordClass::verb}, {"look", WordClass::verb}, {"run", WordClass::verb}, {"jump", WordClass::verb},
       {"turn", WordClass::verb}},
      5, 7);
  const auto a = make_lexical_variant(ds, lex, 11);
  CHECK(a.dataset.examples == make_lexical_variant(ds, lex, 11).dataset.examples);

  std::set<std::string> images;
  for (const auto& [src, dst] : a.mapping) {
    CHECK(images.insert(dst).second);  // 1-to-1
    CHECK(lex.find(src) != nullptr);
  }
  std::set<std::string> original_vocab, variant_vocab;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const auto wi = words(ds.examples[i].input), vi = words(a.dataset.examples[i].input);
    REQUIRE(wi.size() == vi.size());
    for (std::size_t k = 0; k < wi.size(); ++k) {
      const auto it = a.mapping.find(wi[k]);
      CHECK(vi[k] == (it == a.mapping.end() ? wi[k] : it->second));
    }
    CHECK(words(ds.examples[i].output).size() == words(a.dataset.examples[i].output).size());
    CHECK(a.dataset.examples[i].input != ds.examples[i].input);
    original_vocab.insert(wi.begin(), wi.end());
    variant_vocab.insert(vi.begin(), vi.end());
  }
  for (const auto& [src, dst] : a.mapping) {
    CHECK(variant_vocab.count(src) == 0);
    CHECK(original_vocab.count(dst) == 0);
  }
  // Seeds choose among alternatives, so some seed gives a different mapping.
  bool differs = false;
  for (std::uint64_t s = 12; s < 20 && !differs; ++s) differs = make_lexical_variant(ds, lex, s).mapping != a.mapping;
  CHECK(differs);
}

TEST_CASE("taken alternatives fall through; exhaustion is an error") {
  const auto ds = test::make_dataset("d", {{"dog cat", "dog cat"}});
  const auto lex = LexiconTable::parse("noun\tdog\tpup\nnoun\tcat\tpup,kitty\n");
  for (std::uint64_t s = 0; s < 10; ++s) {
    try {
      const auto v = make_lexical_variant(ds, lex, s);
      CHECK(v.mapping.at("dog") != v.mapping.at("cat"));
    } catch (const InputError&) {
      // cat took pup first; dog has nothing left
    }
  }
  const auto clash = LexiconTable::parse("noun\tdog\tpup\nnoun\tcat\tpup\n");
  CHECK_THROWS_AS(make_lexical_variant(ds, clash, 1), InputError);
}
