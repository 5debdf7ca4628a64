// SPDX-License-Identifier: Apache-2.0
#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <map>
#include <set>

#include "i2c2w/charset.hpp"
#include "i2c2w/rng.hpp"

using namespace i2c2w;

TEST_CASE("character indices are a bijection with case folding") {
  CharSet cs;
  CHECK(cs.index_of('0') == 0);
  CHECK(cs.index_of('9') == 9);
  CHECK(cs.index_of('a') == 10);
  CHECK(cs.index_of('A') == cs.index_of('a'));
  CHECK(cs.index_of('z') == 35);
  CHECK(cs.index_of('-') == 36);
  CHECK(cs.size() == 37);
  CHECK(cs.null_index() == 36);
  CHECK_THROWS_AS(cs.index_of('#'), UnknownSymbol);
  CHECK_THROWS_AS(cs.index_of(' '), UnknownSymbol);

  std::set<int> seen;
  for (char c : std::string("0123456789abcdefghijklmnopqrstuvwxyz")) {
    const int idx = cs.index_of(c);
    CHECK(cs.symbol(idx) == c);
    seen.insert(idx);
  }
  CHECK(seen.size() == 36);
}

TEST_CASE("label derivation pads to N slots") {
  CharSet cs;
  PositionSet ps;  // N = 25

  SECTION("PORT") {
    const LabelSet labels = derive_labels("PORT", cs, ps);
    REQUIRE(labels.char_classes.size() == 25);
    REQUIRE(labels.pos_classes.size() == 25);
    CHECK(labels.word == "port");
    CHECK(labels.char_classes[0] == cs.index_of('p'));
    CHECK(labels.char_classes[1] == cs.index_of('o'));
    CHECK(labels.char_classes[2] == cs.index_of('r'));
    CHECK(labels.char_classes[3] == cs.index_of('t'));
    CHECK(labels.pos_classes[0] == 0);
    CHECK(labels.pos_classes[1] == 1);
    CHECK(labels.pos_classes[2] == 2);
    CHECK(labels.pos_classes[3] == 3);
    for (int i = 4; i < 25; ++i) {
      CHECK(labels.char_classes[i] == 36);
      CHECK(labels.pos_classes[i] == 25);
    }
  }

  SECTION("single character") {
    const LabelSet labels = derive_labels("a", cs, ps);
    CHECK(labels.char_classes[0] == cs.index_of('a'));
    CHECK(labels.pos_classes[0] == 0);
    for (int i = 1; i < 25; ++i) CHECK(labels.char_classes[i] == 36);
  }

  SECTION("length bound is N-2") {
    const std::string ok(23, 'a');
    CHECK_NOTHROW(derive_labels(ok, cs, ps));
    const std::string too_long(26, 'a');
    CHECK_THROWS_AS(derive_labels(too_long, cs, ps), WordTooLong);
    CHECK_THROWS_AS(derive_labels(std::string(24, 'a'), cs, ps), WordTooLong);
  }

  SECTION("normalization strips punctuation and folds case") {
    const LabelSet labels = derive_labels("Po-RT!", cs, ps);
    CHECK(labels.word == "port");
    CHECK_THROWS_AS(derive_labels("!!!", cs, ps), EmptyWord);
    CHECK_THROWS_AS(derive_labels("", cs, ps), EmptyWord);
  }
}

TEST_CASE("ctc collapse merges adjacent repeats then strips blanks") {
  const int blank = 36;
  const int h = 17, e = 14, l = 21;

  CHECK(ctc_collapse({blank, blank}, blank).empty());
  CHECK(ctc_collapse({h, h, e, blank, e, l}, blank) ==
        std::vector<int>{h, e, e, l});
  CHECK(ctc_collapse({}, blank).empty());
}

namespace {

// Independent one-liner restatement of the collapse map for the oracle.
std::vector<int> collapse_oracle(const std::vector<int>& seq, int blank) {
  std::vector<int> out;
  for (std::size_t i = 0; i < seq.size(); ++i)
    if (seq[i] != blank && (i == 0 || seq[i] != seq[i - 1])) out.push_back(seq[i]);
  return out;
}

}  // namespace

TEST_CASE("ctc collapse agrees with the enumeration oracle") {
  const int blank = 36;
  const std::vector<int> alphabet = {10, 11, blank};  // {a, b, blank}
  int count = 0;
  for (int a0 = 0; a0 < 3; ++a0)
    for (int a1 = 0; a1 < 3; ++a1)
      for (int a2 = 0; a2 < 3; ++a2)
        for (int a3 = 0; a3 < 3; ++a3) {
          const std::vector<int> seq = {alphabet[a0], alphabet[a1],
                                        alphabet[a2], alphabet[a3]};
          CHECK(ctc_collapse(seq, blank) == collapse_oracle(seq, blank));
          ++count;
        }
  CHECK(count == 81);
}

TEST_CASE("ctc collapse is idempotent when blanks separate repeats") {
  const int blank = 36;
  Rng rng(12345);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<int> seq(1 + rng.below(12));
    for (auto& v : seq) v = static_cast<int>(rng.below(37));
    const auto collapsed = ctc_collapse(seq, blank);
    // re-expand: insert a blank between equal neighbours
    std::vector<int> expanded;
    for (std::size_t i = 0; i < collapsed.size(); ++i) {
      if (i > 0 && collapsed[i] == collapsed[i - 1]) expanded.push_back(blank);
      expanded.push_back(collapsed[i]);
    }
    CHECK(ctc_collapse(expanded, blank) == collapsed);
  }
}

TEST_CASE("label derivation is injective and positions form 0..len-1") {
  CharSet cs;
  PositionSet ps;
  Rng rng(777);
  std::set<std::string> words;
  std::set<std::vector<int>> label_keys;
  for (int trial = 0; trial < 300; ++trial) {
    std::string w;
    const int len = 1 + static_cast<int>(rng.below(23));
    for (int i = 0; i < len; ++i)
      w.push_back(cs.symbol(static_cast<int>(rng.below(36))));
    words.insert(w);
    const LabelSet labels = derive_labels(w, cs, ps);

    // reconstruct by sorting non-null slots by position class
    std::map<int, char> by_pos;
    std::multiset<int> positions;
    for (int i = 0; i < ps.slots; ++i) {
      if (labels.char_classes[i] == cs.null_index()) {
        CHECK(labels.pos_classes[i] == ps.null_index());
        continue;
      }
      by_pos[labels.pos_classes[i]] = cs.symbol(labels.char_classes[i]);
      positions.insert(labels.pos_classes[i]);
    }
    std::string reconstructed;
    for (const auto& [pos, c] : by_pos) reconstructed.push_back(c);
    CHECK(reconstructed == w);

    std::multiset<int> expected;
    for (int i = 0; i < len; ++i) expected.insert(i);
    CHECK(positions == expected);

    std::vector<int> key = labels.char_classes;
    key.insert(key.end(), labels.pos_classes.begin(), labels.pos_classes.end());
    label_keys.insert(key);
  }
  CHECK(words.size() == label_keys.size());
}
