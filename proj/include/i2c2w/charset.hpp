// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cctype>
#include <string>
#include <string_view>
#include <vector>

#include "i2c2w/errors.hpp"

namespace i2c2w {

// The recognition alphabet: digits, lowercase letters and one extra
// "not a character" class that doubles as the CTC blank.
class CharSet {
 public:
  static constexpr int kNumSymbols = 36;
  static constexpr int kNullIndex = 36;
  static constexpr char kNullMarker = '-';

  int size() const { return kNumSymbols + 1; }
  int null_index() const { return kNullIndex; }

  // Bijective index of a symbol. Uppercase input is folded to lowercase.
  int index_of(char c) const {
    if (c >= '0' && c <= '9') return c - '0';
    if (c >= 'a' && c <= 'z') return 10 + (c - 'a');
    if (c >= 'A' && c <= 'Z') return 10 + (c - 'A');
    if (c == kNullMarker) return kNullIndex;
    throw UnknownSymbol(c);
  }

  char symbol(int index) const {
    if (index >= 0 && index < 10) return static_cast<char>('0' + index);
    if (index >= 10 && index < kNumSymbols)
      return static_cast<char>('a' + (index - 10));
    if (index == kNullIndex) return kNullMarker;
    throw BadDim("character index " + std::to_string(index) +
                 " outside [0, 36]");
  }
};

// The relative-position alphabet: N in-word slots plus one
// "not belongs to words" class.
struct PositionSet {
  int slots = 25;  // number of detection slots

  int null_index() const { return slots; }
  int size() const { return slots + 1; }
  // Two slots are kept free so the detector can emit redundant candidates.
  int max_word_length() const { return slots - 2; }
};

// Per-image ground truth: N (character class, position class) pairs.
struct LabelSet {
  std::vector<int> char_classes;
  std::vector<int> pos_classes;
  std::string word;  // normalized transcription
};

// Lowercase and strip everything outside [0-9a-z].
inline std::string normalize_word(std::string_view raw) {
  std::string out;
  out.reserve(raw.size());
  for (char c : raw) {
    const unsigned char u = static_cast<unsigned char>(c);
    if (std::isdigit(u)) {
      out.push_back(c);
    } else if (std::isalpha(u)) {
      out.push_back(static_cast<char>(std::tolower(u)));
    }
  }
  return out;
}

// Ground-truth label derivation: character i of the word occupies slot i with
// position class i; the remaining slots are (null char, null position).
inline LabelSet derive_labels(std::string_view raw, const CharSet& cs,
                              const PositionSet& ps) {
  const std::string word = normalize_word(raw);
  if (word.empty()) throw EmptyWord();
  if (static_cast<int>(word.size()) > ps.max_word_length())
    throw WordTooLong(word.size(), ps.max_word_length());

  LabelSet labels;
  labels.word = word;
  labels.char_classes.assign(ps.slots, cs.null_index());
  labels.pos_classes.assign(ps.slots, ps.null_index());
  for (int i = 0; i < static_cast<int>(word.size()); ++i) {
    labels.char_classes[i] = cs.index_of(word[i]);
    labels.pos_classes[i] = i;
  }
  return labels;
}

// CTC collapse: merge adjacent duplicates, then drop blanks.
inline std::vector<int> ctc_collapse(const std::vector<int>& seq, int blank) {
  std::vector<int> out;
  out.reserve(seq.size());
  int prev = -1;
  for (int v : seq) {
    if (v != prev) out.push_back(v);
    prev = v;
  }
  std::erase(out, blank);
  return out;
}

inline std::string classes_to_string(const std::vector<int>& classes,
                                     const CharSet& cs) {
  std::string out;
  out.reserve(classes.size());
  for (int c : classes) out.push_back(cs.symbol(c));
  return out;
}

}  // namespace i2c2w
