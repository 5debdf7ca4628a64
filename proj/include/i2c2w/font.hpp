// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <string_view>

#include "i2c2w/charset.hpp"

namespace i2c2w {

// Embedded 5x7 bitmap font covering the 36-symbol alphabet. Letter glyphs use
// the classic upper-case LED shapes; class labels stay lowercase regardless.
struct FontAtlas {
  static constexpr int kGlyphWidth = 5;
  static constexpr int kGlyphHeight = 7;

  // true where the glyph has ink
  bool ink(int symbol_index, int x, int y) const {
    return glyph_rows(symbol_index)[y][x] == '#';
  }

  static const std::array<std::string_view, kGlyphHeight>& glyph_rows(
      int symbol_index) {
    using Rows = std::array<std::string_view, kGlyphHeight>;
    static const std::array<Rows, 36> glyphs = {{
        // 0-9
        {".###.", "#...#", "#..##", "#.#.#", "##..#", "#...#", ".###."},
        {"..#..", ".##..", "..#..", "..#..", "..#..", "..#..", ".###."},
        {".###.", "#...#", "....#", "...#.", "..#..", ".#...", "#####"},
        {".###.", "#...#", "....#", "..##.", "....#", "#...#", ".###."},
        {"...#.", "..##.", ".#.#.", "#..#.", "#####", "...#.", "...#."},
        {"#####", "#....", "####.", "....#", "....#", "#...#", ".###."},
        {"..##.", ".#...", "#....", "####.", "#...#", "#...#", ".###."},
        {"#####", "....#", "...#.", "..#..", ".#...", ".#...", ".#..."},
        {".###.", "#...#", "#...#", ".###.", "#...#", "#...#", ".###."},
        {".###.", "#...#", "#...#", ".####", "....#", "...#.", ".##.."},
        // a-z (rendered with upper-case shapes)
        {".###.", "#...#", "#...#", "#####", "#...#", "#...#", "#...#"},
        {"####.", "#...#", "#...#", "####.", "#...#", "#...#", "####."},
        {".###.", "#...#", "#....", "#....", "#....", "#...#", ".###."},
        {"####.", "#...#", "#...#", "#...#", "#...#", "#...#", "####."},
        {"#####", "#....", "#....", "####.", "#....", "#....", "#####"},
        {"#####", "#....", "#....", "####.", "#....", "#....", "#...."},
        {".###.", "#...#", "#....", "#.###", "#...#", "#...#", ".###."},
        {"#...#", "#...#", "#...#", "#####", "#...#", "#...#", "#...#"},
        {".###.", "..#..", "..#..", "..#..", "..#..", "..#..", ".###."},
        {"..###", "...#.", "...#.", "...#.", "...#.", "#..#.", ".##.."},
        {"#...#", "#..#.", "#.#..", "##...", "#.#..", "#..#.", "#...#"},
        {"#....", "#....", "#....", "#....", "#....", "#....", "#####"},
        {"#...#", "##.##", "#.#.#", "#.#.#", "#...#", "#...#", "#...#"},
        {"#...#", "##..#", "#.#.#", "#..##", "#...#", "#...#", "#...#"},
        {".###.", "#...#", "#...#", "#...#", "#...#", "#...#", ".###."},
        {"####.", "#...#", "#...#", "####.", "#....", "#....", "#...."},
        {".###.", "#...#", "#...#", "#...#", "#.#.#", "#..#.", ".##.#"},
        {"####.", "#...#", "#...#", "####.", "#.#..", "#..#.", "#...#"},
        {".####", "#....", "#....", ".###.", "....#", "....#", "####."},
        {"#####", "..#..", "..#..", "..#..", "..#..", "..#..", "..#.."},
        {"#...#", "#...#", "#...#", "#...#", "#...#", "#...#", ".###."},
        {"#...#", "#...#", "#...#", "#...#", "#...#", ".#.#.", "..#.."},
        {"#...#", "#...#", "#...#", "#.#.#", "#.#.#", "##.##", "#...#"},
        {"#...#", "#...#", ".#.#.", "..#..", ".#.#.", "#...#", "#...#"},
        {"#...#", "#...#", ".#.#.", "..#..", "..#..", "..#..", "..#.."},
        {"#####", "....#", "...#.", "..#..", ".#...", "#....", "#####"},
    }};
    return glyphs[symbol_index];
  }
};

}  // namespace i2c2w
