// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "i2c2w/charset.hpp"
#include "i2c2w/font.hpp"
#include "i2c2w/image.hpp"
#include "i2c2w/png_io.hpp"
#include "i2c2w/rng.hpp"

namespace i2c2w {

// One sample's rendering recipe. All degradations are identity at zero.
struct SampleSpec {
  std::string word;
  double curvature_amplitude = 0.0;  // pixels
  double rotation = 0.0;             // degrees
  double perspective_skew = 0.0;     // [0, 1]
  double noise_sigma = 0.0;          // intensity units
  double blur_radius = 0.0;          // pixels
  std::uint64_t seed = 0;
};

struct DegradationRanges {
  double max_curvature = 0.0;
  double max_rotation = 0.0;  // sampled in [-max, max]
  double max_skew = 0.0;
  double max_noise = 0.0;
  double max_blur = 0.0;
};

struct ManifestEntry {
  std::string path;  // relative to the dataset root
  std::string transcription;
};

struct Manifest {
  std::vector<ManifestEntry> entries;
};

// Horizontal ink extent of one rendered character before degradations.
struct ColumnSpan {
  int x0 = 0;
  int x1 = 0;  // inclusive
};

// ---------------------------------------------------------------------------

// Geometric/photometric degradations, applied in a fixed order:
// curvature, rotation, perspective, noise, blur.
inline Image augment_image(const Image& img, const SampleSpec& spec) {
  Image out = img;
  if (spec.curvature_amplitude != 0.0) {
    std::vector<double> dy(out.width);
    for (int x = 0; x < out.width; ++x)
      dy[x] = spec.curvature_amplitude * std::sin(M_PI * x / (out.width - 1));
    out = shift_columns(out, dy);
  }
  out = rotate(out, spec.rotation);
  out = perspective_warp(out, spec.perspective_skew);
  if (spec.noise_sigma != 0.0) {
    Rng rng(split_seed(spec.seed, 0x6e6f6973));
    out = add_noise(out, spec.noise_sigma, rng);
  }
  out = gaussian_blur(out, spec.blur_radius);
  out.clamp01();
  return out;
}

// Renders a word onto the fixed 32x128 canvas: glyphs left to right at the
// largest integer scale that fits, then the degradation chain.
// `spans`, when given, receives each character's pre-degradation column span.
inline Image render_word(const SampleSpec& spec, const FontAtlas& atlas,
                         std::vector<ColumnSpan>* spans = nullptr) {
  CharSet cs;
  PositionSet ps;
  const std::string word = normalize_word(spec.word);
  if (word.empty()) throw EmptyWord();
  if (static_cast<int>(word.size()) > ps.max_word_length())
    throw WordTooLong(word.size(), ps.max_word_length());

  const int n = static_cast<int>(word.size());
  int use_scale = 1;
  int gap = 0;
  for (int scale = 3; scale >= 1; --scale) {
    const int w = n * (FontAtlas::kGlyphWidth + 1) * scale - scale;
    if (w <= kCanvasWidth - 4 && FontAtlas::kGlyphHeight * scale <= kCanvasHeight - 8) {
      use_scale = scale;
      gap = scale;
      break;
    }
  }
  int word_width =
      n * FontAtlas::kGlyphWidth * use_scale + (n - 1) * gap;
  if (word_width > kCanvasWidth) {  // longest words drop the inter-glyph gap
    gap = 0;
    word_width = n * FontAtlas::kGlyphWidth * use_scale;
  }

  Image canvas(kCanvasWidth, kCanvasHeight);
  const int x_start = (kCanvasWidth - word_width) / 2;
  const int y_start = (kCanvasHeight - FontAtlas::kGlyphHeight * use_scale) / 2;
  int x = x_start;
  if (spans) spans->clear();
  for (char c : word) {
    const int glyph = cs.index_of(c);
    for (int gy = 0; gy < FontAtlas::kGlyphHeight; ++gy)
      for (int gx = 0; gx < FontAtlas::kGlyphWidth; ++gx) {
        if (!atlas.ink(glyph, gx, gy)) continue;
        for (int sy = 0; sy < use_scale; ++sy)
          for (int sx = 0; sx < use_scale; ++sx)
            canvas.at(x + gx * use_scale + sx, y_start + gy * use_scale + sy) =
                1.0f;
      }
    if (spans)
      spans->push_back(
          {x, x + FontAtlas::kGlyphWidth * use_scale - 1});
    x += FontAtlas::kGlyphWidth * use_scale + gap;
  }
  return augment_image(canvas, spec);
}

// ---------------------------------------------------------------------------

inline void write_manifest(const std::filesystem::path& path,
                           const Manifest& manifest) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IOFailure("cannot write manifest " + path.string());
  for (const auto& e : manifest.entries)
    os << e.path << '\t' << e.transcription << '\n';
  if (!os) throw IOFailure("short write to " + path.string());
}

inline Manifest read_manifest(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IOFailure("cannot read manifest " + path.string());
  Manifest manifest;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos)
      throw IOFailure("malformed manifest line: " + line);
    manifest.entries.push_back({line.substr(0, tab), line.substr(tab + 1)});
  }
  return manifest;
}

inline std::vector<std::string> load_vocab(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IOFailure("cannot read vocabulary " + path.string());
  std::vector<std::string> words;
  std::string line;
  while (std::getline(is, line)) {
    const std::string w = normalize_word(line);
    if (!w.empty()) words.push_back(w);
  }
  return words;
}

// Writes `count` PNGs plus manifest.tsv under out_dir. Every sample's
// randomness is derived from (seed, index) so the output is independent of
// generation order.
inline Manifest generate_dataset(int count, const std::vector<std::string>& vocab,
                                 const DegradationRanges& ranges,
                                 std::uint64_t seed,
                                 const std::filesystem::path& out_dir) {
  if (vocab.empty()) throw EmptyDataset();
  PositionSet ps;
  CharSet cs;
  for (const auto& w : vocab) derive_labels(w, cs, ps);  // validate up front

  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (!std::filesystem::is_directory(out_dir))
    throw IOFailure("cannot create dataset directory " + out_dir.string());

  FontAtlas atlas;
  Manifest manifest;
  manifest.entries.reserve(count);
  for (int i = 0; i < count; ++i) {
    Rng rng(split_seed(seed, static_cast<std::uint64_t>(i)));
    SampleSpec spec;
    spec.word = vocab[rng.below(vocab.size())];
    spec.curvature_amplitude = rng.uniform(0.0, ranges.max_curvature);
    spec.rotation = rng.uniform(-ranges.max_rotation, ranges.max_rotation);
    spec.perspective_skew = rng.uniform(0.0, ranges.max_skew);
    spec.noise_sigma = rng.uniform(0.0, ranges.max_noise);
    spec.blur_radius = rng.uniform(0.0, ranges.max_blur);
    spec.seed = rng.bits();

    char name[32];
    std::snprintf(name, sizeof(name), "img_%06d.png", i);
    const Image img = render_word(spec, atlas);
    write_png_gray8(out_dir / name, img);
    manifest.entries.push_back({name, spec.word});
  }
  write_manifest(out_dir / "manifest.tsv", manifest);
  return manifest;
}

}  // namespace i2c2w
