// SPDX-License-Identifier: Apache-2.0
#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>

#include "i2c2w/synth.hpp"

using namespace i2c2w;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("i2c2w_test_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::vector<std::uint8_t> file_bytes(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

// Ink-weighted vertical center of mass of one column, -1 when empty.
double column_com(const Image& img, int x) {
  double mass = 0.0, moment = 0.0;
  for (int y = 0; y < img.height; ++y) {
    mass += img.at(x, y);
    moment += img.at(x, y) * y;
  }
  return mass > 0.0 ? moment / mass : -1.0;
}

}  // namespace

TEST_CASE("font glyphs are pairwise distinct and fully covered") {
  FontAtlas atlas;
  std::set<std::string> shapes;
  for (int g = 0; g < 36; ++g) {
    std::string shape;
    for (int y = 0; y < FontAtlas::kGlyphHeight; ++y)
      for (int x = 0; x < FontAtlas::kGlyphWidth; ++x)
        shape.push_back(atlas.ink(g, x, y) ? '#' : '.');
    CHECK(shape.find('#') != std::string::npos);
    shapes.insert(shape);
  }
  CHECK(shapes.size() == 36);
}

TEST_CASE("rendering places glyphs left to right") {
  FontAtlas atlas;
  SampleSpec spec;
  spec.word = "ab";
  spec.seed = 7;
  std::vector<ColumnSpan> spans;
  const Image img = render_word(spec, atlas, &spans);

  REQUIRE(spans.size() == 2);
  CHECK(spans[0].x1 < spans[1].x0);
  CHECK(img.width == 128);
  CHECK(img.height == 32);

  // all ink falls inside the reported spans
  for (int x = 0; x < img.width; ++x) {
    double col = 0.0;
    for (int y = 0; y < img.height; ++y) col += img.at(x, y);
    const bool inside = (x >= spans[0].x0 && x <= spans[0].x1) ||
                        (x >= spans[1].x0 && x <= spans[1].x1);
    if (!inside) CHECK(col == 0.0);
  }
}

TEST_CASE("rendering is deterministic given the seed") {
  FontAtlas atlas;
  SampleSpec spec;
  spec.word = "seed";
  spec.curvature_amplitude = 3.0;
  spec.rotation = 4.0;
  spec.perspective_skew = 0.2;
  spec.noise_sigma = 0.05;
  spec.blur_radius = 1.0;
  spec.seed = 42;

  const Image a = render_word(spec, atlas);
  const Image b = render_word(spec, atlas);
  CHECK(a.pixels == b.pixels);

  spec.seed = 43;
  const Image c = render_word(spec, atlas);
  CHECK(a.pixels != c.pixels);
}

TEST_CASE("curvature displaces column centers of mass along the sinusoid") {
  FontAtlas atlas;
  SampleSpec straight;
  straight.word = "ab";
  straight.seed = 7;
  const Image base = render_word(straight, atlas);

  SampleSpec curved = straight;
  curved.curvature_amplitude = 4.0;
  const Image bent = render_word(curved, atlas);

  int checked = 0;
  for (int x = 0; x < base.width; ++x) {
    const double com0 = column_com(base, x);
    if (com0 < 0.0) continue;
    const double com1 = column_com(bent, x);
    REQUIRE(com1 >= 0.0);
    // independently recomputed displacement field
    const double expected = 4.0 * std::sin(M_PI * x / (base.width - 1));
    CHECK(std::abs((com1 - com0) - expected) <= 1.0);
    ++checked;
  }
  CHECK(checked > 10);
}

TEST_CASE("augmentation identity, rotation round trip and noise statistics") {
  FontAtlas atlas;
  SampleSpec base_spec;
  base_spec.word = "test";
  base_spec.seed = 3;
  const Image img = render_word(base_spec, atlas);

  SECTION("zero-parameter augmentation is the identity") {
    SampleSpec zero;
    zero.seed = 3;
    const Image out = augment_image(img, zero);
    CHECK(out.pixels == img.pixels);
  }

  SECTION("two 180-degree rotations recover the image") {
    SampleSpec rot;
    rot.rotation = 180.0;
    rot.seed = 3;
    const Image once = augment_image(img, rot);
    const Image twice = augment_image(once, rot);
    double mae = 0.0;
    for (std::size_t i = 0; i < img.pixels.size(); ++i)
      mae += std::abs(twice.pixels[i] - img.pixels[i]);
    mae /= img.pixels.size();
    CHECK(mae < 0.02);
  }

  SECTION("noise standard deviation tracks the requested sigma") {
    Image flat(128, 32, 0.5f);
    SampleSpec noisy;
    noisy.noise_sigma = 0.05;
    noisy.seed = 11;
    const Image out = augment_image(flat, noisy);
    double mean = 0.0;
    for (std::size_t i = 0; i < flat.pixels.size(); ++i)
      mean += out.pixels[i] - flat.pixels[i];
    mean /= flat.pixels.size();
    double var = 0.0;
    for (std::size_t i = 0; i < flat.pixels.size(); ++i) {
      const double d = out.pixels[i] - flat.pixels[i] - mean;
      var += d * d;
    }
    var /= flat.pixels.size() - 1;
    CHECK(std::abs(std::sqrt(var) - 0.05) < 0.005);
  }

  SECTION("pixels stay in range after a heavy chain") {
    SampleSpec heavy;
    heavy.curvature_amplitude = 4.0;
    heavy.rotation = 10.0;
    heavy.perspective_skew = 0.5;
    heavy.noise_sigma = 0.3;
    heavy.blur_radius = 2.0;
    heavy.seed = 5;
    const Image out = augment_image(img, heavy);
    for (float p : out.pixels) {
      CHECK(p >= 0.0f);
      CHECK(p <= 1.0f);
    }
  }
}

TEST_CASE("png round trip preserves quantized pixels") {
  FontAtlas atlas;
  SampleSpec spec;
  spec.word = "png0";
  spec.noise_sigma = 0.1;
  spec.seed = 9;
  const Image img = render_word(spec, atlas);

  const fs::path dir = temp_dir("png");
  write_png_gray8(dir / "probe.png", img);
  const Image back = read_png_gray(dir / "probe.png");
  REQUIRE(back.width == img.width);
  REQUIRE(back.height == img.height);
  for (std::size_t i = 0; i < img.pixels.size(); ++i)
    CHECK(std::abs(back.pixels[i] - img.pixels[i]) <= 0.5f / 255.0f + 1e-6f);
  fs::remove_all(dir);
}

TEST_CASE("dataset generation writes a manifest and reproduces bit-exactly") {
  const fs::path dir_a = temp_dir("gen_a");
  const fs::path dir_b = temp_dir("gen_b");
  DegradationRanges ranges;
  ranges.max_noise = 0.05;
  ranges.max_rotation = 3.0;

  const Manifest m1 = generate_dataset(10, {"cat"}, ranges, 1, dir_a);
  REQUIRE(m1.entries.size() == 10);
  for (const auto& e : m1.entries) {
    CHECK(e.transcription == "cat");
    CHECK(fs::exists(dir_a / e.path));
  }

  const Manifest m2 = generate_dataset(10, {"cat"}, ranges, 1, dir_b);
  REQUIRE(m2.entries.size() == m1.entries.size());
  for (std::size_t i = 0; i < m1.entries.size(); ++i) {
    CHECK(m1.entries[i].path == m2.entries[i].path);
    CHECK(file_bytes(dir_a / m1.entries[i].path) ==
          file_bytes(dir_b / m2.entries[i].path));
  }
  CHECK(file_bytes(dir_a / "manifest.tsv") == file_bytes(dir_b / "manifest.tsv"));

  const Manifest loaded = read_manifest(dir_a / "manifest.tsv");
  REQUIRE(loaded.entries.size() == 10);
  CHECK(loaded.entries[3].transcription == "cat");

  // every generated transcription passes label derivation
  CharSet cs;
  PositionSet ps;
  for (const auto& e : loaded.entries)
    CHECK_NOTHROW(derive_labels(e.transcription, cs, ps));

  fs::remove_all(dir_a);
  fs::remove_all(dir_b);
}

TEST_CASE("word sampling is uniform within three sigma by chi-square") {
  const fs::path dir = temp_dir("chi");
  std::vector<std::string> vocab;
  for (int i = 0; i < 100; ++i) vocab.push_back("w" + std::to_string(i));

  const Manifest m = generate_dataset(1000, vocab, {}, 3, dir);
  std::map<std::string, int> counts;
  for (const auto& e : m.entries) counts[e.transcription]++;

  const double expected = 1000.0 / 100.0;
  double chi2 = 0.0;
  for (const auto& w : vocab) {
    const double observed = counts.count(w) ? counts[w] : 0;
    chi2 += (observed - expected) * (observed - expected) / expected;
  }
  // chi-square with 99 dof: mean 99, sd sqrt(198)
  CHECK(chi2 < 99.0 + 3.0 * std::sqrt(198.0));
  fs::remove_all(dir);
}

TEST_CASE("generation rejects invalid inputs") {
  const fs::path dir = temp_dir("bad");
  CHECK_THROWS_AS(generate_dataset(5, {}, {}, 1, dir), EmptyDataset);
  CHECK_THROWS_AS(generate_dataset(5, {std::string(24, 'a')}, {}, 1, dir),
                  WordTooLong);
  fs::remove_all(dir);
}

TEST_CASE("very long words still fit the canvas") {
  FontAtlas atlas;
  SampleSpec spec;
  spec.word = "abcdefghijklmnopqrstuvw";  // 23 characters
  spec.seed = 1;
  std::vector<ColumnSpan> spans;
  const Image img = render_word(spec, atlas, &spans);
  REQUIRE(spans.size() == 23);
  CHECK(spans.back().x1 < img.width);
  double total = 0.0;
  for (float p : img.pixels) total += p;
  CHECK(total > 0.0);

  CHECK_THROWS_AS(render_word(SampleSpec{.word = std::string(24, 'a')}, atlas),
                  WordTooLong);
}
