// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <zlib.h>

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "i2c2w/errors.hpp"
#include "i2c2w/image.hpp"

namespace i2c2w {

namespace png_detail {

inline void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  out.push_back(static_cast<std::uint8_t>(v >> 24));
  out.push_back(static_cast<std::uint8_t>(v >> 16));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
  out.push_back(static_cast<std::uint8_t>(v));
}

inline std::uint32_t get_u32(const std::uint8_t* p) {
  return (static_cast<std::uint32_t>(p[0]) << 24) |
         (static_cast<std::uint32_t>(p[1]) << 16) |
         (static_cast<std::uint32_t>(p[2]) << 8) | p[3];
}

inline void append_chunk(std::vector<std::uint8_t>& out, const char* type,
                         const std::vector<std::uint8_t>& data) {
  put_u32(out, static_cast<std::uint32_t>(data.size()));
  const std::size_t crc_start = out.size();
  out.insert(out.end(), type, type + 4);
  out.insert(out.end(), data.begin(), data.end());
  const uLong crc =
      crc32(0L, out.data() + crc_start, static_cast<uInt>(out.size() - crc_start));
  put_u32(out, static_cast<std::uint32_t>(crc));
}

inline std::vector<std::uint8_t> zlib_deflate(const std::vector<std::uint8_t>& raw) {
  uLongf bound = compressBound(static_cast<uLong>(raw.size()));
  std::vector<std::uint8_t> out(bound);
  if (compress2(out.data(), &bound, raw.data(), static_cast<uLong>(raw.size()),
                6) != Z_OK)
    throw IOFailure("zlib compression failed");
  out.resize(bound);
  return out;
}

inline std::vector<std::uint8_t> zlib_inflate(const std::uint8_t* data,
                                              std::size_t size,
                                              std::size_t expected) {
  std::vector<std::uint8_t> out(expected);
  uLongf out_len = static_cast<uLongf>(expected);
  if (uncompress(out.data(), &out_len, data, static_cast<uLong>(size)) != Z_OK ||
      out_len != expected)
    throw IOFailure("zlib decompression failed");
  return out;
}

inline int paeth(int a, int b, int c) {
  const int p = a + b - c;
  const int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
  if (pa <= pb && pa <= pc) return a;
  if (pb <= pc) return b;
  return c;
}

}  // namespace png_detail

// Writes an 8-bit grayscale PNG (filter 0 on every scanline).
inline void write_png_gray8(const std::filesystem::path& path, const Image& img) {
  using namespace png_detail;
  std::vector<std::uint8_t> ihdr;
  put_u32(ihdr, static_cast<std::uint32_t>(img.width));
  put_u32(ihdr, static_cast<std::uint32_t>(img.height));
  ihdr.push_back(8);   // bit depth
  ihdr.push_back(0);   // color type: grayscale
  ihdr.push_back(0);   // compression
  ihdr.push_back(0);   // filter method
  ihdr.push_back(0);   // no interlace

  std::vector<std::uint8_t> raw;
  raw.reserve(static_cast<std::size_t>(img.height) * (img.width + 1));
  for (int y = 0; y < img.height; ++y) {
    raw.push_back(0);  // filter type none
    for (int x = 0; x < img.width; ++x) {
      const float v = std::clamp(img.at(x, y), 0.0f, 1.0f);
      raw.push_back(static_cast<std::uint8_t>(std::lround(v * 255.0f)));
    }
  }

  std::vector<std::uint8_t> file = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
  append_chunk(file, "IHDR", ihdr);
  append_chunk(file, "IDAT", zlib_deflate(raw));
  append_chunk(file, "IEND", {});

  std::ofstream os(path, std::ios::binary);
  if (!os) throw IOFailure("cannot open " + path.string() + " for writing");
  os.write(reinterpret_cast<const char*>(file.data()),
           static_cast<std::streamsize>(file.size()));
  if (!os) throw IOFailure("short write to " + path.string());
}

// Reads an 8-bit non-interlaced PNG; grayscale, gray+alpha, RGB and RGBA are
// accepted, color is converted with Rec.601 luma weights.
inline Image read_png_gray(const std::filesystem::path& path) {
  using namespace png_detail;
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IOFailure("cannot open " + path.string());
  std::vector<std::uint8_t> file((std::istreambuf_iterator<char>(is)),
                                 std::istreambuf_iterator<char>());
  static const std::uint8_t sig[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
  if (file.size() < 8 || std::memcmp(file.data(), sig, 8) != 0)
    throw IOFailure(path.string() + " is not a PNG file");

  int width = 0, height = 0, bit_depth = 0, color_type = 0, interlace = 0;
  std::vector<std::uint8_t> idat;
  std::size_t pos = 8;
  while (pos + 8 <= file.size()) {
    const std::uint32_t len = get_u32(&file[pos]);
    if (pos + 12 + len > file.size()) throw IOFailure("truncated PNG chunk");
    const std::string type(reinterpret_cast<const char*>(&file[pos + 4]), 4);
    const std::uint8_t* data = &file[pos + 8];
    if (type == "IHDR") {
      width = static_cast<int>(get_u32(data));
      height = static_cast<int>(get_u32(data + 4));
      bit_depth = data[8];
      color_type = data[9];
      interlace = data[12];
    } else if (type == "IDAT") {
      idat.insert(idat.end(), data, data + len);
    } else if (type == "IEND") {
      break;
    }
    pos += 12 + len;
  }
  if (width <= 0 || height <= 0) throw IOFailure("PNG missing IHDR");
  if (bit_depth != 8 || interlace != 0)
    throw IOFailure("unsupported PNG: need 8-bit non-interlaced");
  int channels = 0;
  switch (color_type) {
    case 0: channels = 1; break;
    case 2: channels = 3; break;
    case 4: channels = 2; break;
    case 6: channels = 4; break;
    default: throw IOFailure("unsupported PNG color type");
  }

  const std::size_t stride = static_cast<std::size_t>(width) * channels;
  std::vector<std::uint8_t> raw =
      zlib_inflate(idat.data(), idat.size(), (stride + 1) * height);

  // undo scanline filters in place
  std::vector<std::uint8_t> prev(stride, 0);
  Image img(width, height);
  for (int y = 0; y < height; ++y) {
    const std::uint8_t filter = raw[(stride + 1) * y];
    std::uint8_t* row = &raw[(stride + 1) * y + 1];
    for (std::size_t i = 0; i < stride; ++i) {
      const int a = i >= static_cast<std::size_t>(channels) ? row[i - channels] : 0;
      const int b = prev[i];
      const int c = i >= static_cast<std::size_t>(channels) ? prev[i - channels] : 0;
      switch (filter) {
        case 0: break;
        case 1: row[i] = static_cast<std::uint8_t>(row[i] + a); break;
        case 2: row[i] = static_cast<std::uint8_t>(row[i] + b); break;
        case 3: row[i] = static_cast<std::uint8_t>(row[i] + (a + b) / 2); break;
        case 4: row[i] = static_cast<std::uint8_t>(row[i] + paeth(a, b, c)); break;
        default: throw IOFailure("unsupported PNG filter type");
      }
    }
    std::memcpy(prev.data(), row, stride);
    for (int x = 0; x < width; ++x) {
      double v = 0.0;
      const std::uint8_t* px = row + static_cast<std::size_t>(x) * channels;
      if (channels == 1 || channels == 2)
        v = px[0];
      else
        v = 0.299 * px[0] + 0.587 * px[1] + 0.114 * px[2];
      img.at(x, y) = static_cast<float>(v / 255.0);
    }
  }
  return img;
}

}  // namespace i2c2w
