// Copyright (c) the mpr authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <zlib.h>

#include "mpr/tensor.hpp"

namespace mpr {

class IoError : public std::runtime_error {
 public:
  explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

namespace detail {

inline void put_be32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  out.push_back(std::uint8_t(v >> 24));
  out.push_back(std::uint8_t(v >> 16));
  out.push_back(std::uint8_t(v >> 8));
  out.push_back(std::uint8_t(v));
}

inline std::uint32_t get_be32(const std::uint8_t* p) {
  return (std::uint32_t(p[0]) << 24) | (std::uint32_t(p[1]) << 16) | (std::uint32_t(p[2]) << 8) |
         std::uint32_t(p[3]);
}

inline void png_chunk(std::vector<std::uint8_t>& out, const char type[4],
                      const std::vector<std::uint8_t>& data) {
  put_be32(out, std::uint32_t(data.size()));
  const std::size_t crc_start = out.size();
  out.insert(out.end(), type, type + 4);
  out.insert(out.end(), data.begin(), data.end());
  const auto crc = ::crc32(0L, out.data() + crc_start, uInt(out.size() - crc_start));
  put_be32(out, std::uint32_t(crc));
}

inline int paeth(int a, int b, int c) {
  const int p = a + b - c;
  const int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
  if (pa <= pb && pa <= pc) return a;
  if (pb <= pc) return b;
  return c;
}

}  // namespace detail

/// Writes a unit-range image as PNG (grayscale or RGB, 8- or 16-bit).
template <typename T>
void write_png(const std::string& path, const Tensor<T>& img, int bit_depth = 8) {
  if (img.shape.n != 1 || (img.shape.c != 1 && img.shape.c != 3))
    throw UsageError("write_png: expects a single 1- or 3-channel image, got " + img.shape.str());
  if (bit_depth != 8 && bit_depth != 16)
    throw UsageError("write_png: bit depth must be 8 or 16");
  const int W = img.shape.w, H = img.shape.h, C = img.shape.c;
  const int bytes_per_sample = bit_depth / 8;
  const std::size_t row_bytes = std::size_t(W) * C * bytes_per_sample;

  std::vector<std::uint8_t> raw((row_bytes + 1) * H);
  const double maxv = bit_depth == 8 ? 255.0 : 65535.0;
  std::size_t o = 0;
  for (int y = 0; y < H; ++y) {
    raw[o++] = 0;  // filter: none
    for (int x = 0; x < W; ++x) {
      for (int c = 0; c < C; ++c) {
        const double v = std::clamp(double(img.at(0, c, y, x)), 0.0, 1.0);
        const auto q = std::uint32_t(std::lround(v * maxv));
        if (bit_depth == 16) raw[o++] = std::uint8_t(q >> 8);
        raw[o++] = std::uint8_t(q & 0xff);
      }
    }
  }

  uLongf comp_size = ::compressBound(uLong(raw.size()));
  std::vector<std::uint8_t> comp(comp_size);
  if (::compress2(comp.data(), &comp_size, raw.data(), uLong(raw.size()), 6) != Z_OK)
    throw IoError("write_png: zlib compression failed for " + path);
  comp.resize(comp_size);

  std::vector<std::uint8_t> out{0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
  std::vector<std::uint8_t> ihdr;
  detail::put_be32(ihdr, std::uint32_t(W));
  detail::put_be32(ihdr, std::uint32_t(H));
  ihdr.push_back(std::uint8_t(bit_depth));
  ihdr.push_back(C == 1 ? 0 : 2);  // gray / truecolor
  ihdr.push_back(0);
  ihdr.push_back(0);
  ihdr.push_back(0);
  detail::png_chunk(out, "IHDR", ihdr);
  detail::png_chunk(out, "IDAT", comp);
  detail::png_chunk(out, "IEND", {});

  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("write_png: cannot open " + path);
  f.write(reinterpret_cast<const char*>(out.data()), std::streamsize(out.size()));
}

/// Reads an 8- or 16-bit grayscale/RGB PNG into a unit-range tensor.
/// Interlaced and palette images are rejected.
template <typename T>
Tensor<T> read_png(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("read_png: cannot open " + path);
  std::vector<std::uint8_t> buf((std::istreambuf_iterator<char>(f)),
                                std::istreambuf_iterator<char>());
  static const std::uint8_t sig[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
  if (buf.size() < 8 || std::memcmp(buf.data(), sig, 8) != 0)
    throw IoError("read_png: " + path + " is not a PNG file");

  int W = 0, H = 0, bit_depth = 0, color_type = 0;
  std::vector<std::uint8_t> idat;
  std::size_t pos = 8;
  while (pos + 8 <= buf.size()) {
    const std::uint32_t len = detail::get_be32(buf.data() + pos);
    if (pos + 12 + len > buf.size()) throw IoError("read_png: truncated chunk in " + path);
    const std::string type(reinterpret_cast<const char*>(buf.data() + pos + 4), 4);
    const std::uint8_t* data = buf.data() + pos + 8;
    if (type == "IHDR") {
      W = int(detail::get_be32(data));
      H = int(detail::get_be32(data + 4));
      bit_depth = data[8];
      color_type = data[9];
      if (data[12] != 0) throw IoError("read_png: interlaced PNG not supported: " + path);
      if (bit_depth != 8 && bit_depth != 16)
        throw IoError("read_png: only 8/16-bit PNGs supported: " + path);
      if (color_type != 0 && color_type != 2)
        throw IoError("read_png: only grayscale/RGB PNGs supported: " + path);
    } else if (type == "IDAT") {
      idat.insert(idat.end(), data, data + len);
    } else if (type == "IEND") {
      break;
    }
    pos += 12 + len;
  }
  if (W <= 0 || H <= 0 || idat.empty()) throw IoError("read_png: missing image data in " + path);

  const int C = color_type == 0 ? 1 : 3;
  const int bytes_per_sample = bit_depth / 8;
  const std::size_t row_bytes = std::size_t(W) * C * bytes_per_sample;
  std::vector<std::uint8_t> raw((row_bytes + 1) * H);
  uLongf raw_size = uLongf(raw.size());
  if (::uncompress(raw.data(), &raw_size, idat.data(), uLong(idat.size())) != Z_OK ||
      raw_size != raw.size())
    throw IoError("read_png: corrupt compressed data in " + path);

  // undo per-row filters in place
  const int bpp = C * bytes_per_sample;
  for (int y = 0; y < H; ++y) {
    std::uint8_t* row = raw.data() + std::size_t(y) * (row_bytes + 1);
    const std::uint8_t filter = row[0];
    std::uint8_t* cur = row + 1;
    const std::uint8_t* prev = y > 0 ? raw.data() + std::size_t(y - 1) * (row_bytes + 1) + 1 : nullptr;
    for (std::size_t i = 0; i < row_bytes; ++i) {
      const int a = i >= std::size_t(bpp) ? cur[i - bpp] : 0;
      const int b = prev ? prev[i] : 0;
      const int c = (prev && i >= std::size_t(bpp)) ? prev[i - bpp] : 0;
      switch (filter) {
        case 0: break;
        case 1: cur[i] = std::uint8_t(cur[i] + a); break;
        case 2: cur[i] = std::uint8_t(cur[i] + b); break;
        case 3: cur[i] = std::uint8_t(cur[i] + (a + b) / 2); break;
        case 4: cur[i] = std::uint8_t(cur[i] + detail::paeth(a, b, c)); break;
        default: throw IoError("read_png: unknown filter type in " + path);
      }
    }
  }

  Tensor<T> img(Shape{1, C, H, W});
  const double maxv = bit_depth == 8 ? 255.0 : 65535.0;
  for (int y = 0; y < H; ++y) {
    const std::uint8_t* row = raw.data() + std::size_t(y) * (row_bytes + 1) + 1;
    for (int x = 0; x < W; ++x) {
      for (int c = 0; c < C; ++c) {
        std::uint32_t q;
        if (bit_depth == 16) {
          const std::size_t i = (std::size_t(x) * C + c) * 2;
          q = (std::uint32_t(row[i]) << 8) | row[i + 1];
        } else {
          q = row[std::size_t(x) * C + c];
        }
        img.at(0, c, y, x) = static_cast<T>(q / maxv);
      }
    }
  }
  return img;
}

/// ASCII PPM (P3), 8-bit RGB.
template <typename T>
void write_ppm(const std::string& path, const Tensor<T>& img) {
  if (img.shape.n != 1 || (img.shape.c != 1 && img.shape.c != 3))
    throw UsageError("write_ppm: expects a single 1- or 3-channel image, got " + img.shape.str());
  std::ofstream f(path);
  if (!f) throw IoError("write_ppm: cannot open " + path);
  f << "P3\n" << img.shape.w << ' ' << img.shape.h << "\n255\n";
  for (int y = 0; y < img.shape.h; ++y) {
    for (int x = 0; x < img.shape.w; ++x) {
      for (int c = 0; c < 3; ++c) {
        const int src = img.shape.c == 1 ? 0 : c;
        const double v = std::clamp(double(img.at(0, src, y, x)), 0.0, 1.0);
        f << long(std::lround(v * 255.0)) << (c == 2 ? '\n' : ' ');
      }
    }
  }
}

template <typename T>
Tensor<T> read_ppm(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("read_ppm: cannot open " + path);
  std::string magic;
  f >> magic;
  if (magic != "P3") throw IoError("read_ppm: " + path + " is not an ASCII PPM (P3)");
  auto next_token = [&]() {
    std::string tok;
    while (f >> tok) {
      if (tok[0] == '#') {
        std::string rest;
        std::getline(f, rest);
        continue;
      }
      return tok;
    }
    throw IoError("read_ppm: truncated file " + path);
  };
  const int W = std::stoi(next_token());
  const int H = std::stoi(next_token());
  const int maxv = std::stoi(next_token());
  if (W <= 0 || H <= 0 || maxv <= 0) throw IoError("read_ppm: bad header in " + path);
  Tensor<T> img(Shape{1, 3, H, W});
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x)
      for (int c = 0; c < 3; ++c)
        img.at(0, c, y, x) = static_cast<T>(std::stod(next_token()) / maxv);
  return img;
}

/// Dispatches on the file extension (.png, .ppm).
template <typename T>
Tensor<T> load_image(const std::string& path) {
  const auto ext = std::filesystem::path(path).extension().string();
  if (ext == ".png") return read_png<T>(path);
  if (ext == ".ppm") return read_ppm<T>(path);
  throw UsageError("load_image: unsupported extension '" + ext + "' (png|ppm)");
}

template <typename T>
void save_image(const std::string& path, const Tensor<T>& img) {
  const auto ext = std::filesystem::path(path).extension().string();
  if (ext == ".png") return write_png(path, img);
  if (ext == ".ppm") return write_ppm(path, img);
  throw UsageError("save_image: unsupported extension '" + ext + "' (png|ppm)");
}

}  // namespace mpr
