// SPDX-License-Identifier: MIT
//
// 8-bit RGB image container with binary PPM (P6) and PNG I/O. PPM is the
// dependency-free golden-test format; PNG covers interchange with common
// viewers. The PNG path handles exactly one pixel layout: 8-bit truecolor
// RGB, non-interlaced. Decoding understands all five scanline filters;
// encoding emits unfiltered rows compressed with zlib.
#pragma once

#include <zlib.h>

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "wxbench/errors.hpp"

namespace wxbench {

struct Image {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> data;  // row-major RGB

  static Image filled(int w, int h, std::uint8_t r, std::uint8_t g,
                      std::uint8_t b) {
    Image img;
    img.width = w;
    img.height = h;
    img.data.resize(std::size_t(w) * h * 3);
    for (std::size_t i = 0; i + 2 < img.data.size(); i += 3) {
      img.data[i] = r;
      img.data[i + 1] = g;
      img.data[i + 2] = b;
    }
    return img;
  }

  std::uint8_t& at(int x, int y, int c) {
    return data[(std::size_t(y) * width + x) * 3 + c];
  }
  std::uint8_t at(int x, int y, int c) const {
    return data[(std::size_t(y) * width + x) * 3 + c];
  }

  friend bool operator==(const Image&, const Image&) = default;
};

namespace detail {

inline void check_dims(long long w, long long h) {
  if (w <= 0 || h <= 0 || w * h > (1ll << 28)) {
    throw DataError("unsupported image dimensions " + std::to_string(w) +
                    "x" + std::to_string(h));
  }
}

inline std::vector<std::uint8_t> read_file_bytes(
    const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoFailure("cannot open " + path.string());
  std::vector<std::uint8_t> bytes{std::istreambuf_iterator<char>(in),
                                  std::istreambuf_iterator<char>()};
  if (!in.good() && !in.eof()) throw IoFailure("read failed: " + path.string());
  return bytes;
}

inline void write_file_bytes(const std::filesystem::path& path,
                             const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoFailure("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()),
            std::streamsize(bytes.size()));
  if (!out) throw IoFailure("write failed: " + path.string());
}

}  // namespace detail

// ---------------------------------------------------------------- PPM --

inline std::vector<std::uint8_t> encode_ppm(const Image& img) {
  char header[64];
  const int n = std::snprintf(header, sizeof header, "P6\n%d %d\n255\n",
                              img.width, img.height);
  std::vector<std::uint8_t> out(header, header + n);
  out.insert(out.end(), img.data.begin(), img.data.end());
  return out;
}

inline Image decode_ppm(const std::vector<std::uint8_t>& bytes) {
  std::size_t pos = 0;
  auto skip_space = [&] {
    while (pos < bytes.size()) {
      if (std::isspace(bytes[pos])) {
        ++pos;
      } else if (bytes[pos] == '#') {  // comment to end of line
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else {
        break;
      }
    }
  };
  auto read_int = [&]() -> long long {
    skip_space();
    if (pos >= bytes.size() || !std::isdigit(bytes[pos])) {
      throw MalformedLine("PPM header: expected integer");
    }
    long long v = 0;
    while (pos < bytes.size() && std::isdigit(bytes[pos])) {
      v = v * 10 + (bytes[pos] - '0');
      if (v > (1ll << 40)) throw MalformedLine("PPM header: integer overflow");
      ++pos;
    }
    return v;
  };

  if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '6') {
    throw MalformedLine("not a binary PPM (P6) file");
  }
  pos = 2;
  const long long w = read_int();
  const long long h = read_int();
  const long long maxval = read_int();
  detail::check_dims(w, h);
  if (maxval != 255) throw MalformedLine("PPM maxval must be 255");
  if (pos >= bytes.size() || !std::isspace(bytes[pos])) {
    throw MalformedLine("PPM header: missing separator");
  }
  ++pos;  // single whitespace before raster

  Image img;
  img.width = int(w);
  img.height = int(h);
  const std::size_t need = std::size_t(w) * std::size_t(h) * 3;
  if (bytes.size() - pos < need) {
    throw TruncatedFile("PPM raster shorter than header promises");
  }
  img.data.assign(bytes.begin() + std::ptrdiff_t(pos),
                  bytes.begin() + std::ptrdiff_t(pos + need));
  return img;
}

// ---------------------------------------------------------------- PNG --

namespace detail {

inline void put_be32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  out.push_back(std::uint8_t(v >> 24));
  out.push_back(std::uint8_t(v >> 16));
  out.push_back(std::uint8_t(v >> 8));
  out.push_back(std::uint8_t(v));
}

inline std::uint32_t get_be32(const std::uint8_t* p) {
  return (std::uint32_t(p[0]) << 24) | (std::uint32_t(p[1]) << 16) |
         (std::uint32_t(p[2]) << 8) | std::uint32_t(p[3]);
}

inline void put_chunk(std::vector<std::uint8_t>& out, const char type[4],
                      const std::vector<std::uint8_t>& payload) {
  put_be32(out, std::uint32_t(payload.size()));
  const std::size_t crc_start = out.size();
  out.insert(out.end(), type, type + 4);
  out.insert(out.end(), payload.begin(), payload.end());
  const auto crc = ::crc32(0u, out.data() + crc_start,
                           uInt(out.size() - crc_start));
  put_be32(out, std::uint32_t(crc));
}

inline std::uint8_t paeth(int a, int b, int c) {
  const int p = a + b - c;
  const int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
  if (pa <= pb && pa <= pc) return std::uint8_t(a);
  if (pb <= pc) return std::uint8_t(b);
  return std::uint8_t(c);
}

}  // namespace detail

inline const std::uint8_t kPngSignature[8] = {137, 80, 78, 71, 13, 10, 26, 10};

inline std::vector<std::uint8_t> encode_png(const Image& img) {
  detail::check_dims(img.width, img.height);
  if (img.data.size() != std::size_t(img.width) * img.height * 3) {
    throw ShapeMismatch("image buffer does not match its dimensions");
  }
  std::vector<std::uint8_t> out(kPngSignature, kPngSignature + 8);

  std::vector<std::uint8_t> ihdr;
  detail::put_be32(ihdr, std::uint32_t(img.width));
  detail::put_be32(ihdr, std::uint32_t(img.height));
  ihdr.push_back(8);  // bit depth
  ihdr.push_back(2);  // truecolor RGB
  ihdr.push_back(0);  // deflate
  ihdr.push_back(0);  // adaptive filtering
  ihdr.push_back(0);  // no interlace
  detail::put_chunk(out, "IHDR", ihdr);

  // Scanlines with filter byte 0 (None).
  const std::size_t stride = std::size_t(img.width) * 3;
  std::vector<std::uint8_t> raw;
  raw.reserve((stride + 1) * std::size_t(img.height));
  for (int y = 0; y < img.height; ++y) {
    raw.push_back(0);
    raw.insert(raw.end(), img.data.begin() + std::ptrdiff_t(y * stride),
               img.data.begin() + std::ptrdiff_t((y + 1) * stride));
  }
  uLongf bound = ::compressBound(uLong(raw.size()));
  std::vector<std::uint8_t> packed(bound);
  if (::compress2(packed.data(), &bound, raw.data(), uLong(raw.size()),
                  Z_DEFAULT_COMPRESSION) != Z_OK) {
    throw IoFailure("deflate failed while encoding PNG");
  }
  packed.resize(bound);
  detail::put_chunk(out, "IDAT", packed);
  detail::put_chunk(out, "IEND", {});
  return out;
}

inline Image decode_png(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 8 ||
      !std::equal(kPngSignature, kPngSignature + 8, bytes.begin())) {
    throw MalformedLine("not a PNG file");
  }
  std::size_t pos = 8;
  bool saw_ihdr = false, saw_iend = false;
  std::uint32_t w = 0, h = 0;
  std::vector<std::uint8_t> idat;

  while (pos + 8 <= bytes.size() && !saw_iend) {
    const std::uint32_t len = detail::get_be32(&bytes[pos]);
    if (pos + 12 + std::size_t(len) > bytes.size()) {
      throw TruncatedFile("PNG chunk exceeds file size");
    }
    const std::string type(bytes.begin() + std::ptrdiff_t(pos + 4),
                           bytes.begin() + std::ptrdiff_t(pos + 8));
    const std::uint8_t* payload = &bytes[pos + 8];
    const auto want =
        ::crc32(::crc32(0u, &bytes[pos + 4], 4), payload, uInt(len));
    if (std::uint32_t(want) != detail::get_be32(&bytes[pos + 8 + len])) {
      throw DataError("PNG chunk CRC mismatch in " + type);
    }

    if (type == "IHDR") {
      if (len != 13) throw MalformedLine("PNG IHDR must be 13 bytes");
      w = detail::get_be32(payload);
      h = detail::get_be32(payload + 4);
      detail::check_dims(w, h);
      if (payload[8] != 8 || payload[9] != 2) {
        throw DataError("only 8-bit truecolor RGB PNG is supported");
      }
      if (payload[10] != 0 || payload[11] != 0 || payload[12] != 0) {
        throw DataError("unsupported PNG compression/filter/interlace flags");
      }
      saw_ihdr = true;
    } else if (type == "IDAT") {
      if (!saw_ihdr) throw MalformedLine("PNG IDAT before IHDR");
      idat.insert(idat.end(), payload, payload + len);
    } else if (type == "IEND") {
      saw_iend = true;
    }  // ancillary chunks are skipped
    pos += 12 + std::size_t(len);
  }
  if (!saw_ihdr || !saw_iend) {
    throw TruncatedFile("PNG missing IHDR or IEND");
  }

  const std::size_t stride = std::size_t(w) * 3;
  const std::size_t raw_size = (stride + 1) * h;
  std::vector<std::uint8_t> raw(raw_size);
  uLongf got = uLongf(raw_size);
  const int rc = ::uncompress(raw.data(), &got, idat.data(),
                              uLong(idat.size()));
  if (rc != Z_OK || got != raw_size) {
    throw DataError("PNG pixel data does not inflate to the expected size");
  }

  Image img;
  img.width = int(w);
  img.height = int(h);
  img.data.resize(stride * h);
  // Undo per-row filters; a/b/c are left, up, and up-left neighbors.
  for (std::uint32_t y = 0; y < h; ++y) {
    const std::uint8_t filter = raw[y * (stride + 1)];
    const std::uint8_t* src = &raw[y * (stride + 1) + 1];
    std::uint8_t* dst = &img.data[y * stride];
    const std::uint8_t* up = y ? &img.data[(y - 1) * stride] : nullptr;
    for (std::size_t i = 0; i < stride; ++i) {
      const int a = i >= 3 ? dst[i - 3] : 0;
      const int b = up ? up[i] : 0;
      const int c = (up && i >= 3) ? up[i - 3] : 0;
      int v = src[i];
      switch (filter) {
        case 0: break;
        case 1: v += a; break;
        case 2: v += b; break;
        case 3: v += (a + b) / 2; break;
        case 4: v += detail::paeth(a, b, c); break;
        default:
          throw DataError("PNG scanline uses unknown filter type " +
                          std::to_string(filter));
      }
      dst[i] = std::uint8_t(v & 0xff);
    }
  }
  return img;
}

// ------------------------------------------------------------- files --

inline Image read_image(const std::filesystem::path& path) {
  const auto bytes = detail::read_file_bytes(path);
  const auto ext = path.extension().string();
  if (ext == ".png") return decode_png(bytes);
  if (ext == ".ppm") return decode_ppm(bytes);
  throw DataError("unsupported image extension: " + path.string());
}

inline void write_image(const std::filesystem::path& path, const Image& img) {
  const auto ext = path.extension().string();
  if (ext == ".png") {
    detail::write_file_bytes(path, encode_png(img));
  } else if (ext == ".ppm") {
    detail::write_file_bytes(path, encode_ppm(img));
  } else {
    throw DataError("unsupported image extension: " + path.string());
  }
}

}  // namespace wxbench
