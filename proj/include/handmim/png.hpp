#pragma once

#include <zlib.h>

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "handmim/error.hpp"
#include "handmim/image.hpp"

// Minimal PNG codec over system zlib. Supports what this project needs and
// nothing else: 8-bit gray / gray+alpha / RGB / RGBA, no interlace, no
// palette. The reader handles all five scanline filters; the writer always
// emits filter 0 RGB at a fixed compression level so output bytes are
// deterministic for a given image.

namespace handmim::png {

namespace detail {

inline void put_u32(std::vector<std::uint8_t>& v, std::uint32_t x) {
  v.push_back(static_cast<std::uint8_t>(x >> 24));
  v.push_back(static_cast<std::uint8_t>(x >> 16));
  v.push_back(static_cast<std::uint8_t>(x >> 8));
  v.push_back(static_cast<std::uint8_t>(x));
}

inline std::uint32_t read_u32(const std::uint8_t* p) {
  return (static_cast<std::uint32_t>(p[0]) << 24) | (static_cast<std::uint32_t>(p[1]) << 16) |
         (static_cast<std::uint32_t>(p[2]) << 8) | static_cast<std::uint32_t>(p[3]);
}

inline void write_chunk(std::vector<std::uint8_t>& out, const char type[4],
                        const std::vector<std::uint8_t>& data) {
  put_u32(out, static_cast<std::uint32_t>(data.size()));
  std::size_t crc_start = out.size();
  out.insert(out.end(), type, type + 4);
  out.insert(out.end(), data.begin(), data.end());
  std::uint32_t crc = static_cast<std::uint32_t>(
      crc32(0, out.data() + crc_start, static_cast<uInt>(4 + data.size())));
  put_u32(out, crc);
}

inline int paeth(int a, int b, int c) {
  int p = a + b - c;
  int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
  if (pa <= pb && pa <= pc) return a;
  if (pb <= pc) return b;
  return c;
}

}  // namespace detail

inline std::vector<std::uint8_t> encode(const Image& img) {
  HM_CHECK(img.valid(), InvariantError, "png encode: invalid image");
  const int w = img.w, h = img.h;
  std::vector<std::uint8_t> rgb = img.to_bytes();

  // Raw stream: each scanline prefixed with filter byte 0.
  std::vector<std::uint8_t> raw;
  raw.reserve(static_cast<std::size_t>(h) * (1 + 3 * w));
  for (int y = 0; y < h; ++y) {
    raw.push_back(0);
    raw.insert(raw.end(), rgb.begin() + static_cast<std::ptrdiff_t>(y) * w * 3,
               rgb.begin() + static_cast<std::ptrdiff_t>(y + 1) * w * 3);
  }

  uLongf comp_cap = compressBound(static_cast<uLong>(raw.size()));
  std::vector<std::uint8_t> comp(comp_cap);
  if (compress2(comp.data(), &comp_cap, raw.data(), static_cast<uLong>(raw.size()), 6) != Z_OK)
    throw IoError("png encode: deflate failed");
  comp.resize(comp_cap);

  std::vector<std::uint8_t> out = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
  std::vector<std::uint8_t> ihdr;
  detail::put_u32(ihdr, static_cast<std::uint32_t>(w));
  detail::put_u32(ihdr, static_cast<std::uint32_t>(h));
  ihdr.push_back(8);  // bit depth
  ihdr.push_back(2);  // color type RGB
  ihdr.push_back(0);  // compression
  ihdr.push_back(0);  // filter method
  ihdr.push_back(0);  // no interlace
  detail::write_chunk(out, "IHDR", ihdr);
  detail::write_chunk(out, "IDAT", comp);
  detail::write_chunk(out, "IEND", {});
  return out;
}

inline void write_file(const Image& img, const std::string& path) {
  std::vector<std::uint8_t> bytes = encode(img);
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open for writing: " + path);
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw IoError("write failed: " + path);
}

inline Image decode(const std::uint8_t* data, std::size_t n) {
  static const std::uint8_t sig[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
  HM_CHECK(n >= 8 && std::memcmp(data, sig, 8) == 0, IoError, "png decode: bad signature");

  int w = 0, h = 0, channels = 0;
  std::vector<std::uint8_t> idat;
  std::size_t off = 8;
  bool seen_iend = false;
  while (off + 12 <= n) {
    std::uint32_t len = detail::read_u32(data + off);
    const char* type = reinterpret_cast<const char*>(data + off + 4);
    HM_CHECK(off + 12 + len <= n, IoError, "png decode: truncated chunk");
    const std::uint8_t* payload = data + off + 8;
    if (std::memcmp(type, "IHDR", 4) == 0) {
      HM_CHECK(len == 13, IoError, "png decode: bad IHDR");
      w = static_cast<int>(detail::read_u32(payload));
      h = static_cast<int>(detail::read_u32(payload + 4));
      int depth = payload[8], color = payload[9], interlace = payload[12];
      HM_CHECK(depth == 8, IoError, "png decode: only 8-bit supported");
      HM_CHECK(interlace == 0, IoError, "png decode: interlace unsupported");
      switch (color) {
        case 0: channels = 1; break;
        case 2: channels = 3; break;
        case 4: channels = 2; break;
        case 6: channels = 4; break;
        default: throw IoError("png decode: unsupported color type");
      }
    } else if (std::memcmp(type, "IDAT", 4) == 0) {
      idat.insert(idat.end(), payload, payload + len);
    } else if (std::memcmp(type, "IEND", 4) == 0) {
      seen_iend = true;
      break;
    }
    off += 12 + len;
  }
  HM_CHECK(w > 0 && h > 0 && channels > 0, IoError, "png decode: missing IHDR");
  HM_CHECK(!idat.empty() && seen_iend, IoError, "png decode: missing IDAT/IEND");

  const std::size_t stride = static_cast<std::size_t>(w) * channels;
  std::vector<std::uint8_t> raw(static_cast<std::size_t>(h) * (stride + 1));
  uLongf raw_len = static_cast<uLongf>(raw.size());
  int zrc = uncompress(raw.data(), &raw_len, idat.data(), static_cast<uLong>(idat.size()));
  HM_CHECK(zrc == Z_OK && raw_len == raw.size(), IoError, "png decode: inflate failed");

  // Defilter in place into a packed pixel buffer.
  std::vector<std::uint8_t> pix(static_cast<std::size_t>(h) * stride);
  const int bpp = channels;
  for (int y = 0; y < h; ++y) {
    const std::uint8_t* src = raw.data() + static_cast<std::size_t>(y) * (stride + 1);
    std::uint8_t filter = src[0];
    const std::uint8_t* line = src + 1;
    std::uint8_t* dst = pix.data() + static_cast<std::size_t>(y) * stride;
    const std::uint8_t* prev = y > 0 ? pix.data() + static_cast<std::size_t>(y - 1) * stride : nullptr;
    for (std::size_t i = 0; i < stride; ++i) {
      int a = i >= static_cast<std::size_t>(bpp) ? dst[i - bpp] : 0;
      int b = prev ? prev[i] : 0;
      int c = (prev && i >= static_cast<std::size_t>(bpp)) ? prev[i - bpp] : 0;
      int x = line[i];
      int v = 0;
      switch (filter) {
        case 0: v = x; break;
        case 1: v = x + a; break;
        case 2: v = x + b; break;
        case 3: v = x + (a + b) / 2; break;
        case 4: v = x + detail::paeth(a, b, c); break;
        default: throw IoError("png decode: bad filter byte");
      }
      dst[i] = static_cast<std::uint8_t>(v & 0xff);
    }
  }
  return Image::from_bytes(pix.data(), w, h, channels);
}

inline Image read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open: " + path);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)),
                                  std::istreambuf_iterator<char>());
  if (bytes.empty()) throw IoError("empty file: " + path);
  return decode(bytes.data(), bytes.size());
}

}  // namespace handmim::png
