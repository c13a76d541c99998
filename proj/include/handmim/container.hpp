#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "handmim/error.hpp"
#include "handmim/mat.hpp"

// Archive container used for checkpoints and hand model files.
//
// Byte layout (all integers little-endian):
//   [0..7]    magic "HMARCH1\0"
//   [8..15]   uint64 manifest length in bytes
//   [16..]    manifest, UTF-8 JSON
//   [...]     array payload: float64 little-endian values, row-major,
//             concatenated in manifest order
//
// The manifest holds {"format", "arrays": [{"name", "shape"}...],
// "meta": {...}}. Shapes may have any rank; matrices load as [rows, cols]
// and rank-3 arrays as [d0*d1, d2]. "meta" carries free-form JSON
// (config snapshots, units, conventions).

namespace handmim {

using json = nlohmann::json;

struct Archive {
  // Insertion-ordered so the payload layout is reproducible.
  std::vector<std::pair<std::string, Mat>> arrays;
  std::map<std::string, std::vector<long long>> shapes;  // declared (possibly rank-3) shapes
  json meta = json::object();

  static constexpr char kMagic[8] = {'H', 'M', 'A', 'R', 'C', 'H', '1', '\0'};

  bool has(const std::string& name) const {
    for (const auto& [n, m] : arrays)
      if (n == name) return true;
    return false;
  }

  const Mat& get(const std::string& name) const {
    for (const auto& [n, m] : arrays)
      if (n == name) return m;
    throw IoError("archive: missing array '" + name + "'");
  }

  void put(const std::string& name, const Mat& m, std::vector<long long> shape = {}) {
    HM_CHECK(!has(name), InvariantError, "archive: duplicate array '" + name + "'");
    if (shape.empty()) shape = {m.rows(), m.cols()};
    long long total = 1;
    for (long long d : shape) total *= d;
    HM_CHECK(total == static_cast<long long>(m.size()), InvariantError,
             "archive: shape does not cover data for '" + name + "'");
    arrays.emplace_back(name, m);
    shapes[name] = std::move(shape);
  }

  std::vector<std::string> names() const {
    std::vector<std::string> out;
    out.reserve(arrays.size());
    for (const auto& [n, m] : arrays) out.push_back(n);
    return out;
  }

  void save(const std::string& path) const {
    json manifest;
    manifest["format"] = "handmim-archive-v1";
    manifest["arrays"] = json::array();
    for (const auto& [name, m] : arrays) {
      json a;
      a["name"] = name;
      a["shape"] = shapes.at(name);
      manifest["arrays"].push_back(a);
    }
    manifest["meta"] = meta;
    std::string mtxt = manifest.dump();

    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open for writing: " + path);
    f.write(kMagic, 8);
    std::uint64_t mlen = mtxt.size();
    unsigned char lenb[8];
    for (int i = 0; i < 8; ++i) lenb[i] = static_cast<unsigned char>((mlen >> (8 * i)) & 0xff);
    f.write(reinterpret_cast<const char*>(lenb), 8);
    f.write(mtxt.data(), static_cast<std::streamsize>(mtxt.size()));
    for (const auto& [name, m] : arrays) {
      // Mat is row-major double, so the in-memory bytes are the file bytes
      // on little-endian hosts.
      f.write(reinterpret_cast<const char*>(m.data()),
              static_cast<std::streamsize>(sizeof(double) * m.size()));
    }
    if (!f) throw IoError("write failed: " + path);
  }

  static Archive load(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open: " + path);
    char magic[8];
    f.read(magic, 8);
    if (!f || std::memcmp(magic, kMagic, 8) != 0)
      throw IoError("not an archive (bad magic): " + path);
    unsigned char lenb[8];
    f.read(reinterpret_cast<char*>(lenb), 8);
    if (!f) throw IoError("truncated archive header: " + path);
    std::uint64_t mlen = 0;
    for (int i = 0; i < 8; ++i) mlen |= static_cast<std::uint64_t>(lenb[i]) << (8 * i);
    if (mlen > (1ull << 30)) throw IoError("unreasonable manifest size: " + path);
    std::string mtxt(mlen, '\0');
    f.read(mtxt.data(), static_cast<std::streamsize>(mlen));
    if (!f) throw IoError("truncated manifest: " + path);
    json manifest;
    try {
      manifest = json::parse(mtxt);
    } catch (const json::exception& e) {
      throw IoError("bad manifest JSON in " + path + ": " + e.what());
    }
    if (manifest.value("format", "") != "handmim-archive-v1")
      throw IoError("unknown archive format in " + path);

    Archive out;
    out.meta = manifest.value("meta", json::object());
    for (const auto& a : manifest.at("arrays")) {
      std::string name = a.at("name").get<std::string>();
      std::vector<long long> shape = a.at("shape").get<std::vector<long long>>();
      HM_CHECK(!shape.empty(), IoError, "array '" + name + "' has empty shape");
      long long total = 1;
      for (long long d : shape) {
        HM_CHECK(d > 0, IoError, "array '" + name + "' has nonpositive dim");
        total *= d;
      }
      // Rank 1 loads as a row vector; rank >= 2 folds leading dims into rows.
      long long cols = shape.back();
      long long rows = total / cols;
      Mat m(rows, cols);
      f.read(reinterpret_cast<char*>(m.data()),
             static_cast<std::streamsize>(sizeof(double) * total));
      if (!f) throw IoError("truncated payload for array '" + name + "' in " + path);
      out.arrays.emplace_back(name, std::move(m));
      out.shapes[name] = std::move(shape);
    }
    return out;
  }
};

}  // namespace handmim
