#include <catch2/catch_amalgamated.hpp>
#include <cstdio>
#include <filesystem>

#include "handmim/container.hpp"
#include "handmim/png.hpp"
#include "handmim/rng.hpp"

using namespace handmim;
namespace fs = std::filesystem;

namespace {
fs::path temp_dir() {
  fs::path p = fs::temp_directory_path() / "handmim_io_test";
  fs::create_directories(p);
  return p;
}
}  // namespace

TEST_CASE("rng streams are reproducible and serializable", "[io][rng]") {
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) REQUIRE(a.next_u64() == b.next_u64());

  std::string state = a.serialize();
  std::vector<double> ahead;
  for (int i = 0; i < 50; ++i) ahead.push_back(a.uniform01());
  Rng c;
  c.deserialize(state);
  for (int i = 0; i < 50; ++i) REQUIRE(c.uniform01() == ahead[static_cast<std::size_t>(i)]);
}

TEST_CASE("rng transforms stay in range", "[io][rng]") {
  Rng r(7);
  for (int i = 0; i < 10000; ++i) {
    double u = r.uniform(2.0, 5.0);
    REQUIRE(u >= 2.0);
    REQUIRE(u < 5.0);
    REQUIRE(r.uniform_int(7) < 7);
  }
  // Crude moment check on the normal transform.
  double s = 0, s2 = 0;
  const int n = 20000;
  for (int i = 0; i < n; ++i) {
    double z = r.normal();
    s += z;
    s2 += z * z;
  }
  REQUIRE(std::abs(s / n) < 0.05);
  REQUIRE(std::abs(s2 / n - 1.0) < 0.05);
}

TEST_CASE("archive round-trips arrays and metadata bit-exactly", "[io][container]") {
  Rng rng(3);
  Mat a(4, 5), b(2, 3);
  for (int i = 0; i < a.size(); ++i) a(i / 5, i % 5) = rng.normal() * 1e3;
  b << 1.0, -0.0, 3.5e-300, 1e300, M_PI, -7.25;

  Archive ar;
  ar.put("weights.a", a);
  ar.put("tensor.b", b, {1, 2, 3});
  ar.meta["step"] = 12345;
  ar.meta["note"] = "roundtrip";

  fs::path p = temp_dir() / "roundtrip.hmarch";
  ar.save(p.string());
  Archive back = Archive::load(p.string());

  REQUIRE(back.names() == std::vector<std::string>{"weights.a", "tensor.b"});
  REQUIRE(std::memcmp(back.get("weights.a").data(), a.data(), sizeof(double) * a.size()) == 0);
  REQUIRE(std::memcmp(back.get("tensor.b").data(), b.data(), sizeof(double) * b.size()) == 0);
  REQUIRE(back.shapes.at("tensor.b") == std::vector<long long>{1, 2, 3});
  REQUIRE(back.meta.at("step") == 12345);
}

TEST_CASE("archive rejects garbage and duplicates", "[io][container]") {
  fs::path p = temp_dir() / "garbage.bin";
  {
    std::ofstream f(p);
    f << "this is not an archive at all, definitely long enough";
  }
  REQUIRE_THROWS_AS(Archive::load(p.string()), IoError);

  Archive ar;
  ar.put("x", Mat::Zero(1, 1));
  REQUIRE_THROWS_AS(ar.put("x", Mat::Zero(1, 1)), InvariantError);
  REQUIRE_THROWS_AS(ar.get("missing"), IoError);
}

TEST_CASE("png encode/decode round-trips 8-bit rgb", "[io][png]") {
  Rng rng(9);
  Image img(13, 7);  // odd sizes exercise stride handling
  for (int y = 0; y < img.h; ++y)
    for (int x = 0; x < img.w; ++x)
      for (int c = 0; c < 3; ++c) img.at(y, x, c) = rng.uniform01();

  auto bytes = png::encode(img);
  Image back = png::decode(bytes.data(), bytes.size());
  REQUIRE(back.w == img.w);
  REQUIRE(back.h == img.h);
  // Quantization to 8 bits is the only loss.
  for (int y = 0; y < img.h; ++y)
    for (int x = 0; x < img.w; ++x)
      for (int c = 0; c < 3; ++c)
        REQUIRE(back.at(y, x, c) == Catch::Approx(img.at(y, x, c)).margin(0.5 / 255.0 + 1e-12));

  // Byte-for-byte re-encode determinism.
  auto bytes2 = png::encode(back);
  auto bytes3 = png::encode(back);
  REQUIRE(bytes2 == bytes3);

  // And a quantized image survives exactly.
  Image q = png::decode(bytes2.data(), bytes2.size());
  REQUIRE(q.pix == back.pix);
}

TEST_CASE("png file io and error paths", "[io][png]") {
  Image img(4, 4);
  img.pix.setConstant(0.25);
  fs::path p = temp_dir() / "tiny.png";
  png::write_file(img, p.string());
  Image back = png::read_file(p.string());
  REQUIRE(back.w == 4);

  REQUIRE_THROWS_AS(png::read_file((temp_dir() / "nope.png").string()), IoError);
  std::vector<std::uint8_t> junk(64, 0xab);
  REQUIRE_THROWS_AS(png::decode(junk.data(), junk.size()), IoError);
}

TEST_CASE("grayscale png loads as replicated rgb", "[io][png]") {
  // Hand-build a 2x1 grayscale png through the encoder path is not possible
  // (writer is rgb-only), so synthesize the pixel buffer directly.
  std::uint8_t gray[2] = {0, 255};
  Image img = Image::from_bytes(gray, 2, 1, 1);
  REQUIRE(img.at(0, 0, 0) == 0.0);
  REQUIRE(img.at(0, 1, 0) == 1.0);
  REQUIRE(img.at(0, 1, 1) == 1.0);
  REQUIRE(img.at(0, 1, 2) == 1.0);
}
