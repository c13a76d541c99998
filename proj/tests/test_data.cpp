#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>

#include "handmim/data.hpp"

using namespace handmim;
namespace fs = std::filesystem;

namespace {

std::string fresh_dir(const std::string& name) {
  fs::path p = fs::temp_directory_path() / "handmim_data_tests" / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p.string();
}

std::vector<std::uint8_t> slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in),
                                   std::istreambuf_iterator<char>());
}

}  // namespace

TEST_CASE("pose sampling respects the articulation bounds", "[data]") {
  Rng rng(7);
  PoseRanges pr;
  for (int trial = 0; trial < 500; ++trial) {
    Mat theta = sample_pose(rng, pr);
    REQUIRE(theta.rows() == 1);
    REQUIRE(theta.cols() == 48);
    double root = theta.block(0, 0, 1, 3).norm();
    REQUIRE(root <= pr.root_angle_max + 1e-12);
    for (int f = 0; f < 5; ++f) {
      bool thumb = f == 0;
      double flex_lo = thumb ? pr.thumb_flex_lo : pr.mcp_flex_lo;
      double flex_hi = thumb ? pr.thumb_flex_hi : pr.mcp_flex_hi;
      double spread = thumb ? pr.thumb_spread : pr.mcp_spread;
      REQUIRE(theta(0, 3 * synhand::mcp(f) + 0) >= flex_lo);
      REQUIRE(theta(0, 3 * synhand::mcp(f) + 0) <= flex_hi);
      REQUIRE(theta(0, 3 * synhand::mcp(f) + 1) == 0.0);
      REQUIRE(std::abs(theta(0, 3 * synhand::mcp(f) + 2)) <= spread);
      REQUIRE(theta(0, 3 * synhand::pip(f) + 0) >= 0.0);
      REQUIRE(theta(0, 3 * synhand::pip(f) + 0) <= pr.pip_flex_hi);
      REQUIRE(theta(0, 3 * synhand::pip(f) + 1) == 0.0);
      REQUIRE(theta(0, 3 * synhand::pip(f) + 2) == 0.0);
      REQUIRE(theta(0, 3 * synhand::dip(f) + 0) >= 0.0);
      REQUIRE(theta(0, 3 * synhand::dip(f) + 0) <= pr.dip_flex_hi);
    }
    Mat beta = sample_shape(rng, pr);
    REQUIRE(beta.cwiseAbs().maxCoeff() <= pr.beta_range);
  }
}

TEST_CASE("depth buffer keeps the nearer capsule regardless of draw order", "[data]") {
  Camera cam;
  cam.cx = 24.0;
  cam.cy = 24.0;
  Capsule near{Vec3(0, 0, 0.3), Vec3(0, 0, 0.3), 0.01, Vec3(1, 0, 0)};
  Capsule far{Vec3(0, 0, 0.4), Vec3(0, 0, 0.4), 0.02, Vec3(0, 0, 1)};

  Image a(48, 48), b(48, 48);
  render_capsules(a, {near, far}, cam);
  render_capsules(b, {far, near}, cam);
  REQUIRE((a.pix - b.pix).cwiseAbs().maxCoeff() == 0.0);
  REQUIRE(a.at(24, 24, 0) > 0.5);
  REQUIRE(a.at(24, 24, 2) == 0.0);

  // the wider far capsule still shows around the near one: pixel (24, 44)
  // sits about 20.5 px out, between the 16 px near disc and the 24 px far one
  REQUIRE(a.at(24, 44, 2) > 0.0);
  REQUIRE(a.at(24, 44, 0) == 0.0);
}

TEST_CASE("capsules too close to the camera are rejected", "[data]") {
  Camera cam;
  Image img(8, 8);
  Capsule c{Vec3(0, 0, 0.01), Vec3(0, 0, 0.3), 0.01, Vec3(1, 1, 1)};
  REQUIRE_THROWS_AS(render_capsules(img, {c}, cam), DataError);
}

TEST_CASE("synthesis is deterministic in the seed", "[data]") {
  HandModelData hand = make_synhand();
  SynthConfig cfg;
  Rng a(42), b(42), c(43);
  HandSample sa = synth_sample(hand, cfg, a);
  HandSample sb = synth_sample(hand, cfg, b);
  HandSample sc = synth_sample(hand, cfg, c);
  REQUIRE((sa.theta - sb.theta).cwiseAbs().maxCoeff() == 0.0);
  REQUIRE((sa.trans - sb.trans).cwiseAbs().maxCoeff() == 0.0);
  REQUIRE((sa.rgb.pix - sb.rgb.pix).cwiseAbs().maxCoeff() == 0.0);
  REQUIRE((sa.theta - sc.theta).cwiseAbs().maxCoeff() > 0.0);
}

TEST_CASE("synthesized labels are mutually consistent", "[data]") {
  HandModelData hand = make_synhand();
  SynthConfig cfg;
  Rng rng(11);
  for (int trial = 0; trial < 8; ++trial) {
    HandSample s = synth_sample(hand, cfg, rng);
    Mat verts = lbs_value(hand, s.theta, s.beta, s.trans);
    REQUIRE((verts - s.verts).cwiseAbs().maxCoeff() < 1e-12);
    Mat kp = keypoints_value(hand, s.verts);
    REQUIRE((kp - s.kp3d).cwiseAbs().maxCoeff() < 1e-12);
    REQUIRE(s.kp3d.col(2).minCoeff() > 0.1);
  }
}

TEST_CASE("the whole hand projects inside the frame", "[data]") {
  HandModelData hand = make_synhand();
  SynthConfig cfg;
  Rng rng(3);
  for (int trial = 0; trial < 30; ++trial) {
    HandSample s = synth_sample(hand, cfg, rng);
    Mat uv = project_value(s.kp3d, s.cam);
    REQUIRE(uv.minCoeff() >= 0.0);
    REQUIRE(uv.maxCoeff() < cfg.image_size);
  }
}

TEST_CASE("rendered knuckles look like skin", "[data]") {
  HandModelData hand = make_synhand();
  SynthConfig cfg;
  Rng rng(5);
  for (int trial = 0; trial < 5; ++trial) {
    HandSample s = synth_sample(hand, cfg, rng);
    Mat uv = project_value(s.kp3d, s.cam);
    for (int f = 0; f < 5; ++f) {
      int kp = 4 * f + 1;
      int x = static_cast<int>(uv(kp, 0));
      int y = static_cast<int>(uv(kp, 1));
      double r = s.rgb.at(y, x, 0), bch = s.rgb.at(y, x, 2);
      REQUIRE(r - bch >= 0.05);
    }
    REQUIRE(s.rgb.pix.minCoeff() >= 0.0);
    REQUIRE(s.rgb.pix.maxCoeff() <= 1.0);
  }
}

TEST_CASE("dataset files round-trip every field", "[data]") {
  HandModelData hand = make_synhand();
  SynthConfig cfg;
  Rng rng(17);
  std::vector<HandSample> samples;
  for (int i = 0; i < 4; ++i) samples.push_back(synth_sample(hand, cfg, rng));

  std::string dir = fresh_dir("roundtrip");
  save_dataset(dir, samples);
  REQUIRE(fs::exists(fs::path(dir) / "training_xyz.json"));
  REQUIRE(fs::exists(fs::path(dir) / "training_K.json"));
  REQUIRE(fs::exists(fs::path(dir) / "training_mano.json"));
  REQUIRE(fs::exists(fs::path(dir) / "training_verts.json"));
  REQUIRE(fs::exists(fs::path(dir) / "rgb" / "00000000.png"));

  Dataset d = Dataset::open(dir);
  REQUIRE(d.size() == 4);
  for (int i = 0; i < 4; ++i) {
    const HandSample& s = samples[static_cast<std::size_t>(i)];
    REQUIRE((d.xyz[i] - s.kp3d).cwiseAbs().maxCoeff() == 0.0);
    REQUIRE((d.verts[i] - s.verts).cwiseAbs().maxCoeff() == 0.0);
    REQUIRE((d.theta(i) - s.theta).cwiseAbs().maxCoeff() == 0.0);
    REQUIRE((d.beta(i) - s.beta).cwiseAbs().maxCoeff() == 0.0);
    REQUIRE((d.trans(i) - s.trans).cwiseAbs().maxCoeff() == 0.0);
    REQUIRE(d.cams[i].fx == s.cam.fx);
    REQUIRE(d.cams[i].cx == s.cam.cx);
    Image img = d.load_rgb(i);
    REQUIRE(img.w == cfg.image_size);
    // lossless container, only the 8-bit quantization separates them
    REQUIRE((img.pix - s.rgb.pix).cwiseAbs().maxCoeff() <= 0.5 / 255.0 + 1e-9);
  }
}

TEST_CASE("dataset loading rejects broken inputs", "[data]") {
  REQUIRE_THROWS_AS(Dataset::open("/nonexistent/handmim"), IoError);

  HandModelData hand = make_synhand();
  SynthConfig cfg;
  cfg.image_size = 64;
  cfg.cam.cx = cfg.cam.cy = 32.0;
  cfg.cam.fx = cfg.cam.fy = 140.0;
  Rng rng(1);
  std::vector<HandSample> samples{synth_sample(hand, cfg, rng), synth_sample(hand, cfg, rng)};

  std::string dir = fresh_dir("broken_count");
  save_dataset(dir, samples);
  write_json_file((fs::path(dir) / "training_K.json").string(),
                  json::array({mat_to_json(samples[0].cam.intrinsics())}));
  REQUIRE_THROWS_AS(Dataset::open(dir), DataError);

  std::string dir2 = fresh_dir("broken_json");
  save_dataset(dir2, samples);
  std::ofstream((fs::path(dir2) / "training_xyz.json").string(), std::ios::binary) << "{notjson";
  REQUIRE_THROWS_AS(Dataset::open(dir2), IoError);
}

TEST_CASE("generation writes byte-identical files for equal seeds", "[data]") {
  HandModelData hand = make_synhand();
  SynthConfig cfg;
  cfg.image_size = 96;
  cfg.cam.cx = cfg.cam.cy = 48.0;
  cfg.cam.fx = cfg.cam.fy = 200.0;
  cfg.fit_radius_px = 40.0;
  cfg.center_jitter_px = 4.0;

  auto gen = [&](const std::string& dir) {
    Rng rng(123);
    std::vector<HandSample> samples;
    for (int i = 0; i < 3; ++i) samples.push_back(synth_sample(hand, cfg, rng));
    save_dataset(dir, samples);
  };
  std::string d1 = fresh_dir("stable_a"), d2 = fresh_dir("stable_b");
  gen(d1);
  gen(d2);
  for (const char* f : {"training_xyz.json", "training_mano.json", "rgb/00000000.png",
                        "rgb/00000002.png"}) {
    auto a = slurp((fs::path(d1) / f).string());
    auto b = slurp((fs::path(d2) / f).string());
    REQUIRE(a == b);
  }
}

TEST_CASE("crop extraction resamples the stated window", "[data]") {
  Image src(48, 48);
  Rng rng(9);
  paint_background(src, rng, 3);
  Image crop = extract_crop(src, 20.0, 26.0, 18.0, 32);
  REQUIRE(crop.w == 32);
  REQUIRE(crop.h == 32);
  for (auto [r, c] : {std::pair{0, 0}, {15, 20}, {31, 31}, {7, 3}}) {
    double sx = 20.0 - 9.0 + (c + 0.5) * 18.0 / 32.0;
    double sy = 26.0 - 9.0 + (r + 0.5) * 18.0 / 32.0;
    Eigen::RowVector3d want = src.sample(sx, sy);
    for (int ch = 0; ch < 3; ++ch) REQUIRE(crop.at(r, c, ch) == Catch::Approx(want(ch)).margin(1e-12));
  }
}

TEST_CASE("pretraining crops center on the enlarged keypoint box", "[data]") {
  HandModelData hand = make_synhand();
  SynthConfig cfg;
  Rng rng(29);
  std::vector<HandSample> samples;
  for (int i = 0; i < 3; ++i) samples.push_back(synth_sample(hand, cfg, rng));
  std::string dir = fresh_dir("crop_src");
  save_dataset(dir, samples);
  Dataset data = Dataset::open(dir);

  std::string crop_dir = fresh_dir("crop_out");
  CropSet built = build_pretrain_crops(data, crop_dir, 64, 1.3);
  REQUIRE(built.size() == 3);
  REQUIRE(fs::exists(fs::path(crop_dir) / "crops" / "00000002.png"));

  CropSet loaded = CropSet::open(crop_dir);
  REQUIRE(loaded.out_size == 64);
  REQUIRE(loaded.margin == 1.3);
  REQUIRE(loaded.size() == 3);

  for (int i = 0; i < 3; ++i) {
    Mat uv = project_value(data.xyz[i], data.cams[i]);
    double x0 = uv.col(0).minCoeff(), x1 = uv.col(0).maxCoeff();
    double y0 = uv.col(1).minCoeff(), y1 = uv.col(1).maxCoeff();
    const CropEntry& e = loaded.entries[static_cast<std::size_t>(i)];
    REQUIRE(e.source == i);
    REQUIRE(e.cx == Catch::Approx(0.5 * (x0 + x1)).margin(1e-9));
    REQUIRE(e.cy == Catch::Approx(0.5 * (y0 + y1)).margin(1e-9));
    REQUIRE(e.side == Catch::Approx(1.3 * std::max(x1 - x0, y1 - y0)).margin(1e-9));

    Image crop = loaded.load_crop(i);
    REQUIRE(crop.w == 64);
    // middle-finger knuckle mapped into crop coordinates lands on skin
    double u = uv(9, 0), v = uv(9, 1);
    int cx_pix = static_cast<int>((u - (e.cx - e.side / 2.0)) / e.side * 64.0);
    int cy_pix = static_cast<int>((v - (e.cy - e.side / 2.0)) / e.side * 64.0);
    REQUIRE(cx_pix >= 0);
    REQUIRE(cx_pix < 64);
    REQUIRE(crop.at(cy_pix, cx_pix, 0) - crop.at(cy_pix, cx_pix, 2) >= 0.03);
  }
}

TEST_CASE("crop builder rejects a margin that would cut the hand", "[data]") {
  HandModelData hand = make_synhand();
  SynthConfig cfg;
  Rng rng(2);
  std::vector<HandSample> samples{synth_sample(hand, cfg, rng)};
  std::string dir = fresh_dir("crop_cfg");
  save_dataset(dir, samples);
  Dataset data = Dataset::open(dir);
  REQUIRE_THROWS_AS(build_pretrain_crops(data, fresh_dir("crop_bad"), 64, 0.9), ConfigError);
}
