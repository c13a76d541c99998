#pragma once

// Synthetic data: anatomically bounded random poses, a z-buffered capsule
// renderer that turns keypoints into shaded RGB images, dataset
// serialization (per-field JSON lists plus an rgb/ directory of PNGs), and
// the square crop extraction that feeds pre-training.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "handmim/hand_model.hpp"
#include "handmim/image.hpp"
#include "handmim/png.hpp"
#include "handmim/rng.hpp"

namespace handmim {

// --------------------------------------------------------------------------
// Pose sampling. Flexion is a rotation about +x (fingers curl toward the
// palm normal), spread about +z. The root joint gets a full random axis with
// a bounded angle.

struct PoseRanges {
  double root_angle_max = 2.0;
  double mcp_flex_lo = -0.25, mcp_flex_hi = 1.6;
  double mcp_spread = 0.35;
  double pip_flex_hi = 1.9;
  double dip_flex_hi = 1.3;
  double thumb_flex_lo = -0.3, thumb_flex_hi = 1.2;
  double thumb_spread = 0.6;
  double beta_range = 0.5;
};

inline Mat sample_pose(Rng& rng, const PoseRanges& pr = PoseRanges{}) {
  Mat theta = Mat::Zero(1, 48);
  Vec3 axis(rng.normal(), rng.normal(), rng.normal());
  while (axis.norm() < 1e-6) axis = Vec3(rng.normal(), rng.normal(), rng.normal());
  axis.normalize();
  double angle = rng.uniform(0.0, pr.root_angle_max);
  theta(0, 0) = axis.x() * angle;
  theta(0, 1) = axis.y() * angle;
  theta(0, 2) = axis.z() * angle;
  for (int f = 0; f < 5; ++f) {
    bool thumb = f == 0;
    double flex_lo = thumb ? pr.thumb_flex_lo : pr.mcp_flex_lo;
    double flex_hi = thumb ? pr.thumb_flex_hi : pr.mcp_flex_hi;
    double spread = thumb ? pr.thumb_spread : pr.mcp_spread;
    theta(0, 3 * synhand::mcp(f) + 0) = rng.uniform(flex_lo, flex_hi);
    theta(0, 3 * synhand::mcp(f) + 2) = rng.uniform(-spread, spread);
    theta(0, 3 * synhand::pip(f) + 0) = rng.uniform(0.0, pr.pip_flex_hi);
    theta(0, 3 * synhand::dip(f) + 0) = rng.uniform(0.0, pr.dip_flex_hi);
  }
  return theta;
}

inline Mat sample_shape(Rng& rng, const PoseRanges& pr = PoseRanges{}) {
  Mat beta(1, 4);
  for (int i = 0; i < 4; ++i) beta(0, i) = rng.uniform(-pr.beta_range, pr.beta_range);
  return beta;
}

// --------------------------------------------------------------------------
// Capsule renderer.

struct Capsule {
  Vec3 a, b;
  double r;
  Vec3 color;
};

// Finger segments and a few palm-filling capsules, all placed from the 21
// keypoints. Radii are in meters; colors get a mild per-capsule variation so
// the surface is not flat.
inline std::vector<Capsule> hand_capsules(const Mat& kp, const Vec3& skin, Rng& rng) {
  HM_CHECK(kp.rows() == 21 && kp.cols() == 3, InvariantError, "hand_capsules: keypoints shape");
  auto at = [&](int i) { return Vec3(kp(i, 0), kp(i, 1), kp(i, 2)); };
  std::vector<Capsule> caps;
  auto add = [&](Vec3 a, Vec3 b, double r) {
    double tone = rng.uniform(0.88, 1.0);
    caps.push_back({a, b, r, skin * tone});
  };
  for (int f = 0; f < 5; ++f) {
    int base = 4 * f + 1;
    add(at(0), at(base), f == 0 ? 0.012 : 0.011);       // palm bone
    add(at(base), at(base + 1), 0.0095);                // proximal
    add(at(base + 1), at(base + 2), 0.0085);            // middle
    add(at(base + 2), at(base + 3), 0.0075);            // distal
  }
  add(at(0), at(9), 0.026);                             // palm body toward middle MCP
  add(at(5), at(17), 0.015);                            // knuckle ridge
  add(at(0), at(1), 0.016);                             // thumb mound
  return caps;
}

// Gradient background with a few matte distractor discs.
inline void paint_background(Image& img, Rng& rng, int distractors) {
  Vec3 top(rng.uniform(0.1, 0.9), rng.uniform(0.1, 0.9), rng.uniform(0.1, 0.9));
  Vec3 bot(rng.uniform(0.1, 0.9), rng.uniform(0.1, 0.9), rng.uniform(0.1, 0.9));
  for (int y = 0; y < img.h; ++y) {
    double t = img.h > 1 ? static_cast<double>(y) / (img.h - 1) : 0.0;
    Vec3 c = (1.0 - t) * top + t * bot;
    for (int x = 0; x < img.w; ++x)
      for (int ch = 0; ch < 3; ++ch) img.at(y, x, ch) = c(ch);
  }
  for (int d = 0; d < distractors; ++d) {
    double cx = rng.uniform(0.0, img.w), cy = rng.uniform(0.0, img.h);
    double rad = rng.uniform(0.05, 0.2) * img.w;
    Vec3 c(rng.uniform(0.1, 0.9), rng.uniform(0.1, 0.9), rng.uniform(0.1, 0.9));
    int y0 = std::max(0, static_cast<int>(cy - rad)), y1 = std::min(img.h - 1, static_cast<int>(cy + rad));
    int x0 = std::max(0, static_cast<int>(cx - rad)), x1 = std::min(img.w - 1, static_cast<int>(cx + rad));
    for (int y = y0; y <= y1; ++y)
      for (int x = x0; x <= x1; ++x) {
        double dx = x + 0.5 - cx, dy = y + 0.5 - cy;
        if (dx * dx + dy * dy <= rad * rad)
          for (int ch = 0; ch < 3; ++ch) img.at(y, x, ch) = c(ch);
      }
  }
}

// Painter with a depth buffer: capsules are projected, rasterized inside
// their 2D bounding boxes and shaded by how close the pixel sits to the
// capsule axis.
inline void render_capsules(Image& img, const std::vector<Capsule>& caps, const Camera& cam) {
  std::vector<double> zbuf(static_cast<std::size_t>(img.w) * img.h,
                           std::numeric_limits<double>::infinity());
  for (const Capsule& c : caps) {
    HM_CHECK(c.a.z() > 0.05 && c.b.z() > 0.05, DataError, "render_capsules: capsule too close");
    double ua = cam.fx * c.a.x() / c.a.z() + cam.cx, va = cam.fy * c.a.y() / c.a.z() + cam.cy;
    double ub = cam.fx * c.b.x() / c.b.z() + cam.cx, vb = cam.fy * c.b.y() / c.b.z() + cam.cy;
    double rmax = c.r * cam.fx / std::min(c.a.z(), c.b.z());
    int x0 = std::max(0, static_cast<int>(std::floor(std::min(ua, ub) - rmax)));
    int x1 = std::min(img.w - 1, static_cast<int>(std::ceil(std::max(ua, ub) + rmax)));
    int y0 = std::max(0, static_cast<int>(std::floor(std::min(va, vb) - rmax)));
    int y1 = std::min(img.h - 1, static_cast<int>(std::ceil(std::max(va, vb) + rmax)));
    double seg_u = ub - ua, seg_v = vb - va;
    double seg_len2 = seg_u * seg_u + seg_v * seg_v;
    for (int y = y0; y <= y1; ++y)
      for (int x = x0; x <= x1; ++x) {
        double px = x + 0.5, py = y + 0.5;
        double t = 0.0;
        if (seg_len2 > 1e-12)
          t = std::min(1.0, std::max(0.0, ((px - ua) * seg_u + (py - va) * seg_v) / seg_len2));
        double nu = ua + t * seg_u, nv = va + t * seg_v;
        double du = px - nu, dv = py - nv;
        double d = std::sqrt(du * du + dv * dv);
        double z = c.a.z() + t * (c.b.z() - c.a.z());
        double r2d = c.r * cam.fx / z;
        if (d > r2d) continue;
        double nz = std::sqrt(std::max(0.0, 1.0 - (d / r2d) * (d / r2d)));
        double depth = z - c.r * nz;
        std::size_t pix = static_cast<std::size_t>(y) * img.w + x;
        if (depth >= zbuf[pix]) continue;
        zbuf[pix] = depth;
        double shade = 0.55 + 0.45 * nz;
        for (int ch = 0; ch < 3; ++ch) img.at(y, x, ch) = std::min(1.0, c.color(ch) * shade);
      }
  }
}

// --------------------------------------------------------------------------
// Sample synthesis.

struct SynthConfig {
  int image_size = 224;
  Camera cam{};                 // fx = fy = 480, principal point at 112
  double fit_radius_px = 92.0;  // projected hand radius budget
  double center_jitter_px = 8.0;
  double min_depth = 0.5;
  int distractors = 4;
  PoseRanges ranges{};
};

struct HandSample {
  Mat theta;  // [1, 48]
  Mat beta;   // [1, 4]
  Mat trans;  // [1, 3]
  Mat kp3d;   // [21, 3]
  Mat verts;  // [63, 3]
  Camera cam;
  Image rgb;
};

// Draws pose and shape, then solves for a translation that keeps the whole
// hand inside the projected radius budget around the principal point.
inline HandSample synth_sample(const HandModelData& hand, const SynthConfig& cfg, Rng& rng) {
  HM_CHECK(cfg.image_size > 0, ConfigError, "synth: nonpositive image size");
  HandSample s;
  s.cam = cfg.cam;
  s.theta = sample_pose(rng, cfg.ranges);
  s.beta = sample_shape(rng, cfg.ranges);

  Mat v0 = lbs_value(hand, s.theta, s.beta, Mat::Zero(1, 3));
  Eigen::RowVector3d centroid = v0.colwise().mean();
  double rmax = 0.0;
  for (int i = 0; i < v0.rows(); ++i)
    rmax = std::max(rmax, (v0.row(i) - centroid).norm());

  double tz = std::max(cfg.min_depth, rmax * cfg.cam.fx / cfg.fit_radius_px);
  double du = rng.uniform(-cfg.center_jitter_px, cfg.center_jitter_px);
  double dv = rng.uniform(-cfg.center_jitter_px, cfg.center_jitter_px);
  s.trans = Mat(1, 3);
  s.trans(0, 0) = du * tz / cfg.cam.fx - centroid(0);
  s.trans(0, 1) = dv * tz / cfg.cam.fy - centroid(1);
  s.trans(0, 2) = tz - centroid(2);

  s.verts = v0;
  s.verts.rowwise() += Eigen::RowVector3d(s.trans(0, 0), s.trans(0, 1), s.trans(0, 2));
  s.kp3d = keypoints_value(hand, s.verts);

  s.rgb = Image(cfg.image_size, cfg.image_size);
  paint_background(s.rgb, rng, cfg.distractors);
  Vec3 skin(rng.uniform(0.75, 0.92), rng.uniform(0.55, 0.7), rng.uniform(0.45, 0.6));
  render_capsules(s.rgb, hand_capsules(s.kp3d, skin, rng), s.cam);
  return s;
}

// --------------------------------------------------------------------------
// Dataset serialization. Layout under a directory:
//   training_xyz.json    [[21][3] doubles]   camera-space keypoints
//   training_K.json      [[3][3] doubles]    intrinsics
//   training_mano.json   [[55] doubles]      theta | beta | trans
//   training_verts.json  [[63][3] doubles]
//   rgb/00000000.png ...

inline std::string frame_name(int i) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%08d.png", i);
  return buf;
}

inline json mat_to_json(const Mat& m) {
  json rows = json::array();
  for (int r = 0; r < m.rows(); ++r) {
    json row = json::array();
    for (int c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(row);
  }
  return rows;
}

inline Mat mat_from_json(const json& j, int rows, int cols, const std::string& what) {
  HM_CHECK(j.is_array() && static_cast<int>(j.size()) == rows, DataError,
           what + ": expected " + std::to_string(rows) + " rows");
  Mat m(rows, cols);
  for (int r = 0; r < rows; ++r) {
    const json& row = j[static_cast<std::size_t>(r)];
    HM_CHECK(row.is_array() && static_cast<int>(row.size()) == cols, DataError,
             what + ": expected " + std::to_string(cols) + " columns");
    for (int c = 0; c < cols; ++c) m(r, c) = row[static_cast<std::size_t>(c)].get<double>();
  }
  return m;
}

inline void write_json_file(const std::string& path, const json& j) {
  std::ofstream out(path, std::ios::binary);
  HM_CHECK(out.good(), IoError, "cannot write " + path);
  out << j.dump();
  HM_CHECK(out.good(), IoError, "short write to " + path);
}

inline json read_json_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  HM_CHECK(in.good(), IoError, "cannot read " + path);
  json j = json::parse(in, nullptr, false);
  HM_CHECK(!j.is_discarded(), IoError, path + ": malformed JSON");
  return j;
}

inline void save_dataset(const std::string& dir, const std::vector<HandSample>& samples) {
  namespace fs = std::filesystem;
  fs::create_directories(fs::path(dir) / "rgb");
  json xyz = json::array(), k = json::array(), mano = json::array(), verts = json::array();
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const HandSample& s = samples[i];
    xyz.push_back(mat_to_json(s.kp3d));
    k.push_back(mat_to_json(s.cam.intrinsics()));
    Mat packed(1, 55);
    packed << s.theta, s.beta, s.trans;
    json flat = json::array();
    for (int c = 0; c < 55; ++c) flat.push_back(packed(0, c));
    mano.push_back(flat);
    verts.push_back(mat_to_json(s.verts));
    png::write_file(s.rgb, (fs::path(dir) / "rgb" / frame_name(static_cast<int>(i))).string());
  }
  write_json_file((fs::path(dir) / "training_xyz.json").string(), xyz);
  write_json_file((fs::path(dir) / "training_K.json").string(), k);
  write_json_file((fs::path(dir) / "training_mano.json").string(), mano);
  write_json_file((fs::path(dir) / "training_verts.json").string(), verts);
}

struct Dataset {
  std::string dir;
  std::vector<Mat> xyz;    // [21, 3] each
  std::vector<Camera> cams;
  std::vector<Mat> mano;   // [1, 55] each
  std::vector<Mat> verts;  // [63, 3] each

  int size() const { return static_cast<int>(xyz.size()); }

  Mat theta(int i) const { return mano[static_cast<std::size_t>(i)].leftCols(48); }
  Mat beta(int i) const { return mano[static_cast<std::size_t>(i)].middleCols(48, 4); }
  Mat trans(int i) const { return mano[static_cast<std::size_t>(i)].rightCols(3); }

  Image load_rgb(int i) const {
    HM_CHECK(i >= 0 && i < size(), InvariantError, "dataset: frame index out of range");
    namespace fs = std::filesystem;
    return png::read_file((fs::path(dir) / "rgb" / frame_name(i)).string());
  }

  static Dataset open(const std::string& dir) {
    namespace fs = std::filesystem;
    Dataset d;
    d.dir = dir;
    json xyz = read_json_file((fs::path(dir) / "training_xyz.json").string());
    json k = read_json_file((fs::path(dir) / "training_K.json").string());
    json mano = read_json_file((fs::path(dir) / "training_mano.json").string());
    json verts = read_json_file((fs::path(dir) / "training_verts.json").string());
    HM_CHECK(xyz.size() == k.size() && xyz.size() == mano.size() && xyz.size() == verts.size(),
             DataError, dir + ": field lists disagree on the sample count");
    for (std::size_t i = 0; i < xyz.size(); ++i) {
      std::string tag = dir + " sample " + std::to_string(i);
      d.xyz.push_back(mat_from_json(xyz[i], 21, 3, tag + " xyz"));
      d.cams.push_back(Camera::from_intrinsics(mat_from_json(k[i], 3, 3, tag + " K")));
      const json& row = mano[i];
      HM_CHECK(row.is_array() && row.size() == 55, DataError, tag + ": mano vector length");
      Mat m(1, 55);
      for (int c = 0; c < 55; ++c) m(0, c) = row[static_cast<std::size_t>(c)].get<double>();
      d.mano.push_back(m);
      d.verts.push_back(mat_from_json(verts[i], 63, 3, tag + " verts"));
    }
    return d;
  }
};

// --------------------------------------------------------------------------
// Pre-training crops: a square window around the projected keypoints,
// enlarged by a margin factor, resampled bilinearly to a fixed size.

struct CropEntry {
  int source = 0;
  double cx = 0.0, cy = 0.0, side = 0.0;  // window in source pixel coords
};

struct CropSet {
  std::string dir;
  int out_size = 0;
  double margin = 0.0;
  std::vector<CropEntry> entries;

  int size() const { return static_cast<int>(entries.size()); }

  Image load_crop(int i) const {
    HM_CHECK(i >= 0 && i < size(), InvariantError, "crops: index out of range");
    namespace fs = std::filesystem;
    return png::read_file((fs::path(dir) / "crops" / frame_name(i)).string());
  }

  static CropSet open(const std::string& dir) {
    namespace fs = std::filesystem;
    json j = read_json_file((fs::path(dir) / "index.json").string());
    CropSet c;
    c.dir = dir;
    HM_CHECK(j.contains("out_size") && j.contains("margin") && j.contains("entries"), DataError,
             dir + "/index.json: missing fields");
    c.out_size = j["out_size"].get<int>();
    c.margin = j["margin"].get<double>();
    for (const json& e : j["entries"])
      c.entries.push_back({e["source"].get<int>(), e["cx"].get<double>(), e["cy"].get<double>(),
                           e["side"].get<double>()});
    return c;
  }
};

inline Image extract_crop(const Image& src, double cx, double cy, double side, int out_size) {
  HM_CHECK(side > 0.0 && out_size > 0, InvariantError, "extract_crop: bad window");
  Image out(out_size, out_size);
  for (int r = 0; r < out_size; ++r)
    for (int c = 0; c < out_size; ++c) {
      double sx = cx - side / 2.0 + (c + 0.5) * side / out_size;
      double sy = cy - side / 2.0 + (r + 0.5) * side / out_size;
      Eigen::RowVector3d col = src.sample(sx, sy);
      for (int ch = 0; ch < 3; ++ch) out.at(r, c, ch) = col(ch);
    }
  return out;
}

// Builds out_dir/crops/*.png and out_dir/index.json from every frame of the
// dataset. The window is the keypoint bounding box blown up by `margin`.
inline CropSet build_pretrain_crops(const Dataset& data, const std::string& out_dir,
                                    int out_size, double margin = 1.3) {
  HM_CHECK(margin >= 1.0, ConfigError, "crops: margin below 1");
  namespace fs = std::filesystem;
  fs::create_directories(fs::path(out_dir) / "crops");
  CropSet set;
  set.dir = out_dir;
  set.out_size = out_size;
  set.margin = margin;
  json entries = json::array();
  for (int i = 0; i < data.size(); ++i) {
    Mat uv = project_value(data.xyz[static_cast<std::size_t>(i)], data.cams[static_cast<std::size_t>(i)]);
    double x0 = uv.col(0).minCoeff(), x1 = uv.col(0).maxCoeff();
    double y0 = uv.col(1).minCoeff(), y1 = uv.col(1).maxCoeff();
    CropEntry e;
    e.source = i;
    e.cx = 0.5 * (x0 + x1);
    e.cy = 0.5 * (y0 + y1);
    e.side = margin * std::max(x1 - x0, y1 - y0);
    HM_CHECK(e.side > 1.0, DataError, "crops: degenerate keypoint extent in frame " +
                                          std::to_string(i));
    Image crop = extract_crop(data.load_rgb(i), e.cx, e.cy, e.side, out_size);
    png::write_file(crop, (fs::path(out_dir) / "crops" / frame_name(i)).string());
    entries.push_back({{"source", e.source}, {"cx", e.cx}, {"cy", e.cy}, {"side", e.side}});
    set.entries.push_back(e);
  }
  json index;
  index["out_size"] = out_size;
  index["margin"] = margin;
  index["entries"] = entries;
  write_json_file((fs::path(out_dir) / "index.json").string(), index);
  return set;
}

}  // namespace handmim
