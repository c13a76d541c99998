#pragma once

// Parametric hand: a template mesh, shape blend directions, a kinematic tree
// posed by per-joint axis-angle rotations, linear blend skinning, and sparse
// regressors that read joint and keypoint positions off the vertices. The
// bundled synthetic hand (63 vertices, 16 tree joints, 21 keypoints, 4 shape
// directions) uses exclusively dyadic coordinates and weights so rest-pose
// identities hold to the last bit.

#include <string>
#include <vector>

#include "handmim/autodiff.hpp"
#include "handmim/container.hpp"
#include "handmim/mat.hpp"

namespace handmim {

// 21-keypoint order: wrist, then per finger (thumb, index, middle, ring,
// pinky) the chain MCP, PIP, DIP, TIP.
struct HandModelData {
  Mat verts_t;     // [P, 3] template vertices
  Mat shape_dirs;  // [B, P*3] per-unit-coefficient vertex displacements
  Mat skin_w;      // [P, Jk] blend weights, rows sum to 1
  Mat joint_reg;   // [Jk, P] tree joints from shaped vertices, rows sum to 1
  Mat kp_reg;      // [J, P] keypoints from posed vertices, rows sum to 1
  std::vector<int> parents;  // [Jk], parents[0] == -1, parents[k] < k

  int n_verts() const { return static_cast<int>(verts_t.rows()); }
  int n_joints() const { return static_cast<int>(joint_reg.rows()); }
  int n_keypoints() const { return static_cast<int>(kp_reg.rows()); }
  int n_shapes() const { return static_cast<int>(shape_dirs.rows()); }

  void validate() const {
    const int p = n_verts(), jk = n_joints(), j = n_keypoints(), b = n_shapes();
    HM_CHECK(p > 0 && jk > 0 && j > 0 && b >= 0, DataError, "hand model: empty component");
    HM_CHECK(verts_t.cols() == 3, DataError, "hand model: template is not [P,3]");
    HM_CHECK(shape_dirs.cols() == 3 * p, DataError, "hand model: shape_dirs width mismatch");
    HM_CHECK(skin_w.rows() == p && skin_w.cols() == jk, DataError,
             "hand model: skin weights are not [P,Jk]");
    HM_CHECK(joint_reg.cols() == p && kp_reg.cols() == p, DataError,
             "hand model: regressor width mismatch");
    HM_CHECK(static_cast<int>(parents.size()) == jk, DataError,
             "hand model: parents size mismatch");
    HM_CHECK(parents[0] == -1, DataError, "hand model: joint 0 must be the root");
    for (int k = 1; k < jk; ++k)
      HM_CHECK(parents[static_cast<std::size_t>(k)] >= 0 &&
                   parents[static_cast<std::size_t>(k)] < k,
               DataError, "hand model: parent of joint " + std::to_string(k) + " is not earlier");
    for (int r = 0; r < p; ++r) {
      HM_CHECK(skin_w.row(r).minCoeff() >= 0.0, DataError, "hand model: negative skin weight");
      HM_CHECK(std::abs(skin_w.row(r).sum() - 1.0) < 1e-12, DataError,
               "hand model: skin weights of vertex " + std::to_string(r) + " sum to " +
                   std::to_string(skin_w.row(r).sum()));
    }
    for (int r = 0; r < jk; ++r)
      HM_CHECK(std::abs(joint_reg.row(r).sum() - 1.0) < 1e-12, DataError,
               "hand model: joint regressor row " + std::to_string(r) + " is not affine");
    for (int r = 0; r < j; ++r)
      HM_CHECK(std::abs(kp_reg.row(r).sum() - 1.0) < 1e-12, DataError,
               "hand model: keypoint regressor row " + std::to_string(r) + " is not affine");
    require_finite(verts_t, "hand model template");
    require_finite(shape_dirs, "hand model shape dirs");
  }

  void save(const std::string& path) const {
    Archive a;
    a.meta["format"] = "handmodel";
    a.meta["name"] = "synhand63";
    a.put("verts_t", verts_t);
    a.put("shape_dirs", shape_dirs);
    a.put("skin_w", skin_w);
    a.put("joint_reg", joint_reg);
    a.put("kp_reg", kp_reg);
    Mat par(1, static_cast<int>(parents.size()));
    for (std::size_t i = 0; i < parents.size(); ++i)
      par(0, static_cast<int>(i)) = static_cast<double>(parents[i]);
    a.put("parents", par);
    a.save(path);
  }

  static HandModelData load(const std::string& path) {
    Archive a = Archive::load(path);
    HM_CHECK(a.meta.value("format", "") == "handmodel", IoError,
             path + ": not a hand model archive");
    HandModelData d;
    d.verts_t = a.get("verts_t");
    d.shape_dirs = a.get("shape_dirs");
    d.skin_w = a.get("skin_w");
    d.joint_reg = a.get("joint_reg");
    d.kp_reg = a.get("kp_reg");
    const Mat& par = a.get("parents");
    HM_CHECK(par.rows() == 1, IoError, path + ": malformed parents array");
    for (int i = 0; i < par.cols(); ++i) d.parents.push_back(static_cast<int>(par(0, i)));
    d.validate();
    return d;
  }
};

// Pose parameters: theta is [1, Jk*3] axis-angle per tree joint (joint 0 is
// the global rotation), beta is [1, B], trans is [1, 3] added after posing.

// Shaped template: verts_t + sum_b beta_b * shape_dirs_b.
inline ad::Var shaped_verts(ad::Tape& t, const HandModelData& d, ad::Var beta) {
  HM_CHECK(beta.rows() == 1 && beta.cols() == d.n_shapes(), InvariantError,
           "shaped_verts: beta is " + std::to_string(beta.rows()) + "x" +
               std::to_string(beta.cols()));
  ad::Var offs = ad::reshape(ad::matmul(beta, t.constant(d.shape_dirs)), d.n_verts(), 3);
  return ad::add(t.constant(d.verts_t), offs);
}

// Poses the shaped template with forward kinematics plus linear blend
// skinning and returns [P, 3] vertices. Points are row vectors, so a
// rotation R acts as v * R^T.
inline ad::Var lbs(ad::Tape& t, const HandModelData& d, ad::Var theta, ad::Var beta,
                   ad::Var trans) {
  const int jk = d.n_joints(), p = d.n_verts();
  HM_CHECK(theta.rows() == 1 && theta.cols() == 3 * jk, InvariantError,
           "lbs: theta is " + std::to_string(theta.rows()) + "x" + std::to_string(theta.cols()));
  HM_CHECK(trans.rows() == 1 && trans.cols() == 3, InvariantError, "lbs: trans is not [1,3]");

  ad::Var vs = shaped_verts(t, d, beta);
  ad::Var joints = ad::matmul(t.constant(d.joint_reg), vs);  // [Jk, 3] rest positions

  std::vector<ad::Var> rot_w;   // [3,3] world rotation per joint
  std::vector<ad::Var> pos_w;   // [1,3] world joint position
  for (int k = 0; k < jk; ++k) {
    ad::Var rk = ad::rodrigues(ad::slice_cols(theta, 3 * k, 3));
    ad::Var jr = ad::slice_rows(joints, k, 1);
    int par = d.parents[static_cast<std::size_t>(k)];
    if (par < 0) {
      rot_w.push_back(rk);
      pos_w.push_back(jr);
    } else {
      ad::Var off = ad::sub(jr, ad::slice_rows(joints, par, 1));
      rot_w.push_back(ad::matmul(rot_w[static_cast<std::size_t>(par)], rk));
      pos_w.push_back(ad::add(pos_w[static_cast<std::size_t>(par)],
                              ad::matmul(off, ad::transpose(rot_w[static_cast<std::size_t>(par)]))));
    }
  }

  ad::Var posed = t.constant(Mat::Zero(p, 3));
  for (int k = 0; k < jk; ++k) {
    ad::Var centered = ad::add_rowvec(vs, ad::neg(ad::slice_rows(joints, k, 1)));
    ad::Var moved = ad::add_rowvec(ad::matmul(centered, ad::transpose(rot_w[static_cast<std::size_t>(k)])),
                                   pos_w[static_cast<std::size_t>(k)]);
    posed = ad::add(posed, ad::mul_colvec(moved, t.constant(Mat(d.skin_w.col(k)))));
  }
  return ad::add_rowvec(posed, trans);
}

// Keypoints from posed vertices: kp_reg * verts, [J, 3].
inline ad::Var regress_keypoints(ad::Tape& t, const HandModelData& d, ad::Var verts) {
  HM_CHECK(verts.rows() == d.n_verts() && verts.cols() == 3, InvariantError,
           "regress_keypoints: verts are " + std::to_string(verts.rows()) + "x" +
               std::to_string(verts.cols()));
  return ad::matmul(t.constant(d.kp_reg), verts);
}

// Eager counterparts.
inline Mat lbs_value(const HandModelData& d, const Mat& theta, const Mat& beta,
                     const Mat& trans) {
  ad::Tape t;
  return lbs(t, d, t.constant(theta), t.constant(beta), t.constant(trans)).val();
}

inline Mat keypoints_value(const HandModelData& d, const Mat& verts) { return d.kp_reg * verts; }

// --------------------------------------------------------------------------
// Pinhole camera. Points live in camera coordinates with z forward; the
// projection lands in pixel coordinates with y down.

struct Camera {
  double fx = 480.0, fy = 480.0, cx = 112.0, cy = 112.0;

  Mat intrinsics() const {
    Mat k = Mat::Zero(3, 3);
    k(0, 0) = fx;
    k(1, 1) = fy;
    k(0, 2) = cx;
    k(1, 2) = cy;
    k(2, 2) = 1.0;
    return k;
  }

  static Camera from_intrinsics(const Mat& k) {
    HM_CHECK(k.rows() == 3 && k.cols() == 3, DataError, "camera: intrinsics are not 3x3");
    return Camera{k(0, 0), k(1, 1), k(0, 2), k(1, 2)};
  }
};

// u = fx x/z + cx, v = fy y/z + cy for each [x y z] row. Rejects points at or
// behind the camera plane.
inline ad::Var project(ad::Tape& t, ad::Var pts, const Camera& cam) {
  HM_CHECK(pts.cols() == 3, InvariantError, "project: points are not [N,3]");
  HM_CHECK(pts.val().col(2).minCoeff() > 1e-6, NumericError,
           "project: point at or behind the camera");
  ad::Var xs = ad::slice_cols(pts, 0, 1);
  ad::Var ys = ad::slice_cols(pts, 1, 1);
  ad::Var zs = ad::slice_cols(pts, 2, 1);
  ad::Var u = ad::add_scalar(ad::scale(ad::divv(xs, zs), cam.fx), cam.cx);
  ad::Var v = ad::add_scalar(ad::scale(ad::divv(ys, zs), cam.fy), cam.cy);
  (void)t;
  return ad::concat_cols({u, v});
}

inline Mat project_value(const Mat& pts, const Camera& cam) {
  ad::Tape t;
  return project(t, t.constant(pts), cam).val();
}

// --------------------------------------------------------------------------
// Built-in synthetic hand. All coordinates and weights are dyadic rationals
// (multiples of 2^-8) so sums and averages in the rest pose are exact in
// double precision. Frame: x right, y along the fingers, z out of the palm;
// units are meters.

namespace synhand {

constexpr int kVerts = 63;
constexpr int kJoints = 16;       // wrist + 5 fingers * (MCP, PIP, DIP)
constexpr int kKeypoints = 21;
constexpr int kShapes = 4;

// Per finger, 12 vertices starting at 12*f: paired +z/-z around MCP, PIP,
// DIP, TIP (8), a tip apex (1), and three mid-segment points (3). Vertices
// 60, 61 straddle the wrist symmetrically; 62 sits in the palm.
inline int mcp(int f) { return 3 * f + 1; }
inline int pip(int f) { return 3 * f + 2; }
inline int dip(int f) { return 3 * f + 3; }

inline std::vector<int> parents() {
  return {-1, 0, 1, 2, 0, 4, 5, 0, 7, 8, 0, 10, 11, 0, 13, 14};
}

inline Mat joint_rest_positions() {
  const double bx[5] = {-0.0625, -0.03125, 0.0, 0.03125, 0.0625};
  const double by[5] = {0.03125, 0.0625, 0.0625, 0.0625, 0.0625};   // thumb roots lower
  const double seg[5] = {0.0234375, 0.03125, 0.03515625, 0.03125, 0.0234375};
  Mat j = Mat::Zero(kJoints, 3);
  for (int f = 0; f < 5; ++f) {
    j.row(mcp(f)) << bx[f], by[f], 0.0;
    j.row(pip(f)) << bx[f], by[f] + seg[f], 0.0;
    j.row(dip(f)) << bx[f], by[f] + 2.0 * seg[f], 0.0;
  }
  return j;
}

}  // namespace synhand

inline HandModelData make_synhand() {
  using namespace synhand;
  const double seg[5] = {0.0234375, 0.03125, 0.03515625, 0.03125, 0.0234375};
  const double half_thick = 0.015625;
  Mat joints = joint_rest_positions();

  HandModelData d;
  d.parents = parents();
  d.verts_t = Mat::Zero(kVerts, 3);
  d.skin_w = Mat::Zero(kVerts, kJoints);
  d.joint_reg = Mat::Zero(kJoints, kVerts);
  d.kp_reg = Mat::Zero(kKeypoints, kVerts);

  auto pair_at = [&](int v0, double x, double y, double z_half) {
    d.verts_t.row(v0) << x, y, z_half;
    d.verts_t.row(v0 + 1) << x, y, -z_half;
  };

  for (int f = 0; f < 5; ++f) {
    const int b = 12 * f;
    const double x = joints(mcp(f), 0);
    const double y0 = joints(mcp(f), 1);
    const double l = seg[f];
    pair_at(b + 0, x, y0, half_thick);             // MCP
    pair_at(b + 2, x, y0 + l, half_thick);         // PIP
    pair_at(b + 4, x, y0 + 2.0 * l, half_thick);   // DIP
    pair_at(b + 6, x, y0 + 3.0 * l, half_thick);   // TIP
    d.verts_t.row(b + 8) << x, y0 + 3.25 * l, 0.0;  // tip apex
    d.verts_t.row(b + 9) << x + 0.0078125, y0 + 0.5 * l, 0.0;
    d.verts_t.row(b + 10) << x + 0.0078125, y0 + 1.5 * l, 0.0;
    d.verts_t.row(b + 11) << x + 0.0078125, y0 + 2.5 * l, 0.0;

    d.skin_w(b + 0, 0) = 0.5;
    d.skin_w(b + 0, mcp(f)) = 0.5;
    d.skin_w(b + 1, 0) = 0.5;
    d.skin_w(b + 1, mcp(f)) = 0.5;
    d.skin_w(b + 2, mcp(f)) = 0.5;
    d.skin_w(b + 2, pip(f)) = 0.5;
    d.skin_w(b + 3, mcp(f)) = 0.5;
    d.skin_w(b + 3, pip(f)) = 0.5;
    d.skin_w(b + 4, pip(f)) = 0.5;
    d.skin_w(b + 4, dip(f)) = 0.5;
    d.skin_w(b + 5, pip(f)) = 0.5;
    d.skin_w(b + 5, dip(f)) = 0.5;
    for (int v = 6; v <= 8; ++v) d.skin_w(b + v, dip(f)) = 1.0;
    d.skin_w(b + 9, 0) = 0.25;
    d.skin_w(b + 9, mcp(f)) = 0.5;
    d.skin_w(b + 9, pip(f)) = 0.25;
    d.skin_w(b + 10, mcp(f)) = 0.25;
    d.skin_w(b + 10, pip(f)) = 0.5;
    d.skin_w(b + 10, dip(f)) = 0.25;
    d.skin_w(b + 11, pip(f)) = 0.25;
    d.skin_w(b + 11, dip(f)) = 0.75;

    d.joint_reg(mcp(f), b + 0) = 0.5;
    d.joint_reg(mcp(f), b + 1) = 0.5;
    d.joint_reg(pip(f), b + 2) = 0.5;
    d.joint_reg(pip(f), b + 3) = 0.5;
    d.joint_reg(dip(f), b + 4) = 0.5;
    d.joint_reg(dip(f), b + 5) = 0.5;

    // Keypoints MCP/PIP/DIP/TIP of finger f are rows 4f+1 .. 4f+4.
    d.kp_reg(4 * f + 1, b + 0) = 0.5;
    d.kp_reg(4 * f + 1, b + 1) = 0.5;
    d.kp_reg(4 * f + 2, b + 2) = 0.5;
    d.kp_reg(4 * f + 2, b + 3) = 0.5;
    d.kp_reg(4 * f + 3, b + 4) = 0.5;
    d.kp_reg(4 * f + 3, b + 5) = 0.5;
    d.kp_reg(4 * f + 4, b + 6) = 0.5;
    d.kp_reg(4 * f + 4, b + 7) = 0.5;
  }

  // Wrist pair straddles the origin so its average is exactly zero.
  d.verts_t.row(60) << 0.03125, 0.0, 0.015625;
  d.verts_t.row(61) << -0.03125, 0.0, -0.015625;
  d.verts_t.row(62) << 0.0, 0.03125, 0.0;
  d.skin_w(60, 0) = 1.0;
  d.skin_w(61, 0) = 1.0;
  d.skin_w(62, 0) = 1.0;
  d.joint_reg(0, 60) = 0.5;
  d.joint_reg(0, 61) = 0.5;
  d.kp_reg(0, 60) = 0.5;
  d.kp_reg(0, 61) = 0.5;

  // Shape directions: overall size, finger stretch, thickness, spread.
  d.shape_dirs = Mat::Zero(kShapes, kVerts * 3);
  for (int v = 0; v < kVerts; ++v) {
    d.shape_dirs(0, 3 * v + 0) = 0.125 * d.verts_t(v, 0);
    d.shape_dirs(0, 3 * v + 1) = 0.125 * d.verts_t(v, 1);
    d.shape_dirs(0, 3 * v + 2) = 0.125 * d.verts_t(v, 2);
    d.shape_dirs(1, 3 * v + 1) = 0.25 * d.verts_t(v, 1);
    d.shape_dirs(2, 3 * v + 2) = d.verts_t(v, 2);
    d.shape_dirs(3, 3 * v + 0) = 0.5 * d.verts_t(v, 0);
  }

  d.validate();
  return d;
}

}  // namespace handmim
