#include <catch2/catch_amalgamated.hpp>

#include "handmim/mesh_head.hpp"
#include "handmim/rng.hpp"
#include "support/gradcheck.hpp"

using namespace handmim;
using hmtest::gradcheck;

namespace {

Mat randn(int r, int c, Rng& rng, double scale = 1.0) {
  Mat m(r, c);
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) m(i, j) = rng.normal() * scale;
  return m;
}

ViTConfig micro_vit() {
  ViTConfig v;
  v.image_size = 8;
  v.patch_size = 4;
  v.depth = 2;
  v.width = 6;
  v.heads = 2;
  v.taps = {1, 2};
  return v;
}

}  // namespace

TEST_CASE("clamped minimum passes gradients only on the open side", "[mesh_head]") {
  Mat x(1, 3);
  x << -1.0, 0.3, 0.05;
  ad::Tape t;
  ad::Var xv = t.param(x, "x", true);
  ad::Var v = ad::clamp_min(xv, 0.05);
  REQUIRE(v.val()(0, 0) == 0.05);
  REQUIRE(v.val()(0, 1) == 0.3);
  REQUIRE(v.val()(0, 2) == 0.05);
  Mat probe(1, 3);
  probe << 2.0, 3.0, 5.0;
  t.backward(ad::sum(ad::mul(v, t.constant(probe))));
  Mat g = t.grad(xv);
  REQUIRE(g(0, 0) == 0.0);  // clamped
  REQUIRE(g(0, 1) == 3.0);
  REQUIRE(g(0, 2) == 0.0);  // exactly at the floor
}

TEST_CASE("fresh head predicts a hand at the configured depth", "[mesh_head]") {
  ViTConfig vit = ViTConfig::toy();
  MeshHeadConfig mh;
  HandModelData hand = make_synhand();
  ParamStore ps;
  Rng rng(1);
  init_mesh_head(ps, "head.", vit, mh, hand, rng);

  ad::Tape t;
  Rng data_rng(2);
  ad::Var cls = t.constant(randn(1, 64, data_rng, 0.5));
  ad::Var patches = t.constant(randn(16, 64, data_rng, 0.5));
  MeshOut out = run_mesh_head(t, cls, patches, ps, "head.", vit, mh, hand, Camera{}, false);

  REQUIRE(out.params.cols() == 55);
  REQUIRE(out.verts.rows() == 63);
  REQUIRE(out.kp3d.rows() == 21);
  REQUIRE(out.kp2d.rows() == 21);
  REQUIRE(all_finite(out.verts.val()));
  REQUIRE(all_finite(out.kp2d.val()));

  // Small output init keeps the pose near rest and the depth near the bias.
  REQUIRE(out.trans.val()(0, 2) == Catch::Approx(0.4).margin(0.05));
  for (int r = 0; r < 21; ++r)
    REQUIRE(out.kp3d.val()(r, 2) == Catch::Approx(0.4).margin(0.1));
  Mat rest_kp = keypoints_value(hand, hand.verts_t);
  for (int r = 0; r < 21; ++r)
    for (int c = 0; c < 2; ++c)
      REQUIRE(std::abs(out.kp3d.val()(r, c) - rest_kp(r, c)) < 0.05);
}

TEST_CASE("rectification rounds move the estimate", "[mesh_head]") {
  ViTConfig vit = micro_vit();
  MeshHeadConfig none;
  none.iters = 0;
  none.hidden = 8;
  MeshHeadConfig three;
  three.iters = 3;
  three.hidden = 8;
  HandModelData hand = make_synhand();
  ParamStore ps;
  Rng rng(3);
  init_mesh_head(ps, "head.", vit, three, hand, rng);

  Rng data_rng(4);
  Mat cls = randn(1, 6, data_rng);
  Mat patches = randn(4, 6, data_rng);
  ad::Tape t0;
  MeshOut base =
      run_mesh_head(t0, t0.constant(cls), t0.constant(patches), ps, "head.", vit, none, hand,
                    Camera{}, false);
  ad::Tape t3;
  MeshOut refined =
      run_mesh_head(t3, t3.constant(cls), t3.constant(patches), ps, "head.", vit, three, hand,
                    Camera{}, false);
  REQUIRE(base.params.val() != refined.params.val());
  // Refinement reuses one shared rectifier, so three rounds differ from one.
  MeshHeadConfig one = three;
  one.iters = 1;
  ad::Tape t1;
  MeshOut once = run_mesh_head(t1, t1.constant(cls), t1.constant(patches), ps, "head.", vit, one,
                               hand, Camera{}, false);
  REQUIRE(once.params.val() != refined.params.val());
}

TEST_CASE("head forward is deterministic", "[mesh_head]") {
  ViTConfig vit = micro_vit();
  MeshHeadConfig mh;
  mh.hidden = 8;
  HandModelData hand = make_synhand();
  Mat out[2];
  for (int trial = 0; trial < 2; ++trial) {
    ParamStore ps;
    Rng rng(7);
    init_mesh_head(ps, "head.", vit, mh, hand, rng);
    Rng data_rng(8);
    ad::Tape t;
    MeshOut o = run_mesh_head(t, t.constant(randn(1, 6, data_rng)),
                              t.constant(randn(4, 6, data_rng)), ps, "head.", vit, mh, hand,
                              Camera{}, false);
    out[trial] = o.kp2d.val();
  }
  REQUIRE(out[0] == out[1]);
}

TEST_CASE("perfect predictions give zero loss and errors surface per branch", "[mesh_head]") {
  HandModelData hand = make_synhand();
  Rng rng(11);
  Mat theta = randn(1, 48, rng, 0.2);
  Mat beta = randn(1, 4, rng, 0.3);
  Mat trans(1, 3);
  trans << 0.01, -0.02, 0.45;
  Mat verts = lbs_value(hand, theta, beta, trans);
  Mat kp3d = keypoints_value(hand, verts);
  Camera cam;
  Mat kp2d = project_value(kp3d, cam);

  FinetuneTarget gt{theta, beta, verts, kp3d, kp2d};

  auto make_out = [&](ad::Tape& t, const Mat& th, const Mat& be, const Mat& tr) {
    MeshOut o;
    o.theta = t.constant(th);
    o.beta = t.constant(be);
    o.trans = t.constant(tr);
    o.verts = lbs(t, hand, o.theta, o.beta, o.trans);
    o.kp3d = regress_keypoints(t, hand, o.verts);
    o.kp2d = project_guarded(t, o.kp3d, cam);
    return o;
  };

  SECTION("exact match") {
    ad::Tape t;
    FinetuneLoss l = finetune_loss(t, make_out(t, theta, beta, trans), gt);
    REQUIRE(l.total.val()(0, 0) == Catch::Approx(0.0).margin(1e-12));
  }

  SECTION("parameter error is the mean square over theta and beta") {
    Mat theta2 = theta;
    theta2(0, 5) += 0.3;
    ad::Tape t;
    FinetuneLoss l = finetune_loss(t, make_out(t, theta2, beta, trans), gt);
    REQUIRE(l.param.val()(0, 0) == Catch::Approx(0.3 * 0.3 / 52.0).epsilon(1e-9));
    REQUIRE(l.vert.val()(0, 0) > 0.0);  // the perturbed pose moves the mesh
  }

  SECTION("a pure translation error leaves parameters clean") {
    Mat trans2 = trans;
    trans2(0, 0) += 0.06;
    ad::Tape t;
    FinetuneLoss l = finetune_loss(t, make_out(t, theta, beta, trans2), gt);
    REQUIRE(l.param.val()(0, 0) == Catch::Approx(0.0).margin(1e-15));
    // Every vertex moves 0.06 in x only, so the mean |dv| is 0.06 / 3.
    REQUIRE(l.vert.val()(0, 0) == Catch::Approx(0.06 / 3.0).epsilon(1e-9));
    REQUIRE(l.kp3d.val()(0, 0) == Catch::Approx(0.06 / 3.0).epsilon(1e-9));
    REQUIRE(l.kp2d.val()(0, 0) > 0.0);
  }
}

TEST_CASE("weights scale their loss branches", "[mesh_head]") {
  HandModelData hand = make_synhand();
  Camera cam;
  Mat theta = Mat::Zero(1, 48), beta = Mat::Zero(1, 4);
  Mat trans(1, 3);
  trans << 0.0, 0.0, 0.4;
  Mat verts = lbs_value(hand, theta, beta, trans);
  Mat kp3d = keypoints_value(hand, verts);
  FinetuneTarget gt{theta, beta, verts, kp3d, project_value(kp3d, cam)};

  Mat trans2 = trans;
  trans2(0, 1) = 0.03;
  ad::Tape t;
  MeshOut o;
  o.theta = t.constant(theta);
  o.beta = t.constant(beta);
  o.trans = t.constant(trans2);
  o.verts = lbs(t, hand, o.theta, o.beta, o.trans);
  o.kp3d = regress_keypoints(t, hand, o.verts);
  o.kp2d = project_guarded(t, o.kp3d, cam);

  FinetuneWeights w;
  w.vert = 2.0;
  w.kp3d = 0.0;
  w.kp2d = 0.0;
  FinetuneLoss l = finetune_loss(t, o, gt, w);
  REQUIRE(l.total.val()(0, 0) ==
          Catch::Approx(2.0 * l.vert.val()(0, 0) + l.param.val()(0, 0)).epsilon(1e-12));
}

TEST_CASE("head gradients match finite differences", "[mesh_head]") {
  ViTConfig vit = micro_vit();
  MeshHeadConfig mh;
  mh.iters = 2;
  mh.hidden = 4;
  HandModelData hand = make_synhand();
  ParamStore ps;
  Rng rng(13);
  init_mesh_head(ps, "head.", vit, mh, hand, rng);
  Rng data_rng(14);
  Mat cls = randn(1, 6, data_rng, 0.5);
  Mat patches = randn(4, 6, data_rng, 0.5);

  Mat gt_theta = randn(1, 48, data_rng, 0.2);
  Mat gt_beta = randn(1, 4, data_rng, 0.3);
  Mat gt_trans(1, 3);
  gt_trans << 0.02, -0.01, 0.42;
  Camera cam;
  Mat gt_verts = lbs_value(hand, gt_theta, gt_beta, gt_trans);
  Mat gt_kp3d = keypoints_value(hand, gt_verts);
  FinetuneTarget gt{gt_theta, gt_beta, gt_verts, gt_kp3d, project_value(gt_kp3d, cam)};

  auto build = [&](ad::Tape& t) {
    MeshOut o = run_mesh_head(t, t.param(cls, "cls", true), t.param(patches, "patches", true),
                              ps, "head.", vit, mh, hand, cam, true);
    return finetune_loss(t, o, gt).total;
  };
  std::vector<hmtest::NamedParam> params = {{"cls", &cls}, {"patches", &patches}};
  for (const std::string& k : ps.keys()) params.push_back({k, &ps.at(k)});
  auto res = gradcheck(build, params, 1e-6);
  INFO(res.worst << " analytic=" << res.analytic << " fd=" << res.fd);
  REQUIRE(res.max_rel < 1e-3);
}

TEST_CASE("mesh head config rejects bad values", "[mesh_head]") {
  MeshHeadConfig mh;
  mh.iters = -1;
  REQUIRE_THROWS_AS(mh.validate(), ConfigError);
  mh.iters = 3;
  mh.hidden = 0;
  REQUIRE_THROWS_AS(mh.validate(), ConfigError);
  mh.hidden = 8;
  mh.init_depth = 0.0;
  REQUIRE_THROWS_AS(mh.validate(), ConfigError);
}
