#include <catch2/catch_amalgamated.hpp>

#include <cstdio>

#include "handmim/hand_model.hpp"
#include "handmim/rng.hpp"
#include "support/gradcheck.hpp"

using namespace handmim;
using hmtest::gradcheck;

namespace {

Mat zeros_theta() { return Mat::Zero(1, 48); }
Mat zeros_beta() { return Mat::Zero(1, 4); }
Mat zeros_trans() { return Mat::Zero(1, 3); }

}  // namespace

TEST_CASE("synthetic hand has the advertised component sizes", "[hand_model]") {
  HandModelData d = make_synhand();
  REQUIRE(d.n_verts() == 63);
  REQUIRE(d.n_joints() == 16);
  REQUIRE(d.n_keypoints() == 21);
  REQUIRE(d.n_shapes() == 4);
  REQUIRE(d.parents[0] == -1);
  for (int f = 0; f < 5; ++f) {
    REQUIRE(d.parents[static_cast<std::size_t>(3 * f + 1)] == 0);
    REQUIRE(d.parents[static_cast<std::size_t>(3 * f + 2)] == 3 * f + 1);
    REQUIRE(d.parents[static_cast<std::size_t>(3 * f + 3)] == 3 * f + 2);
  }
  // Affine rows, checked exactly rather than through validate's tolerance.
  for (int r = 0; r < 63; ++r) REQUIRE(d.skin_w.row(r).sum() == 1.0);
  for (int r = 0; r < 16; ++r) REQUIRE(d.joint_reg.row(r).sum() == 1.0);
  for (int r = 0; r < 21; ++r) REQUIRE(d.kp_reg.row(r).sum() == 1.0);
}

TEST_CASE("rest pose reproduces the template to the last bit", "[hand_model]") {
  HandModelData d = make_synhand();
  Mat v = lbs_value(d, zeros_theta(), zeros_beta(), zeros_trans());
  REQUIRE((v - d.verts_t).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("rest keypoints sit exactly on the designed joints", "[hand_model]") {
  HandModelData d = make_synhand();
  Mat v = lbs_value(d, zeros_theta(), zeros_beta(), zeros_trans());
  Mat kp = keypoints_value(d, v);
  REQUIRE(kp.rows() == 21);

  REQUIRE(kp(0, 0) == 0.0);  // wrist exactly at the origin
  REQUIRE(kp(0, 1) == 0.0);
  REQUIRE(kp(0, 2) == 0.0);

  Mat joints = synhand::joint_rest_positions();
  for (int f = 0; f < 5; ++f) {
    for (int c = 0; c < 3; ++c) {
      REQUIRE(kp(4 * f + 1, c) == joints(synhand::mcp(f), c));
      REQUIRE(kp(4 * f + 2, c) == joints(synhand::pip(f), c));
      REQUIRE(kp(4 * f + 3, c) == joints(synhand::dip(f), c));
    }
    // Tip lies one segment beyond the DIP joint, in the finger direction.
    double seg = joints(synhand::pip(f), 1) - joints(synhand::mcp(f), 1);
    REQUIRE(kp(4 * f + 4, 0) == joints(synhand::dip(f), 0));
    REQUIRE(kp(4 * f + 4, 1) == joints(synhand::dip(f), 1) + seg);
    REQUIRE(kp(4 * f + 4, 2) == 0.0);
  }
}

TEST_CASE("unit shape coefficients add exactly one shape direction", "[hand_model]") {
  HandModelData d = make_synhand();
  for (int s = 0; s < 4; ++s) {
    Mat beta = zeros_beta();
    beta(0, s) = 1.0;
    Mat v = lbs_value(d, zeros_theta(), beta, zeros_trans());
    Mat expect = d.verts_t;
    for (int i = 0; i < 63; ++i)
      for (int c = 0; c < 3; ++c) expect(i, c) += d.shape_dirs(s, 3 * i + c);
    REQUIRE((v - expect).cwiseAbs().maxCoeff() == 0.0);
  }
}

TEST_CASE("translation shifts vertices and keypoints rigidly", "[hand_model]") {
  HandModelData d = make_synhand();
  Mat theta = zeros_theta();
  theta(0, 4) = 0.7;  // bend the thumb so the pose is not trivial
  theta(0, 15) = -0.4;
  Mat trans(1, 3);
  trans << 0.03, -0.01, 0.42;
  Mat v0 = lbs_value(d, theta, zeros_beta(), zeros_trans());
  Mat v1 = lbs_value(d, theta, zeros_beta(), trans);
  Mat shifted = v0;
  shifted.rowwise() += Eigen::RowVector3d(0.03, -0.01, 0.42);
  REQUIRE((v1 - shifted).cwiseAbs().maxCoeff() < 1e-15);
  Mat kp_delta = keypoints_value(d, v1) - keypoints_value(d, v0);
  for (int r = 0; r < 21; ++r) {
    REQUIRE(kp_delta(r, 0) == Catch::Approx(0.03).epsilon(1e-12));
    REQUIRE(kp_delta(r, 1) == Catch::Approx(-0.01).epsilon(1e-12));
    REQUIRE(kp_delta(r, 2) == Catch::Approx(0.42).epsilon(1e-12));
  }
}

TEST_CASE("the root joint rotates the whole hand about the wrist", "[hand_model]") {
  HandModelData d = make_synhand();
  Mat theta = zeros_theta();
  theta(0, 0) = 0.3;
  theta(0, 1) = -0.5;
  theta(0, 2) = 0.8;
  Mat v = lbs_value(d, theta, zeros_beta(), zeros_trans());

  Eigen::Vector3d axis(0.3, -0.5, 0.8);
  double angle = axis.norm();
  Mat3 r = Eigen::AngleAxisd(angle, axis / angle).toRotationMatrix();
  Mat expect = d.verts_t * r.transpose();  // wrist is at the origin
  REQUIRE((v - expect).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("bending one knuckle moves only that finger's distal chain", "[hand_model]") {
  HandModelData d = make_synhand();
  const int f = 1;  // index finger
  Mat theta = zeros_theta();
  theta(0, 3 * synhand::mcp(f) + 0) = M_PI / 2.0;  // fold 90 degrees about x
  Mat v = lbs_value(d, theta, zeros_beta(), zeros_trans());

  // Other fingers, wrist and palm vertices stay put exactly.
  for (int i = 0; i < 63; ++i) {
    bool own = i >= 12 * f && i < 12 * (f + 1);
    if (own) continue;
    REQUIRE(v(i, 0) == d.verts_t(i, 0));
    REQUIRE(v(i, 1) == d.verts_t(i, 1));
    REQUIRE(v(i, 2) == d.verts_t(i, 2));
  }

  // The tip swings from pointing along +y to pointing along +z about the MCP.
  Mat joints = synhand::joint_rest_positions();
  Mat kp = keypoints_value(d, v);
  double seg = joints(synhand::pip(f), 1) - joints(synhand::mcp(f), 1);
  Vec3 expect_tip(joints(synhand::mcp(f), 0), joints(synhand::mcp(f), 1), 3.0 * seg);
  REQUIRE(std::abs(kp(4 * f + 4, 0) - expect_tip.x()) < 1e-9);
  REQUIRE(std::abs(kp(4 * f + 4, 1) - expect_tip.y()) < 1e-9);
  REQUIRE(std::abs(kp(4 * f + 4, 2) - expect_tip.z()) < 1e-9);
}

TEST_CASE("chained rotations compose parent to child", "[hand_model]") {
  HandModelData d = make_synhand();
  const int f = 2;  // middle finger along +y from the wrist
  Mat theta = zeros_theta();
  theta(0, 3 * synhand::mcp(f) + 0) = M_PI / 2.0;
  theta(0, 3 * synhand::pip(f) + 0) = M_PI / 2.0;
  Mat v = lbs_value(d, theta, zeros_beta(), zeros_trans());
  Mat kp = keypoints_value(d, v);

  Mat joints = synhand::joint_rest_positions();
  double seg = joints(synhand::pip(f), 1) - joints(synhand::mcp(f), 1);
  double x = joints(synhand::mcp(f), 0), ymcp = joints(synhand::mcp(f), 1);
  // MCP fold sends the proximal segment to +z; the PIP fold then sends the
  // rest to -y. Tip = mcp + (0, -2 seg, seg).
  REQUIRE(std::abs(kp(4 * f + 4, 0) - x) < 1e-9);
  REQUIRE(std::abs(kp(4 * f + 4, 1) - (ymcp - 2.0 * seg)) < 1e-9);
  REQUIRE(std::abs(kp(4 * f + 4, 2) - seg) < 1e-9);
}

TEST_CASE("posing gradients match finite differences", "[hand_model]") {
  HandModelData d = make_synhand();
  Rng rng(5);
  Mat theta(1, 48), beta(1, 4), trans(1, 3);
  for (int i = 0; i < 48; ++i) theta(0, i) = rng.normal() * 0.3;
  for (int i = 0; i < 4; ++i) beta(0, i) = rng.normal() * 0.5;
  trans << 0.01, -0.02, 0.4;
  Mat probe(63, 3);
  for (int i = 0; i < 63; ++i)
    for (int c = 0; c < 3; ++c) probe(i, c) = rng.normal();

  auto build = [&](ad::Tape& t) {
    ad::Var v = lbs(t, d, t.param(theta, "theta", true), t.param(beta, "beta", true),
                    t.param(trans, "trans", true));
    return ad::sum(ad::mul(v, t.constant(probe)));
  };
  auto res = gradcheck(build, {{"theta", &theta}, {"beta", &beta}, {"trans", &trans}}, 1e-6);
  INFO(res.worst << " analytic=" << res.analytic << " fd=" << res.fd);
  REQUIRE(res.max_rel < 1e-3);
}

TEST_CASE("pinhole projection matches the textbook formula", "[hand_model]") {
  Camera cam;  // fx = fy = 480, cx = cy = 112
  Mat pts(2, 3);
  pts << 0.1, 0.05, 0.5, -0.2, 0.0, 0.4;
  Mat uv = project_value(pts, cam);
  REQUIRE(uv(0, 0) == Catch::Approx(480.0 * 0.2 + 112.0));
  REQUIRE(uv(0, 1) == Catch::Approx(480.0 * 0.1 + 112.0));
  REQUIRE(uv(1, 0) == Catch::Approx(480.0 * -0.5 + 112.0));
  REQUIRE(uv(1, 1) == Catch::Approx(112.0));

  Mat k = cam.intrinsics();
  Camera back = Camera::from_intrinsics(k);
  REQUIRE(back.fx == cam.fx);
  REQUIRE(back.cy == cam.cy);

  Mat behind(1, 3);
  behind << 0.0, 0.0, -0.1;
  ad::Tape t;
  REQUIRE_THROWS_AS(project(t, t.constant(behind), cam), NumericError);
}

TEST_CASE("projection gradients match finite differences", "[hand_model]") {
  Camera cam;
  Rng rng(9);
  Mat pts(4, 3);
  for (int i = 0; i < 4; ++i) {
    pts(i, 0) = rng.normal() * 0.05;
    pts(i, 1) = rng.normal() * 0.05;
    pts(i, 2) = 0.4 + rng.uniform01() * 0.2;
  }
  Mat probe(4, 2);
  for (int i = 0; i < 4; ++i)
    for (int c = 0; c < 2; ++c) probe(i, c) = rng.normal();
  auto build = [&](ad::Tape& t) {
    return ad::sum(ad::mul(project(t, t.param(pts, "p", true), cam), t.constant(probe)));
  };
  auto res = gradcheck(build, {{"p", &pts}}, 1e-6);
  REQUIRE(res.max_rel < 1e-3);
}

TEST_CASE("hand model archives round-trip bit for bit", "[hand_model]") {
  HandModelData d = make_synhand();
  std::string path = "synhand_roundtrip.hma";
  d.save(path);
  HandModelData back = HandModelData::load(path);
  REQUIRE(back.verts_t == d.verts_t);
  REQUIRE(back.shape_dirs == d.shape_dirs);
  REQUIRE(back.skin_w == d.skin_w);
  REQUIRE(back.joint_reg == d.joint_reg);
  REQUIRE(back.kp_reg == d.kp_reg);
  REQUIRE(back.parents == d.parents);

  Archive raw = Archive::load(path);
  REQUIRE(raw.meta.value("format", "") == "handmodel");
  std::remove(path.c_str());

  // A generic archive without the format tag is rejected.
  Archive other;
  other.meta["format"] = "checkpoint";
  other.put("verts_t", d.verts_t);
  other.save("not_a_hand.hma");
  REQUIRE_THROWS_AS(HandModelData::load("not_a_hand.hma"), IoError);
  std::remove("not_a_hand.hma");
}

TEST_CASE("degenerate models are rejected", "[hand_model]") {
  HandModelData d = make_synhand();
  SECTION("non-affine skin row") {
    d.skin_w(0, 0) += 0.25;
    REQUIRE_THROWS_AS(d.validate(), DataError);
  }
  SECTION("negative skin weight") {
    d.skin_w(5, 0) = -0.5;
    d.skin_w(5, 1) = 1.5;
    REQUIRE_THROWS_AS(d.validate(), DataError);
  }
  SECTION("parent after child") {
    d.parents[2] = 7;
    REQUIRE_THROWS_AS(d.validate(), DataError);
  }
  SECTION("regressor row off by epsilon beyond tolerance") {
    d.kp_reg(3, 0) += 1e-6;
    REQUIRE_THROWS_AS(d.validate(), DataError);
  }
}
