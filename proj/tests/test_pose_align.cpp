#include <catch2/catch_amalgamated.hpp>

#include "handmim/pose_align.hpp"
#include "handmim/rng.hpp"

using namespace handmim;

namespace {

ViewTransform raw_xf(double angle, double gamma, double ox, double oy) {
  ViewTransform xf;
  xf.angle = angle;
  xf.gamma = gamma;
  xf.ox = ox;
  xf.oy = oy;
  xf.src_w = xf.src_h = 64;
  xf.out_size = 64;
  return xf;
}

Mat random_class_row(int k, Rng& rng, double scale = 10.0) {
  Mat m(1, 2 * k);
  for (int i = 0; i < 2 * k; ++i) m(0, i) = rng.uniform(-scale, scale);
  return m;
}

}  // namespace

TEST_CASE("class row reshapes to interleaved keypoints", "[pose_align]") {
  Mat cls(1, 4);
  cls << 1, 2, 3, 4;
  Mat kp = class_to_pseudo(cls);
  REQUIRE(kp.rows() == 2);
  REQUIRE(kp(0, 0) == 1.0);
  REQUIRE(kp(0, 1) == 2.0);
  REQUIRE(kp(1, 0) == 3.0);
  REQUIRE(kp(1, 1) == 4.0);
  REQUIRE(pseudo_to_class(kp) == cls);
}

TEST_CASE("zero class row maps to keypoints at the origin", "[pose_align]") {
  Mat cls = Mat::Zero(1, 256);
  Mat kp = class_to_pseudo(cls);
  REQUIRE(kp.rows() == 128);
  REQUIRE(kp.isZero());
}

TEST_CASE("odd-length class rows are rejected", "[pose_align]") {
  Mat bad(1, 5);
  bad.setZero();
  REQUIRE_THROWS_AS(class_to_pseudo(bad), InvariantError);
  Mat two_rows(2, 4);
  two_rows.setZero();
  REQUIRE_THROWS_AS(class_to_pseudo(two_rows), InvariantError);
}

TEST_CASE("align with the identity transform is the identity", "[pose_align]") {
  Rng rng(3);
  Mat kp(5, 2);
  for (int i = 0; i < 5; ++i) {
    kp(i, 0) = rng.uniform(-20, 20);
    kp(i, 1) = rng.uniform(-20, 20);
  }
  Mat out = align(kp, raw_xf(0.0, 1.0, 0.0, 0.0));
  REQUIRE(out == kp);
}

TEST_CASE("align inverts the forward map pointwise", "[pose_align]") {
  Rng rng(5);
  for (int trial = 0; trial < 200; ++trial) {
    ViewTransform xf = raw_xf(rng.uniform(0, 2 * M_PI), rng.uniform(0.2, 5.0),
                              rng.uniform(-50, 50), rng.uniform(-50, 50));
    Mat base(8, 2);
    for (int i = 0; i < 8; ++i) {
      base(i, 0) = rng.uniform(-40, 40);
      base(i, 1) = rng.uniform(-40, 40);
    }
    // Push each point through the view map, then align back.
    Mat pushed(8, 2);
    for (int i = 0; i < 8; ++i) {
      Vec2 q = xf.apply_geometric(Vec2(base(i, 0), base(i, 1)));
      pushed(i, 0) = q.x();
      pushed(i, 1) = q.y();
    }
    Mat recovered = align(pushed, xf);
    REQUIRE((recovered - base).cwiseAbs().maxCoeff() < 1e-6);
  }
}

TEST_CASE("aligned keypoints from two views of one scene agree", "[pose_align]") {
  Rng rng(7);
  for (int trial = 0; trial < 1000; ++trial) {
    ViewTransform xf_u = raw_xf(rng.uniform(0, M_PI), rng.uniform(0.3, 4.0),
                                rng.uniform(-50, 50), rng.uniform(-50, 50));
    ViewTransform xf_v = raw_xf(rng.uniform(0, M_PI), rng.uniform(0.3, 4.0),
                                rng.uniform(-50, 50), rng.uniform(-50, 50));
    Mat scene(4, 2);
    for (int i = 0; i < 4; ++i) {
      scene(i, 0) = rng.uniform(-30, 30);
      scene(i, 1) = rng.uniform(-30, 30);
    }
    Mat in_u(4, 2), in_v(4, 2);
    for (int i = 0; i < 4; ++i) {
      Vec2 qu = xf_u.apply_geometric(Vec2(scene(i, 0), scene(i, 1)));
      Vec2 qv = xf_v.apply_geometric(Vec2(scene(i, 0), scene(i, 1)));
      in_u.row(i) << qu.x(), qu.y();
      in_v.row(i) << qv.x(), qv.y();
    }
    Mat au = align(in_u, xf_u);
    Mat av = align(in_v, xf_v);
    REQUIRE((au - av).cwiseAbs().maxCoeff() < 1e-6);
    REQUIRE((au - scene).cwiseAbs().maxCoeff() < 1e-6);
  }
}

TEST_CASE("align is affine: superposition holds", "[pose_align]") {
  Rng rng(11);
  ViewTransform xf = raw_xf(0.9, 2.5, 7.0, -3.0);
  Mat a(6, 2), b(6, 2);
  for (int i = 0; i < 6; ++i) {
    a.row(i) << rng.uniform(-10, 10), rng.uniform(-10, 10);
    b.row(i) << rng.uniform(-10, 10), rng.uniform(-10, 10);
  }
  Mat zeros = Mat::Zero(6, 2);
  Mat lhs = align(a + b, xf);
  Mat rhs = align(a, xf) + align(b, xf) - align(zeros, xf);
  REQUIRE((lhs - rhs).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("tape alignment matches the value-level path and differentiates", "[pose_align]") {
  Rng rng(13);
  ViewTransform xf = raw_xf(1.2, 1.7, -12.0, 8.5);
  Mat cls = random_class_row(6, rng);

  ad::Tape t;
  ad::Var v = align_class(t, t.param(cls, "cls", true), xf);
  Mat expected = pseudo_to_class(align(class_to_pseudo(cls), xf));
  REQUIRE((v.val() - expected).cwiseAbs().maxCoeff() < 1e-12);

  // The map is affine with slope R / gamma on each keypoint pair; check one
  // gradient entry analytically: d out_x0 / d in_x0 = cos(angle)/gamma.
  t.backward(ad::sum(ad::slice_cols(v, 0, 1)));
  Mat g = t.named_grads().at("cls");
  REQUIRE(g(0, 0) == Catch::Approx(std::cos(xf.angle) / xf.gamma));
  REQUIRE(g(0, 1) == Catch::Approx(std::sin(xf.angle) / xf.gamma));
  REQUIRE(g(0, 2) == 0.0);
}

TEST_CASE("alignment round-trip through flatten preserves values", "[pose_align]") {
  Rng rng(17);
  Mat cls = random_class_row(128, rng);
  ViewTransform xf = raw_xf(0.4, 3.0, 20.0, -14.0);
  Mat once = pseudo_to_class(align(class_to_pseudo(cls), xf));
  REQUIRE(once.cols() == 256);
  // Applying the forward map to the aligned keypoints restores the input.
  Mat kp = class_to_pseudo(once);
  Mat back(kp.rows(), 2);
  for (int i = 0; i < kp.rows(); ++i) {
    Vec2 q = xf.apply_geometric(Vec2(kp(i, 0), kp(i, 1)));
    back.row(i) << q.x(), q.y();
  }
  REQUIRE((pseudo_to_class(back) - cls).cwiseAbs().maxCoeff() < 1e-6);
}
