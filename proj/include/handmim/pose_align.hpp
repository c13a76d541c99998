#pragma once

#include "handmim/augment.hpp"
#include "handmim/autodiff.hpp"
#include "handmim/error.hpp"
#include "handmim/mat.hpp"

// Pose-aware latent alignment. The class-token projection is read as a list
// of pseudo keypoints (x, y interleaved); each view's pseudo keypoints are
// mapped back to the shared source frame with the inverse of that view's
// geometric transform, which makes the two views' class distributions
// directly comparable.

namespace handmim {

// [1, 2K] row -> [K, 2] keypoints, row-major: (v0, v1) is point 0.
inline Mat class_to_pseudo(const Mat& cls) {
  HM_CHECK(cls.rows() == 1, InvariantError, "class_to_pseudo: expects a single row");
  HM_CHECK(cls.cols() % 2 == 0 && cls.cols() > 0, InvariantError,
           "class_to_pseudo: length must be a positive even number, got " +
               std::to_string(cls.cols()));
  return reshape_rm(cls, static_cast<int>(cls.cols()) / 2, 2);
}

inline Mat pseudo_to_class(const Mat& kp) {
  HM_CHECK(kp.cols() == 2, InvariantError, "pseudo_to_class: expects [K,2]");
  return reshape_rm(kp, 1, static_cast<int>(kp.rows()) * 2);
}

// Applies the inverse geometric map to every keypoint row.
inline Mat align(const Mat& kp, const ViewTransform& xf) {
  HM_CHECK(kp.cols() == 2, InvariantError, "align: expects [K,2]");
  Mat out(kp.rows(), 2);
  for (int i = 0; i < kp.rows(); ++i) {
    Vec2 p = xf.invert_geometric(Vec2(kp(i, 0), kp(i, 1)));
    out(i, 0) = p.x();
    out(i, 1) = p.y();
  }
  return out;
}

// Tape version over a [1, 2K] class projection: reshape, affine map,
// reshape back. The inverse map is linear in the keypoints
// (p_row = (q_row * R + offset) / gamma), so the whole thing
// differentiates through ordinary matrix ops.
inline ad::Var align_class(ad::Tape& t, ad::Var cls, const ViewTransform& xf) {
  HM_CHECK(cls.rows() == 1 && cls.cols() % 2 == 0, InvariantError,
           "align_class: expects [1, 2K]");
  HM_CHECK(xf.gamma > 0, InvariantError, "align_class: nonpositive scale");
  const int k = cls.cols() / 2;
  double c = std::cos(xf.angle), s = std::sin(xf.angle);
  Mat R(2, 2);
  R << c, -s, s, c;
  Mat off(1, 2);
  off << xf.ox, xf.oy;
  ad::Var kp = ad::reshape(cls, k, 2);
  ad::Var rotated = ad::matmul(kp, t.constant(R));
  ad::Var shifted = ad::add_rowvec(rotated, t.constant(off));
  ad::Var scaled = ad::scale(shifted, 1.0 / xf.gamma);
  return ad::reshape(scaled, 1, 2 * k);
}

}  // namespace handmim
