#pragma once

// Mesh regression head: an initial parameter guess read off the class token,
// refined by a fixed number of rectification rounds. Each round projects the
// current keypoint estimate into the patch-token grid, samples features
// there bilinearly, and predicts a parameter update from what it sees.

#include <array>
#include <string>
#include <vector>

#include "handmim/autodiff.hpp"
#include "handmim/hand_model.hpp"
#include "handmim/nn.hpp"
#include "handmim/vit.hpp"

namespace handmim {

struct MeshHeadConfig {
  int iters = 3;
  int hidden = 64;
  double init_depth = 0.4;  // starting camera-space hand depth in meters

  void validate() const {
    HM_CHECK(iters >= 0, ConfigError, "mesh head: negative iteration count");
    HM_CHECK(hidden > 0, ConfigError, "mesh head: nonpositive hidden width");
    HM_CHECK(init_depth > 0.0, ConfigError, "mesh head: nonpositive initial depth");
  }
};

// The parameter vector is [theta (3 Jk) | beta (B) | trans (3)].
inline int mesh_param_dim(const HandModelData& hand) { return 3 * hand.n_joints() + hand.n_shapes() + 3; }

// Names under `prefix`: init.{w1,b1,w2,b2} reads [cls | mean patch token],
// rect.{w1,b1,w2,b2} reads [sampled features | current params]. The final
// bias of the init net starts at the configured depth so the first estimate
// sits in front of the camera; everything else starts near the rest pose.
inline void init_mesh_head(ParamStore& ps, const std::string& prefix, const ViTConfig& vit,
                           const MeshHeadConfig& cfg, const HandModelData& hand, Rng& rng) {
  cfg.validate();
  const int pd = mesh_param_dim(hand);
  init_mlp2(ps, prefix + "init.", 2 * vit.width, cfg.hidden, pd, rng, 0.002);
  init_mlp2(ps, prefix + "rect.", hand.n_keypoints() * vit.width + pd, cfg.hidden, pd, rng,
            0.002);
  ps.at(prefix + "init.b2")(0, pd - 1) = cfg.init_depth;
}

// Projection used for feature sampling and the 2D branch of the loss: the
// depth is floored at 5 cm so a bad intermediate estimate cannot put points
// behind the camera and kill the pass.
inline ad::Var project_guarded(ad::Tape& t, ad::Var pts, const Camera& cam) {
  HM_CHECK(pts.cols() == 3, InvariantError, "project_guarded: points are not [N,3]");
  ad::Var xs = ad::slice_cols(pts, 0, 1);
  ad::Var ys = ad::slice_cols(pts, 1, 1);
  ad::Var zs = ad::clamp_min(ad::slice_cols(pts, 2, 1), 0.05);
  ad::Var u = ad::add_scalar(ad::scale(ad::divv(xs, zs), cam.fx), cam.cx);
  ad::Var v = ad::add_scalar(ad::scale(ad::divv(ys, zs), cam.fy), cam.cy);
  (void)t;
  return ad::concat_cols({u, v});
}

struct MeshOut {
  ad::Var params;  // [1, 3 Jk + B + 3]
  ad::Var theta;   // [1, 3 Jk]
  ad::Var beta;    // [1, B]
  ad::Var trans;   // [1, 3]
  ad::Var verts;   // [P, 3]
  ad::Var kp3d;    // [J, 3] camera space
  ad::Var kp2d;    // [J, 2] pixels
};

inline MeshOut run_mesh_head(ad::Tape& t, ad::Var cls, ad::Var patches, const ParamStore& ps,
                             const std::string& prefix, const ViTConfig& vit,
                             const MeshHeadConfig& cfg, const HandModelData& hand,
                             const Camera& cam, bool trainable) {
  cfg.validate();
  const int n = vit.grid();
  HM_CHECK(cls.rows() == 1 && cls.cols() == vit.width, InvariantError,
           "run_mesh_head: class token shape");
  HM_CHECK(patches.rows() == n * n && patches.cols() == vit.width, InvariantError,
           "run_mesh_head: patch token shape");
  const int pd = mesh_param_dim(hand);
  const int jr = hand.n_keypoints();

  ad::Var pooled = ad::concat_cols({cls, ad::colwise_sum(ad::scale(patches, 1.0 / (n * n)))});
  ad::Var phi = mlp2(t, pooled, ps, prefix + "init.", trainable);

  auto split = [&](ad::Var p) {
    return std::array<ad::Var, 3>{ad::slice_cols(p, 0, 3 * hand.n_joints()),
                                  ad::slice_cols(p, 3 * hand.n_joints(), hand.n_shapes()),
                                  ad::slice_cols(p, pd - 3, 3)};
  };

  for (int it = 0; it < cfg.iters; ++it) {
    auto [theta, beta, trans] = split(phi);
    ad::Var kp = regress_keypoints(t, hand, lbs(t, hand, theta, beta, trans));
    ad::Var uv = project_guarded(t, kp, cam);
    // Pixel (u, v) lands between patch centers at (u / p - 1/2, v / p - 1/2).
    ad::Var coords = ad::add_scalar(ad::scale(uv, 1.0 / vit.patch_size), -0.5);
    ad::Var feats = ad::bilinear_sample(patches, coords, n, n);
    ad::Var obs = ad::concat_cols({ad::reshape(feats, 1, jr * vit.width), phi});
    phi = ad::add(phi, mlp2(t, obs, ps, prefix + "rect.", trainable));
  }

  MeshOut out;
  out.params = phi;
  auto [theta, beta, trans] = split(phi);
  out.theta = theta;
  out.beta = beta;
  out.trans = trans;
  out.verts = lbs(t, hand, theta, beta, trans);
  out.kp3d = regress_keypoints(t, hand, out.verts);
  out.kp2d = project_guarded(t, out.kp3d, cam);
  return out;
}

// --------------------------------------------------------------------------
// Supervision.

struct FinetuneTarget {
  Mat theta;  // [1, 3 Jk]
  Mat beta;   // [1, B]
  Mat verts;  // [P, 3]
  Mat kp3d;   // [J, 3]
  Mat kp2d;   // [J, 2]
};

struct FinetuneWeights {
  double param = 1.0;
  double vert = 1.0;
  double kp3d = 1.0;
  double kp2d = 0.01;  // pixels are two to three orders larger than meters
};

struct FinetuneLoss {
  ad::Var total;
  ad::Var param;
  ad::Var vert;
  ad::Var kp3d;
  ad::Var kp2d;
};

// Mean squared error on pose and shape parameters, mean absolute error on
// vertices and on 3D and 2D keypoints, combined with the given weights.
inline FinetuneLoss finetune_loss(ad::Tape& t, const MeshOut& pred, const FinetuneTarget& gt,
                                  const FinetuneWeights& w = FinetuneWeights{}) {
  HM_CHECK(gt.theta.cols() == pred.theta.cols() && gt.beta.cols() == pred.beta.cols(),
           InvariantError, "finetune_loss: parameter target shape mismatch");
  HM_CHECK(gt.verts.rows() == pred.verts.rows() && gt.kp3d.rows() == pred.kp3d.rows() &&
               gt.kp2d.rows() == pred.kp2d.rows(),
           InvariantError, "finetune_loss: target row mismatch");
  ad::Var pb = ad::concat_cols({pred.theta, pred.beta});
  Mat gtpb(1, gt.theta.cols() + gt.beta.cols());
  gtpb << gt.theta, gt.beta;
  FinetuneLoss l;
  l.param = ad::mean(ad::square(ad::sub(pb, t.constant(gtpb))));
  l.vert = ad::mean(ad::abs_(ad::sub(pred.verts, t.constant(gt.verts))));
  l.kp3d = ad::mean(ad::abs_(ad::sub(pred.kp3d, t.constant(gt.kp3d))));
  l.kp2d = ad::mean(ad::abs_(ad::sub(pred.kp2d, t.constant(gt.kp2d))));
  l.total = ad::add(ad::add(ad::scale(l.param, w.param), ad::scale(l.vert, w.vert)),
                    ad::add(ad::scale(l.kp3d, w.kp3d), ad::scale(l.kp2d, w.kp2d)));
  return l;
}

}  // namespace handmim
